"""levyid - Lévy SDE drift identification : Trust-region SR1 minimizer."""

import logging
import math
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

STATUS = {
    1: "Gradient norm below tolerance",
    2: "Step size or radius below tolerance",
    3: "Iterations exceeded",
    4: "Objective not finite at the starting point",
}

ObjectiveFn = Callable[[np.ndarray], Tuple[float, np.ndarray]]


@dataclass
class TrustRegionOptions:
    """Tolerances and radius controls."""

    gtol: float = 1e-9
    xtol: float = 1e-9
    max_iter: int = 200
    initial_radius: float = 1.0
    max_radius: float = 1e4
    eta: float = 1e-4
    patience: int = 10
    skip_tolerance: float = 1e-8
    memory: int = 10

    def __post_init__(self) -> None:
        """Reject non-positive tolerances."""
        for name in ("gtol", "xtol", "initial_radius", "max_radius"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1 or self.patience < 1 or self.memory < 1:
            raise ValueError(
                "max_iter, patience and memory must be at least 1"
            )


@dataclass
class IterationRecord:
    """One row of the optimization history."""

    iteration: int
    loss: float
    grad_norm: float
    radius: float
    accepted: bool
    update: str
    wall_time: float

    def as_dict(self) -> Dict[str, object]:
        """Plain types for YAML output."""
        return {
            key: (float(v) if isinstance(v, np.floating) else v)
            for key, v in asdict(self).items()
        }


@dataclass
class TrustRegionResult:
    """Outcome of minimize_trust_region."""

    x: np.ndarray
    fun: float
    grad: np.ndarray
    status: int
    iterations: int
    evaluations: int
    history: List[IterationRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def message(self) -> str:
        """Readable status."""
        return STATUS[self.status]


def boundary_step(z: np.ndarray, d: np.ndarray, radius: float) -> float:
    """Positive tau with |z + tau d| = radius."""
    a = float(d @ d)
    b = 2.0 * float(z @ d)
    c = float(z @ z) - radius**2
    return (-b + math.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)


def steihaug_cg(
    grad: np.ndarray, hess: np.ndarray, radius: float
) -> Tuple[np.ndarray, bool]:
    """Truncated CG for min g.p + p.B.p/2 subject to |p| <= radius.

    Returns the step and whether it ends on the boundary.
    """
    z = np.zeros_like(grad)
    r = grad.copy()
    d = -r
    r_norm = float(np.linalg.norm(r))
    tol = min(0.5, math.sqrt(r_norm)) * r_norm
    if r_norm <= tol or r_norm == 0.0:
        return z, False

    for _ in range(2 * grad.size + 1):
        bd = hess @ d
        curvature = float(d @ bd)
        if curvature <= 0.0:
            return z + boundary_step(z, d, radius) * d, True
        a = float(r @ r) / curvature
        z_next = z + a * d
        if np.linalg.norm(z_next) >= radius:
            return z + boundary_step(z, d, radius) * d, True
        r_next = r + a * bd
        if np.linalg.norm(r_next) < tol:
            return z_next, False
        beta = float(r_next @ r_next) / float(r @ r)
        d = -r_next + beta * d
        r = r_next
        z = z_next
    return z, False


def sr1_update(
    hess: np.ndarray, s: np.ndarray, y: np.ndarray, skip_tolerance: float
) -> Optional[np.ndarray]:
    """Symmetric rank-one update, or None when the denominator is unsafe."""
    v = y - hess @ s
    denominator = float(v @ s)
    threshold = skip_tolerance * np.linalg.norm(s) * np.linalg.norm(v)
    if denominator == 0.0 or abs(denominator) < threshold:
        return None
    return hess + np.outer(v, v) / denominator


def bfgs_update(
    hess: np.ndarray, s: np.ndarray, y: np.ndarray
) -> Optional[np.ndarray]:
    """BFGS update of the Hessian, or None without positive curvature."""
    ys = float(y @ s)
    bs = hess @ s
    sbs = float(s @ bs)
    if ys <= 0.0 or sbs <= 0.0:
        return None
    return hess - np.outer(bs, bs) / sbs + np.outer(y, y) / ys


def lbfgs_hessian(
    pairs: Sequence[Tuple[np.ndarray, np.ndarray]], size: int
) -> Optional[np.ndarray]:
    """Limited-memory BFGS Hessian from the stored (s, y) pairs.

    Starts from gamma I with gamma = y.y / y.s of the newest pair and
    applies the pairs oldest first. None when no pair is stored.
    """
    if not pairs:
        return None
    s, y = pairs[-1]
    hess = float(y @ y) / float(y @ s) * np.eye(size)
    for s, y in pairs:
        updated = bfgs_update(hess, s, y)
        if updated is not None:
            hess = updated
    return hess


def minimize_trust_region(
    fun: ObjectiveFn,
    x0: np.ndarray,
    options: Optional[TrustRegionOptions] = None,
) -> TrustRegionResult:
    """Minimize fun (returning value and gradient) with SR1 trust regions.

    Rejected SR1 updates fall back to a limited-memory BFGS matrix built
    from the last options.memory pairs with positive curvature; without
    such pairs the Hessian approximation is kept.
    """
    options = options or TrustRegionOptions()
    started = time.perf_counter()

    x = np.array(x0, dtype=float)
    f, g = fun(x)
    evaluations = 1
    result = TrustRegionResult(
        x=x, fun=f, grad=g, status=4, iterations=0, evaluations=evaluations
    )
    if not math.isfinite(f):
        return result

    hess = np.eye(x.size)
    pairs: deque = deque(maxlen=options.memory)
    radius = options.initial_radius
    best, stalled = f, 0
    result.history.append(
        IterationRecord(0, f, float(np.linalg.norm(g)), radius, True, "-", 0.0)
    )

    status = 3
    for iteration in range(1, options.max_iter + 1):
        if np.linalg.norm(g) <= options.gtol:
            status = 1
            break

        step, on_boundary = steihaug_cg(g, hess, radius)
        predicted = -(float(g @ step) + 0.5 * float(step @ hess @ step))
        f_new, g_new = fun(x + step)
        evaluations += 1

        if math.isfinite(f_new) and predicted > 0.0:
            rho = (f - f_new) / predicted
        else:
            rho = -math.inf

        update = "none"
        if np.all(np.isfinite(g_new)):
            y = g_new - g
            if float(y @ step) > 0.0:
                pairs.append((step, y))
            candidate = sr1_update(hess, step, y, options.skip_tolerance)
            if candidate is not None:
                hess, update = candidate, "sr1"
            else:
                candidate = lbfgs_hessian(pairs, x.size)
                if candidate is not None:
                    hess, update = candidate, "lbfgs"

        if rho > 0.75 and on_boundary:
            radius = min(2.0 * radius, options.max_radius)
        elif rho < 0.1:
            radius *= 0.5

        accepted = rho > options.eta
        if accepted:
            x, f, g = x + step, f_new, g_new

        if f < best:
            best, stalled = f, 0
        else:
            stalled += 1
            if stalled == options.patience:
                message = (
                    f"loss did not decrease for {options.patience} iterations "
                    f"(iteration {iteration})"
                )
                logger.warning(message)
                result.warnings.append(message)

        grad_norm = float(np.linalg.norm(g))
        result.history.append(
            IterationRecord(
                iteration,
                f,
                grad_norm,
                radius,
                accepted,
                update,
                time.perf_counter() - started,
            )
        )
        logger.info(
            "iter %3d  loss %.6e  |g| %.3e  radius %.3e  %s",
            iteration,
            f,
            grad_norm,
            radius,
            "accepted" if accepted else "rejected",
        )

        if np.linalg.norm(step) <= options.xtol or radius <= options.xtol:
            status = 2
            break

    result.x, result.fun, result.grad = x, f, g
    result.status = status
    result.iterations = len(result.history) - 1
    result.evaluations = evaluations
    logger.info("Optimizer stopped: %s", STATUS[status])
    return result
