"""levyid - Lévy SDE drift identification : Verification oracles.

Each oracle compares a piece of the pipeline with an independent exact or
reference computation and returns an OracleResult. run_oracles() runs a
selection and is what the ``oracle`` subcommand reports.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .drift import FourierDrift, project_symmetry, sine_embedding
from .grid import CFField, SpectralGrid
from .identification import (
    FreeParameters,
    LossConfig,
    mmd_gradient,
    mmd_loss,
)
from .propagator import (
    Propagator,
    PropagatorConfig,
    evolve,
    ou_closed_form,
    ou_discrete_form,
    sine_kernel_exact,
    sine_kernel_reference,
    stability_margin,
    step,
)
from .simulator import (
    Dataset,
    DriftSpec,
    PointInit,
    Trajectory,
    generate_dataset,
)
from .stable import increment_cf, sample_increments, scaled_increment_cf

logger = logging.getLogger(__name__)

SINE_GRID = SpectralGrid(L=2, M=1028, n_L=8)


@dataclass
class OracleResult:
    """Outcome of one oracle."""

    name: str
    passed: bool
    value: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        """One-line summary for terminal output."""
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}  {self.name:<20} {self.value:.3e} "
            f"(tolerance {self.tolerance:.1e})  {self.detail}"
        )


def _gaussian_cf(
    mean: float, std: float
) -> Callable[[np.ndarray], np.ndarray]:
    def cf(s: np.ndarray) -> np.ndarray:
        return np.exp(1j * mean * s - 0.5 * (std * s) ** 2)

    return cf


# PROPAGATOR #


def drift_free_ou() -> OracleResult:
    """Zero drift for t = 1 against exp(-t |g s|^alpha) psi0."""
    alpha, g, h, nu = 1.5, 0.5, 1e-2, 100
    grid = SINE_GRID
    s = grid.frequencies[:, 0]
    psi0 = _gaussian_cf(0.3, 1.0)(s)
    cfg = PropagatorConfig(
        alpha=alpha,
        g=(g,),
        h=h,
        grid=grid,
        model=FourierDrift.zeros(4, grid.L, 1),
    )
    evolved, _ = evolve(CFField(grid, psi0), cfg, nu)
    exact = scaled_increment_cf(s[:, None], alpha, nu * h, g) * psi0
    error = float(np.max(np.abs(evolved.values - exact)))
    return OracleResult("drift_free_ou", error <= 1e-12, error, 1e-12)


def ou_convergence(
    steps: Sequence[float] = (4e-3, 2e-3, 1e-3)
) -> OracleResult:
    """First-order weak error of Euler-Maruyama for the OU process."""
    s = np.linspace(-8.0, 8.0, 801)
    psi0 = _gaussian_cf(1.0, 0.5)
    exact = ou_closed_form(psi0, s, 1.0, 1.0, 2.0)
    errors = [
        float(
            np.max(
                np.abs(
                    ou_discrete_form(psi0, s, round(1.0 / h), h, 1.0, 2.0)
                    - exact
                )
            )
        )
        for h in steps
    ]
    orders = [
        math.log(errors[i] / errors[i + 1])
        / math.log(steps[i] / steps[i + 1])
        for i in range(len(steps) - 1)
    ]
    order = min(orders)
    detail = ", ".join(f"h={h:g}: {e:.3e}" for h, e in zip(steps, errors))
    return OracleResult("ou_convergence", order >= 0.8, order, 0.8, detail)


def ou_monte_carlo(
    n_trajectories: int = 20000, seed: int = 7
) -> OracleResult:
    """Simulated OU paths against the exact CF of the discrete scheme."""
    h = 1e-3
    total = round(1.0 / h)
    dataset = generate_dataset(
        DriftSpec("ou"),
        (1.0,),
        2.0,
        PointInit((1.0,)),
        h,
        total,
        total,
        n_trajectories,
        seed,
    )
    s = np.linspace(-4.0, 4.0, 81)
    x = dataset.snapshot(1)[:, 0]
    ecf = np.exp(1j * np.outer(x, s)).mean(axis=0)
    expected = ou_discrete_form(_gaussian_cf(1.0, 0.0), s, total, h, 1.0, 2.0)
    error = float(np.max(np.abs(ecf - expected)))
    tolerance = 4.0 / math.sqrt(n_trajectories)
    return OracleResult("ou_monte_carlo", error <= tolerance, error, tolerance)


def ou_weak_order(
    steps: Sequence[float] = (4e-3, 2e-3, 1e-3),
    n_trajectories: int = 20000,
    seed: int = 5,
) -> OracleResult:
    """Weak order of simulated OU paths against the closed-form CF at t = 1.

    The start X0 = 4000 keeps the O(h) error of the decayed mean well above
    the sampling error of the ECF on |s| <= 1/16.
    """
    x0 = 4000.0
    s = np.linspace(-1.0 / 16.0, 1.0 / 16.0, 41)
    exact = ou_closed_form(_gaussian_cf(x0, 0.0), s, 1.0, 1.0, 2.0)
    errors = []
    for h in steps:
        total = round(1.0 / h)
        dataset = generate_dataset(
            DriftSpec("ou"),
            (1.0,),
            2.0,
            PointInit((x0,)),
            h,
            total,
            total,
            n_trajectories,
            seed,
        )
        x = dataset.snapshot(1)[:, 0]
        ecf = np.exp(1j * np.outer(x, s)).mean(axis=0)
        errors.append(float(np.max(np.abs(ecf - exact))))
    orders = [
        math.log(errors[i] / errors[i + 1])
        / math.log(steps[i] / steps[i + 1])
        for i in range(len(steps) - 1)
    ]
    order = min(orders)
    detail = ", ".join(f"h={h:g}: {e:.3e}" for h, e in zip(steps, errors))
    return OracleResult("ou_weak_order", order >= 0.8, order, 0.8, detail)


def sine_kernel() -> OracleResult:
    """One step of the sine model against the truncated kernel update."""
    alpha, g, h = 1.0, 0.25, 1e-3
    grid = SINE_GRID
    psi = CFField(grid, _gaussian_cf(0.3, 1.0)(grid.frequencies[:, 0]))
    cfg = PropagatorConfig(
        alpha=alpha, g=(g,), h=h, grid=grid, model=sine_embedding(0.5)
    )
    stepped = step(psi, cfg)
    reference = sine_kernel_reference(psi, h, g, alpha)
    error = float(np.max(np.abs(stepped.values - reference.values)))
    return OracleResult("sine_kernel", error <= 1e-12, error, 1e-12)


def kernel_truncation(
    steps: Tuple[float, float] = (2e-2, 1e-2)
) -> OracleResult:
    """The truncated kernel is third-order accurate against Bessel sums."""
    alpha, g = 1.0, 0.25
    psi = CFField(
        SINE_GRID, _gaussian_cf(0.3, 1.0)(SINE_GRID.frequencies[:, 0])
    )
    errors = []
    for h in steps:
        truncated = sine_kernel_reference(psi, h, g, alpha)
        exact = sine_kernel_exact(psi, h, g, alpha)
        errors.append(float(np.max(np.abs(truncated.values - exact.values))))
    order = math.log(errors[0] / errors[1]) / math.log(steps[0] / steps[1])
    detail = ", ".join(f"h={h:g}: {e:.3e}" for h, e in zip(steps, errors))
    return OracleResult("kernel_truncation", order >= 2.5, order, 2.5, detail)


def normalization(n_steps: int = 10000, seed: int = 3) -> OracleResult:
    """psi(0) stays exactly 1 under repeated steps with a random model."""
    rng = np.random.default_rng(seed)
    grid = SpectralGrid(L=2, M=32, n_L=4)
    template = FourierDrift.zeros(2, grid.L, 1)
    shape = template.coeffs.shape
    coeffs = 0.1 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    model = project_symmetry(template.with_coeffs(coeffs))
    propagator = Propagator(
        PropagatorConfig(alpha=1.5, g=(1.0,), h=1e-3, grid=grid, model=model)
    )
    values = _gaussian_cf(0.2, 0.5)(grid.frequencies[:, 0])
    for _ in range(n_steps):
        values = propagator.apply(values)
    drift = abs(values[grid.center] - 1.0)
    return OracleResult(
        "normalization",
        bool(values[grid.center] == 1.0),
        drift,
        0.0,
        f"{n_steps} steps",
    )


# GRADIENT #


def random_instance(
    seed: int,
) -> Tuple[FourierDrift, Dataset, LossConfig]:
    """A small random model, dataset and loss setting."""
    rng = np.random.default_rng(seed)
    dim = 1 + seed % 2
    if dim == 1:
        J = int(rng.integers(1, 3))
        grid = SpectralGrid(L=2, M=32, n_L=4)
    else:
        J = 1
        grid = SpectralGrid(L=2, M=8, n_L=2, dim=2)
    template = FourierDrift.zeros(J, grid.L, dim)
    shape = template.coeffs.shape
    coeffs = 0.2 * (rng.normal(size=shape) + 1j * rng.normal(size=shape))
    model = project_symmetry(template.with_coeffs(coeffs))

    n_trajectories, n_observations, dt = 4, 4, 0.1
    states = 0.5 * rng.normal(size=(n_trajectories, n_observations, dim))
    dataset = Dataset(
        trajectories=[Trajectory(x, dt) for x in states], dim=dim, dt=dt
    )
    cfg = LossConfig(
        grid=grid,
        alpha=float(rng.uniform(1.0, 2.0)),
        g=(0.5,) * dim,
        nu=int(rng.integers(1, 4)),
        mode="averaged_ecf" if seed % 3 else "per_trajectory",
        mu=0.01 if seed % 4 == 1 else 0.0,
        batch_size=2,
    )
    return model, dataset, cfg


def gradient_error(
    model: FourierDrift, dataset: Dataset, cfg: LossConfig, eps: float = 1e-6
) -> float:
    """Relative distance of the adjoint gradient from central differences."""
    params = FreeParameters(model)
    p0 = params.from_model(model)
    adjoint = mmd_gradient(params.to_model(p0), dataset, cfg).grad
    numeric = np.empty_like(p0)
    for i in range(p0.size):
        offset = np.zeros_like(p0)
        offset[i] = eps
        numeric[i] = (
            mmd_loss(params.to_model(p0 + offset), dataset, cfg)
            - mmd_loss(params.to_model(p0 - offset), dataset, cfg)
        ) / (2.0 * eps)
    scale = max(float(np.linalg.norm(adjoint)), 1e-12)
    return float(np.linalg.norm(numeric - adjoint)) / scale


def gradient_check(count: int = 10) -> OracleResult:
    """Adjoint gradients on random instances against finite differences."""
    worst = max(
        gradient_error(*random_instance(seed)) for seed in range(count)
    )
    return OracleResult(
        "gradient_check", worst <= 1e-6, worst, 1e-6, f"{count} instances"
    )


# NOISE AND STABILITY #


def stability() -> OracleResult:
    """w* for g = 0.1 and alpha = 1, and no boundary for g = 1."""
    margin = stability_margin(0.1, 1.0)
    error = abs(margin - 0.955)
    passed = error <= 0.005 and math.isinf(stability_margin(1.0, 1.0))
    return OracleResult(
        "stability", passed, error, 0.005, f"w*(0.1, 1) = {margin:.4f}"
    )


def sampler(count: int = 100000, seed: int = 11) -> OracleResult:
    """Empirical CF of sampled increments against exp(-h |s|^alpha)."""
    s = np.linspace(-4.0, 4.0, 81)
    worst = 0.0
    for index, (alpha, h) in enumerate(
        (a, h) for a in (1.0, 1.5, 2.0) for h in (0.01, 1.0)
    ):
        x = sample_increments(alpha, h, count, 1, seed + index)[:, 0]
        ecf = np.exp(1j * np.outer(x, s)).mean(axis=0)
        exact = increment_cf(s[:, None], alpha, h)
        worst = max(worst, float(np.max(np.abs(ecf - exact))))
    return OracleResult("sampler", worst <= 0.02, worst, 0.02)


ORACLES: Dict[str, Tuple[Callable[[], OracleResult], bool]] = {
    "drift_free_ou": (drift_free_ou, False),
    "ou_convergence": (ou_convergence, False),
    "sine_kernel": (sine_kernel, False),
    "kernel_truncation": (kernel_truncation, False),
    "normalization": (normalization, False),
    "gradient_check": (gradient_check, False),
    "stability": (stability, False),
    "sampler": (sampler, False),
    "ou_monte_carlo": (ou_monte_carlo, True),
    "ou_weak_order": (ou_weak_order, True),
}


def run_oracles(
    names: Optional[Sequence[str]] = None, slow: bool = False
) -> List[OracleResult]:
    """Run the named oracles, or every fast one (and slow ones if asked)."""
    if names:
        unknown = sorted(set(names) - set(ORACLES))
        if unknown:
            raise KeyError(f"unknown oracles: {', '.join(unknown)}")
        selected = list(names)
    else:
        selected = [
            name
            for name, (_, is_slow) in ORACLES.items()
            if slow or not is_slow
        ]

    results = []
    for name in selected:
        logger.info("Running oracle %s", name)
        result = ORACLES[name][0]()
        logger.info("%s", result.line())
        results.append(result)
    return results
