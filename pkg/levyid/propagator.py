"""levyid - Lévy SDE drift identification : CF evolution in Fourier space."""

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, sparse, special

from .drift import (
    FourierDrift,
    coefficient_convolution,
    flat_index,
    mode_indices,
)
from .errors import LevyIdError
from .grid import CFField, GridError, SpectralGrid
from .stable import check_alpha, check_step, scaled_increment_cf

logger = logging.getLogger(__name__)

DECAYS = ("componentwise", "projected", "printed")
INSTABILITY_THRESHOLD = 1e3
MARGIN_SCAN = np.geomspace(1e-6, 1e3, 200001)


class PropagatorConfigError(LevyIdError, ValueError):
    """Error class for inconsistent propagator settings."""


class InstabilityError(LevyIdError):
    """Error class for characteristic functions that blew up."""

    def __init__(
        self, step: int, max_abs: float, column: Optional[int] = None
    ) -> None:
        """Record where the evolution became unstable."""
        super().__init__(
            f"evolution unstable at step {step} (max |psi| = {max_abs:.3e})"
        )
        self.step = step
        self.max_abs = max_abs
        self.column = column


@dataclass(frozen=True, eq=False)
class PropagatorConfig:
    """Everything one step of the discrete scheme depends on."""

    alpha: float
    g: Tuple[float, ...]
    h: float
    grid: SpectralGrid
    model: FourierDrift
    decay: str = "componentwise"
    instability_threshold: float = INSTABILITY_THRESHOLD

    def __post_init__(self) -> None:
        """Validate and normalize the settings."""
        try:
            check_alpha(self.alpha)
            check_step(self.h)
        except ValueError as err:
            raise PropagatorConfigError(str(err)) from err
        g = tuple(
            float(v)
            for v in np.broadcast_to(
                np.asarray(self.g, dtype=float), (self.grid.dim,)
            )
        )
        object.__setattr__(self, "g", g)
        if any(v < 0.0 for v in g):
            raise PropagatorConfigError("g must be non-negative")
        if self.decay not in DECAYS:
            raise PropagatorConfigError(f"unknown decay '{self.decay}'")
        if self.model.dim != self.grid.dim:
            raise PropagatorConfigError(
                f"model dim {self.model.dim} != grid dim {self.grid.dim}"
            )
        try:
            self.grid.check_modes(self.model.J, self.model.L)
        except GridError as err:
            raise PropagatorConfigError(str(err)) from err

        w = self.h * self.grid.ds
        if min(g) > 0.0:
            margin = stability_margin(min(g), self.alpha)
            if w > margin:
                logger.warning(
                    "h*ds = %.3g exceeds the stability margin %.3g", w, margin
                )

    def with_model(self, model: FourierDrift) -> "PropagatorConfig":
        """Same settings with another drift model."""
        return PropagatorConfig(
            alpha=self.alpha,
            g=self.g,
            h=self.h,
            grid=self.grid,
            model=model,
            decay=self.decay,
            instability_threshold=self.instability_threshold,
        )


def decay_factor(cfg: PropagatorConfig) -> np.ndarray:
    """Diffusion factor E(j) on every grid point."""
    grid = cfg.grid
    g = np.asarray(cfg.g)
    if cfg.decay == "componentwise":
        return scaled_increment_cf(grid.frequencies, cfg.alpha, cfg.h, g)
    projection = np.abs(grid.indices @ g)
    if cfg.decay == "projected":
        return np.exp(-cfg.h * (grid.ds * projection) ** cfg.alpha)
    return np.exp(-cfg.h * grid.ds * projection**cfg.alpha)


def shift_table(grid: SpectralGrid, J: int) -> np.ndarray:
    """Source positions of psi(j + k n_L) for every |k_l| <= 2J.

    Shape ((4J+1)^d, n_points); off-grid sources point at n_points.
    """
    shifts = mode_indices(2 * J, grid.dim)
    table = np.full((shifts.shape[0], grid.n_points), grid.n_points)
    for row, k in enumerate(shifts):
        rows, cols = grid.shift(k * grid.n_L)
        table[row, rows] = cols
    return table


class Propagator:
    """The linear map psi_k -> psi_{k+1} as a sparse matrix."""

    def __init__(self, cfg: PropagatorConfig) -> None:
        """Assemble diag(E) (I + sum_k diag(c_k) S_k)."""
        self.cfg = cfg
        self.grid = cfg.grid
        self.model = cfg.model
        self.w = cfg.h * cfg.grid.ds
        self.decay = decay_factor(cfg)
        self.table = shift_table(cfg.grid, cfg.model.J)
        self.matrix = self.__assemble()
        self.matrix_h = self.matrix.conj().T.tocsr()

    def __assemble(self) -> sparse.csr_matrix:
        grid, model, w = self.grid, self.model, self.w
        J, n = model.J, grid.n_points
        idx = grid.indices.astype(float)

        conv = coefficient_convolution(model)
        quadratic = np.einsum("pm,kmn,pn->kp", idx, conv, idx)
        coefficients = -0.5 * w**2 * quadratic
        inner = [flat_index(j, 2 * J) for j in model.modes]
        coefficients[inner] += 1j * w * (idx @ model.coeffs.T).T

        rows_all = [np.arange(n)]
        cols_all = [np.arange(n)]
        data_all = [np.ones(n, dtype=complex)]
        for row, c in enumerate(coefficients):
            if not np.any(c):
                continue
            valid = self.table[row] < n
            rows_all.append(np.flatnonzero(valid))
            cols_all.append(self.table[row, valid])
            data_all.append(c[valid])

        matrix = sparse.coo_matrix(
            (
                np.concatenate(data_all),
                (np.concatenate(rows_all), np.concatenate(cols_all)),
            ),
            shape=(n, n),
        ).tocsr()
        matrix = (sparse.diags(self.decay) @ matrix).tocsr()
        matrix.eliminate_zeros()
        logger.debug(
            "Propagator with %d non-zeros on %d points", matrix.nnz, n
        )
        return matrix

    def apply(self, values: np.ndarray) -> np.ndarray:
        """One step on flat values, or on columns of shape (n_points, B)."""
        return self.matrix @ values

    def apply_adjoint(self, values: np.ndarray) -> np.ndarray:
        """Apply the conjugate transpose P^H."""
        return self.matrix_h @ values

    def run(
        self, values: np.ndarray, nu: int, offset: int = 0
    ) -> np.ndarray:
        """Apply nu steps, checking for blow-up after each one."""
        threshold = self.cfg.instability_threshold
        for k in range(nu):
            values = self.apply(values)
            magnitude = np.abs(values)
            max_abs = float(np.max(magnitude))
            if not max_abs <= threshold:
                column = None
                if values.ndim == 2:
                    column = int(np.argmax(np.nanmax(magnitude, axis=0)))
                raise InstabilityError(offset + k + 1, max_abs, column)
        return values


@dataclass
class AdjointTape:
    """Forward states psi_0 .. psi_{nu-1}, stored every checkpoint_every."""

    propagator: Propagator
    nu: int
    checkpoint_every: int = 1
    checkpoints: Dict[int, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        """Number of recorded steps."""
        return self.nu

    def states_reversed(self) -> Iterator[Tuple[int, np.ndarray]]:
        """Yield (k, psi_k) for k = nu-1 down to 0.

        Segments between checkpoints are recomputed once each.
        """
        starts = sorted(self.checkpoints, reverse=True)
        for start in starts:
            stop = min(start + self.checkpoint_every, self.nu)
            segment = [self.checkpoints[start]]
            for _ in range(start + 1, stop):
                segment.append(self.propagator.apply(segment[-1]))
            for k in range(stop - 1, start - 1, -1):
                yield k, segment[k - start]


def evolve_values(
    propagator: Propagator,
    values: np.ndarray,
    nu: int,
    record: bool = False,
    checkpoint_every: int = 1,
) -> Tuple[np.ndarray, Optional[AdjointTape]]:
    """Evolve raw values nu steps, optionally recording a tape."""
    if nu < 1:
        raise PropagatorConfigError(f"nu must be at least 1 (got {nu})")
    if checkpoint_every < 1:
        raise PropagatorConfigError("checkpoint_every must be at least 1")
    if not record:
        return propagator.run(values, nu), None

    tape = AdjointTape(propagator, nu, checkpoint_every)
    for k in range(nu):
        if k % checkpoint_every == 0:
            tape.checkpoints[k] = values
        values = propagator.run(values, 1, offset=k)
    return values, tape


def step(psi: CFField, cfg: PropagatorConfig) -> CFField:
    """Advance a characteristic function by one inner step."""
    if psi.grid != cfg.grid:
        raise PropagatorConfigError("psi lives on another grid")
    values = Propagator(cfg).apply(psi.values)
    return CFField(cfg.grid, values, psi.time_label + cfg.h)


def evolve(
    psi0: CFField,
    cfg: PropagatorConfig,
    nu: int,
    record: bool = False,
    checkpoint_every: int = 1,
) -> Tuple[CFField, Optional[AdjointTape]]:
    """Apply step nu times; with record, keep the states for the adjoint."""
    if psi0.grid != cfg.grid:
        raise PropagatorConfigError("psi0 lives on another grid")
    values, tape = evolve_values(
        Propagator(cfg), psi0.values, nu, record, checkpoint_every
    )
    return CFField(cfg.grid, values, psi0.time_label + nu * cfg.h), tape


# ORACLES #


def ou_closed_form(
    psi0: Callable[[np.ndarray], np.ndarray],
    s: np.ndarray,
    t: float,
    g: float,
    alpha: float,
) -> np.ndarray:
    """Exact CF of dX = -X dt + g dL at time t."""
    if t < 0.0:
        raise ValueError("t must be non-negative")
    s = np.asarray(s, dtype=float)
    relaxed = 1.0 - math.exp(-t * alpha)
    spread = g**alpha * np.abs(s) ** alpha / alpha * relaxed
    return np.exp(-spread) * psi0(math.exp(-t) * s)


def ou_discrete_form(
    psi0: Callable[[np.ndarray], np.ndarray],
    s: np.ndarray,
    n: int,
    h: float,
    g: float,
    alpha: float,
) -> np.ndarray:
    """Exact CF after n Euler-Maruyama steps of dX = -X dt + g dL."""
    s = np.asarray(s, dtype=float)
    ratio = abs(1.0 - h) ** alpha
    total = float(np.sum(ratio ** np.arange(n)))
    spread = h * g**alpha * np.abs(s) ** alpha * total
    return np.exp(-spread) * psi0((1.0 - h) ** n * s)


def _unit_shift(grid: SpectralGrid) -> int:
    """Grid points per unit of frequency; the sine kernel shifts by units."""
    unit = grid.n_L * grid.L
    if grid.dim != 1:
        raise PropagatorConfigError("the sine kernel is one-dimensional")
    if 2 * unit > grid.M:
        raise PropagatorConfigError(
            f"frequency shifts of 2 need M >= {2 * unit} (got {grid.M})"
        )
    return unit


def _shifted(values: np.ndarray, offset: int) -> np.ndarray:
    """values(j + offset), zero off the grid."""
    result = np.zeros_like(values)
    if offset > 0:
        result[:-offset] = values[offset:]
    elif offset < 0:
        result[-offset:] = values[:offset]
    else:
        result[:] = values
    return result


def sine_kernel_reference(
    psi: CFField, h: float, g: float, alpha: float
) -> CFField:
    """Truncated kernel update of the drift sin(x), to second order in h."""
    grid = psi.grid
    unit = _unit_shift(grid)
    s = grid.frequencies[:, 0]
    values = psi.values
    decay = np.exp(-h * np.abs(g * s) ** alpha)
    update = (
        (1.0 - s**2 * h**2 / 4.0) * values
        - (s * h / 2.0)
        * (_shifted(values, -unit) - _shifted(values, unit))
        + (s**2 * h**2 / 8.0)
        * (_shifted(values, -2 * unit) + _shifted(values, 2 * unit))
    )
    return CFField(grid, decay * update, psi.time_label + h)


def sine_kernel_exact(
    psi: CFField,
    h: float,
    g: float,
    alpha: float,
    n_max: Optional[int] = None,
) -> CFField:
    """Jacobi-Anger kernel update sum_n J_n(s h) psi(s + n) for sin(x)."""
    grid = psi.grid
    unit = _unit_shift(grid)
    s = grid.frequencies[:, 0]
    if n_max is None:
        n_max = int(math.ceil(grid.M * grid.ds * h)) + 16
    n_max = min(n_max, (2 * grid.M) // unit)

    total = np.zeros(grid.n_points, dtype=complex)
    for order in range(-n_max, n_max + 1):
        total += special.jv(order, s * h) * _shifted(psi.values, order * unit)
    decay = np.exp(-h * np.abs(g * s) ** alpha)
    return CFField(grid, decay * total, psi.time_label + h)


# STABILITY #


def _log_amplification(w: np.ndarray, g: float, alpha: float) -> np.ndarray:
    """log |Phi(w)|^2 = -2 w g^alpha + log(1 + w^4 / 4)."""
    return -2.0 * w * g**alpha + np.log1p(w**4 / 4.0)


def stability_curve(
    g: float, alpha: float, w: Sequence[float]
) -> np.ndarray:
    """|Phi(w)| = exp(-w g^alpha) |1 + i w - w^2 / 2|."""
    w = np.asarray(w, dtype=float)
    return np.exp(-w * g**alpha) * np.abs(1.0 + 1j * w - w**2 / 2.0)


@lru_cache(maxsize=64)
def stability_margin(g: float, alpha: float) -> float:
    """Smallest w > 0 with |Phi(w)| = 1, or inf when |Phi| <= 1 throughout."""
    if not g > 0.0:
        raise ValueError(f"g must be positive (got {g})")
    alpha = check_alpha(alpha)
    values = _log_amplification(MARGIN_SCAN, g, alpha)
    above = np.flatnonzero(values > 0.0)
    if above.size == 0:
        return math.inf
    first = above[0]
    lo = MARGIN_SCAN[first - 1] if first > 0 else 0.0
    return float(
        optimize.bisect(
            _log_amplification,
            lo,
            MARGIN_SCAN[first],
            args=(g, alpha),
            xtol=1e-10,
        )
    )
