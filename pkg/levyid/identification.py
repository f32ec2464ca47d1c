"""levyid - Lévy SDE drift identification : MMD loss, adjoint and training."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .drift import (
    FourierDrift,
    SymmetrySpec,
    flat_index,
    free_basis,
    from_real,
    project_symmetry,
    to_real,
)
from .errors import LevyIdError
from .grid import SpectralGrid, ecf_values, point_cf_values
from .optimizer import TrustRegionOptions, minimize_trust_region
from .propagator import (
    InstabilityError,
    Propagator,
    PropagatorConfig,
    evolve_values,
)
from .simulator import Dataset, DatasetError

logger = logging.getLogger(__name__)

MODES = ("averaged_ecf", "per_trajectory")
GATHER_LIMIT = 1 << 22


class LossError(LevyIdError):
    """Error class for loss evaluations that could not be completed."""


@dataclass(frozen=True)
class LossConfig:
    """How the loss pairs snapshots and evolves them."""

    grid: SpectralGrid
    alpha: float
    g: Tuple[float, ...]
    nu: int = 100
    mode: str = "averaged_ecf"
    mu: float = 0.0
    gaussian_reg: float = 0.0
    decay: str = "componentwise"
    pad: Optional[int] = None
    checkpoint_every: int = 1
    batch_size: int = 8
    workers: int = 1
    instability_threshold: float = 1e3

    def __post_init__(self) -> None:
        """Validate the choices and ranges."""
        if self.mode not in MODES:
            raise LossError(f"unknown loss mode '{self.mode}'")
        if self.mu < 0.0 or self.gaussian_reg < 0.0:
            raise LossError("mu and gaussian_reg must be non-negative")
        if self.nu < 1 or self.batch_size < 1 or self.workers < 1:
            raise LossError("nu, batch_size and workers must be at least 1")
        if self.pad is not None and self.pad < 0:
            raise LossError(f"pad must be non-negative (got {self.pad})")

    def propagator_config(
        self,
        model: FourierDrift,
        dt: float,
        grid: Optional[SpectralGrid] = None,
    ) -> PropagatorConfig:
        """Propagator settings for inner step h = dt / nu."""
        return PropagatorConfig(
            alpha=self.alpha,
            g=tuple(self.g),
            h=dt / self.nu,
            grid=grid or self.grid,
            model=model,
            decay=self.decay,
            instability_threshold=self.instability_threshold,
        )


@dataclass
class GradientReport:
    """Loss value and its gradient over the free real parameters."""

    loss: float
    data_loss: float
    grad: np.ndarray
    grad_coeffs: np.ndarray
    residuals: List[float] = field(default_factory=list)


@dataclass
class TrainConfig:
    """Optimizer settings and the starting model."""

    J: int = 4
    gtol: float = 1e-9
    xtol: float = 1e-9
    max_iter: int = 200
    initial_radius: float = 1.0
    patience: int = 10
    memory: int = 10
    symmetry: Optional[SymmetrySpec] = None
    initial: Optional[FourierDrift] = None
    seed: int = 0

    def options(self) -> TrustRegionOptions:
        """Options for the trust-region loop."""
        return TrustRegionOptions(
            gtol=self.gtol,
            xtol=self.xtol,
            max_iter=self.max_iter,
            initial_radius=self.initial_radius,
            patience=self.patience,
            memory=self.memory,
        )


@dataclass
class RunReport:
    """What a training run did, iteration by iteration."""

    status: int
    message: str
    loss: float
    grad_norm: float
    iterations: int
    evaluations: int
    n_parameters: int
    wall_time: float
    history: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    settings: Dict[str, Any] = field(default_factory=dict)
    coeff_mae: Optional[float] = None

    def as_dict(self) -> Dict[str, Any]:
        """Plain types for YAML output."""
        return {
            "status": self.status,
            "message": self.message,
            "loss": float(self.loss),
            "grad_norm": float(self.grad_norm),
            "iterations": self.iterations,
            "evaluations": self.evaluations,
            "n_parameters": self.n_parameters,
            "wall_time": float(self.wall_time),
            "coeff_mae": self.coeff_mae,
            "warnings": list(self.warnings),
            "settings": dict(self.settings),
            "history": list(self.history),
        }

    def write(self, path: Union[str, Path]) -> None:
        """Write the report as YAML."""
        with open(path, "w") as file_handle:
            yaml.safe_dump(self.as_dict(), file_handle, sort_keys=False)


class FreeParameters:
    """Real parameters p with to_real(theta) = Q p on the constrained set."""

    def __init__(self, template: FourierDrift) -> None:
        """Build the basis for the template's J, dim and constraints."""
        self.template = template
        self.basis = free_basis(template.J, template.dim, template.constraints)

    @property
    def size(self) -> int:
        """Number of free real parameters."""
        return self.basis.shape[1]

    def to_model(self, params: np.ndarray) -> FourierDrift:
        """Model for parameters p, projected so constraints hold exactly."""
        coeffs = from_real(self.basis @ params, self.template.coeffs.shape)
        return project_symmetry(self.template.with_coeffs(coeffs))

    def from_model(self, model: FourierDrift) -> np.ndarray:
        """Parameters of the projection of model."""
        return self.basis.T @ to_real(project_symmetry(model).coeffs)


def closure_pad(grid: SpectralGrid, dt: float, J: int) -> int:
    """Extra points per side that keep the zero closure off the loss window.

    Twice the shift of the edge frequency under a unit-slope drift over one
    snapshot interval, plus one hop of the highest mode.
    """
    return int(math.ceil(2.0 * grid.M * dt)) + J * grid.n_L


class SnapshotPairs:
    """Initial conditions and targets for consecutive snapshot pairs.

    Snapshot CFs are evaluated on the loss grid widened by a pad, the
    propagator runs on that wider grid and residuals are summed over the
    loss grid only.
    """

    def __init__(self, dataset: Dataset, cfg: LossConfig, J: int) -> None:
        """Prepare the data once per dataset and mode cutoff J."""
        if dataset.dim != cfg.grid.dim:
            raise LossError(
                f"dataset dim {dataset.dim} != grid dim {cfg.grid.dim}"
            )
        try:
            self.states = dataset.valid_states()
        except DatasetError as err:
            raise LossError(str(err)) from err
        if self.states.shape[1] < 2:
            raise LossError("need at least two snapshots")

        self.cfg = cfg
        self.dt = dataset.dt
        self.pad = cfg.pad
        if self.pad is None:
            self.pad = closure_pad(cfg.grid, self.dt, J)
        self.grid = cfg.grid.padded(self.pad)
        self.window = self.grid.window(cfg.grid.M)
        self.n_pairs = self.states.shape[1] - 1
        self.n_trajectories = self.states.shape[0]
        self.ecf: Optional[np.ndarray] = None
        if cfg.mode == "averaged_ecf":
            self.ecf = self.averaged()
        logger.debug(
            "Snapshot pairs on %d points (pad %d)",
            self.grid.n_points,
            self.pad,
        )

    def averaged(self) -> np.ndarray:
        """Averaged ECF of every snapshot, shape (n_points, N)."""
        reg = self.cfg.gaussian_reg
        return np.stack(
            [
                ecf_values(self.states[:, j], self.grid, reg)
                for j in range(self.n_pairs + 1)
            ],
            axis=1,
        )

    @property
    def columns_per_pair(self) -> int:
        """Columns one pair contributes to a batch."""
        return 1 if self.ecf is not None else self.n_trajectories

    @property
    def weight(self) -> float:
        """Factor applied to each column's squared residual."""
        return 1.0 if self.ecf is not None else 1.0 / self.n_trajectories

    def chunks(self) -> List[List[int]]:
        """Pair indices grouped by batch_size."""
        size = self.cfg.batch_size
        pairs = list(range(self.n_pairs))
        return [pairs[i : i + size] for i in range(0, len(pairs), size)]

    def snapshot(self, j: int) -> np.ndarray:
        """Columns representing snapshot j, shape (n_points, columns)."""
        if self.ecf is not None:
            return self.ecf[:, j : j + 1]
        return point_cf_values(
            self.states[:, j], self.grid, self.cfg.gaussian_reg
        ).T

    def columns(self, pairs: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Stacked initial conditions and targets for the given pairs."""
        initial = np.concatenate([self.snapshot(j) for j in pairs], axis=1)
        target = np.concatenate(
            [self.snapshot(j + 1) for j in pairs], axis=1
        )
        return initial, target


def _pair_sums(
    squared: np.ndarray, pairs: Sequence[int], per_pair: int
) -> List[float]:
    return [
        float(np.sum(squared[i * per_pair : (i + 1) * per_pair]))
        for i in range(len(pairs))
    ]


def _run_chunk(
    propagator: Propagator,
    data: SnapshotPairs,
    pairs: Sequence[int],
    gradient: bool,
) -> Tuple[List[float], Optional[np.ndarray]]:
    """Squared residual per pair and, with gradient, the shift sums A_r."""
    cfg = data.cfg
    initial, target = data.columns(pairs)
    try:
        final, tape = evolve_values(
            propagator, initial, cfg.nu, gradient, cfg.checkpoint_every
        )
    except InstabilityError as err:
        offender = pairs[0]
        if err.column is not None:
            offender = pairs[err.column // data.columns_per_pair]
        raise LossError(f"snapshot pair {offender}: {err}") from err

    window = data.window
    residual = final[window] - target[window]
    squared = data.weight * np.sum(np.abs(residual) ** 2, axis=0)
    sums = _pair_sums(squared, pairs, data.columns_per_pair)
    if tape is None:
        return sums, None

    n_points = propagator.grid.n_points
    table = propagator.table
    decay = propagator.decay[:, None]
    block = max(1, GATHER_LIMIT // (n_points * initial.shape[1]))
    shifts = np.zeros(table.shape, dtype=complex)

    adjoint = np.zeros_like(final)
    adjoint[window] = data.weight * residual
    for _, state in tape.states_reversed():
        mu = np.conj(adjoint) * decay
        extended = np.vstack([state, np.zeros((1, state.shape[1]))])
        for start in range(0, table.shape[0], block):
            gathered = extended[table[start : start + block]]
            shifts[start : start + block] += np.einsum(
                "rpb,pb->rp", gathered, mu
            )
        adjoint = propagator.apply_adjoint(adjoint)
    return sums, shifts


def _evaluate(
    model: FourierDrift,
    data: SnapshotPairs,
    gradient: bool,
) -> Tuple[List[float], Optional[np.ndarray], Propagator]:
    """Run all chunks, in parallel when configured, reduced in order."""
    cfg = data.cfg
    propagator = Propagator(
        cfg.propagator_config(model, data.dt, data.grid)
    )
    chunks = data.chunks()

    def run(pairs: List[int]) -> Tuple[List[float], Optional[np.ndarray]]:
        return _run_chunk(propagator, data, pairs, gradient)

    if cfg.workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, chunks))
    else:
        results = [run(pairs) for pairs in chunks]

    per_pair = [value for sums, _ in results for value in sums]
    shifts = None
    if gradient:
        shifts = np.zeros_like(results[0][1])
        for _, partial in results:
            shifts += partial
    return per_pair, shifts, propagator


def _assemble_gradient(
    model: FourierDrift, propagator: Propagator, shifts: np.ndarray
) -> np.ndarray:
    """dLoss/dtheta as a complex array G with dL = Re(G dtheta).

    G[a, q] = i w Y_q(a) - w^2 sum_b sum_m theta^b_m X_qm(a + b), where
    Y_q(r) = sum_j A_r(j) j_q and X_qm(r) = sum_j A_r(j) j_q j_m.
    """
    J, dim = model.J, model.dim
    w = propagator.w
    idx = propagator.grid.indices.astype(float)
    y_sums = shifts @ idx
    x_sums = np.einsum("rp,pq,pm->rqm", shifts, idx, idx)

    modes = model.modes
    inner = np.array([flat_index(j, 2 * J) for j in modes])
    pair_modes = modes[:, None, :] + modes[None, :, :] + 2 * J
    pair_index = np.ravel_multi_index(
        tuple(np.moveaxis(pair_modes, -1, 0)), (4 * J + 1,) * dim
    )
    quadratic = np.einsum("bm,abqm->aq", model.coeffs, x_sums[pair_index])
    return 1j * w * y_sums[inner] - w**2 * quadratic


def _l1_subgradient(coeffs: np.ndarray, mu: float) -> np.ndarray:
    """mu theta / |theta| per entry in to_real layout, zero at zero."""
    modulus = np.abs(coeffs)
    unit = np.zeros_like(coeffs)
    nonzero = modulus > 0.0
    unit[nonzero] = coeffs[nonzero] / modulus[nonzero]
    return mu * to_real(unit)


def mmd_loss(model: FourierDrift, dataset: Dataset, cfg: LossConfig) -> float:
    """MMD loss over snapshot pairs plus mu times the L1 norm of theta.

    Each pair starts from the data CF of its first snapshot.
    """
    return loss_on_pairs(model, SnapshotPairs(dataset, cfg, model.J))


def loss_on_pairs(model: FourierDrift, data: SnapshotPairs) -> float:
    """mmd_loss on prepared snapshot pairs."""
    per_pair, _, _ = _evaluate(model, data, gradient=False)
    return 0.5 * sum(per_pair) + data.cfg.mu * model.l1_norm()


def gradient_on_pairs(
    model: FourierDrift, data: SnapshotPairs, basis: np.ndarray
) -> GradientReport:
    """Loss and adjoint gradient on prepared snapshot pairs."""
    per_pair, shifts, propagator = _evaluate(model, data, gradient=True)
    data_loss = 0.5 * sum(per_pair)
    mu = data.cfg.mu

    complex_grad = _assemble_gradient(model, propagator, shifts)
    grad_real = np.concatenate(
        [complex_grad.real.ravel(), -complex_grad.imag.ravel()]
    )
    if mu > 0.0:
        grad_real = grad_real + _l1_subgradient(model.coeffs, mu)

    return GradientReport(
        loss=data_loss + mu * model.l1_norm(),
        data_loss=data_loss,
        grad=basis.T @ grad_real,
        grad_coeffs=grad_real,
        residuals=[math.sqrt(v) for v in per_pair],
    )


def mmd_gradient(
    model: FourierDrift, dataset: Dataset, cfg: LossConfig
) -> GradientReport:
    """Loss and its exact discrete adjoint gradient.

    The gradient is taken over the free real parameters of the model's
    constraint set (see FreeParameters).
    """
    data = SnapshotPairs(dataset, cfg, model.J)
    return gradient_on_pairs(model, data, FreeParameters(model).basis)


def chained_loss(
    model: FourierDrift, dataset: Dataset, cfg: LossConfig
) -> float:
    """Loss of free-running predictions from the first snapshot onwards.

    Uses averaged targets and never restarts from data; evaluation only.
    """
    data = SnapshotPairs(dataset, cfg, model.J)
    ecf = data.ecf if data.ecf is not None else data.averaged()
    propagator = Propagator(
        cfg.propagator_config(model, data.dt, data.grid)
    )
    values = ecf[:, 0]
    total = 0.0
    for j in range(data.n_pairs):
        try:
            values, _ = evolve_values(propagator, values, cfg.nu)
        except InstabilityError as err:
            raise LossError(f"snapshot pair {j}: {err}") from err
        residual = (values - ecf[:, j + 1])[data.window]
        total += 0.5 * float(np.sum(np.abs(residual) ** 2))
    return total


def train(
    dataset: Dataset, loss_cfg: LossConfig, train_cfg: TrainConfig
) -> Tuple[FourierDrift, RunReport]:
    """Fit theta by trust-region SR1 on the adjoint gradient."""
    started = time.perf_counter()
    grid = loss_cfg.grid
    template = train_cfg.initial or FourierDrift.zeros(
        train_cfg.J, grid.L, grid.dim
    )
    template = project_symmetry(template, train_cfg.symmetry)
    params = FreeParameters(template)
    data = SnapshotPairs(dataset, loss_cfg, template.J)
    logger.info(
        "Training J=%d on %d pairs (%s, pad %d, %d free parameters)",
        template.J,
        data.n_pairs,
        loss_cfg.mode,
        data.pad,
        params.size,
    )

    failures: List[LossError] = []

    def objective(p: np.ndarray) -> Tuple[float, np.ndarray]:
        try:
            report = gradient_on_pairs(params.to_model(p), data, params.basis)
        except LossError as err:
            logger.warning("Rejecting trial point: %s", err)
            failures.append(err)
            return math.inf, np.full(p.shape, np.nan)
        return report.loss, report.grad

    result = minimize_trust_region(
        objective, params.from_model(template), train_cfg.options()
    )
    if result.status == 4:
        raise LossError(f"loss not finite at the initial model: {failures}")

    model = params.to_model(result.x)
    report = RunReport(
        status=result.status,
        message=result.message,
        loss=result.fun,
        grad_norm=float(np.linalg.norm(result.grad)),
        iterations=result.iterations,
        evaluations=result.evaluations,
        n_parameters=params.size,
        wall_time=time.perf_counter() - started,
        history=[record.as_dict() for record in result.history],
        warnings=list(result.warnings),
        settings={
            "J": template.J,
            "L": grid.L,
            "M": grid.M,
            "n_L": grid.n_L,
            "nu": loss_cfg.nu,
            "mode": loss_cfg.mode,
            "mu": loss_cfg.mu,
            "pad": data.pad,
            "gaussian_reg": loss_cfg.gaussian_reg,
            "alpha": loss_cfg.alpha,
            "g": [float(v) for v in loss_cfg.g],
            "seed": train_cfg.seed,
        },
    )
    logger.info(
        "Training finished: %s (loss %.6e)", report.message, report.loss
    )
    return model, report
