"""levyid - Lévy SDE drift identification : Evaluation and run artifacts."""

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from scipy import ndimage, stats

from .drift import FourierDrift
from .errors import LevyIdError
from .identification import LossConfig, SnapshotPairs, loss_on_pairs
from .simulator import Dataset, DriftSpec, PointInit, SimulationConfig

logger = logging.getLogger(__name__)

PAIRING_NOTE = (
    "mmae/miqr pair trajectories by index with independent noise per set; "
    "shared_noise_* reuse the reference noise for the learned model"
)

Field = Union[FourierDrift, DriftSpec]


class EvaluationError(LevyIdError):
    """Error class for evaluations without usable inputs."""


@dataclass
class EvalReport:
    """Accuracy figures of a learned drift."""

    coeff_mae: Optional[float] = None
    mmae: Optional[float] = None
    miqr: Optional[float] = None
    reference_mmae: Optional[float] = None
    reference_miqr: Optional[float] = None
    shared_noise_mmae: Optional[float] = None
    shared_noise_miqr: Optional[float] = None
    drift_error: Optional[float] = None
    loss: Optional[float] = None
    chained_loss: Optional[float] = None
    dropped_trajectories: int = 0
    n_test: int = 0
    notes: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict[str, Any]:
        """Plain types for YAML output."""
        result: Dict[str, Any] = {}
        for key, value in self.__dict__.items():
            if isinstance(value, (float, np.floating)):
                value = float(value)
            result[key] = value
        return result

    def write(self, path: Union[str, Path]) -> None:
        """Write the report as YAML."""
        with open(path, "w") as file_handle:
            yaml.safe_dump(self.as_dict(), file_handle, sort_keys=False)


@dataclass
class RunManifest:
    """Files, seeds and settings of one command invocation."""

    command: str
    version: str
    files: Dict[str, str] = field(default_factory=dict)
    seeds: Dict[str, int] = field(default_factory=dict)
    settings: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    created: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )

    def add_file(self, role: str, path: Union[str, Path]) -> None:
        """Record a file by its role."""
        self.files[role] = str(path)

    def write(self, path: Union[str, Path]) -> None:
        """Write the manifest, refusing if a referenced file is missing."""
        missing = [
            f"{role}={name}"
            for role, name in self.files.items()
            if not Path(name).exists()
        ]
        if missing:
            raise EvaluationError(
                f"manifest references missing files: {', '.join(missing)}"
            )
        settings = {
            section: {
                key: list(value) if isinstance(value, tuple) else value
                for key, value in values.items()
            }
            for section, values in self.settings.items()
        }
        with open(path, "w") as file_handle:
            yaml.safe_dump(
                {
                    "command": self.command,
                    "version": self.version,
                    "created": self.created,
                    "files": dict(self.files),
                    "seeds": dict(self.seeds),
                    "settings": settings,
                },
                file_handle,
                sort_keys=False,
            )
        logger.info("Wrote run manifest %s", path)


# COEFFICIENTS AND LOSS LANDSCAPE #


def coeff_mae(learned: FourierDrift, truth: FourierDrift) -> float:
    """Mean complex modulus of the coefficient differences."""
    if (learned.J, learned.L, learned.dim) != (truth.J, truth.L, truth.dim):
        raise EvaluationError(
            f"cannot compare J={learned.J}, L={learned.L}, "
            f"dim={learned.dim} with J={truth.J}, L={truth.L}, "
            f"dim={truth.dim}"
        )
    return float(np.mean(np.abs(learned.coeffs - truth.coeffs)))


def loss_scan(
    dataset: Dataset,
    embedding: Callable[[float], FourierDrift],
    theta_values: Sequence[float],
    cfg: LossConfig,
) -> List[Tuple[float, float]]:
    """mmd_loss of embedding(theta) for every scan point."""
    data = SnapshotPairs(dataset, cfg, embedding(0.0).J)
    rows = []
    for theta in theta_values:
        loss = loss_on_pairs(embedding(float(theta)), data)
        logger.debug("scan theta=%.4f loss=%.6e", theta, loss)
        rows.append((float(theta), loss))
    if rows:
        best = min(rows, key=lambda row: row[1])
        logger.info("Scan minimum %.6e at theta=%.4f", best[1], best[0])
    return rows


def write_scan_csv(
    rows: Sequence[Tuple[float, float]], path: Union[str, Path]
) -> None:
    """Write (theta, loss) rows."""
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(["theta", "loss"])
        for theta, loss in rows:
            writer.writerow([repr(float(theta)), repr(float(loss))])


# TRAJECTORY ERRORS #


def _as_drift(model: Field) -> DriftSpec:
    if isinstance(model, DriftSpec):
        return model
    return DriftSpec.fourier(model)


def _stacked_states(dataset: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    states = np.stack([t.states for t in dataset.trajectories])
    finite = np.array(
        [
            t.valid and bool(np.all(np.isfinite(t.states)))
            for t in dataset.trajectories
        ]
    )
    return states, finite


def median_errors(
    reference: np.ndarray, other: np.ndarray
) -> Tuple[float, float]:
    """MMAE and MIQR of index-paired trajectory stacks (K, N, d)."""
    errors = np.linalg.norm(reference - other, axis=2)
    mmae = float(np.median(np.median(errors, axis=1)))
    miqr = float(np.median(stats.iqr(errors, axis=1)))
    return mmae, miqr


def trajectory_test_error(
    learned: Field,
    truth: DriftSpec,
    sim: SimulationConfig,
    n_test: int,
    seed: int,
) -> EvalReport:
    """Compare learned and true dynamics on fresh trajectories from 0.

    Three sets are drawn with independent noise: a reference set and a
    baseline set from the truth, and a test set from the learned drift.
    A fourth set reruns the learned drift on the reference noise.
    Indices with a non-finite state in any set are dropped.
    """
    if n_test < 1:
        raise EvaluationError("n_test must be at least 1")
    learned_drift = _as_drift(learned)
    if learned_drift.dim != truth.dim:
        raise EvaluationError(
            f"learned dim {learned_drift.dim} != true dim {truth.dim}"
        )
    init = PointInit((0.0,) * truth.dim)
    reference_seed, baseline_seed, test_seed = (
        int(v) for v in np.random.SeedSequence(seed).generate_state(3)
    )

    reference, ok_reference = _stacked_states(
        sim.run(truth, init, n_test, reference_seed)
    )
    baseline, ok_baseline = _stacked_states(
        sim.run(truth, init, n_test, baseline_seed)
    )
    test, ok_test = _stacked_states(
        sim.run(learned_drift, init, n_test, test_seed)
    )
    shared, ok_shared = _stacked_states(
        sim.run(learned_drift, init, n_test, reference_seed)
    )

    keep = ok_reference & ok_baseline & ok_test & ok_shared
    dropped = int(n_test - np.count_nonzero(keep))
    if dropped == n_test:
        raise EvaluationError(f"all {n_test} test trajectories were dropped")
    if dropped:
        logger.warning("Dropped %d of %d test trajectories", dropped, n_test)

    mmae, miqr = median_errors(reference[keep], test[keep])
    reference_mmae, reference_miqr = median_errors(
        reference[keep], baseline[keep]
    )
    shared_mmae, shared_miqr = median_errors(reference[keep], shared[keep])
    logger.info(
        "MMAE %.4f (baseline %.4f), MIQR %.4f (baseline %.4f)",
        mmae,
        reference_mmae,
        miqr,
        reference_miqr,
    )
    return EvalReport(
        mmae=mmae,
        miqr=miqr,
        reference_mmae=reference_mmae,
        reference_miqr=reference_miqr,
        shared_noise_mmae=shared_mmae,
        shared_noise_miqr=shared_miqr,
        dropped_trajectories=dropped,
        n_test=n_test,
        notes=[PAIRING_NOTE],
    )


def drift_error_on_box(
    learned: Field,
    truth: Field,
    lo: float,
    hi: float,
    resolution: int = 101,
) -> float:
    """Mean absolute field difference on an equispaced grid over [lo, hi]^d."""
    learned_drift, true_drift = _as_drift(learned), _as_drift(truth)
    if learned_drift.dim != true_drift.dim:
        raise EvaluationError("fields have different dimensions")
    if not hi > lo or resolution < 2:
        raise EvaluationError("need hi > lo and resolution >= 2")
    axis = np.linspace(lo, hi, resolution)
    mesh = np.meshgrid(*([axis] * true_drift.dim), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    return float(np.mean(np.abs(learned_drift(points) - true_drift(points))))


# PHASE PORTRAITS #


@dataclass
class FixedPoint:
    """A sign-change cell center and its linear type."""

    x: Tuple[float, float]
    kind: str
    eigenvalues: Tuple[complex, complex]


@dataclass
class PhasePortrait:
    """Field samples on a grid and the fixed-point candidates found."""

    points: np.ndarray
    vectors: np.ndarray
    fixed_points: List[FixedPoint] = field(default_factory=list)
    degenerate: bool = False


def classify_fixed_point(
    drift: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    step: float = 1e-5,
) -> Tuple[str, np.ndarray]:
    """Type of a 2D fixed point from a central-difference Jacobian."""
    jacobian = np.empty((2, 2))
    for axis in range(2):
        offset = np.zeros(2)
        offset[axis] = step
        plus = drift((x + offset)[None, :])[0]
        minus = drift((x - offset)[None, :])[0]
        jacobian[:, axis] = (plus - minus) / (2.0 * step)
    eigenvalues = np.linalg.eigvals(jacobian)
    scale = max(1.0, float(np.max(np.abs(eigenvalues))))
    real = eigenvalues.real / scale
    if np.all(real < -1e-8):
        kind = "stable"
    elif np.all(real > 1e-8):
        kind = "unstable"
    elif real.min() < -1e-8 and real.max() > 1e-8:
        kind = "saddle"
    else:
        kind = "center"
    return kind, eigenvalues


def _sign_change(component: np.ndarray) -> np.ndarray:
    corners = np.stack(
        [
            component[:-1, :-1],
            component[1:, :-1],
            component[:-1, 1:],
            component[1:, 1:],
        ]
    )
    low, high = corners.min(axis=0), corners.max(axis=0)
    return (low <= 0.0) & (high >= 0.0) & (high > low)


def phase_portrait(
    model: Field,
    bounds: Sequence[float],
    resolution: int,
) -> PhasePortrait:
    """Sample a 2D field and locate its fixed-point candidates.

    bounds is (x1_lo, x1_hi, x2_lo, x2_hi). Adjacent sign-change cells are
    merged; each group reports the cell center with the smallest |f|.
    """
    drift = _as_drift(model)
    if drift.dim != 2:
        raise EvaluationError(f"phase portraits need dim 2, got {drift.dim}")
    if len(bounds) != 4 or not (
        bounds[1] > bounds[0] and bounds[3] > bounds[2]
    ):
        raise EvaluationError("bounds must be (x1_lo, x1_hi, x2_lo, x2_hi)")
    if resolution < 2:
        raise EvaluationError("resolution must be at least 2")

    x1 = np.linspace(bounds[0], bounds[1], resolution)
    x2 = np.linspace(bounds[2], bounds[3], resolution)
    mesh = np.meshgrid(x1, x2, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    values = drift(points)
    portrait = PhasePortrait(points=points, vectors=values)

    if not np.any(values):
        portrait.degenerate = True
        logger.warning("Field vanishes on the whole grid")
        return portrait

    grid_values = values.reshape(resolution, resolution, 2)
    cells = _sign_change(grid_values[..., 0]) & _sign_change(
        grid_values[..., 1]
    )
    labels, count = ndimage.label(cells, structure=np.ones((3, 3)))
    centers1 = 0.5 * (x1[:-1] + x1[1:])
    centers2 = 0.5 * (x2[:-1] + x2[1:])
    for label in range(1, count + 1):
        rows, cols = np.nonzero(labels == label)
        candidates = np.stack([centers1[rows], centers2[cols]], axis=1)
        norms = np.linalg.norm(drift(candidates), axis=1)
        x = candidates[int(np.argmin(norms))]
        kind, eigenvalues = classify_fixed_point(drift, x)
        portrait.fixed_points.append(
            FixedPoint(
                x=(float(x[0]), float(x[1])),
                kind=kind,
                eigenvalues=(complex(eigenvalues[0]), complex(eigenvalues[1])),
            )
        )
    logger.info(
        "Found %d fixed-point candidates: %s",
        len(portrait.fixed_points),
        ", ".join(
            f"{p.kind} ({p.x[0]:.2f}, {p.x[1]:.2f})"
            for p in portrait.fixed_points
        ),
    )
    return portrait


def fixed_points_path(path: Union[str, Path]) -> Path:
    """Companion file for the fixed-point candidates of a portrait CSV."""
    path = Path(path)
    return path.with_name(f"{path.stem}_fixed_points.csv")


def export_phase_portrait(
    model: Field,
    bounds: Sequence[float],
    resolution: int,
    path: Union[str, Path],
) -> PhasePortrait:
    """Write x1, x2, f1, f2 rows and the fixed-point candidates."""
    portrait = phase_portrait(model, bounds, resolution)
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(["x1", "x2", "f1", "f2"])
        for x, f in zip(portrait.points, portrait.vectors):
            writer.writerow([repr(float(v)) for v in (*x, *f)])
    with open(fixed_points_path(path), "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(["x1", "x2", "kind"])
        if portrait.degenerate:
            writer.writerow(["", "", "degenerate"])
        for point in portrait.fixed_points:
            writer.writerow([repr(point.x[0]), repr(point.x[1]), point.kind])
    logger.info("Wrote %d field rows to %s", len(portrait.points), path)
    return portrait
