"""levyid - Lévy SDE drift identification : Trajectory simulation."""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from .drift import FourierDrift
from .errors import LevyIdError
from .stable import check_alpha, check_step, draw_increments, stream

logger = logging.getLogger(__name__)

FORMAT_TAG = "levyid-dataset"
FORMAT_VERSION = 1
NOISE_BLOCK = 1024


class DatasetError(LevyIdError, ValueError):
    """Error class for inconsistent datasets or generation settings."""


class EmptyDatasetError(DatasetError):
    """Error class for datasets without any usable trajectory."""


class DatasetFormatError(DatasetError):
    """Error class for malformed dataset files."""

    def __init__(self, line: int, message: str) -> None:
        """Keep the offending line number next to the message."""
        super().__init__(f"line {line}: {message}")
        self.line = line


# GROUND TRUTH FIELDS #


def _sine1d(x: np.ndarray) -> np.ndarray:
    return np.sin(x)


def _doublewell1d(x: np.ndarray) -> np.ndarray:
    return x - x**3


def _ou(x: np.ndarray) -> np.ndarray:
    return -x


def _trig_singlewell2d(x: np.ndarray) -> np.ndarray:
    return np.stack([np.sin(x[:, 1]), -np.sin(x[:, 0])], axis=1)


def _trig_doublewell2d(x: np.ndarray) -> np.ndarray:
    # V(x) = ((sin x/2)^2 - 4)^2 / 10
    dv = (np.sin(x[:, 0] / 2.0) ** 2 - 4.0) * np.sin(x[:, 0]) / 10.0
    return np.stack([np.sin(x[:, 1]), -dv], axis=1)


def _poly_doublewell2d(x: np.ndarray) -> np.ndarray:
    # V(x) = (x^2 - 4)^2 / 10, with dissipation -x/4
    x1 = x[:, 0]
    return np.stack(
        [x[:, 1], 0.4 * x1 * (4.0 - x1**2) - x1 / 4.0], axis=1
    )


def _maier_stein(x: np.ndarray) -> np.ndarray:
    x1, x2 = x[:, 0], x[:, 1]
    return np.stack(
        [x1 - x1**3 - x1 * x2**2, -(1.0 + x1**2) * x2], axis=1
    )


BUILTIN_DRIFTS: Dict[str, Tuple[int, Callable[[np.ndarray], np.ndarray]]] = {
    "sine1d": (1, _sine1d),
    "doublewell1d": (1, _doublewell1d),
    "ou": (1, _ou),
    "trig_singlewell2d": (2, _trig_singlewell2d),
    "trig_doublewell2d": (2, _trig_doublewell2d),
    "poly_doublewell2d": (2, _poly_doublewell2d),
    "maier_stein": (2, _maier_stein),
}


@dataclass(frozen=True)
class DriftSpec:
    """Ground-truth drift: a built-in field by name, or a Fourier model."""

    name: str
    model: Optional[FourierDrift] = None

    def __post_init__(self) -> None:
        """Check the tag against the known fields."""
        if self.name == "fourier":
            if self.model is None:
                raise DatasetError("drift 'fourier' needs a FourierDrift")
        elif self.name not in BUILTIN_DRIFTS:
            raise DatasetError(
                f"unknown drift '{self.name}' "
                f"(known: {', '.join(sorted(BUILTIN_DRIFTS))}, fourier)"
            )

    @classmethod
    def fourier(cls, model: FourierDrift) -> "DriftSpec":
        """Wrap a Fourier model as a drift."""
        return cls(name="fourier", model=model)

    @property
    def dim(self) -> int:
        """State-space dimension of the field."""
        if self.model is not None:
            return self.model.dim
        return BUILTIN_DRIFTS[self.name][0]

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the field on a batch of states of shape (P, d)."""
        x = np.asarray(x, dtype=float)
        if self.model is not None:
            return self.model.evaluate_field(x)
        return BUILTIN_DRIFTS[self.name][1](x)


# INITIAL CONDITIONS #


@dataclass(frozen=True)
class PointInit:
    """Every trajectory starts from the same point."""

    point: Tuple[float, ...]

    def draw(
        self, indices: Sequence[int], dim: int, rngs: Sequence[Any]
    ) -> np.ndarray:
        """Return the initial states of the given trajectories."""
        point = np.broadcast_to(np.asarray(self.point, dtype=float), (dim,))
        return np.tile(point, (len(indices), 1))


@dataclass(frozen=True)
class GaussianInit:
    """First coordinate normal(0, std), remaining coordinates zero."""

    std: float = 1.0 / 3.0

    def draw(
        self, indices: Sequence[int], dim: int, rngs: Sequence[Any]
    ) -> np.ndarray:
        """Return the initial states, one normal draw per trajectory."""
        x0 = np.zeros((len(indices), dim))
        x0[:, 0] = [rng.normal(0.0, self.std) for rng in rngs]
        return x0


@dataclass(frozen=True)
class GridInit:
    """Starts on an equispaced per_axis^d grid over [lo, hi]^d."""

    lo: float = -1.0
    hi: float = 1.0
    per_axis: int = 10

    def points(self, dim: int) -> np.ndarray:
        """All grid points in row-major order."""
        axis = np.linspace(self.lo, self.hi, self.per_axis)
        mesh = np.meshgrid(*([axis] * dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def draw(
        self, indices: Sequence[int], dim: int, rngs: Sequence[Any]
    ) -> np.ndarray:
        """Return the grid points assigned to the given trajectories."""
        return self.points(dim)[np.asarray(indices, dtype=int)]


InitSpec = Union[PointInit, GaussianInit, GridInit]


def describe_init(init: InitSpec) -> str:
    """Short text form of an initial-condition spec for provenance."""
    if isinstance(init, PointInit):
        return "point " + " ".join(repr(float(v)) for v in init.point)
    if isinstance(init, GaussianInit):
        return f"gaussian {init.std!r}"
    return f"grid {init.lo!r} {init.hi!r} {init.per_axis}"


# DATA TYPES #


@dataclass
class Trajectory:
    """Saved states of one path; rows after a blow-up are NaN."""

    states: np.ndarray
    dt: float
    valid: bool = True

    def inside(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        """True when every saved state is finite and within [lo, hi]."""
        states = self.states
        return bool(
            np.all(np.isfinite(states))
            and np.all(states >= lo)
            and np.all(states <= hi)
        )


@dataclass
class Dataset:
    """A collection of equally long, equally spaced trajectories."""

    trajectories: List[Trajectory]
    dim: int
    dt: float
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        """Check the shared-shape invariant."""
        lengths = {t.states.shape for t in self.trajectories}
        if len(lengths) > 1:
            raise DatasetError(f"trajectory shapes differ: {sorted(lengths)}")
        for trajectory in self.trajectories:
            if trajectory.states.ndim != 2 or (
                trajectory.states.shape[1] != self.dim
            ):
                raise DatasetError(
                    f"trajectory states must be (N, {self.dim}) arrays"
                )
            if not math.isclose(trajectory.dt, self.dt, rel_tol=1e-12):
                raise DatasetError("trajectory dt differs from dataset dt")

    @property
    def n_trajectories(self) -> int:
        """Number of trajectories, valid or not."""
        return len(self.trajectories)

    @property
    def n_observations(self) -> int:
        """Number of saved states per trajectory."""
        if not self.trajectories:
            return 0
        return self.trajectories[0].states.shape[0]

    @property
    def n_valid(self) -> int:
        """Number of trajectories flagged valid."""
        return sum(1 for t in self.trajectories if t.valid)

    def valid_states(self) -> np.ndarray:
        """States of the valid trajectories, shape (n_valid, N, d)."""
        valid = [t.states for t in self.trajectories if t.valid]
        if not valid:
            raise EmptyDatasetError("dataset has no valid trajectories")
        return np.stack(valid)

    def snapshot(self, index: int) -> np.ndarray:
        """Valid states at one observation index, shape (n_valid, d)."""
        if not 0 <= index < self.n_observations:
            raise DatasetError(
                f"snapshot index {index} outside [0, {self.n_observations})"
            )
        return self.valid_states()[:, index, :]

    def summary(self) -> str:
        """One-line description of the dataset."""
        return (
            f"n_T={self.n_trajectories} (valid {self.n_valid}), "
            f"N={self.n_observations}, dt={self.dt!r}, dim={self.dim}"
        )


# SIMULATION #


def euler_maruyama_step(
    x: np.ndarray,
    drift: DriftSpec,
    g: np.ndarray,
    alpha: float,
    h: float,
    noise: np.ndarray,
) -> np.ndarray:
    """Advance x by x + f(x) h + diag(g) noise.

    Works on a single state (d,) or a batch (P, d). Non-finite results are
    returned as they are; the caller flags the trajectory.
    """
    check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    batch = np.atleast_2d(x)
    with np.errstate(all="ignore"):
        stepped = batch + drift(batch) * h + np.asarray(g) * noise
    return stepped.reshape(x.shape)


def _simulate_chunk(
    indices: Sequence[int],
    drift: DriftSpec,
    g: np.ndarray,
    alpha: float,
    init: InitSpec,
    fine_step: float,
    n_saved: int,
    save_stride: int,
    seed: int,
) -> np.ndarray:
    """Simulate the trajectories with the given indices."""
    dim = drift.dim
    rngs = [stream(seed, k) for k in indices]
    x = init.draw(indices, dim, rngs)

    states = np.full((len(indices), n_saved, dim), np.nan)
    alive = np.all(np.isfinite(x), axis=1)
    states[alive, 0] = x[alive]

    n_steps = (n_saved - 1) * save_stride
    step = 0
    while step < n_steps:
        block = min(NOISE_BLOCK, n_steps - step)
        noise = np.stack(
            [draw_increments(alpha, fine_step, (block, dim), r) for r in rngs]
        )
        for b in range(block):
            x = euler_maruyama_step(x, drift, g, alpha, fine_step, noise[:, b])
            alive &= np.all(np.isfinite(x), axis=1)
            step += 1
            if step % save_stride == 0:
                states[alive, step // save_stride] = x[alive]

    return states


def generate_dataset(
    drift: DriftSpec,
    g: Sequence[float],
    alpha: float,
    init: InitSpec,
    fine_step: float,
    total_steps: int,
    save_stride: int,
    n_trajectories: int,
    seed: int,
    workers: int = 1,
) -> Dataset:
    """Generate trajectories by Euler-Maruyama and keep every save_stride-th.

    Saved indices are 0, save_stride, ..., so each trajectory has
    total_steps // save_stride + 1 observations spaced
    fine_step * save_stride apart. Trajectory k draws from its own stream
    keyed by (seed, k); the result does not depend on workers.
    """
    alpha = check_alpha(alpha)
    fine_step = check_step(fine_step)
    dim = drift.dim
    g_vec = np.broadcast_to(np.asarray(g, dtype=float), (dim,)).copy()
    if save_stride < 1 or total_steps < save_stride:
        raise DatasetError(
            f"need 1 <= save_stride <= total_steps "
            f"(got {save_stride}, {total_steps})"
        )
    if n_trajectories < 1:
        raise DatasetError("n_trajectories must be at least 1")
    if isinstance(init, GridInit) and init.per_axis**dim != n_trajectories:
        raise DatasetError(
            f"grid init gives {init.per_axis ** dim} starts "
            f"but n_trajectories is {n_trajectories}"
        )

    n_saved = total_steps // save_stride + 1
    dt = fine_step * save_stride
    logger.info(
        "Simulating %d trajectories of '%s' (%d saved states, dt=%s)",
        n_trajectories,
        drift.name,
        n_saved,
        dt,
    )

    chunks = np.array_split(
        np.arange(n_trajectories), max(1, min(workers, n_trajectories))
    )

    def run(indices: np.ndarray) -> np.ndarray:
        return _simulate_chunk(
            list(indices),
            drift,
            g_vec,
            alpha,
            init,
            fine_step,
            n_saved,
            save_stride,
            seed,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    states = np.concatenate(parts, axis=0)

    trajectories = [
        Trajectory(states=s, dt=dt, valid=bool(np.all(np.isfinite(s))))
        for s in states
    ]
    dropped = sum(1 for t in trajectories if not t.valid)
    if dropped:
        logger.warning("%d trajectories overflowed and were flagged", dropped)

    provenance = {
        "drift": drift.name,
        "alpha": alpha,
        "g": [float(v) for v in g_vec],
        "seed": int(seed),
        "init": describe_init(init),
        "fine_step": fine_step,
        "total_steps": int(total_steps),
        "save_stride": int(save_stride),
        "invalid": int(dropped),
    }
    return Dataset(
        trajectories=trajectories, dim=dim, dt=dt, provenance=provenance
    )


@dataclass(frozen=True)
class SimulationConfig:
    """Noise and step settings shared by several generate_dataset calls."""

    g: Tuple[float, ...]
    alpha: float
    fine_step: float
    total_steps: int
    save_stride: int
    workers: int = 1

    def run(
        self, drift: DriftSpec, init: InitSpec, n_trajectories: int, seed: int
    ) -> Dataset:
        """Generate a dataset with these settings."""
        return generate_dataset(
            drift,
            self.g,
            self.alpha,
            init,
            self.fine_step,
            self.total_steps,
            self.save_stride,
            n_trajectories,
            seed,
            self.workers,
        )


def filter_box(
    dataset: Dataset, lo: Sequence[float], hi: Sequence[float]
) -> Dataset:
    """Keep the valid trajectories that never leave the box [lo, hi]."""
    lo_arr = np.broadcast_to(np.asarray(lo, dtype=float), (dataset.dim,))
    hi_arr = np.broadcast_to(np.asarray(hi, dtype=float), (dataset.dim,))
    if np.any(lo_arr >= hi_arr):
        raise DatasetError(f"box needs lo < hi (got {lo}, {hi})")

    kept = [
        t for t in dataset.trajectories if t.valid and t.inside(lo_arr, hi_arr)
    ]
    if not kept:
        raise EmptyDatasetError(
            "no trajectory stays inside the box; training is impossible"
        )
    logger.info(
        "Box filter retained %d of %d trajectories",
        len(kept),
        dataset.n_trajectories,
    )

    provenance = dict(dataset.provenance)
    provenance["box_lo"] = [float(v) for v in lo_arr]
    provenance["box_hi"] = [float(v) for v in hi_arr]
    provenance["retained"] = len(kept)
    provenance["generated"] = dataset.n_trajectories
    return replace(dataset, trajectories=kept, provenance=provenance)


# PERSISTENCE #


def _dump_value(value: Any) -> str:
    return yaml.safe_dump(
        value, default_flow_style=True, width=float("inf")
    ).splitlines()[0]


def write_dataset(dataset: Dataset, path: Union[str, Path]) -> None:
    """Write the dataset as a key=value header plus one CSV block each."""
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow([f"{FORMAT_TAG}={FORMAT_VERSION}"])
        writer.writerow([f"dim={dataset.dim}"])
        writer.writerow([f"n_trajectories={dataset.n_trajectories}"])
        writer.writerow([f"n_observations={dataset.n_observations}"])
        writer.writerow([f"dt={dataset.dt!r}"])
        for key, value in dataset.provenance.items():
            writer.writerow([f"provenance.{key}={_dump_value(value)}"])

        for index, trajectory in enumerate(dataset.trajectories):
            writer.writerow(
                [f"trajectory={index}", f"valid={int(trajectory.valid)}"]
            )
            for row in trajectory.states:
                writer.writerow([repr(float(v)) for v in row])


def _header_value(key: str, text: str, line: int, kind: type) -> Any:
    try:
        return kind(text)
    except ValueError as err:
        raise DatasetFormatError(line, f"bad value for '{key}'") from err


def read_dataset(path: Union[str, Path]) -> Dataset:
    """Read a dataset written by write_dataset."""
    header: Dict[str, Any] = {}
    provenance: Dict[str, Any] = {}
    blocks: List[Tuple[bool, List[List[float]]]] = []

    with open(path, newline="") as file_handle:
        reader = csv.reader(file_handle)
        for row in reader:
            line = reader.line_num
            if not row:
                continue

            if row[0].startswith("trajectory="):
                if len(row) != 2 or not row[1].startswith("valid="):
                    raise DatasetFormatError(line, "bad trajectory header")
                blocks.append((row[1] == "valid=1", []))
                continue

            if not blocks:
                key, sep, text = row[0].partition("=")
                if len(row) != 1 or not sep:
                    raise DatasetFormatError(line, "expected key=value")
                if key.startswith("provenance."):
                    provenance[key[len("provenance."):]] = yaml.safe_load(text)
                else:
                    header[key] = (text, line)
                continue

            dim = int(header.get("dim", ("0", 0))[0])
            if len(row) != dim:
                raise DatasetFormatError(
                    line,
                    f"trajectory {len(blocks) - 1}: expected {dim} columns, "
                    f"found {len(row)}",
                )
            try:
                blocks[-1][1].append([float(v) for v in row])
            except ValueError as err:
                raise DatasetFormatError(line, "non-numeric state") from err

    for key in (FORMAT_TAG, "dim", "n_trajectories", "n_observations", "dt"):
        if key not in header:
            raise DatasetFormatError(0, f"missing header key '{key}'")

    dim = _header_value("dim", *header["dim"], int)
    n_traj = _header_value("n_trajectories", *header["n_trajectories"], int)
    n_obs = _header_value("n_observations", *header["n_observations"], int)
    dt = _header_value("dt", *header["dt"], float)

    if len(blocks) != n_traj:
        raise DatasetFormatError(
            0, f"expected {n_traj} trajectories, found {len(blocks)}"
        )
    trajectories = []
    for index, (valid, rows) in enumerate(blocks):
        if len(rows) != n_obs:
            raise DatasetFormatError(
                0,
                f"trajectory {index}: expected {n_obs} rows, "
                f"found {len(rows)}",
            )
        trajectories.append(
            Trajectory(
                states=np.asarray(rows, dtype=float).reshape(n_obs, dim),
                dt=dt,
                valid=valid,
            )
        )

    dataset = Dataset(
        trajectories=trajectories, dim=dim, dt=dt, provenance=provenance
    )
    logger.info("Read dataset %s: %s", path, dataset.summary())
    return dataset
