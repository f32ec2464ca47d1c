"""levyid - Lévy SDE drift identification : Fourier-series drift models."""

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, signal

from .errors import LevyIdError

logger = logging.getLogger(__name__)

IMAG_TOLERANCE = 1e-12
QUADRATURE_NODES = 16
QUADRATURE_MIN_PANELS = 64
QUADRATURE_TOLERANCE = 1e-8
PARITIES = ("even", "odd", "none")


class ConstraintViolation(LevyIdError, ValueError):
    """Error class for coefficients that break the reality constraint."""


class QuadratureError(LevyIdError):
    """Error class for quadrature that did not converge on refinement."""


class CoefficientFormatError(LevyIdError, ValueError):
    """Error class for malformed coefficient files."""


def mode_indices(J: int, dim: int) -> np.ndarray:
    """Multi-indices with |j_l| <= J, row-major with the last axis fastest."""
    return np.array(
        list(itertools.product(range(-J, J + 1), repeat=dim)), dtype=int
    ).reshape(-1, dim)


def flat_index(j: Sequence[int], half_width: int) -> int:
    """Position of multi-index j in a row-major box of half-width J."""
    width = 2 * half_width + 1
    position = 0
    for component in j:
        if abs(component) > half_width:
            raise IndexError(f"index {tuple(j)} outside |j| <= {half_width}")
        position = position * width + int(component) + half_width
    return position


@dataclass(frozen=True)
class SymmetrySpec:
    """Parity of each drift component m along each axis l."""

    parity: Tuple[Tuple[str, ...], ...]

    def __post_init__(self) -> None:
        """Check the parity table is square and uses known labels."""
        dim = len(self.parity)
        for row in self.parity:
            if len(row) != dim:
                raise ValueError("parity table must be dim x dim")
            for label in row:
                if label not in PARITIES:
                    raise ValueError(f"unknown parity '{label}'")

    @property
    def dim(self) -> int:
        """Dimension the parities apply to."""
        return len(self.parity)

    @classmethod
    def none(cls, dim: int) -> "SymmetrySpec":
        """Spec with only the reality constraint."""
        return cls(parity=tuple(("none",) * dim for _ in range(dim)))

    @classmethod
    def maier_stein(cls) -> "SymmetrySpec":
        """f1 odd in x1 and even in x2; f2 even in x1 and odd in x2."""
        return cls(parity=(("odd", "even"), ("even", "odd")))

    @classmethod
    def parse(cls, text: str, dim: int) -> "SymmetrySpec":
        """Build a spec from a name or 'odd,even;even,odd' style rows."""
        text = text.strip()
        if text in ("", "none"):
            return cls.none(dim)
        if text == "maier_stein":
            return cls.maier_stein()
        return cls(
            parity=tuple(
                tuple(label.strip() for label in row.split(","))
                for row in text.split(";")
            )
        )


@dataclass(frozen=True, eq=False)
class FourierDrift:
    """Truncated Fourier drift f_m(x) = sum_j theta^j_m exp(i j.x / L).

    coeffs has shape ((2J+1)^d, d); rows follow mode_indices(J, d).
    """

    J: int
    L: int
    dim: int
    coeffs: np.ndarray
    constraints: Optional[SymmetrySpec] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        """Validate the shape and freeze the coefficient array."""
        if self.J < 1 or self.L < 1 or self.dim < 1:
            raise ValueError("J, L and dim must be positive")
        coeffs = np.array(self.coeffs, dtype=complex)
        expected = ((2 * self.J + 1) ** self.dim, self.dim)
        if coeffs.shape != expected:
            raise ValueError(
                f"coeffs must have shape {expected} (got {coeffs.shape})"
            )
        coeffs.flags.writeable = False
        object.__setattr__(self, "coeffs", coeffs)

    @classmethod
    def zeros(
        cls,
        J: int,
        L: int,
        dim: int,
        constraints: Optional[SymmetrySpec] = None,
    ) -> "FourierDrift":
        """Zero model, the default starting point for training."""
        shape = ((2 * J + 1) ** dim, dim)
        return cls(J, L, dim, np.zeros(shape, complex), constraints)

    @property
    def n_modes(self) -> int:
        """Number of multi-indices in the mode box."""
        return self.coeffs.shape[0]

    @cached_property
    def modes(self) -> np.ndarray:
        """Multi-indices of the coefficient rows."""
        return mode_indices(self.J, self.dim)

    def with_coeffs(self, coeffs: np.ndarray) -> "FourierDrift":
        """Copy of this model with other coefficients."""
        return replace(self, coeffs=coeffs)

    def coefficient(self, j: Sequence[int], m: int = 0) -> complex:
        """Return theta^j_m."""
        return complex(self.coeffs[flat_index(j, self.J), m])

    def l1_norm(self) -> float:
        """Sum of complex moduli of all coefficients."""
        return float(np.sum(np.abs(self.coeffs)))

    def evaluate_field(self, x: np.ndarray) -> np.ndarray:
        """Evaluate the real field at x of shape (d,) or (P, d)."""
        return evaluate_field(self, x)


def evaluate_field(model: FourierDrift, x: np.ndarray) -> np.ndarray:
    """Evaluate model in physical space, rejecting complex output."""
    x = np.asarray(x, dtype=float)
    points = np.atleast_2d(x)
    if points.shape[1] != model.dim:
        raise ValueError(f"points must have {model.dim} columns")

    phase = np.exp(1j * (points @ model.modes.T) / model.L)
    values = phase @ model.coeffs

    scale = max(1.0, model.l1_norm())
    with np.errstate(invalid="ignore"):
        residue = np.max(np.abs(values.imag), initial=0.0)
    if residue > IMAG_TOLERANCE * scale:
        raise ConstraintViolation(
            f"field has imaginary residue {residue:.3e}; "
            "coefficients are not conjugate symmetric"
        )
    return values.real.reshape(x.shape if x.ndim > 1 else (model.dim,))


def coefficient_convolution(model: FourierDrift) -> np.ndarray:
    """Return (theta * theta^T)^k for |k_l| <= 2J.

    The result has shape ((4J+1)^d, d, d), rows in row-major order.
    """
    box = (2 * model.J + 1,) * model.dim
    grid = model.coeffs.reshape(box + (model.dim,))
    size = (4 * model.J + 1) ** model.dim
    result = np.zeros((size, model.dim, model.dim), dtype=complex)
    for m in range(model.dim):
        for n in range(model.dim):
            result[:, m, n] = signal.convolve(
                grid[..., m], grid[..., n], mode="full", method="direct"
            ).ravel()
    return result


# SYMMETRY #


def _reflect_order(J: int, dim: int, axes: Sequence[int]) -> np.ndarray:
    """Row permutation mapping each mode j to j with the axes negated."""
    reflected = mode_indices(J, dim)
    reflected[:, list(axes)] *= -1
    width = 2 * J + 1
    return np.ravel_multi_index(tuple((reflected + J).T), (width,) * dim)


def project_coefficients(
    coeffs: np.ndarray, J: int, dim: int, spec: Optional[SymmetrySpec]
) -> np.ndarray:
    """Project raw coefficients onto the reality and parity subspace."""
    coeffs = np.asarray(coeffs, dtype=complex)
    full = _reflect_order(J, dim, range(dim))
    projected = (coeffs + np.conj(coeffs[full])) / 2.0

    if spec is None:
        return projected
    if spec.dim != dim:
        raise ValueError(f"symmetry spec is for dim {spec.dim}, not {dim}")
    for m, row in enumerate(spec.parity):
        for axis, label in enumerate(row):
            if label == "none":
                continue
            order = _reflect_order(J, dim, (axis,))
            column = projected[:, m]
            if label == "even":
                projected[:, m] = (column + column[order]) / 2.0
            else:
                projected[:, m] = (column - column[order]) / 2.0
    return projected


def project_symmetry(
    model: FourierDrift, spec: Optional[SymmetrySpec] = None
) -> FourierDrift:
    """Orthogonal projection onto the constrained coefficient subspace."""
    spec = spec if spec is not None else model.constraints
    projected = project_coefficients(model.coeffs, model.J, model.dim, spec)
    return replace(model, coeffs=projected, constraints=spec)


def to_real(coeffs: np.ndarray) -> np.ndarray:
    """Stack real and imaginary parts into one real vector."""
    flat = np.asarray(coeffs, dtype=complex).ravel()
    return np.concatenate([flat.real, flat.imag])


def from_real(vector: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Inverse of to_real."""
    half = vector.size // 2
    return (vector[:half] + 1j * vector[half:]).reshape(shape)


@lru_cache(maxsize=16)
def free_basis(
    J: int, dim: int, spec: Optional[SymmetrySpec] = None
) -> np.ndarray:
    """Orthonormal real basis Q of the constrained subspace.

    Coefficients are to_real(theta) = Q p for the free parameters p.
    """
    shape = ((2 * J + 1) ** dim, dim)
    size = 2 * shape[0] * shape[1]
    columns = np.empty((size, size))
    for i, unit in enumerate(np.eye(size)):
        columns[:, i] = to_real(
            project_coefficients(from_real(unit, shape), J, dim, spec)
        )
    basis = linalg.orth(columns)
    basis.flags.writeable = False
    logger.debug("Free parameters: %d of %d", basis.shape[1], size)
    return basis


# QUADRATURE #


def _panel_rule(
    lo: float, hi: float, panels: int
) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(QUADRATURE_NODES)
    edges = np.linspace(lo, hi, panels + 1)
    half = (edges[1:] - edges[:-1]) / 2.0
    mid = (edges[1:] + edges[:-1]) / 2.0
    x = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
    w = (half[:, None] * weights[None, :]).ravel()
    return x, w


def _project_modes(
    f: Callable[[np.ndarray], np.ndarray],
    J: int,
    L: int,
    dim: int,
    panels: int,
) -> np.ndarray:
    x, w = _panel_rule(-L * np.pi, L * np.pi, panels)
    mesh = np.meshgrid(*([x] * dim), indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    values = np.asarray(f(points), dtype=float).reshape(
        (x.size,) * dim + (dim,)
    )

    # exp(-i j x / L) weighted, contracted one axis at a time
    kernel = np.exp(-1j * np.outer(np.arange(-J, J + 1), x) / L) * w
    result = values.astype(complex)
    for axis in range(dim):
        result = np.moveaxis(
            np.tensordot(kernel, result, axes=([1], [axis])), 0, axis
        )
    return result.reshape(-1, dim) / (2.0 * L * np.pi) ** dim


def coefficients_by_quadrature(
    f: Callable[[np.ndarray], np.ndarray], J: int, L: int, dim: int
) -> FourierDrift:
    """Fourier coefficients of f on [-L pi, L pi]^d by Gauss-Legendre panels.

    f maps points of shape (P, d) to values of shape (P, d). The panel
    count is doubled once; both results must agree to 1e-8.
    """
    panels = max(QUADRATURE_MIN_PANELS, 2 * J)
    coarse = _project_modes(f, J, L, dim, panels)
    fine = _project_modes(f, J, L, dim, 2 * panels)
    disagreement = float(np.max(np.abs(fine - coarse)))
    logger.debug(
        "Quadrature with %d/%d panels, disagreement %.3e",
        panels,
        2 * panels,
        disagreement,
    )
    if not disagreement <= QUADRATURE_TOLERANCE:
        raise QuadratureError(
            f"quadrature refinement disagrees by {disagreement:.3e}"
        )
    return FourierDrift(J, L, dim, fine)


# PRESETS #


def sine_embedding(theta: float, J: int = 4, L: int = 2) -> FourierDrift:
    """One-parameter model with theta^2 = -i theta and theta^-2 = i theta.

    sine_embedding(0.5) is sin(x) for L = 2.
    """
    if J < 2:
        raise ValueError("the sine embedding needs J >= 2")
    model = FourierDrift.zeros(J, L, 1)
    coeffs = np.array(model.coeffs)
    coeffs[flat_index((2,), J), 0] = -1j * theta
    coeffs[flat_index((-2,), J), 0] = 1j * theta
    return model.with_coeffs(coeffs)


def doublewell_closed_form(j: Union[int, np.ndarray]) -> np.ndarray:
    """Exact coefficients of x - x^3 on [-2 pi, 2 pi] (L = 2)."""
    j = np.atleast_1d(np.asarray(j, dtype=float))
    result = np.zeros(j.shape, dtype=complex)
    nonzero = j != 0
    jn = j[nonzero]
    result[nonzero] = (
        -2j * (-1.0) ** jn * ((4 * np.pi**2 - 1) * jn**2 - 24) / jn**3
    )
    return result


# PERSISTENCE #


def write_coefficients(model: FourierDrift, path: Union[str, Path]) -> None:
    """Write one CSV row per (multi-index, component)."""
    with open(path, "w", newline="") as file_handle:
        writer = csv.writer(file_handle)
        writer.writerow(
            [
                "levyid-coefficients",
                f"J={model.J}",
                f"L={model.L}",
                f"dim={model.dim}",
            ]
        )
        writer.writerow(
            [f"j{axis + 1}" for axis in range(model.dim)]
            + ["component", "real", "imag"]
        )
        for j, row in zip(model.modes, model.coeffs):
            for m, value in enumerate(row):
                writer.writerow(
                    [int(v) for v in j]
                    + [m, repr(float(value.real)), repr(float(value.imag))]
                )


def read_coefficients(path: Union[str, Path]) -> FourierDrift:
    """Read a coefficient CSV; absent entries are zero."""
    with open(path, newline="") as file_handle:
        reader = csv.reader(file_handle)
        try:
            meta = next(reader)
            next(reader)
        except StopIteration as err:
            raise CoefficientFormatError(f"{path}: missing header") from err
        try:
            if meta[0] != "levyid-coefficients":
                raise ValueError(meta[0])
            values = dict(item.split("=", 1) for item in meta[1:])
            J, L, dim = int(values["J"]), int(values["L"]), int(values["dim"])
        except (ValueError, KeyError, IndexError) as err:
            raise CoefficientFormatError(
                f"{path}: line 1: bad header {meta}"
            ) from err

        coeffs = np.zeros(((2 * J + 1) ** dim, dim), dtype=complex)
        for row in reader:
            if not row:
                continue
            if len(row) != dim + 3:
                raise CoefficientFormatError(
                    f"{path}: line {reader.line_num}: expected {dim + 3} "
                    f"columns, found {len(row)}"
                )
            try:
                j = [int(v) for v in row[:dim]]
                m = int(row[dim])
                coeffs[flat_index(j, J), m] = complex(
                    float(row[dim + 1]), float(row[dim + 2])
                )
            except (ValueError, IndexError) as err:
                raise CoefficientFormatError(
                    f"{path}: line {reader.line_num}: {err}"
                ) from err

    return FourierDrift(J, L, dim, coeffs)
