"""levyid - Lévy SDE drift identification : Symmetric alpha-stable noise."""

import logging
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np

from .errors import LevyIdError

logger = logging.getLogger(__name__)

ALPHA_MIN = 1.0
ALPHA_MAX = 2.0

ArrayLike = Union[float, Sequence[float], np.ndarray]


class DomainError(LevyIdError, ValueError):
    """Error class for parameters outside the supported domain."""


def check_alpha(alpha: float) -> float:
    """Return alpha as float, or raise if it is outside [1, 2]."""
    alpha = float(alpha)
    if not ALPHA_MIN <= alpha <= ALPHA_MAX:
        raise DomainError(
            f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}] (got {alpha})"
        )
    return alpha


def check_step(h: float) -> float:
    """Return h as float, or raise if it is not a positive time step."""
    h = float(h)
    if not h > 0.0:
        raise DomainError(f"time step must be positive (got {h})")
    return h


@dataclass(frozen=True)
class StableSpec:
    """Symmetric, centered alpha-stable law with per-component scale."""

    alpha: float
    scale: float = 1.0

    def __post_init__(self) -> None:
        """Validate the law parameters."""
        check_alpha(self.alpha)
        if not self.scale > 0.0:
            raise DomainError(f"scale must be positive (got {self.scale})")

    @classmethod
    def for_step(cls, alpha: float, h: float) -> "StableSpec":
        """Law of a Lévy increment over a time step h."""
        alpha = check_alpha(alpha)
        return cls(alpha=alpha, scale=check_step(h) ** (1.0 / alpha))

    def cf(self, s: ArrayLike) -> np.ndarray:
        """Characteristic function exp(-|scale s|^alpha), elementwise."""
        return np.exp(-np.abs(self.scale * np.asarray(s)) ** self.alpha)


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Return the independent generator keyed by (seed, index).

    The keyed stream is the same whatever order or thread asks for it.
    """
    return np.random.default_rng(
        np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    )


def standard_variates(
    alpha: float, shape: Tuple[int, ...], rng: np.random.Generator
) -> np.ndarray:
    """Draw unit-scale symmetric alpha-stable variates.

    Chambers-Mallows-Stuck transform with U uniform on (-pi/2, pi/2) and W
    standard exponential. The variates have characteristic function
    exp(-|s|^alpha); alpha = 1 takes the Cauchy branch tan(U).
    """
    alpha = check_alpha(alpha)
    u = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=shape)
    w = rng.standard_exponential(size=shape)

    if alpha == 1.0:
        return np.tan(u)

    return (
        np.sin(alpha * u)
        / np.cos(u) ** (1.0 / alpha)
        * (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)
    )


def draw_increments(
    alpha: float, h: float, shape: Tuple[int, ...], rng: np.random.Generator
) -> np.ndarray:
    """Draw Lévy increments over a step h from an existing generator."""
    spec = StableSpec.for_step(alpha, h)
    return spec.scale * standard_variates(spec.alpha, shape, rng)


def sample_increments(
    alpha: float, h: float, count: int, dim: int, seed: int
) -> np.ndarray:
    """Sample count i.i.d. d-dimensional increments with scale h^(1/alpha).

    Components are independent; the result is reproducible for a fixed seed.
    """
    if count < 1 or dim < 1:
        raise DomainError(
            f"count and dim must be at least 1 (got {count}, {dim})"
        )
    logger.debug(
        "Sampling %d increments (alpha=%s, h=%s, dim=%d)",
        count,
        alpha,
        h,
        dim,
    )
    return draw_increments(alpha, h, (count, dim), stream(seed))


def increment_cf(s: ArrayLike, alpha: float, h: float) -> np.ndarray:
    """Evaluate prod_l exp(-h |s_l|^alpha) over the last axis of s.

    A 1-D input is one frequency vector and yields a scalar.
    """
    return scaled_increment_cf(s, alpha, h, 1.0)


def scaled_increment_cf(
    s: ArrayLike, alpha: float, h: float, g: ArrayLike
) -> np.ndarray:
    """Characteristic function of diag(g) times a Lévy increment over h."""
    alpha = check_alpha(alpha)
    h = check_step(h)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    exponent = np.sum(np.abs(s * np.asarray(g, dtype=float)) ** alpha, axis=-1)
    return np.exp(-h * exponent)
