"""Exact sampling of the degenerate Gaussian step noise.

One time step of length h of the driftless kinetic system contributes the
pair (int_0^h W_s ds, W_h) per dimension. The pair is jointly Gaussian with
covariance [[h^3/3, h^2/2], [h^2/2, h]], and this module samples it exactly
from its closed-form Cholesky factor. Reproducibility rests on a
counter-based generator: (seed, stream_id) pins every draw, and distinct
stream ids give statistically independent streams for parallel work.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from .geometry import PhaseState

__all__ = [
    "RngStream",
    "StepNoise",
    "step_covariance",
    "step_cholesky",
    "sample_step",
    "sample_step_arrays",
    "sample_free_endpoint",
]

_SQRT3 = np.sqrt(3.0)


@dataclass
class RngStream:
    """Counter-based random stream; single-owner, advanced by sampling."""

    seed: int
    stream_id: int = 0
    _gen: Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        key = np.array([self.seed % 2**64, self.stream_id % 2**64],
                       dtype=np.uint64)
        self._gen = Generator(Philox(key=key))

    @property
    def generator(self) -> Generator:
        return self._gen

    def child(self, offset: int) -> "RngStream":
        """Derived independent stream; used to fan out parallel workers."""
        return RngStream(self.seed, self.stream_id + offset)


@dataclass(frozen=True)
class StepNoise:
    """One exact sample of (int_0^h W_s ds, W_h), componentwise.

    ``h`` records the step size the sample was drawn for, so consumers can
    reject noise drawn at the wrong scale.
    """

    integral_part: np.ndarray
    increment_part: np.ndarray
    h: float

    def __post_init__(self):
        ip = np.atleast_1d(np.asarray(self.integral_part, dtype=float))
        wp = np.atleast_1d(np.asarray(self.increment_part, dtype=float))
        if ip.shape != wp.shape:
            raise ValueError("integral and increment parts must match in shape")
        object.__setattr__(self, "integral_part", ip)
        object.__setattr__(self, "increment_part", wp)

    @property
    def d(self) -> int:
        return self.integral_part.shape[-1]


def step_covariance(h: float) -> np.ndarray:
    """Covariance [[h^3/3, h^2/2], [h^2/2, h]] of the pair per dimension."""
    if not h > 0:
        raise ValueError("step size h must be positive")
    return np.array([[h**3 / 3.0, h**2 / 2.0],
                     [h**2 / 2.0, h]])


def step_cholesky(h: float) -> np.ndarray:
    """Closed-form lower Cholesky factor of :func:`step_covariance`."""
    if not h > 0:
        raise ValueError("step size h must be positive")
    sq = np.sqrt(h)
    return np.array([[h * sq / _SQRT3, 0.0],
                     [_SQRT3 / 2.0 * sq, sq / 2.0]])


def sample_step_arrays(rng: RngStream, h: float,
                       shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    """Draw (integral, increment) arrays of the given shape, i.i.d. entries."""
    lo = step_cholesky(h)
    z = rng.generator.standard_normal((2,) + tuple(shape))
    integral = lo[0, 0] * z[0]
    increment = lo[1, 0] * z[0] + lo[1, 1] * z[1]
    return integral, increment


def sample_step(rng: RngStream, h: float, d: int) -> StepNoise:
    """One StepNoise sample with d independent pairs."""
    if d < 1:
        raise ValueError("dimension d must be >= 1")
    integral, increment = sample_step_arrays(rng, h, (d,))
    return StepNoise(integral, increment, h)


def sample_free_endpoint(z: PhaseState, t: float, rng: RngStream) -> PhaseState:
    """Exact draw of the driftless system at time t started from z."""
    g = sample_step(rng, t, z.d)
    return PhaseState(z.x + t * z.v + g.integral_part,
                      z.v + g.increment_part)
