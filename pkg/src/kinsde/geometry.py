"""Phase-space primitives: states, exponent pairs, grids, mixed norms.

The position/velocity split carries an anisotropic scaling: under the free
kinetic flow, position fluctuates like t^{3/2} and velocity like t^{1/2}.
All distance and norm conventions in this module are adapted to that
(3, 1) scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ANISOTROPY",
    "PhaseState",
    "MixedExponent",
    "GridSpec",
    "GridFunction",
    "gamma_transport",
    "anisotropic_distance",
    "anisotropic_norm",
    "mixed_norm",
    "holder_conjugate",
]

# Scaling exponents (position, velocity) of the kinetic flow.
ANISOTROPY = (3.0, 1.0)


@dataclass(frozen=True)
class PhaseState:
    """A point z = (x, v) in position-velocity space R^d x R^d."""

    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        v = np.atleast_1d(np.asarray(self.v, dtype=float))
        if x.ndim != 1 or v.ndim != 1:
            raise ValueError("x and v must be one-dimensional")
        if x.size != v.size or x.size < 1:
            raise ValueError("x and v must have equal length d >= 1")
        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            raise ValueError("phase-space coordinates must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @property
    def d(self) -> int:
        return self.x.size

    def as_pair(self) -> tuple[np.ndarray, np.ndarray]:
        return self.x.copy(), self.v.copy()


@dataclass(frozen=True)
class MixedExponent:
    """An integrability pair (p_x, p_v) in [1, inf]^2.

    ``math.inf`` is the explicit infinite value and triggers the sup-norm
    convention in :func:`mixed_norm`.
    """

    p_x: float
    p_v: float

    def __post_init__(self):
        for name, p in (("p_x", self.p_x), ("p_v", self.p_v)):
            p = float(p)
            if math.isnan(p) or p < 1.0:
                raise ValueError(f"{name} must lie in [1, inf], got {p}")
            object.__setattr__(self, name, p)

    def anisotropic_weight(self, d: int) -> float:
        """The scaling weight 3 d / p_x + d / p_v, with 1/inf = 0."""
        return ANISOTROPY[0] * d / self.p_x + ANISOTROPY[1] * d / self.p_v

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.p_x) and math.isfinite(self.p_v)

    def __iter__(self):
        yield self.p_x
        yield self.p_v


def holder_conjugate(p: MixedExponent) -> MixedExponent:
    """Componentwise Holder conjugate; 1 and inf are swapped."""
    return MixedExponent(_conj(p.p_x), _conj(p.p_v))


def _conj(p: float) -> float:
    if p == 1.0:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Regular periodic grid over [-extent, extent)^d x [-extent, extent)^d.

    Samples sit at cell centers, so plain sums weighted by the cell volume
    realize the midpoint quadrature rule.
    """

    d: int
    extent_x: float
    extent_v: float
    resolution_x: int
    resolution_v: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not (self.extent_x > 0 and self.extent_v > 0):
            raise ValueError("grid extents must be positive")
        for name, r in (("resolution_x", self.resolution_x),
                        ("resolution_v", self.resolution_v)):
            if r < 8 or not _is_power_of_two(r):
                raise ValueError(f"{name} must be a power of two >= 8")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution_x,) * self.d + (self.resolution_v,) * self.d

    @property
    def spacing_x(self) -> float:
        return 2.0 * self.extent_x / self.resolution_x

    @property
    def spacing_v(self) -> float:
        return 2.0 * self.extent_v / self.resolution_v

    @property
    def cell_volume_x(self) -> float:
        return self.spacing_x ** self.d

    @property
    def cell_volume_v(self) -> float:
        return self.spacing_v ** self.d

    @property
    def cell_volume(self) -> float:
        return self.cell_volume_x * self.cell_volume_v

    def axis_x(self) -> np.ndarray:
        """Cell-center coordinates along one position axis."""
        i = np.arange(self.resolution_x)
        return -self.extent_x + (i + 0.5) * self.spacing_x

    def axis_v(self) -> np.ndarray:
        i = np.arange(self.resolution_v)
        return -self.extent_v + (i + 0.5) * self.spacing_v

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Full coordinate mesh, as arrays of shape ``shape + (d,)``.

        Memory grows like resolution^(2d); intended for d <= 2.
        """
        axes = [self.axis_x()] * self.d + [self.axis_v()] * self.d
        grids = np.meshgrid(*axes, indexing="ij")
        x = np.stack(grids[: self.d], axis=-1)
        v = np.stack(grids[self.d:], axis=-1)
        return x, v

    def freq_axis_x(self) -> np.ndarray:
        """Angular frequencies along one position axis (fft order)."""
        return 2.0 * np.pi * np.fft.fftfreq(self.resolution_x, d=self.spacing_x)

    def freq_axis_v(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.resolution_v, d=self.spacing_v)


@dataclass(frozen=True)
class GridFunction:
    """Values of a scalar or vector field sampled on a :class:`GridSpec`.

    ``values`` has shape ``spec.shape`` for scalar fields; an extra trailing
    axis of length d marks a vector field.
    """

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values)
        shape = self.spec.shape
        if vals.shape != shape and vals.shape != shape + (self.spec.d,):
            raise ValueError(
                f"values shape {vals.shape} does not match grid shape {shape}"
            )
        if not np.isfinite(vals).all():
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2 * self.spec.d + 1

    @classmethod
    def from_callable(cls, spec: GridSpec,
                      fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
                      ) -> "GridFunction":
        """Rasterize ``fn(x, v)`` (vectorized over leading axes) on the grid."""
        x, v = spec.mesh()
        return cls(spec, np.asarray(fn(x, v), dtype=float))

    def scaled(self, c: float) -> "GridFunction":
        return GridFunction(self.spec, c * self.values)


def gamma_transport(t: float, z: PhaseState) -> PhaseState:
    """The shear map (x, v) -> (x + t v, v); deterministic free flow.

    Forms a group in t: composing transports adds the times.
    """
    if not math.isfinite(t):
        raise ValueError("transport time must be finite")
    return PhaseState(z.x + t * z.v, z.v)


def anisotropic_norm(x: np.ndarray, v: np.ndarray) -> float:
    """|z|_a = |x|^(1/3) + |v| with Euclidean norms per block."""
    return float(np.cbrt(np.linalg.norm(x)) + np.linalg.norm(v))


def anisotropic_distance(z1: PhaseState, z2: PhaseState) -> float:
    """Quasi-distance |x1 - x2|^(1/3) + |v1 - v2| adapted to the scaling."""
    if z1.d != z2.d:
        raise ValueError("dimension mismatch")
    return anisotropic_norm(z1.x - z2.x, z1.v - z2.v)


def mixed_norm(f: GridFunction, p: MixedExponent) -> float:
    """Midpoint-rule approximation of the mixed Lebesgue norm.

    Inner L^{p_x} norm over the position block, outer L^{p_v} over the
    velocity block; infinite exponents use the grid maximum (a lower bound
    of the true sup). Vector fields are reduced to their pointwise
    Euclidean magnitude first.
    """
    vals = f.values
    d = f.spec.d
    if f.is_vector:
        vals = np.sqrt(np.sum(np.abs(vals) ** 2, axis=-1))
    vals = np.abs(vals)
    x_axes = tuple(range(d))
    if math.isinf(p.p_x):
        inner = vals.max(axis=x_axes)
    else:
        inner = (np.sum(vals ** p.p_x, axis=x_axes)
                 * f.spec.cell_volume_x) ** (1.0 / p.p_x)
    if math.isinf(p.p_v):
        return float(inner.max())
    return float((np.sum(inner ** p.p_v)
                  * f.spec.cell_volume_v) ** (1.0 / p.p_v))
