"""Drift fields, the built-in catalog, and the two taming constructions.

A drift is a vectorized callable b(t, x, v) -> R^d together with declared
integrability metadata. Taming replaces b by a bounded n-dependent
approximation b_n, either by magnitude cutoff at level C2 * n^kappa or by
convolution with a mollifier shrunk anisotropically (scale n^(-3 theta) in
position, n^(-theta) in velocity).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .geometry import MixedExponent

__all__ = [
    "DriftField",
    "TamingParams",
    "MollifierSpec",
    "cutoff_tame",
    "mollify_tame",
    "tame",
    "builtin_drifts",
    "drift_from_id",
    "verify_taming_growth",
    "TamingGrowthReport",
]

DriftFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]

# Floor applied to |v| in the singular power-law drift; regularization far
# below any quadrature or grid resolution used in practice.
SINGULAR_FLOOR = 1e-12


@dataclass(frozen=True)
class DriftField:
    """Evaluatable drift with declared integrability metadata.

    ``fn(t, x, v)`` must accept coordinate arrays of shape (..., d) and
    return the drift vector with the same shape, without side effects.
    ``sup_bound`` is None when the field is unbounded (or no bound is
    declared); ``mixed_norm_bound`` is the declared L^infty-in-time mixed
    norm, or None when unknown/infinite.
    """

    fn: DriftFn
    exponents: MixedExponent
    mixed_norm_bound: float | None = None
    sup_bound: float | None = None
    time_dependent: bool = False
    label: str = ""

    def __call__(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.fn(t, x, v)


@dataclass(frozen=True)
class TamingParams:
    """Parameters of the taming family b_n.

    kind selects the construction ('cutoff' or 'mollify'); n is the step
    count the family member belongs to (h = 1/n). theta scales the
    mollifier, (kappa, c2) set the cutoff level C2 * n^kappa, zeta bounds
    the allowed small-time growth n^zeta of sup|b_n|, delta is the Besov
    regularity used in rate checks, and kappa_b the uniform constant the
    family must respect.
    """

    kind: str
    n: int = 1
    theta: float = 0.5
    kappa: float = 0.25
    c2: float = 1.0
    zeta: float = 0.25
    delta: float = 1.5
    kappa_b: float = 10.0

    def __post_init__(self):
        if self.kind not in ("cutoff", "mollify"):
            raise ValueError("taming kind must be 'cutoff' or 'mollify'")
        if self.n < 1:
            raise ValueError("step count n must be >= 1")
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if not 0.0 < self.kappa < 0.5:
            raise ValueError("kappa must satisfy kappa < 1/2 (and kappa > 0)")
        if not self.c2 > 0:
            raise ValueError("cutoff constant c2 must be positive")
        if not 0.0 <= self.zeta <= 0.5:
            raise ValueError("zeta must lie in [0, 1/2]")
        if not 1.0 < self.delta < 2.0:
            raise ValueError("delta must lie in (1, 2)")
        if not self.kappa_b > 0:
            raise ValueError("kappa_b must be positive")

    def with_n(self, n: int) -> "TamingParams":
        return replace(self, n=n)


@dataclass(frozen=True)
class MollifierSpec:
    """Mollifier shape and quadrature used by :func:`mollify_tame`.

    'bump' is the compactly supported c * exp(-1/(1-r^2)) profile per axis
    (even in every coordinate, so in particular even in v); 'gauss' is an
    isotropic Gaussian truncated at 8 standard deviations. Quadrature
    weights are normalized to unit mass, so convolving a constant returns
    it exactly.
    """

    kind: str = "bump"
    order: int = 16

    def __post_init__(self):
        if self.kind not in ("bump", "gauss"):
            raise ValueError("mollifier kind must be 'bump' or 'gauss'")
        if self.order < 2:
            raise ValueError("quadrature order must be >= 2")

    def axis_rule(self) -> tuple[np.ndarray, np.ndarray]:
        """Nodes and unit-mass weights of the 1d profile."""
        nodes, wts = np.polynomial.legendre.leggauss(self.order)
        if self.kind == "bump":
            density = np.exp(-1.0 / (1.0 - nodes**2))
        else:
            nodes = 8.0 * nodes
            wts = 8.0 * wts
            density = np.exp(-0.5 * nodes**2)
        weights = wts * density
        return nodes, weights / weights.sum()


def cutoff_tame(b: DriftField, params: TamingParams) -> DriftField:
    """Clip the drift magnitude at C2 * n^kappa, preserving direction."""
    if params.kind != "cutoff":
        raise ValueError("cutoff_tame needs params.kind == 'cutoff'")
    level = params.c2 * params.n ** params.kappa

    def fn(t, x, v):
        raw = b(t, x, v)
        mag = np.sqrt(np.sum(raw * raw, axis=-1, keepdims=True))
        scale = np.ones_like(mag)
        np.divide(level, mag, out=scale, where=mag > level)
        return raw * scale

    sup = level if b.sup_bound is None else min(level, b.sup_bound)
    return DriftField(fn, b.exponents,
                      mixed_norm_bound=b.mixed_norm_bound,
                      sup_bound=sup,
                      time_dependent=b.time_dependent,
                      label=f"{b.label}|cutoff(n={params.n})")


def mollify_tame(b: DriftField, params: TamingParams,
                 phi: MollifierSpec | None = None) -> DriftField:
    """Convolve with the rescaled mollifier, evaluated lazily per point.

    The rescaled density n^(4 d theta) phi(n^(3 theta) x, n^theta v) has unit
    mass by construction (the prefactor is the Jacobian of the rescaling),
    so after substitution the convolution becomes an integral of b over the
    unit-scale support of phi, shifted by n^(-3 theta) in x and n^(-theta)
    in v. Tensor-product Gauss-Legendre quadrature with normalized weights
    evaluates it; nodes are symmetric, so odd moments vanish exactly.
    """
    if params.kind != "mollify":
        raise ValueError("mollify_tame needs params.kind == 'mollify'")
    phi = phi or MollifierSpec()
    nodes, weights = phi.axis_rule()
    shift_x = params.n ** (-3.0 * params.theta)
    shift_v = params.n ** (-params.theta)

    def fn(t, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        d = x.shape[-1]
        acc = np.zeros(np.broadcast_shapes(x.shape, v.shape), dtype=float)
        # Tensor quadrature over the 2d mollifier axes.
        idx = np.zeros(2 * d, dtype=int)
        m = nodes.size
        total = m ** (2 * d)
        for flat in range(total):
            rem = flat
            w = 1.0
            for ax in range(2 * d):
                idx[ax] = rem % m
                rem //= m
                w *= weights[idx[ax]]
            dx = shift_x * nodes[idx[:d]]
            dv = shift_v * nodes[idx[d:]]
            acc = acc + w * b(t, x - dx, v - dv)
        return acc

    return DriftField(fn, b.exponents,
                      mixed_norm_bound=b.mixed_norm_bound,
                      sup_bound=b.sup_bound,
                      time_dependent=b.time_dependent,
                      label=f"{b.label}|mollify(n={params.n})")


def tame(b: DriftField, params: TamingParams,
         phi: MollifierSpec | None = None) -> DriftField:
    """Dispatch on params.kind."""
    if params.kind == "cutoff":
        return cutoff_tame(b, params)
    return mollify_tame(b, params, phi)


# --------------------------------------------------------------------------
# Built-in drift catalog
# --------------------------------------------------------------------------

def _zero_drift() -> DriftField:
    def fn(t, x, v):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v)))

    # norm zero in every mixed class; declare a finite pair so exponent
    # hypothesis checks (q >= p) never reject it
    return DriftField(fn, MixedExponent(2.0, 2.0),
                      mixed_norm_bound=0.0, sup_bound=0.0, label="zero")


def _ou_drift(gamma: float = 1.0) -> DriftField:
    if gamma < 0:
        raise ValueError("ou drift needs gamma >= 0")

    def fn(t, x, v):
        return -gamma * np.asarray(v, dtype=float)

    # Linear, hence unbounded: a smooth benchmark outside the integrable
    # class; metadata records no bounds.
    return DriftField(fn, MixedExponent(math.inf, math.inf),
                      mixed_norm_bound=None, sup_bound=None,
                      label=f"ou:gamma={gamma}")


def _signv_drift(A: float = 1.0) -> DriftField:
    def fn(t, x, v):
        v = np.asarray(v, dtype=float)
        out = np.zeros(np.broadcast_shapes(np.shape(x), v.shape))
        mag = np.sqrt(np.sum(v * v, axis=-1))
        out[..., 0] = A * np.sign(v[..., 0]) * (mag <= 1.0)
        return out

    return DriftField(fn, MixedExponent(math.inf, math.inf),
                      mixed_norm_bound=A, sup_bound=A,
                      label=f"signv:A={A}")


def _powerlaw_drift(A: float = 1.0, beta: float = 0.25,
                    p_v: float = 2.0) -> DriftField:
    """A 1_{|x|<=1} 1_{|v|<=1} |v|^(-beta) e_1, singular at v = 0.

    Declared class (inf, p_v): the inner sup over x is A |v|^(-beta) on the
    unit ball, and the outer integral is finite iff beta * p_v < d. The
    |v| floor regularizes the measure-zero singular set. The recorded
    mixed-norm bound is the d = 1 value; the field itself evaluates in any
    dimension.
    """
    if beta < 0:
        raise ValueError("powerlaw drift needs beta >= 0")

    def fn(t, x, v):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        out = np.zeros(np.broadcast_shapes(x.shape, v.shape))
        magx = np.sqrt(np.sum(x * x, axis=-1))
        magv = np.sqrt(np.sum(v * v, axis=-1))
        inside = (magx <= 1.0) & (magv <= 1.0)
        out[..., 0] = A * inside * np.maximum(magv, SINGULAR_FLOOR) ** (-beta)
        return out

    def norm_bound(d: int) -> float | None:
        if beta == 0.0:
            return A * (2.0**d) ** (1.0 / p_v)  # d=1 box; inner sup = A
        if beta * p_v >= d:
            return None
        # surface area of unit sphere in R^d times radial integral
        surf = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        return A * (surf / (d - beta * p_v)) ** (1.0 / p_v)

    return DriftField(fn, MixedExponent(math.inf, p_v),
                      mixed_norm_bound=norm_bound(1),
                      sup_bound=None if beta > 0 else A,
                      label=f"powerlaw:A={A},beta={beta}")


def builtin_drifts() -> dict[str, Callable[..., DriftField]]:
    """Catalog of drift factories addressable by name."""
    return {
        "zero": _zero_drift,
        "ou": _ou_drift,
        "signv": _signv_drift,
        "powerlaw": _powerlaw_drift,
    }


def drift_from_id(spec: str) -> DriftField:
    """Build a catalog drift from an id like 'ou:gamma=1.0'.

    The part before ':' names the factory; the rest is a comma-separated
    key=value list of float parameters.
    """
    name, _, rest = spec.partition(":")
    catalog = builtin_drifts()
    if name not in catalog:
        raise KeyError(f"unknown drift id {name!r}; "
                       f"known: {sorted(catalog)}")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if not _:
                raise ValueError(f"malformed drift parameter {item!r}")
            kwargs[key.strip()] = float(val)
    return catalog[name](**kwargs)


# --------------------------------------------------------------------------
# Growth verification of a taming family
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TamingGrowthReport:
    """Probe-based estimate of sup-norm growth across a taming family."""

    per_n_sup: list[tuple[int, float]]
    per_n_scaled: list[tuple[int, float]]  # n^(-zeta) * sup over [0, 1/n] x box
    growth_exponent: float
    kappa_b: float
    passed: bool


def verify_taming_growth(family: Sequence[tuple[int, DriftField]],
                         params: TamingParams,
                         sample_budget: int = 4096,
                         box: float = 2.0,
                         d: int = 1,
                         seed: int = 0) -> TamingGrowthReport:
    """Estimate sup |b_n| over random and structured probe points.

    For each n, probes (t, z) in [0, 1/n] x [-box, box]^(2d), records the
    max of |b_n| and checks n^(-zeta) * sup <= kappa_b. Fits the growth
    exponent of sup|b_n| against n by least squares on the log-log points
    (zero sups are reported but excluded from the fit).
    """
    if len(family) == 0:
        raise ValueError("taming family must be indexed over a nonempty n-set")
    gen = np.random.default_rng(seed)
    per_n_sup = []
    per_n_scaled = []
    for n, b_n in family:
        x = gen.uniform(-box, box, size=(sample_budget, d))
        v = gen.uniform(-box, box, size=(sample_budget, d))
        # Structured probes: near the coordinate axes and the origin, where
        # catalog singularities live.
        x[: d + 1] = 0.0
        v[0] = 0.0
        for i in range(d):
            v[1 + i] = 0.0
            v[1 + i, i] = 1e-6
        times = gen.uniform(0.0, 1.0 / n, size=sample_budget)
        sup = 0.0
        for t in np.unique(np.concatenate([times[:8], [0.0]])):
            vals = b_n(float(t), x, v)
            sup = max(sup, float(np.sqrt(np.sum(vals**2, -1)).max()))
        per_n_sup.append((n, sup))
        per_n_scaled.append((n, n ** (-params.zeta) * sup))
    positive = [(n, s) for n, s in per_n_sup if s > 0]
    if len(positive) >= 2:
        ln = np.log([n for n, _ in positive])
        ls = np.log([s for _, s in positive])
        slope = float(np.polyfit(ln, ls, 1)[0])
    else:
        slope = 0.0
    passed = all(s <= params.kappa_b for _, s in per_n_scaled)
    return TamingGrowthReport(per_n_sup, per_n_scaled, slope,
                              params.kappa_b, passed)
