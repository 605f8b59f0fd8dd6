"""Weak-error experiments, density distances, couplings, and rate fits.

The primary error metric pairs the endpoint law against a fixed panel of
smooth bounded test functions; the density-norm metric is secondary
because estimator bias can mask the rate. Common-random-number coupling
simulates every discretization level (and the fine self-reference) on one
Brownian skeleton per path: coarse-step noise pairs are exact aggregates
of fine ones, so level errors are positively correlated and slope fits
sharpen at fixed budget.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .drift import DriftField, MollifierSpec, TamingParams, drift_from_id, tame
from .fitting import RateFitResult, fit_loglog
from .geometry import (GridFunction, GridSpec, MixedExponent, PhaseState,
                       gamma_transport, holder_conjugate, mixed_norm)
from .noise import RngStream, sample_step_arrays, step_covariance
from .scheme import SchemeConfig, drift_increments, kinetic_ou_moments

__all__ = [
    "Functional",
    "make_functional",
    "default_functional_ids",
    "ExperimentConfig",
    "WeakErrorReport",
    "weak_error",
    "DensityEstimate",
    "DensityDistanceReport",
    "density_distance",
    "NoiseSkeleton",
    "sample_skeleton",
    "refine_brownian_skeleton",
    "coarsen_skeleton",
    "run_tamed_with_skeleton",
]


# --------------------------------------------------------------------------
# Test functionals and their exact Gaussian expectations
# --------------------------------------------------------------------------

@lru_cache(maxsize=8)
def _hermite_rule(order: int = 96) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    return nodes, weights / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Functional:
    """A bounded smooth test function phi(x, v) with a Gaussian oracle.

    ``fn`` is vectorized over (..., d) coordinate blocks. For endpoint laws
    that are products of identical per-dimension 2x2 Gaussians (free and OU
    references), ``gaussian_mean(means, cov)`` returns E phi exactly;
    ``means`` has shape (d, 2) holding the per-dimension (mean_x, mean_v).
    """

    id: str
    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    gaussian_mean: Callable[[np.ndarray, np.ndarray], float]

    def __call__(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        return self.fn(x, v)


def _cos_functional(alpha: float = 1.0, beta: float = 1.0) -> Functional:
    def fn(x, v):
        return np.cos(alpha * x[..., 0]) + np.cos(beta * v[..., 0])

    def gaussian_mean(means, cov):
        # E cos(a N(m, s^2)) = cos(a m) exp(-a^2 s^2 / 2)
        mx, mv = means[0]
        return (math.cos(alpha * mx) * math.exp(-alpha**2 * cov[0, 0] / 2.0)
                + math.cos(beta * mv) * math.exp(-beta**2 * cov[1, 1] / 2.0))

    return Functional(f"cos:alpha={alpha:g},beta={beta:g}", fn, gaussian_mean)


def _gauss_functional() -> Functional:
    def fn(x, v):
        return np.exp(-np.sum(x * x, axis=-1) - np.sum(v * v, axis=-1))

    def gaussian_mean(means, cov):
        # E exp(-z' z) for z ~ N(mu, cov): det(I + 2 cov)^(-1/2)
        #   * exp(-mu' (I + 2 cov)^(-1) mu), one factor per dimension.
        m = np.eye(2) + 2.0 * cov
        minv = np.linalg.inv(m)
        detfac = 1.0 / math.sqrt(np.linalg.det(m))
        val = 1.0
        for mu in means:
            val *= detfac * math.exp(-float(mu @ minv @ mu))
        return val

    return Functional("gauss", fn, gaussian_mean)


def _tanh_functional(a: float = 1.0, b: float = 0.0) -> Functional:
    def fn(x, v):
        return np.tanh(a * (x[..., 0] + v[..., 0]) + b)

    def gaussian_mean(means, cov):
        mx, mv = means[0]
        mean = mx + mv
        var = cov[0, 0] + 2.0 * cov[0, 1] + cov[1, 1]
        nodes, weights = _hermite_rule()
        return float(np.sum(weights * np.tanh(
            a * (mean + math.sqrt(var) * nodes) + b)))

    return Functional(f"tanh:a={a:g},b={b:g}", fn, gaussian_mean)


def make_functional(spec: str) -> Functional:
    """Build a panel member from an id like 'cos:alpha=1,beta=1'."""
    name, _, rest = spec.partition(":")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, sep, val = item.partition("=")
            if not sep:
                raise ValueError(f"malformed functional parameter {item!r}")
            kwargs[key.strip()] = float(val)
    if name == "cos":
        return _cos_functional(**kwargs)
    if name == "gauss":
        return _gauss_functional()
    if name == "tanh":
        return _tanh_functional(**kwargs)
    raise KeyError(f"unknown functional {name!r}")


def default_functional_ids() -> list[str]:
    return ["cos:alpha=1,beta=1", "gauss", "tanh:a=1,b=0"]


# --------------------------------------------------------------------------
# Experiment configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a weak-error or density experiment needs, seed included."""

    drift_id: str
    z0: PhaseState
    n_set: tuple[int, ...]
    reference: str  # "exact_ou" | "fine_tamed" | "free"
    sample_count: int
    seed: int
    T: float = 1.0
    taming: TamingParams | None = None
    mollifier: MollifierSpec | None = None
    reference_n: int | None = None
    functionals: tuple[str, ...] = ()
    coupling: str = "common_noise"
    inner_quadrature: str = "gauss"
    gauss_order: int = 4
    control_variate: bool = True
    chunk_size: int = 16384
    threads: int = 1
    density_bins: int | None = None
    density_estimator: str = "histogram"
    density_extent_sigmas: float = 8.0

    def __post_init__(self):
        if len(self.n_set) == 0:
            raise ValueError("n_set must be nonempty")
        if self.sample_count < 1000:
            raise ValueError("sample_count must be >= 1000")
        if self.coupling not in ("independent", "common_noise"):
            raise ValueError("coupling must be 'independent' or 'common_noise'")
        if self.reference not in ("exact_ou", "fine_tamed", "free"):
            raise ValueError("reference must be exact_ou, fine_tamed or free")
        if self.reference == "fine_tamed":
            if self.reference_n is None:
                raise ValueError("fine_tamed reference needs reference_n")
            if self.reference_n <= 4 * max(self.n_set):
                raise ValueError("reference_n must exceed 4 * max(n_set)")
        if self.reference == "exact_ou" and not self.drift_id.startswith("ou"):
            raise ValueError("exact_ou reference requires an OU drift")
        if self.density_estimator not in ("histogram", "kde"):
            raise ValueError("density_estimator must be histogram or kde")
        for n in self.n_set:
            if abs(self.T * n - round(self.T * n)) > 1e-9:
                raise ValueError("T * n must be integral for every n in n_set")
        if self.coupling == "common_noise":
            levels = list(self.n_set)
            if self.reference == "fine_tamed":
                levels.append(self.reference_n)
            finest = max(levels)
            bad = [n for n in levels if finest % n != 0]
            if bad:
                raise ValueError(
                    "common-noise coupling needs every level to divide the "
                    f"finest one ({finest}); offending levels: {bad}")
        object.__setattr__(self, "n_set", tuple(int(n) for n in self.n_set))
        funcs = tuple(self.functionals) or tuple(default_functional_ids())
        object.__setattr__(self, "functionals", funcs)

    def ou_gamma(self) -> float:
        if not self.drift_id.startswith("ou"):
            raise ValueError("drift is not Ornstein-Uhlenbeck")
        _, _, rest = self.drift_id.partition(":")
        gamma = 1.0
        for item in rest.split(","):
            key, _, val = item.partition("=")
            if key.strip() == "gamma" and val:
                gamma = float(val)
        return gamma

    def scheme_for(self, n: int) -> SchemeConfig:
        return SchemeConfig(n=n, T=self.T,
                            inner_quadrature=self.inner_quadrature,
                            gauss_order=self.gauss_order)

    def to_dict(self) -> dict:
        return {
            "drift_id": self.drift_id,
            "z0": {"x": self.z0.x.tolist(), "v": self.z0.v.tolist()},
            "n_set": list(self.n_set),
            "reference": self.reference,
            "reference_n": self.reference_n,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "T": self.T,
            "taming": None if self.taming is None else {
                "kind": self.taming.kind, "theta": self.taming.theta,
                "kappa": self.taming.kappa, "c2": self.taming.c2,
                "zeta": self.taming.zeta, "delta": self.taming.delta,
                "kappa_b": self.taming.kappa_b,
            },
            "mollifier": None if self.mollifier is None else {
                "kind": self.mollifier.kind, "order": self.mollifier.order,
            },
            "functionals": list(self.functionals),
            "coupling": self.coupling,
            "inner_quadrature": self.inner_quadrature,
            "gauss_order": self.gauss_order,
            "control_variate": self.control_variate,
            "sampling": {"chunk_size": self.chunk_size},
            "density": {
                "bins": self.density_bins,
                "estimator": self.density_estimator,
                "extent_sigmas": self.density_extent_sigmas,
            },
        }


# --------------------------------------------------------------------------
# Coupled multi-level endpoint engine
# --------------------------------------------------------------------------

def _tamed_fields(cfg: ExperimentConfig, levels: list[int]
                  ) -> dict[int, DriftField]:
    base = drift_from_id(cfg.drift_id)
    if cfg.taming is None:
        return {n: base for n in levels}
    return {n: tame(base, cfg.taming.with_n(n), cfg.mollifier)
            for n in levels}


class _LevelState:
    """Per-level state and noise aggregation buffers for one path chunk."""

    def __init__(self, n: int, ratio: int, x: np.ndarray, v: np.ndarray):
        self.n = n
        self.h = 1.0 / n
        self.ratio = ratio
        self.x = x
        self.v = v
        self.k = 0
        self.i_acc = np.zeros_like(x)
        self.w_acc = np.zeros_like(x)
        self.count = 0


def _coupled_chunk(cfg: ExperimentConfig, fields: dict[int, DriftField],
                   levels: list[int], n_fine: int, stream: RngStream,
                   npaths: int, track_free: bool
                   ) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Advance all levels through one shared fine Brownian skeleton.

    A coarse noise pair aggregates fine pairs exactly:
    appending a fine pair (i, w) to a buffer holding (I, W) over the
    elapsed coarse window gives (I + i + h_fine * W, W + w).
    """
    d = cfg.z0.d
    h_fine = 1.0 / n_fine
    steps = round(cfg.T * n_fine)
    scheme_cfg = {n: cfg.scheme_for(n) for n in levels}
    states = []
    for n in levels:
        x = np.broadcast_to(cfg.z0.x, (npaths, d)).copy()
        v = np.broadcast_to(cfg.z0.v, (npaths, d)).copy()
        states.append(_LevelState(n, n_fine // n, x, v))
    free_i = np.zeros((npaths, d)) if track_free else None
    free_w = np.zeros((npaths, d)) if track_free else None

    for _ in range(steps):
        fi, fw = sample_step_arrays(stream, h_fine, (npaths, d))
        if track_free:
            free_i += fi + h_fine * free_w
            free_w += fw
        for st in states:
            st.i_acc += fi + h_fine * st.w_acc
            st.w_acc += fw
            st.count += 1
            if st.count == st.ratio:
                ix, iv = drift_increments(st.x, st.v, st.k * st.h, st.h,
                                           fields[st.n], scheme_cfg[st.n])
                st.x += st.h * st.v + ix + st.i_acc
                st.v += iv + st.w_acc
                st.k += 1
                st.i_acc = np.zeros((npaths, d))
                st.w_acc = np.zeros((npaths, d))
                st.count = 0

    out = {st.n: (st.x, st.v) for st in states}
    if track_free:
        out["free"] = (cfg.z0.x + cfg.T * cfg.z0.v + free_i,
                       cfg.z0.v + free_w)
    return out


def _independent_chunk(cfg: ExperimentConfig, fields: dict[int, DriftField],
                       n: int, stream: RngStream, npaths: int,
                       track_free: bool) -> dict:
    return _coupled_chunk(cfg, fields, [n], n, stream, npaths, track_free)


def _chunk_plan(total: int, chunk_size: int) -> list[int]:
    sizes = []
    left = total
    while left > 0:
        take = min(chunk_size, left)
        sizes.append(take)
        left -= take
    return sizes


def _map_chunks(worker, nchunks: int, threads: int) -> list:
    """Run chunk workers, returning results in chunk order regardless of
    scheduling, so reductions are deterministic."""
    if threads <= 1:
        return [worker(i) for i in range(nchunks)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, range(nchunks)))


# --------------------------------------------------------------------------
# Weak error
# --------------------------------------------------------------------------

@dataclass
class _MomentAccumulator:
    count: float = 0.0
    s1: float = 0.0
    s2: float = 0.0

    def add(self, vals: np.ndarray) -> None:
        self.count += vals.size
        self.s1 += float(vals.sum())
        self.s2 += float((vals * vals).sum())

    def mean(self) -> float:
        return self.s1 / self.count

    def sem(self) -> float:
        var = max(self.s2 / self.count - self.mean() ** 2, 0.0)
        return math.sqrt(var / self.count)


@dataclass
class _CvAccumulator:
    """Joint moments for the regression control-variate estimator."""

    count: float = 0.0
    sz: float = 0.0
    sm: float = 0.0
    szz: float = 0.0
    smm: float = 0.0
    szm: float = 0.0

    def add(self, z: np.ndarray, m: np.ndarray) -> None:
        self.count += z.size
        self.sz += float(z.sum())
        self.sm += float(m.sum())
        self.szz += float((z * z).sum())
        self.smm += float((m * m).sum())
        self.szm += float((z * m).sum())

    def adjusted(self, m_expected: float) -> tuple[float, float]:
        n = self.count
        mz = self.sz / n
        mm = self.sm / n
        var_z = max(self.szz / n - mz * mz, 0.0)
        var_m = max(self.smm / n - mm * mm, 0.0)
        cov = self.szm / n - mz * mm
        beta = cov / var_m if var_m > 0 else 0.0
        est = mz - beta * (mm - m_expected)
        var_adj = max(var_z - (cov * cov / var_m if var_m > 0 else 0.0), 0.0)
        return est, math.sqrt(var_adj / n)


@dataclass(frozen=True)
class WeakErrorReport:
    """Per-functional rate fits plus the raw error table."""

    fits: dict[str, RateFitResult]
    reference: dict[str, float | None]
    config: dict

    def rows(self) -> list[tuple]:
        out = []
        for fid, fit in sorted(self.fits.items()):
            for n, err, stderr in fit.per_n_errors:
                out.append((n, err, stderr, "functional", fid))
        return out

    def to_dict(self) -> dict:
        return {
            "metric": "functional",
            "fits": {fid: fit.to_dict() for fid, fit in self.fits.items()},
            "reference": self.reference,
            "config": self.config,
        }


def _safe_fit(points: list[tuple[int, float, float]]) -> RateFitResult:
    try:
        return fit_loglog(points)
    except ValueError:
        return RateFitResult(0.0, 0.0, math.inf, points,
                             excluded=[n for n, _, _ in points],
                             status="inconclusive")


def weak_error(cfg: ExperimentConfig) -> WeakErrorReport:
    """Estimate |E phi(Z_T) - E phi(Z_T^n)| over n and fit the decay.

    Exact references (free, OU) are computed from the closed-form Gaussian
    endpoint law, so their contribution to the error is noiseless; the
    free-endpoint regression control variate then shrinks the Monte Carlo
    noise of each level estimate. The fine_tamed reference differs paths
    pathwise on the shared skeleton instead.
    """
    levels = sorted(cfg.n_set)
    pathwise_ref = cfg.reference == "fine_tamed"
    all_levels = levels + [cfg.reference_n] if pathwise_ref else levels
    fields = _tamed_fields(cfg, all_levels)
    functionals = [make_functional(fid) for fid in cfg.functionals]

    ref_values: dict[str, float | None] = {}
    if not pathwise_ref:
        if cfg.reference == "exact_ou":
            mom = kinetic_ou_moments(cfg.T, cfg.ou_gamma())
            mx, mv = mom.mean(cfg.z0)
            cov = mom.cov
        else:
            base = gamma_transport(cfg.T, cfg.z0)
            mx, mv = base.x, base.v
            cov = step_covariance(cfg.T)
        means = np.stack([mx, mv], axis=-1)
        for f in functionals:
            ref_values[f.id] = f.gaussian_mean(means, cov)
    else:
        for f in functionals:
            ref_values[f.id] = None

    use_cv = cfg.control_variate and not pathwise_ref
    free_moments = None
    if use_cv:
        base = gamma_transport(cfg.T, cfg.z0)
        free_means = np.stack([base.x, base.v], axis=-1)
        free_cov = step_covariance(cfg.T)
        free_moments = {f.id: f.gaussian_mean(free_means, free_cov)
                        for f in functionals}

    if pathwise_ref:
        accs = {(n, f.id): _MomentAccumulator()
                for n in levels for f in functionals}
    elif use_cv:
        accs = {(n, f.id): _CvAccumulator()
                for n in levels for f in functionals}
    else:
        accs = {(n, f.id): _MomentAccumulator()
                for n in levels for f in functionals}

    sizes = _chunk_plan(cfg.sample_count, cfg.chunk_size)
    common = cfg.coupling == "common_noise"

    def run_common(chunk_idx: int):
        stream = RngStream(cfg.seed, chunk_idx)
        n_fine = max(all_levels)
        return _coupled_chunk(cfg, fields, all_levels, n_fine, stream,
                              sizes[chunk_idx], track_free=use_cv)

    if common:
        results = _map_chunks(run_common, len(sizes), cfg.threads)
        for res in results:
            for n in levels:
                xn, vn = res[n]
                for f in functionals:
                    vals = f(xn, vn)
                    if pathwise_ref:
                        xr, vr = res[cfg.reference_n]
                        accs[(n, f.id)].add(vals - f(xr, vr))
                    elif use_cv:
                        xm, vm = res["free"]
                        accs[(n, f.id)].add(vals, f(xm, vm))
                    else:
                        accs[(n, f.id)].add(vals)
    else:
        for li, n in enumerate(all_levels):
            def run_level(chunk_idx: int, n=n, li=li):
                stream = RngStream(cfg.seed, li * len(sizes) + chunk_idx)
                return _independent_chunk(cfg, fields, n, stream,
                                          sizes[chunk_idx],
                                          track_free=use_cv)
            results = _map_chunks(run_level, len(sizes), cfg.threads)
            if n not in levels:
                # independent fine reference: accumulate its functional means
                ref_acc = {f.id: _MomentAccumulator() for f in functionals}
                for res in results:
                    xr, vr = res[n]
                    for f in functionals:
                        ref_acc[f.id].add(f(xr, vr))
                for f in functionals:
                    ref_values[f.id] = ref_acc[f.id].mean()
                continue
            for res in results:
                xn, vn = res[n]
                for f in functionals:
                    vals = f(xn, vn)
                    if use_cv:
                        xm, vm = res["free"]
                        accs[(n, f.id)].add(vals, f(xm, vm))
                    else:
                        accs[(n, f.id)].add(vals)
        if pathwise_ref:
            # independent coupling cannot difference pathwise
            pass

    fits = {}
    for f in functionals:
        points = []
        for n in levels:
            acc = accs[(n, f.id)]
            if pathwise_ref and common:
                err = abs(acc.mean())
                stderr = acc.sem()
            elif isinstance(acc, _CvAccumulator):
                est, sem = acc.adjusted(free_moments[f.id])
                err = abs(est - ref_values[f.id])
                stderr = sem
            else:
                ref = ref_values[f.id]
                err = abs(acc.mean() - ref)
                stderr = acc.sem()
            points.append((n, err, stderr))
        fits[f.id] = _safe_fit(points)

    return WeakErrorReport(fits, ref_values, cfg.to_dict())


# --------------------------------------------------------------------------
# Density estimation and density distance
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class DensityEstimate:
    """Histogram (or kernel-smoothed) density on a centered grid."""

    grid: GridSpec
    weights: np.ndarray
    bandwidth: float
    center_x: np.ndarray
    center_v: np.ndarray

    def total_mass(self) -> float:
        return float(self.weights.sum() * self.grid.cell_volume)


def _density_estimate(x: np.ndarray, v: np.ndarray, grid: GridSpec,
                      center_x: np.ndarray, center_v: np.ndarray,
                      estimator: str = "histogram",
                      bandwidth: float = 0.0) -> DensityEstimate:
    d = grid.d
    pts = np.concatenate([x - center_x, v - center_v], axis=-1)
    edges = ([np.linspace(-grid.extent_x, grid.extent_x,
                          grid.resolution_x + 1)] * d
             + [np.linspace(-grid.extent_v, grid.extent_v,
                            grid.resolution_v + 1)] * d)
    counts, _ = np.histogramdd(pts, bins=edges)
    inside = counts.sum()
    if inside == 0:
        raise ValueError("no samples fall inside the density box")
    weights = counts / (inside * grid.cell_volume)
    if estimator == "kde":
        from scipy.ndimage import gaussian_filter
        sig_x = bandwidth / grid.spacing_x
        sig_v = bandwidth / grid.spacing_v
        weights = gaussian_filter(weights, [sig_x] * d + [sig_v] * d,
                                  mode="constant")
        weights = np.maximum(weights, 0.0)
        weights = weights / (weights.sum() * grid.cell_volume)
    return DensityEstimate(grid, weights, bandwidth, center_x, center_v)


def _silverman_bandwidth(x: np.ndarray, v: np.ndarray) -> float:
    pts = np.concatenate([x, v], axis=-1)
    n, dim = pts.shape
    sigma = float(pts.std(axis=0).mean())
    return sigma * (4.0 / (dim + 2.0)) ** (1.0 / (dim + 4.0)) \
        * n ** (-1.0 / (dim + 4.0))


@dataclass(frozen=True)
class DensityDistanceReport:
    fit: RateFitResult
    noise_floor: float
    verdict: str  # "ok" | "inconclusive"
    config: dict

    def rows(self) -> list[tuple]:
        return [(n, err, stderr, "density", "density")
                for n, err, stderr in self.fit.per_n_errors]

    def to_dict(self) -> dict:
        return {
            "metric": "density",
            "fit": self.fit.to_dict(),
            "noise_floor": self.noise_floor,
            "verdict": self.verdict,
            "config": self.config,
        }


def _reference_moments(cfg: ExperimentConfig):
    if cfg.reference == "exact_ou":
        mom = kinetic_ou_moments(cfg.T, cfg.ou_gamma())
        mx, mv = mom.mean(cfg.z0)
        return mx, mv, mom.cov
    base = gamma_transport(cfg.T, cfg.z0)
    return base.x, base.v, step_covariance(cfg.T)


def _density_grid(cfg: ExperimentConfig, drift: DriftField
                  ) -> tuple[GridSpec, np.ndarray, np.ndarray]:
    mx, mv, cov = _reference_moments(cfg)
    pad_x = pad_v = 0.0
    if drift.sup_bound is not None:
        pad_v = drift.sup_bound * cfg.T
        pad_x = drift.sup_bound * cfg.T**2 / 2.0
    k = cfg.density_extent_sigmas
    ex = k * math.sqrt(cov[0, 0]) + pad_x
    ev = k * math.sqrt(cov[1, 1]) + pad_v
    if cfg.density_bins is not None:
        bins = cfg.density_bins
    else:
        # bins ~ sample_count^(1/3) per axis at d = 1; scaled down with the
        # number of histogram axes (2d) so the cell count stays desk-sized
        per_axis = cfg.sample_count ** (1.0 / (3.0 * cfg.z0.d))
        bins = 2 ** max(3, round(math.log2(per_axis)))
    grid = GridSpec(cfg.z0.d, ex, ev, bins, bins)
    return grid, mx, mv


def _sample_level_endpoints(cfg: ExperimentConfig,
                            fields: dict[int, DriftField],
                            levels: list[int], seed_base: int
                            ) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Endpoint samples for every level, coupled when configured."""
    sizes = _chunk_plan(cfg.sample_count, cfg.chunk_size)
    gathered = {n: [] for n in levels}
    if cfg.coupling == "common_noise":
        n_fine = max(levels)

        def run(chunk_idx: int):
            stream = RngStream(cfg.seed, seed_base + chunk_idx)
            return _coupled_chunk(cfg, fields, levels, n_fine, stream,
                                  sizes[chunk_idx], track_free=False)

        for res in _map_chunks(run, len(sizes), cfg.threads):
            for n in levels:
                gathered[n].append(res[n])
    else:
        for li, n in enumerate(levels):
            def run(chunk_idx: int, n=n, li=li):
                stream = RngStream(cfg.seed,
                                   seed_base + li * len(sizes) + chunk_idx)
                return _independent_chunk(cfg, fields, n, stream,
                                          sizes[chunk_idx], track_free=False)
            for res in _map_chunks(run, len(sizes), cfg.threads):
                gathered[n].append(res[n])
    return {n: (np.concatenate([r[0] for r in gathered[n]]),
                np.concatenate([r[1] for r in gathered[n]]))
            for n in levels}


def density_distance(cfg: ExperimentConfig, q: MixedExponent
                     ) -> DensityDistanceReport:
    """Mixed-norm distance between endpoint density estimates and a
    reference, fitted against n.

    Scheme and reference samples are binned on a common grid at matched
    sample counts, so estimator bias largely cancels in the difference.
    The error per n is the q'-mixed-norm of the difference; its stderr
    comes from a half-sample split, and the reported noise floor is the
    half-vs-half distance of the reference alone.
    """
    d = cfg.z0.d
    if d > 2:
        raise ValueError("density distance is desk-scale: d <= 2 only")
    for comp in (q.p_x, q.p_v):
        if not 2.0 <= comp < math.inf:
            raise ValueError("q must lie in [2, inf)^2")
    drift = drift_from_id(cfg.drift_id)
    if drift.mixed_norm_bound is not None:
        if q.p_x < drift.exponents.p_x or q.p_v < drift.exponents.p_v:
            raise ValueError("the convergence guarantee needs q >= p "
                             "componentwise")
    q_conj = holder_conjugate(q)

    levels = sorted(cfg.n_set)
    pathwise_ref = cfg.reference == "fine_tamed"
    all_levels = levels + [cfg.reference_n] if pathwise_ref else levels
    fields = _tamed_fields(cfg, all_levels)

    grid, mx, mv = _density_grid(cfg, drift)
    center_x, center_v = np.asarray(mx), np.asarray(mv)

    endpoints = _sample_level_endpoints(cfg, fields, all_levels, seed_base=0)

    if pathwise_ref:
        ref_x, ref_v = endpoints[cfg.reference_n]
    elif cfg.reference == "exact_ou":
        from .scheme import exact_kinetic_ou_endpoints
        stream = RngStream(cfg.seed, 10**6)
        ref_x, ref_v = exact_kinetic_ou_endpoints(
            cfg.z0, cfg.T, cfg.ou_gamma(), stream, cfg.sample_count)
    else:
        stream = RngStream(cfg.seed, 10**6)
        fi, fw = sample_step_arrays(stream, cfg.T, (cfg.sample_count, d))
        ref_x = cfg.z0.x + cfg.T * cfg.z0.v + fi
        ref_v = cfg.z0.v + fw

    bandwidth = 0.0
    if cfg.density_estimator == "kde":
        bandwidth = _silverman_bandwidth(ref_x, ref_v)

    def estimate(x, v):
        return _density_estimate(x, v, grid, center_x, center_v,
                                 cfg.density_estimator, bandwidth)

    def dist(e1: DensityEstimate, e2: DensityEstimate) -> float:
        return mixed_norm(GridFunction(grid, e1.weights - e2.weights), q_conj)

    ref_full = estimate(ref_x, ref_v)
    half = cfg.sample_count // 2
    ref_h1 = estimate(ref_x[:half], ref_v[:half])
    ref_h2 = estimate(ref_x[half:], ref_v[half:])
    noise_floor = dist(ref_h1, ref_h2) / 2.0

    points = []
    for n in levels:
        xn, vn = endpoints[n]
        err = dist(estimate(xn, vn), ref_full)
        d1 = dist(estimate(xn[:half], vn[:half]), ref_h1)
        d2 = dist(estimate(xn[half:], vn[half:]), ref_h2)
        stderr = abs(d1 - d2) / 2.0
        points.append((n, err, stderr))

    fit = _safe_fit(points)
    smallest = min((err for _, err, _ in fit.per_n_errors), default=0.0)
    verdict = "ok"
    if fit.status != "ok" or smallest <= noise_floor:
        verdict = "inconclusive"
    return DensityDistanceReport(fit, noise_floor, verdict, cfg.to_dict())


# --------------------------------------------------------------------------
# Brownian skeleton refinement (common random numbers)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class NoiseSkeleton:
    """Per-path noise record: one (integral, increment) pair per step.

    Arrays have shape (..., steps, d).
    """

    h: float
    integral: np.ndarray
    increment: np.ndarray

    @property
    def steps(self) -> int:
        return self.integral.shape[-2]


def sample_skeleton(rng: RngStream, n: int, T: float = 1.0,
                    npaths: int = 1, d: int = 1) -> NoiseSkeleton:
    steps = round(T * n)
    if abs(T * n - steps) > 1e-9:
        raise ValueError("T * n must be integral")
    h = 1.0 / n
    integral, increment = sample_step_arrays(rng, h, (npaths, steps, d))
    return NoiseSkeleton(h, integral, increment)


@lru_cache(maxsize=64)
def _refinement_operators(h: float) -> tuple[np.ndarray, np.ndarray]:
    """(A, K): constraint map and conditioning gain for one step split.

    The fine vector u = (I1, W1, I2, W2) per dimension is Gaussian with
    block covariance diag(C(h/2), C(h/2)); the coarse pair is A u with
    A = [[1, h/2, 1, 0], [0, 1, 0, 1]] and A Sigma A' = C(h). Conditioning
    by the kriging update u0 + K (target - A u0) is exact in law.
    """
    hh = h / 2.0
    c = step_covariance(hh)
    sigma = np.zeros((4, 4))
    sigma[:2, :2] = c
    sigma[2:, 2:] = c
    a = np.array([[1.0, hh, 1.0, 0.0],
                  [0.0, 1.0, 0.0, 1.0]])
    k = sigma @ a.T @ np.linalg.inv(a @ sigma @ a.T)
    return a, k


def refine_brownian_skeleton(skel: NoiseSkeleton, target_steps: int,
                             rng: RngStream) -> NoiseSkeleton:
    """Split every step in two, conditionally on the recorded pair values.

    The marginal law of the refined skeleton equals direct sampling at the
    doubled level, and coarse sums of refined increments reproduce the
    originals exactly.
    """
    if target_steps != 2 * skel.steps:
        raise ValueError("refinement doubles the level: target must be "
                         f"{2 * skel.steps}, got {target_steps}")
    h = skel.h
    a, k = _refinement_operators(h)
    lead = skel.integral.shape[:-2]
    steps, d = skel.integral.shape[-2:]
    fi, fw = sample_step_arrays(rng, h / 2.0, lead + (steps, 2, d))
    # unconditional fine draw u0 and its coarse image
    u0 = np.stack([fi[..., 0, :], fw[..., 0, :],
                   fi[..., 1, :], fw[..., 1, :]], axis=-2)  # (..., steps, 4, d)
    target = np.stack([skel.integral, skel.increment], axis=-2)
    defect = target - np.einsum("ij,...jd->...id", a, u0)
    u = u0 + np.einsum("ij,...jd->...id", k, defect)
    # stacking on axis -2 leaves (steps, half) adjacent, so a plain reshape
    # interleaves the two halves of every step in order
    integral = np.stack([u[..., 0, :], u[..., 2, :]], axis=-2)
    increment = np.stack([u[..., 1, :], u[..., 3, :]], axis=-2)
    integral = integral.reshape(lead + (2 * steps, d))
    increment = increment.reshape(lead + (2 * steps, d))
    return NoiseSkeleton(h / 2.0, integral, increment)


def coarsen_skeleton(skel: NoiseSkeleton) -> NoiseSkeleton:
    """Merge step pairs exactly: (I, W) = (I1 + I2 + h W1, W1 + W2)."""
    if skel.steps % 2 != 0:
        raise ValueError("need an even number of steps to coarsen")
    h = skel.h
    i1 = skel.integral[..., 0::2, :]
    i2 = skel.integral[..., 1::2, :]
    w1 = skel.increment[..., 0::2, :]
    w2 = skel.increment[..., 1::2, :]
    return NoiseSkeleton(2.0 * h, i1 + i2 + h * w1, w1 + w2)


def run_tamed_with_skeleton(z0: PhaseState, b_n: DriftField,
                            skel: NoiseSkeleton,
                            cfg: SchemeConfig) -> tuple[np.ndarray, np.ndarray]:
    """Tamed scheme consuming a recorded skeleton; endpoint arrays."""
    if not math.isclose(skel.h, cfg.h, rel_tol=1e-12):
        raise ValueError("skeleton level does not match scheme n")
    lead = skel.integral.shape[:-2]
    d = skel.integral.shape[-1]
    x = np.broadcast_to(z0.x, lead + (d,)).copy()
    v = np.broadcast_to(z0.v, lead + (d,)).copy()
    h = skel.h
    for kstep in range(skel.steps):
        ix, iv = drift_increments(x, v, kstep * h, h, b_n, cfg)
        x += h * v + ix + skel.integral[..., kstep, :]
        v += iv + skel.increment[..., kstep, :]
    return x, v
