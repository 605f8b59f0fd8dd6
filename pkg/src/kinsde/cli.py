"""Command-line front end: parse configs, dispatch experiments, write files.

Subcommands: sample, weak-rate, density, besov-rate, kernel-check,
taming-check. Configs are TOML with nested sections; unknown keys are hard
errors. All randomness flows from one top-level seed; worker streams are
derived deterministically, so reruns with the same config produce
byte-identical CSV/JSON outputs for any thread count.

Exit codes: 0 pass, 1 internal error, 2 config error, 3 inconclusive,
4 FAIL verdict.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
import traceback
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .besov import build_block_system, taming_rate_fit
from .drift import MollifierSpec, TamingParams, cutoff_tame, drift_from_id, \
    mollify_tame, tame, verify_taming_growth
from .fitting import RateFitResult
from .geometry import GridSpec, MixedExponent, PhaseState
from .harness import (ExperimentConfig, default_functional_ids,
                      density_distance, weak_error)
from .kernels import kernel_check_battery
from .noise import RngStream, sample_step_arrays
from .scheme import (SchemeConfig, exact_kinetic_ou_endpoints,
                     standard_em_endpoints, tamed_em_endpoints)

EXIT_PASS = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_INCONCLUSIVE = 3
EXIT_FAIL = 4

OUT_DIR_ENV = "KINSDE_OUT_DIR"


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# Config parsing with strict schemas
# --------------------------------------------------------------------------

_SCHEMAS = {
    "experiment": {"drift", "z0_x", "z0_v", "T", "n_set", "reference",
                   "reference_n", "functionals", "sample_count", "seed",
                   "coupling", "control_variate", "chunk_size",
                   "inner_quadrature", "gauss_order"},
    "taming": {"kind", "theta", "kappa", "c2", "zeta", "delta", "kappa_b",
               "mollifier", "quadrature_order"},
    "sample": {"scheme", "n", "paths", "gamma"},
    "density": {"q", "bins", "estimator", "extent_sigmas"},
    "besov": {"resolution", "extent", "levels", "n_set", "p", "tolerance"},
    "growth": {"n_set", "box", "budget"},
    "verdict": {"max_slope", "max_stderr_slope"},
}


def load_config(path: str, allowed_sections: set[str]) -> dict:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config does not parse: {exc}")
    unknown = set(raw) - allowed_sections
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, content in raw.items():
        if not isinstance(content, dict):
            raise ConfigError(f"top-level entry [{section}] must be a table")
        bad = set(content) - _SCHEMAS[section]
        if bad:
            raise ConfigError(
                f"unknown keys in [{section}]: {sorted(bad)}")
    return raw


def _taming_from(cfg: dict) -> tuple[TamingParams | None,
                                     MollifierSpec | None]:
    sec = cfg.get("taming")
    if sec is None:
        return None, None
    params = TamingParams(
        kind=sec.get("kind", "cutoff"),
        theta=float(sec.get("theta", 0.5)),
        kappa=float(sec.get("kappa", 0.25)),
        c2=float(sec.get("c2", 1.0)),
        zeta=float(sec.get("zeta", 0.25)),
        delta=float(sec.get("delta", 1.5)),
        kappa_b=float(sec.get("kappa_b", 10.0)),
    )
    phi = MollifierSpec(kind=sec.get("mollifier", "bump"),
                        order=int(sec.get("quadrature_order", 16)))
    return params, phi


def _experiment_from(cfg: dict, args) -> ExperimentConfig:
    sec = cfg.get("experiment")
    if sec is None:
        raise ConfigError("missing [experiment] section")
    for key in ("drift", "n_set", "reference", "sample_count"):
        if key not in sec:
            raise ConfigError(f"[experiment] needs key {key!r}")
    z0 = PhaseState(np.asarray(sec.get("z0_x", [0.0]), dtype=float),
                    np.asarray(sec.get("z0_v", [0.0]), dtype=float))
    taming, phi = _taming_from(cfg)
    dens = cfg.get("density", {})
    seed = args.seed if args.seed is not None else int(sec.get("seed", 0))
    return ExperimentConfig(
        drift_id=sec["drift"],
        z0=z0,
        n_set=tuple(int(n) for n in sec["n_set"]),
        reference=sec["reference"],
        reference_n=sec.get("reference_n"),
        sample_count=int(sec["sample_count"]),
        seed=seed,
        T=float(sec.get("T", 1.0)),
        taming=taming,
        mollifier=phi,
        functionals=tuple(sec.get("functionals",
                                  default_functional_ids())),
        coupling=sec.get("coupling", "common_noise"),
        inner_quadrature=sec.get("inner_quadrature", "gauss"),
        gauss_order=int(sec.get("gauss_order", 4)),
        control_variate=bool(sec.get("control_variate", True)),
        chunk_size=int(sec.get("chunk_size", 16384)),
        threads=args.threads,
        density_bins=int(dens["bins"]) if "bins" in dens else None,
        density_estimator=dens.get("estimator", "histogram"),
        density_extent_sigmas=float(dens.get("extent_sigmas", 8.0)),
    )


def _parse_exponent(values) -> MixedExponent:
    def conv(v):
        if isinstance(v, str):
            if v.lower() in ("inf", "infinity"):
                return math.inf
            return float(v)
        return float(v)

    if not isinstance(values, (list, tuple)) or len(values) != 2:
        raise ConfigError("exponent pairs must be two-element lists")
    return MixedExponent(conv(values[0]), conv(values[1]))


# --------------------------------------------------------------------------
# Output writing
# --------------------------------------------------------------------------

def _out_dir(args) -> Path:
    if args.out_dir:
        path = Path(args.out_dir)
    elif os.environ.get(OUT_DIR_ENV):
        path = Path(os.environ[OUT_DIR_ENV])
    else:
        path = Path("kinsde-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_manifest(out: Path, command: str, payload: dict,
                    files: list[str], started: float) -> None:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config_hash": _config_hash(payload),
        "started_unix": started,
        "finished_unix": time.time(),
        "outputs": sorted(files),
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_rate_csv(path: Path, rows: list[tuple]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("n,error,stderr,metric,functional_id\n")
        for n, err, stderr, metric, fid in rows:
            fh.write(f"{n},{err!r},{stderr!r},{metric},{fid}\n")


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def cmd_sample(args) -> int:
    started = time.time()
    cfg = load_config(args.config, {"experiment", "taming", "sample"})
    sec = cfg.get("sample", {})
    exp = cfg.get("experiment", {})
    scheme_kind = sec.get("scheme", "tamed")
    n = int(sec.get("n", 16))
    npaths = int(sec.get("paths", 100))
    seed = args.seed if args.seed is not None else int(exp.get("seed", 0))
    z0 = PhaseState(np.asarray(exp.get("z0_x", [0.0]), dtype=float),
                    np.asarray(exp.get("z0_v", [0.0]), dtype=float))
    drift_id = exp.get("drift", "zero")
    drift = drift_from_id(drift_id)
    taming, phi = _taming_from(cfg)
    scheme_cfg = SchemeConfig(n=n, T=float(exp.get("T", 1.0)),
                              inner_quadrature=exp.get("inner_quadrature",
                                                       "gauss"))
    stream = RngStream(seed)
    if scheme_kind == "tamed":
        field = drift if taming is None else tame(drift, taming.with_n(n),
                                                  phi)
        x, v = tamed_em_endpoints(z0, scheme_cfg, field, stream, npaths)
    elif scheme_kind == "standard":
        x, v = standard_em_endpoints(z0, scheme_cfg, drift, stream, npaths)
    elif scheme_kind == "exact_ou":
        gamma = float(sec.get("gamma", 1.0))
        x, v = exact_kinetic_ou_endpoints(z0, scheme_cfg.T, gamma, stream,
                                          npaths)
    elif scheme_kind == "free":
        fi, fw = sample_step_arrays(stream, scheme_cfg.T, (npaths, z0.d))
        x = z0.x + scheme_cfg.T * z0.v + fi
        v = z0.v + fw
    else:
        raise ConfigError(f"unknown sample scheme {scheme_kind!r}")

    out = _out_dir(args)
    sample_path = out / "samples.csv"
    d = z0.d
    with open(sample_path, "w", newline="") as fh:
        cols = (["path_id"] + [f"x{i}" for i in range(d)]
                + [f"v{i}" for i in range(d)])
        fh.write(",".join(cols) + "\n")
        for pid in range(npaths):
            vals = [str(pid)] + [repr(float(c)) for c in x[pid]] \
                + [repr(float(c)) for c in v[pid]]
            fh.write(",".join(vals) + "\n")
    payload = {"command": "sample", "config": cfg, "seed": seed,
               "scheme": scheme_kind, "n": n, "paths": npaths,
               "drift": drift_id}
    _write_manifest(out, "sample", payload, [sample_path.name], started)
    print(f"wrote {npaths} endpoint samples to {sample_path}")
    return EXIT_PASS


def _verdict_exit(fit: RateFitResult, cfg: dict) -> tuple[str, int]:
    verdict_cfg = cfg.get("verdict", {})
    max_slope = float(verdict_cfg.get("max_slope", -0.4))
    max_stderr = float(verdict_cfg.get("max_stderr_slope", math.inf))
    if fit.status != "ok":
        return "INCONCLUSIVE", EXIT_INCONCLUSIVE
    if fit.slope <= max_slope and fit.stderr_slope <= max_stderr:
        return "PASS", EXIT_PASS
    return "FAIL", EXIT_FAIL


def cmd_weak_rate(args) -> int:
    started = time.time()
    cfg = load_config(args.config,
                      {"experiment", "taming", "verdict", "density"})
    exp = _experiment_from(cfg, args)
    report = weak_error(exp)
    out = _out_dir(args)
    files = []
    if args.format in ("csv", "both"):
        _write_rate_csv(out / "weak_rate_results.csv", report.rows())
        files.append("weak_rate_results.csv")
    summary = report.to_dict()
    worst = EXIT_PASS
    lines = []
    for fid, fit in sorted(report.fits.items()):
        verdict, code = _verdict_exit(fit, cfg)
        worst = max(worst, code)
        line = (f"{verdict} {fid}: slope {fit.slope:+.4f} "
                f"(stderr {fit.stderr_slope:.4f})")
        if fit.excluded:
            line += f" [warning: unresolved points excluded: {fit.excluded}]"
        lines.append(line)
        summary["fits"][fid]["verdict"] = verdict
    _write_json(out / "weak_rate_summary.json", summary)
    files.append("weak_rate_summary.json")
    _write_manifest(out, "weak-rate", summary["config"], files, started)
    for line in lines:
        print(line)
    return worst


def cmd_density(args) -> int:
    started = time.time()
    cfg = load_config(args.config,
                      {"experiment", "taming", "density", "verdict"})
    exp = _experiment_from(cfg, args)
    if exp.z0.d > 2:
        raise ConfigError("density experiments are limited to d <= 2")
    q = _parse_exponent(cfg.get("density", {}).get("q", [2.0, 2.0]))
    report = density_distance(exp, q)
    out = _out_dir(args)
    files = []
    if args.format in ("csv", "both"):
        _write_rate_csv(out / "density_results.csv", report.rows())
        files.append("density_results.csv")
    summary = report.to_dict()
    if report.verdict != "ok":
        verdict, code = "INCONCLUSIVE", EXIT_INCONCLUSIVE
    else:
        verdict, code = _verdict_exit(report.fit, cfg)
    summary["verdict"] = verdict
    _write_json(out / "density_summary.json", summary)
    files.append("density_summary.json")
    _write_manifest(out, "density", summary["config"], files, started)
    print(f"{verdict} density: slope {report.fit.slope:+.4f} "
          f"noise floor {report.noise_floor:.3e}")
    return code


def cmd_besov_rate(args) -> int:
    started = time.time()
    cfg = load_config(args.config, {"experiment", "taming", "besov"})
    exp = cfg.get("experiment", {})
    bes = cfg.get("besov", {})
    taming, phi = _taming_from(cfg)
    if taming is None:
        raise ConfigError("besov-rate needs a [taming] section")
    drift = drift_from_id(exp.get("drift", "powerlaw:A=1,beta=0"))
    res = bes.get("resolution", [1024, 1024])
    ext = bes.get("extent", [1.5, 1.5])
    spec = GridSpec(1, float(ext[0]), float(ext[1]), int(res[0]),
                    int(res[1]))
    sys_ = build_block_system(spec, int(bes.get("levels", 8)))
    n_set = [int(n) for n in bes.get("n_set", [4, 8, 16, 32])]
    p = _parse_exponent(bes["p"]) if "p" in bes else None
    report = taming_rate_fit(drift, taming, n_set, spec, sys_, p=p, phi=phi,
                             tolerance=float(bes.get("tolerance", 0.15)))
    out = _out_dir(args)
    rows = [(n, err, stderr, "besov", "taming")
            for n, err, stderr in report.fit.per_n_errors]
    files = []
    if args.format in ("csv", "both"):
        _write_rate_csv(out / "besov_rate_results.csv", rows)
        files.append("besov_rate_results.csv")
    summary = {
        "metric": "besov_taming_rate",
        "fit": report.fit.to_dict(),
        "expected_slope": report.expected_slope,
        "exact_taming": report.exact,
        "passed": report.passed,
        "config": cfg,
    }
    _write_json(out / "besov_rate_summary.json", summary)
    files.append("besov_rate_summary.json")
    _write_manifest(out, "besov-rate", cfg, files, started)
    if report.exact:
        print("PASS besov-rate: taming is exact on the grid "
              "(all differences vanish)")
        return EXIT_PASS
    word = "PASS" if report.passed else "FAIL"
    print(f"{word} besov-rate: slope {report.fit.slope:+.4f} "
          f"(expected {report.expected_slope:+.4f})")
    return EXIT_PASS if report.passed else EXIT_FAIL


def cmd_kernel_check(args) -> int:
    started = time.time()
    seed = args.seed if args.seed is not None else 0
    checks = kernel_check_battery(seed)
    out = _out_dir(args)
    summary = {
        "checks": [{"name": c.name, "passed": c.passed,
                    "observed": c.observed, "bound": c.bound}
                   for c in checks],
        "all_passed": all(c.passed for c in checks),
    }
    _write_json(out / "kernel_check_summary.json", summary)
    _write_manifest(out, "kernel-check", {"seed": seed},
                    ["kernel_check_summary.json"], started)
    for c in checks:
        print(c.line())
    return EXIT_PASS if summary["all_passed"] else EXIT_FAIL


def cmd_taming_check(args) -> int:
    started = time.time()
    cfg = load_config(args.config, {"experiment", "taming", "growth"})
    exp = cfg.get("experiment", {})
    growth = cfg.get("growth", {})
    taming, phi = _taming_from(cfg)
    if taming is None:
        raise ConfigError("taming-check needs a [taming] section")
    drift = drift_from_id(exp.get("drift", "powerlaw:A=1,beta=0.25"))
    n_set = [int(n) for n in growth.get("n_set", [4, 16, 64, 256])]
    seed = args.seed if args.seed is not None else int(exp.get("seed", 0))
    family = []
    for n in n_set:
        member = taming.with_n(n)
        if taming.kind == "cutoff":
            family.append((n, cutoff_tame(drift, member)))
        else:
            family.append((n, mollify_tame(drift, member, phi)))
    report = verify_taming_growth(
        family, taming,
        sample_budget=int(growth.get("budget", 4096)),
        box=float(growth.get("box", 2.0)), seed=seed)
    out = _out_dir(args)
    summary = {
        "per_n_sup": report.per_n_sup,
        "per_n_scaled": report.per_n_scaled,
        "growth_exponent": report.growth_exponent,
        "kappa_b": report.kappa_b,
        "passed": report.passed,
        "config": cfg,
    }
    _write_json(out / "taming_check_summary.json", summary)
    _write_manifest(out, "taming-check", cfg,
                    ["taming_check_summary.json"], started)
    word = "PASS" if report.passed else "FAIL"
    print(f"{word} taming-check: growth exponent "
          f"{report.growth_exponent:+.4f}, bound kappa_b {report.kappa_b}")
    return EXIT_PASS if report.passed else EXIT_FAIL


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kinsde",
        description="Monte Carlo laboratory for tamed kinetic SDE schemes")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_config=True):
        if needs_config:
            p.add_argument("config", help="TOML experiment config")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (env {OUT_DIR_ENV} honored)")
        p.add_argument("--format", choices=("csv", "json", "both"),
                       default="both")

    p = sub.add_parser("sample", help="write endpoint samples as CSV")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("weak-rate", help="weak-error rate experiment")
    common(p)
    p.set_defaults(func=cmd_weak_rate)

    p = sub.add_parser("density", help="density-distance rate experiment")
    common(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("besov-rate", help="taming rate in the Besov norm")
    common(p)
    p.set_defaults(func=cmd_besov_rate)

    p = sub.add_parser("kernel-check", help="fixed kernel invariant battery")
    common(p, needs_config=False)
    p.set_defaults(func=cmd_kernel_check)

    p = sub.add_parser("taming-check", help="taming growth verification")
    common(p)
    p.set_defaults(func=cmd_taming_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
