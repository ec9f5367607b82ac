"""Command-line entry point: ``zeroscale {simulate,sensitivity,estimate,lab}``.

Each verb reads a TOML config (``--config``); the global flags override the
config.  Every output file records the seed, the SHA-256 of the config
bytes and the package version, and contains no timestamps, so re-running a
config reproduces every file byte for byte.

Exit codes: 0 success, 1 estimator failure, 2 invalid input or config.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import warnings
from pathlib import Path
from typing import Any, Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import __version__
from .bounds import iv_complier_ate_pct, iv_lee_bounds_data, lee_bounds, selection_point_estimate
from .dataset import ColumnSpec, load_csv, write_csv
from .errors import EstimationError, InputError
from .identification import (DiscreteJoint, DiscreteMarginals, GFunction, coupling_range,
                             scale_invariance_test, separability_test, trilemma_report,
                             two_part_decomposition)
from .inference import BootstrapSpec
from .poisson import ate_pct_poisson, att_pct_did
from .sensitivity import ENGINES, extensive_margin, rescale_summary, sensitivity_curve, tstat_table
from .simulate import DGPS, simulate
from .target_params import (ate_pct_means, calibrated_ate, median_pct, normalized_outcome_ate,
                            rank_ate, threshold_profile)
from .transforms import parse_transform

THREADS_ENV = "ZEROSCALE_THREADS"
ESTIMATORS = ("ate_pct_means", "ate_pct_poisson", "att_pct_did", "extensive_margin", "median_pct",
              "normalized_outcome", "rank", "thresholds", "calibrated", "lee", "selection",
              "iv_bounds", "iv_ate_pct")
LAB_TASKS = ("coupling_range", "separability", "scale_invariance", "trilemma", "two_part")


class ConfigError(InputError):
    pass


# -- config ----------------------------------------------------------------------

class Run:
    """Resolved configuration plus provenance for one invocation."""

    def __init__(self, args):
        self.raw_bytes = b""
        self.base = Path.cwd()
        cfg = {}
        if args.config:
            path = Path(args.config)
            try:
                self.raw_bytes = path.read_bytes()
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
            try:
                cfg = tomllib.loads(self.raw_bytes.decode("utf-8"))
            except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
                raise ConfigError(f"{path}: {exc}") from None
            self.base = path.resolve().parent
        self.cfg = cfg
        self.seed = args.seed if args.seed is not None else _get(cfg, "seed", int, 0)
        env = os.environ.get(THREADS_ENV)
        threads = args.threads if args.threads is not None else _get(cfg, "threads", int, None)
        if threads is None and env:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        self.threads = max(1, threads or 1)
        out = args.out if args.out is not None else _get(cfg, "out", str, "out")
        self.out = Path(out) if args.out is not None else self.base / out
        self.config_hash = hashlib.sha256(self.raw_bytes).hexdigest()

    def section(self, name):
        sec = self.cfg.get(name, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
        return sec

    @property
    def provenance(self) -> dict:
        return {"seed": self.seed, "config_sha256": self.config_hash, "version": __version__}

    @property
    def header(self) -> list:
        p = self.provenance
        return [f"seed={p['seed']} config_sha256={p['config_sha256']} version={p['version']}"]

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base / p

    # writers

    def write_json(self, name: str, payload: dict) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        target = self.out / name
        body = {"provenance": self.provenance, **_clean(payload)}
        with target.open("w", encoding="utf-8") as fh:
            json.dump(body, fh, indent=2, sort_keys=True, allow_nan=False)
            fh.write("\n")
        return target

    def write_table(self, name: str, header: list, rows: list) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        target = self.out / name
        with target.open("w", newline="", encoding="utf-8") as fh:
            for line in self.header:
                fh.write(f"# {line}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        return target


def _get(sec: dict, key: str, kind, default: Any = None, where: str = ""):
    if key not in sec:
        return default
    v = sec[key]
    field = f"{where}.{key}" if where else key
    if kind is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if kind is list:
        if not isinstance(v, list):
            raise ConfigError(f"field {field!r} must be an array")
        return v
    if kind is bool:
        if not isinstance(v, bool):
            raise ConfigError(f"field {field!r} must be true or false")
        return v
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise ConfigError(f"field {field!r} must be an integer")
    if not isinstance(v, kind):
        raise ConfigError(f"field {field!r} must be of type {kind.__name__}")
    return v


def _floats(sec, key, where, default=None):
    v = _get(sec, key, list, default, where)
    if v is None:
        return None
    try:
        return [float(x) for x in v if not isinstance(x, bool)]
    except (TypeError, ValueError):
        raise ConfigError(f"field '{where}.{key}' must be an array of numbers") from None


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_clean(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _load_data(run: Run):
    sec = run.section("data")
    if "path" not in sec:
        raise ConfigError("field 'data.path' is required")
    cols = sec.get("columns", {})
    if not isinstance(cols, dict):
        raise ConfigError("[data.columns] must be a table")
    for role in ("outcome", "treatment"):
        if role not in cols:
            raise ConfigError(f"field 'data.columns.{role}' is required")
    covs = _get(cols, "covariates", list, [], "data.columns")
    spec = ColumnSpec.from_roles(
        outcome=cols["outcome"], treatment=cols["treatment"], instrument=cols.get("instrument"),
        post=cols.get("post"), group=cols.get("group"), covariates=covs, cluster=cols.get("cluster"),
    )
    return load_csv(run.path(_get(sec, "path", str, where="data")), spec)


def _bootstrap(run: Run) -> Optional[BootstrapSpec]:
    sec = run.section("bootstrap")
    if not sec:
        return None
    draws = _get(sec, "draws", int, 1000, "bootstrap")
    if draws == 0:
        return None
    return BootstrapSpec(draws=draws, seed=_get(sec, "seed", int, run.seed, "bootstrap"),
                         cluster=_get(sec, "cluster", bool, True, "bootstrap"), threads=run.threads)


# -- verbs -----------------------------------------------------------------------

def cmd_simulate(run: Run) -> list:
    sec = run.section("simulate")
    dgp = _get(sec, "dgp", str, None, "simulate")
    if dgp is None:
        raise ConfigError("field 'simulate.dgp' is required")
    if dgp not in DGPS:
        raise ConfigError(f"field 'simulate.dgp' must be one of {DGPS}")
    params = {k: v for k, v in sec.items() if k != "dgp"}
    params["seed"] = run.seed
    d, manifest = simulate(dgp, **params)
    run.out.mkdir(parents=True, exist_ok=True)
    data_path = run.out / "data.csv"
    write_csv(d, data_path, header_lines=run.header)
    return [data_path, run.write_json("manifest.json", manifest)]


def cmd_sensitivity(run: Run) -> list:
    sec = run.section("sensitivity")
    d = _load_data(run)
    t = parse_transform(_get(sec, "transform", str, "arcsinh", "sensitivity"))
    engine = _get(sec, "engine", str, "ols_diff_means", "sensitivity")
    if engine not in ENGINES:
        raise ConfigError(f"field 'sensitivity.engine' must be one of {ENGINES}")
    vcov = _get(sec, "vcov", str, "HC0", "sensitivity")
    grid = _floats(sec, "grid", "sensitivity")
    factor = _get(sec, "factor", float, 100.0, "sensitivity")
    curve = sensitivity_curve(d, t, grid, engine, vcov, run.threads)
    table = tstat_table(d, t, curve.grid, engine, vcov, run.threads)
    summary = rescale_summary(d, t, factor, engine, vcov)
    files = [
        run.write_table("curve.csv", ["a", "theta", "se", "tstat", "approx"], list(curve.rows())),
        run.write_json("curve.json", curve.summary()),
        run.write_table("tstats.csv", ["a", "t_theta", "t_gamma"], list(table.rows())),
        run.write_json("tstats.json", {"grid": table.grid, "t_theta": table.t_theta,
                                       "t_gamma": table.t_gamma,
                                       "convergence_expected": table.convergence_expected}),
    ]
    cols = ["transform", "theta_1", f"theta_{factor:g}", "extensive_margin", "raw_change", "pct_change"]
    row = [summary["transform"], summary["theta_1"], summary["theta_factor"],
           summary["extensive_margin"], summary["raw_change"], summary["pct_change"]]
    files.append(run.write_table("summary.csv", cols, [row]))
    files.append(run.write_json("summary.json", summary))
    files.append(run.write_table("plot.csv", ["abs_change", "predicted_abs_change"],
                                 [[abs(summary["raw_change"]), abs(summary["predicted_change"])]]))
    return files


def _est_row(name, res):
    return [name, res.value, res.se, "", "", res.transform]


def cmd_estimate(run: Run) -> list:
    sec = run.section("estimate")
    names = _get(sec, "estimators", list, [], "estimate")
    if not names:
        raise ConfigError("field 'estimate.estimators' must list at least one estimator")
    unknown = [n for n in names if n not in ESTIMATORS]
    if unknown:
        raise ConfigError(f"unknown estimators {unknown}; expected a subset of {ESTIMATORS}")
    d = _load_data(run)
    boot = _bootstrap(run)
    vcov = _get(sec, "vcov", str, "HC0", "estimate")
    covs = _get(sec, "covariates", bool, False, "estimate")
    files, summary = [], []

    def emit(name, payload, header, rows):
        files.append(run.write_json(f"{name}.json", payload))
        files.append(run.write_table(f"{name}.csv", header, rows))

    est_header = ["estimator", "value", "se", "tstat"]
    for name in names:
        if name in ("ate_pct_means", "ate_pct_poisson", "att_pct_did", "extensive_margin",
                    "median_pct", "normalized_outcome", "rank", "iv_ate_pct"):
            if name == "ate_pct_means":
                res = ate_pct_means(d, vcov)
            elif name == "ate_pct_poisson":
                res = ate_pct_poisson(d, covs, vcov)
            elif name == "att_pct_did":
                res = att_pct_did(d, covs, vcov)
            elif name == "extensive_margin":
                res = extensive_margin(d, "ols_with_covariates" if covs else "ols_diff_means", vcov)
            elif name == "median_pct":
                res = median_pct(d, boot)
            elif name == "normalized_outcome":
                den = sec.get("denominator")
                if den is None:
                    raise ConfigError("field 'estimate.denominator' is required for normalized_outcome")
                res = normalized_outcome_ate(d, den, covs, vcov)
            elif name == "rank":
                ref = sec.get("rank_reference", "pooled_control")
                res = rank_ate(d, ref, vcov)
            else:
                res = iv_complier_ate_pct(d, covs, boot)
            payload = res.to_dict()
            emit(name, payload, est_header, [[name, res.value, res.se, res.tstat]])
            summary.append([name, res.value, res.se, "", ""])
        elif name == "thresholds":
            th = _floats(sec, "thresholds", "estimate")
            if not th:
                raise ConfigError("field 'estimate.thresholds' is required for thresholds")
            prof = threshold_profile(d, th, covs, vcov)
            rows = [[e.meta["threshold"], e.value, e.se, e.tstat] for e in prof.effects]
            emit(name, {"effects": [e.to_dict() for e in prof.effects]},
                 ["threshold", "value", "se", "tstat"], rows)
            for e in prof.effects:
                summary.append([f"threshold>={e.meta['threshold']:g}", e.value, e.se, "", ""])
        elif name == "calibrated":
            xs = _floats(sec, "x_list", "estimate", [0.0, 0.1, 1.0, 3.0])
            did = _get(sec, "did", bool, False, "estimate")
            res = [calibrated_ate(d, x, did, covs, vcov) for x in xs]
            header = ["row"] + [f"x={x:g}" for x in xs]
            rows = [["estimate"] + [r.value for r in res], ["se"] + [r.se for r in res]]
            emit(name, {"x_list": xs, "did": did, "results": [r.to_dict() for r in res],
                        "y_min": res[0].meta["y_min"]}, header, rows)
            for x, r in zip(xs, res):
                summary.append([f"calibrated x={x:g}", r.value, r.se, "", ""])
        elif name == "lee":
            scales = _get(sec, "lee_scales", list, ["log", "levels"], "estimate")
            cs = _floats(sec, "c_list", "estimate", [0.0, 0.25, 0.5])
            bnds = [lee_bounds(d, s, boot) for s in scales]
            sel = [selection_point_estimate(d, c, boot) for c in cs]
            header = ["row"] + [f"lee_{s}" for s in scales] + [f"c={c:g}" for c in cs]
            blank = [""] * len(cs)
            rows = [
                ["lower"] + [b.lower for b in bnds] + blank,
                ["se_lower"] + [b.se_lower for b in bnds] + blank,
                ["upper"] + [b.upper for b in bnds] + blank,
                ["se_upper"] + [b.se_upper for b in bnds] + blank,
                ["estimate"] + [""] * len(bnds) + [s.value for s in sel],
                ["se"] + [""] * len(bnds) + [s.se for s in sel],
            ]
            emit(name, {"bounds": [b.to_dict() for b in bnds], "selection": [s.to_dict() for s in sel]},
                 header, rows)
            for s, b in zip(scales, bnds):
                summary.append([f"lee_{s}", "", "", b.lower, b.upper])
            for c, s in zip(cs, sel):
                summary.append([f"selection c={c:g}", s.value, s.se, "", ""])
        elif name == "selection":
            cs = _floats(sec, "c_list", "estimate", [0.0, 0.25, 0.5])
            sel = [selection_point_estimate(d, c, boot) for c in cs]
            emit(name, {"selection": [s.to_dict() for s in sel]}, ["c", "value", "se"],
                 [[c, s.value, s.se] for c, s in zip(cs, sel)])
            for c, s in zip(cs, sel):
                summary.append([f"selection c={c:g}", s.value, s.se, "", ""])
        elif name == "iv_bounds":
            scale = _get(sec, "iv_scale", str, "log", "estimate")
            mode = _get(sec, "iv_mode", str, "quadrature", "estimate")
            draws = _get(sec, "iv_draws", int, 100000, "estimate")
            b = iv_lee_bounds_data(d, scale, mode, draws, run.seed, covs, boot)
            emit(name, b.to_dict(), ["row", "value", "se"],
                 [["lower", b.lower, b.se_lower], ["upper", b.upper, b.se_upper]])
            summary.append(["iv_bounds", "", "", b.lower, b.upper])
    files.append(run.write_table("summary.csv", ["estimator", "value", "se", "lower", "upper"], summary))
    return files


def _marginals(run: Run, sec: dict) -> DiscreteMarginals:
    if "marginals_csv" in sec:
        return _marginals_csv(run.path(_get(sec, "marginals_csv", str, where="lab")))
    m = sec.get("marginals")
    if not isinstance(m, dict):
        raise ConfigError("[lab.marginals] or 'lab.marginals_csv' is required")
    vals = {k: _floats(m, k, "lab.marginals") for k in ("support1", "probs1", "support0", "probs0")}
    if any(v is None for v in vals.values()):
        raise ConfigError("lab.marginals needs support1, probs1, support0, probs0")
    return DiscreteMarginals(**vals)


def _marginals_csv(path: Path) -> DiscreteMarginals:
    """Rows ``arm,value,prob`` with arm 1 or 0."""
    out = {1: ([], []), 0: ([], [])}
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(line for line in fh if not line.startswith("#"))
            for i, row in enumerate(reader):
                try:
                    arm = int(row["arm"])
                    out[arm][0].append(float(row["value"]))
                    out[arm][1].append(float(row["prob"]))
                except (KeyError, ValueError, TypeError):
                    raise ConfigError(f"{path}: malformed marginals row {i + 1}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return DiscreteMarginals(out[1][0], out[1][1], out[0][0], out[0][1])


def _g_table(path: Path) -> GFunction:
    """Matrix CSV: header ``y1\\y0,<y0 values...>``, rows ``<y1>,<g values...>``."""
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#")) if r]
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        grid0 = [float(v) for v in rows[0][1:]]
        grid1 = [float(r[0]) for r in rows[1:]]
        values = [[float(v) for v in r[1:]] for r in rows[1:]]
    except (ValueError, IndexError):
        raise ConfigError(f"{path}: malformed g table") from None
    if not rows[1:] or any(len(r) != len(grid0) for r in values):
        raise ConfigError(f"{path}: malformed g table (ragged or empty)")
    return GFunction.custom(grid1, grid0, values)


def _gfunction(run: Run, sec: dict) -> GFunction:
    if "g_table" in sec:
        return _g_table(run.path(_get(sec, "g_table", str, where="lab")))
    text = _get(sec, "g", str, None, "lab")
    if text is None:
        raise ConfigError("field 'lab.g' or 'lab.g_table' is required")
    kind, _, arg = text.partition(":")
    if kind == "transform_difference":
        if not arg:
            raise ConfigError("transform_difference needs a transform, e.g. 'transform_difference:arcsinh'")
        return GFunction.transform_difference(parse_transform(arg))
    if kind in ("log_ratio", "pct_change", "indicator_both_positive"):
        return GFunction(kind)
    raise ConfigError(f"unknown g {text!r}")


def cmd_lab(run: Run) -> list:
    sec = run.section("lab")
    tasks = _get(sec, "tasks", list, ["coupling_range", "trilemma"], "lab")
    unknown = [t for t in tasks if t not in LAB_TASKS]
    if not tasks or unknown:
        raise ConfigError(f"field 'lab.tasks' must be a non-empty subset of {LAB_TASKS}")
    report: dict = {}
    needs_g = {"coupling_range", "separability", "scale_invariance", "trilemma"}
    g = _gfunction(run, sec) if needs_g & set(tasks) else None
    scales = _floats(sec, "scales", "lab", [0.01, 0.5, 2.0, 100.0])
    if g is not None:
        report["g"] = g.tag
    if {"coupling_range", "trilemma"} & set(tasks) or ("grid" not in sec and needs_g & set(tasks)):
        m = _marginals(run, sec)
    else:
        m = None
    grid = _floats(sec, "grid", "lab")
    if grid is None and m is not None:
        grid = sorted(set(m.support1) | set(m.support0))
    for task in tasks:
        if task == "coupling_range":
            cr = coupling_range(m, g)
            report["coupling_range"] = {"min": cr.min, "max": cr.max, "width": cr.width,
                                        "point_identified": cr.point_identified,
                                        "argmin": cr.argmin.pi, "argmax": cr.argmax.pi}
        elif task == "separability":
            pos = [x for x in grid if x > 0]
            t = separability_test(g, pos)
            report["separability"] = {"holds": t.holds, "worst_violation": t.worst_violation,
                                      "witness": t.witness}
        elif task == "scale_invariance":
            t = scale_invariance_test(g, grid, scales)
            report["scale_invariance"] = {"holds": t.holds, "worst_violation": t.worst_violation,
                                          "witness": t.witness}
        elif task == "trilemma":
            report["trilemma"] = trilemma_report(m, g, scales)
        elif task == "two_part":
            j = sec.get("joint")
            if not isinstance(j, dict):
                raise ConfigError("[lab.joint] with support1, support0, pi is required for two_part")
            pi = _get(j, "pi", list, None, "lab.joint")
            joint = DiscreteJoint(_floats(j, "support1", "lab.joint"), _floats(j, "support0", "lab.joint"),
                                  np.asarray(pi, dtype=float))
            tp = two_part_decomposition(joint)
            report["two_part"] = dict(tp.__dict__)
    return [run.write_json("lab_report.json", report)]


COMMANDS = {"simulate": cmd_simulate, "sensitivity": cmd_sensitivity,
            "estimate": cmd_estimate, "lab": cmd_lab}


def _global_flags(default) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=default)
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--threads", type=int,
                   help=f"worker threads (default ${THREADS_ENV} or 1); never changes results")
    p.add_argument("--out", help="output directory (default: config 'out' or ./out)")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zeroscale", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(None)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    # flags may also follow the verb; suppressed defaults keep earlier values
    after = _global_flags(argparse.SUPPRESS)
    for name in COMMANDS:
        sub.add_parser(name, parents=[after])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = Run(args)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            files = COMMANDS[args.command](run)
    except InputError as exc:
        print(f"zeroscale {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"zeroscale {args.command}: estimation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for f in files:
        print(f)
    return 0


if __name__ == "__main__":
    sys.exit(main())
