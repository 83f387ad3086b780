"""Command-line interface: estimation on CSV data, effect reports, simulation benchmarks.

Every command writes one JSON document (to stdout, or to ``--out``) holding the
result and a run manifest. ``medfx replay DOC`` re-runs a command from the
manifest of a previously emitted document.

Exit codes: 0 ok, 1 other package error, 2 schema / usage error,
3 group too small, 4 balancing weights infeasible, 5 too many failed replicates.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import os
import platform
import re
import sys
import time
from dataclasses import asdict, dataclass, field
from importlib import resources

import numpy as np

from . import __version__
from ._parallel import resolve_threads
from .data import Dataset
from .effects import EFFECT_NAMES, Effect, EffectsReport, bootstrap_effects, effects
from .errors import GroupTooSmall, MedfxError, SchemaError, StillInfeasible, TooManyFailures
from .pipeline import MediationEstimate, PipelineConfig, estimate_crossfit, estimate_debiased
from .simlab import BenchmarkRow, SimConfig, benchmark, make_design, sensitivity

EXIT_OK, EXIT_ERROR, EXIT_SCHEMA, EXIT_GROUP, EXIT_INFEASIBLE, EXIT_FAILURES = 0, 1, 2, 3, 4, 5

EXAMPLE = "@example"
DEFAULT_K_GRID = tuple((a, b) for a in (2.25, 2.5, 2.75, 3.0) for b in (2.25, 2.5, 2.75, 3.0))

# flag defaults; the config file and then the command line override them
DEFAULTS = {
    "input": None, "k1": 2.75, "k2": 2.75, "level": 0.95, "seed": None, "threads": None, "bootstrap": 0,
    "crossfit": False, "reps": 100, "sigma2": "0.1", "n": "500", "p": "50", "q": "50", "K_grid": None,
    "out": None,
}
SIM_SEED = SimConfig.master_seed


# -- CSV input -------------------------------------------------------------------

def _indexed(header, prefix):
    pat = re.compile(rf"{prefix}([1-9][0-9]*)")
    idx = {}
    for col in header:
        m = pat.fullmatch(col)
        if m:
            idx[int(m.group(1))] = col
    if not idx:
        raise SchemaError(f"no {prefix}1.. columns in header", column=f"{prefix}1")
    for k in range(1, max(idx) + 1):
        if k not in idx:
            raise SchemaError(f"column {prefix}{k} missing (found up to {prefix}{max(idx)})", column=f"{prefix}{k}")
    return [idx[k] for k in range(1, len(idx) + 1)]


def parse_csv(text: str) -> Dataset:
    """Columns ``Y``, ``A``, ``X1..Xp``, ``M1..Mq`` in any order; every other column is an error."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise SchemaError("empty input", column=None)
    header = [h.strip() for h in rows[0]]
    seen = set()
    for col in header:
        if col in seen:
            raise SchemaError(f"duplicate column {col!r}", column=col)
        seen.add(col)
        if not (col in ("Y", "A") or re.fullmatch(r"[XM][1-9][0-9]*", col)):
            raise SchemaError(f"unexpected column {col!r}", column=col)
    for col in ("Y", "A"):
        if col not in seen:
            raise SchemaError(f"required column {col!r} missing", column=col)
    xs, ms = _indexed(header, "X"), _indexed(header, "M")
    pos = {c: j for j, c in enumerate(header)}
    body = [r for r in rows[1:] if r]
    if not body:
        raise SchemaError("no data rows", column=None)
    vals = np.empty((len(body), len(header)))
    for i, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise SchemaError(f"line {i}: {len(r)} fields, header has {len(header)}", column=None)
        for j, v in enumerate(r):
            v = v.strip()
            if v == "" or v.lower() in ("na", "nan", "null"):
                raise SchemaError(f"line {i}: missing value in column {header[j]!r}", column=header[j])
            try:
                x = float(v)
            except ValueError:
                raise SchemaError(f"line {i}: column {header[j]!r} is not a number: {v!r}",
                                  column=header[j]) from None
            if not math.isfinite(x):
                raise SchemaError(f"line {i}: non-finite value in column {header[j]!r}", column=header[j])
            vals[i - 2, j] = x
    a = vals[:, pos["A"]]
    bad = np.flatnonzero((a != 0) & (a != 1))
    if bad.size:
        raise SchemaError(f"line {int(bad[0]) + 2}: column 'A' must be 0 or 1", column="A")
    return Dataset(X=vals[:, [pos[c] for c in xs]], M=vals[:, [pos[c] for c in ms]], A=a, Y=vals[:, pos["Y"]])


def read_input(path: str) -> Dataset:
    if path == EXAMPLE:
        text = resources.files("medfx").joinpath("_bundled/example.csv").read_text(encoding="utf-8")
    else:
        try:
            with open(path, encoding="utf-8", newline="") as f:
                text = f.read()
        except OSError as exc:
            raise SchemaError(f"cannot read {path}: {exc.strerror}", column=None) from None
        except UnicodeDecodeError:
            raise SchemaError(f"{path} is not UTF-8", column=None) from None
    return parse_csv(text)


# -- output documents --------------------------------------------------------------

def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return format(x, ".17g") if math.isfinite(x) else "null"


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad, inner = " " * (indent * _level), " " * (indent * (_level + 1))
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, int, float, np.bool_, np.integer, np.floating)):
        return _num(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps(v, indent, _level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent, _level + 1) for v in obj) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _versions() -> dict:
    import numba
    import scipy
    return {"medfx": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


@dataclass
class RunManifest:
    command: str
    # resolved flag values; feeding them back as a config file replays the run
    config: dict
    seeds: dict
    versions: dict = field(default_factory=_versions)
    started: str = ""
    wall_clock: float = 0.0
    timings: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)


def _fit_summary(fit) -> dict:
    if hasattr(fit, "fits"):  # multi-response
        lam = [f.lam for f in fit.fits]
        return {"responses": len(fit.fits), "lambda": lam, "nonzeros": int(np.count_nonzero(fit.B)),
                "converged": all(f.converged for f in fit.fits)}
    return {"lambda": fit.lam, "intercept": fit.intercept, "active_set": fit.active_set.tolist(),
            "coef": fit.coef.tolist(), "converged": fit.converged}


def estimate_doc(est: MediationEstimate) -> dict:
    d = est.summary()
    d["fits"] = {k: _fit_summary(v) for k, v in est.fits.items()}
    d["weights"] = {name: {"K_used": w.K_used, "slack": w.slack, "cap": w.cap, "status": w.status,
                           "residual_inf": w.achieved_residual_inf, "norm2": float(np.linalg.norm(w.tau))}
                    for name, w in (("tau1", est.tau1), ("tau2", est.tau2))}
    d["escalations"] = est.escalations
    d["split"] = {"fold1": est.split.fold1.size, "fold2": est.split.fold2.size, "seed": est.split.seed}
    d["heuristic_se"] = est.heuristic_se
    if est.per_fold:
        d["per_fold"] = [f.summary() for f in est.per_fold]
    return d


def effect_from_dict(d: dict) -> Effect:
    return Effect(d["estimate"], d["se"], tuple(d["ci"]))


def effects_doc(rep: EffectsReport) -> dict:
    d = {"level": rep.level}
    for name in ("ey11", "ey10", "ey00", "ey01"):
        est = getattr(rep, name)
        d[name] = None if est is None else estimate_doc(est)
    for name in ("nie", "nde", "ate"):
        e = getattr(rep, name)
        d[name] = {"estimate": e.estimate, "se": e.se, "ci": list(e.ci)}
    if rep.bootstrap is not None:
        b = rep.bootstrap
        d["bootstrap"] = {"B": b.B, "used": b.used, "failures": b.failures, "level": b.level, "seed": b.seed,
                          "means": b.means, "quantile_ci": {k: list(v) for k, v in b.quantile_cis.items()},
                          "failure_messages": list(b.failure_messages)}
    d["warnings"] = list(rep.warnings)
    return d


BENCH_COLUMNS = ("n", "p", "q", "sigma2", "K1", "K2", "reps", "theta0", "rmse_debiased", "sd_debiased", "rmse_naive",
                 "sd_naive", "coverage", "mean_se", "reps_used", "failures", "escalations")


def rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_COLUMNS)
    for r in rows:
        d = {**asdict(r.config), **r.as_dict()}
        w.writerow([_num(d[c]) if c not in ("n", "p", "q", "reps") else str(d[c]) for c in BENCH_COLUMNS])
    return buf.getvalue()


def rows_from_document(doc: dict) -> list[BenchmarkRow]:
    return [BenchmarkRow.from_dict(r) for r in doc["result"]["rows"]]


# -- configuration ---------------------------------------------------------------

def load_config(path: str) -> dict:
    """Flat key/value JSON mirroring flag names; an emitted document is accepted too (its manifest config)."""
    try:
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
    except (OSError, ValueError) as exc:
        raise SchemaError(f"cannot read config {path}: {exc}", column=None) from None
    if isinstance(d, dict) and "manifest" in d:
        d = d["manifest"]["config"]
    if not isinstance(d, dict):
        raise SchemaError("config file must hold a JSON object", column=None)
    out = {}
    for k, v in d.items():
        key = k.lstrip("-").replace("-", "_")
        if key not in DEFAULTS:
            raise SchemaError(f"unknown config key {k!r}", column=k)
        out[key] = v
    return out


def _resolve(args: argparse.Namespace, command: str) -> dict:
    """flags > config file > MEDFX_SEED (seed only) > defaults."""
    conf = dict(DEFAULTS)
    if args.config:
        conf.update(load_config(args.config))
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None and v is not False:
            conf[k] = v
    if conf["seed"] is None:
        env = os.environ.get("MEDFX_SEED")
        if env is not None:
            try:
                conf["seed"] = int(env)
            except ValueError:
                raise SchemaError(f"MEDFX_SEED is not an integer: {env!r}", column=None) from None
    if conf["seed"] is None:
        conf["seed"] = SIM_SEED if command in ("benchmark", "sensitivity") else 0
    conf["seed"] = int(conf["seed"])
    return conf


def _ints(spec) -> list[int]:
    return [int(v) for v in str(spec).split(",")]


def _floats(spec) -> list[float]:
    return [float(v) for v in str(spec).split(",")]


def parse_k_grid(spec: str) -> tuple[tuple[float, float], ...]:
    """``"a,b;c,d"`` to ((a, b), (c, d))."""
    cells = []
    for part in spec.split(";"):
        part = part.strip()
        if not part:
            continue
        vals = part.split(",")
        if len(vals) != 2:
            raise ValueError(f"K-grid cell {part!r} is not a pair 'K1,K2'")
        cells.append((float(vals[0]), float(vals[1])))
    if not cells:
        raise ValueError("K-grid is empty")
    return tuple(cells)


def _pipeline_cfg(conf: dict) -> PipelineConfig:
    return PipelineConfig(K1=float(conf["k1"]), K2=float(conf["k2"]), level=float(conf["level"]), seed=conf["seed"])


def _sim_cells(conf: dict) -> list[SimConfig]:
    ns, ps, qs, s2 = _ints(conf["n"]), _ints(conf["p"]), _ints(conf["q"]), _floats(conf["sigma2"])
    if len(ps) != len(qs) and 1 not in (len(ps), len(qs)):
        raise ValueError("--p and --q lists must have equal length (or one of them a single value)")
    width = max(len(ps), len(qs))
    ps, qs = (ps * width)[:width] if len(ps) == 1 else ps, (qs * width)[:width] if len(qs) == 1 else qs
    cells = []
    for n in ns:
        for p, q in zip(ps, qs):
            for sigma2 in s2:
                k = min(5, p, q)
                cells.append(SimConfig(n=n, p=p, q=q, s=min(5, p), k1=min(5, p), k2=k, sigma2=sigma2,
                                       K1=float(conf["k1"]), K2=float(conf["k2"]), reps=int(conf["reps"]),
                                       master_seed=conf["seed"], crossfit=bool(conf["crossfit"]),
                                       level=float(conf["level"])))
    return cells


# -- commands --------------------------------------------------------------------

def _need_input(conf):
    if not conf["input"]:
        raise SchemaError(f"--input is required (a CSV path, or {EXAMPLE} for the bundled example)", column=None)
    return read_input(conf["input"])


def cmd_estimate(conf: dict):
    data = _need_input(conf)
    cfg = _pipeline_cfg(conf)
    est = estimate_crossfit(data, cfg) if conf["crossfit"] else estimate_debiased(data, cfg)
    seeds = {"pipeline": cfg.seed, "split": est.split.seed}
    return estimate_doc(est), seeds, est.timings, list(est.warnings)


def cmd_effects(conf: dict):
    data = _need_input(conf)
    cfg = _pipeline_cfg(conf)
    rep = effects(data, cfg)
    seeds = {"pipeline": cfg.seed}
    B = int(conf["bootstrap"] or 0)
    if B:
        from dataclasses import replace
        rep = replace(rep, bootstrap=bootstrap_effects(data, cfg, B, cfg.level, conf["threads"]))
        seeds["bootstrap"] = cfg.seed
    timings = {}
    for name in ("ey11", "ey10", "ey00", "ey01"):
        est = getattr(rep, name)
        for k, v in (est.timings if est is not None else {}).items():
            timings[f"{name}.{k}"] = v
    warnings = list(rep.warnings) + [w for n in ("ey11", "ey10", "ey00", "ey01") if getattr(rep, n) is not None
                                     for w in getattr(rep, n).warnings]
    return effects_doc(rep), seeds, timings, warnings


def cmd_benchmark(conf: dict):
    rows, timings = [], {}
    for cfg in _sim_cells(conf):
        t0 = time.perf_counter()
        rows.append(benchmark(cfg, conf["threads"]))
        timings[f"n={cfg.n},p={cfg.p},q={cfg.q},sigma2={cfg.sigma2:g}"] = time.perf_counter() - t0
    return _rows_doc(rows), {"master": conf["seed"]}, timings, _row_warnings(rows)


def cmd_sensitivity(conf: dict):
    grid = parse_k_grid(conf["K_grid"]) if conf["K_grid"] else DEFAULT_K_GRID
    cells = _sim_cells(conf)
    if len(cells) != 1:
        raise ValueError("sensitivity takes a single (n, p, q, sigma2) configuration")
    t0 = time.perf_counter()
    rows = sensitivity(cells[0], grid, conf["threads"])
    return _rows_doc(rows), {"master": conf["seed"]}, {"sensitivity": time.perf_counter() - t0}, _row_warnings(rows)


def _rows_doc(rows) -> dict:
    return {"columns": list(BENCH_COLUMNS), "rows": [r.as_dict(with_results=True) for r in rows]}


def _row_warnings(rows) -> list:
    out = []
    for r in rows:
        if r.failures:
            out.append(f"K=({r.K1:g},{r.K2:g}) n={r.config.n}: {r.failures} failed replicate(s) excluded")
        if r.escalations:
            out.append(f"K=({r.K1:g},{r.K2:g}) n={r.config.n}: slack escalated in {r.escalations} replicate(s)")
    return out


COMMANDS = {"estimate": cmd_estimate, "effects": cmd_effects, "benchmark": cmd_benchmark,
            "sensitivity": cmd_sensitivity}


def run_command(command: str, conf: dict) -> dict:
    """Run one command on a resolved config and return its document."""
    started = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    result, seeds, timings, warnings = COMMANDS[command](conf)
    stored = {k: v for k, v in conf.items() if k not in ("threads", "out")}
    manifest = RunManifest(command=command, config=stored, seeds=seeds, started=started,
                           wall_clock=time.perf_counter() - t0, timings=timings, warnings=warnings)
    manifest.config["threads"] = resolve_threads(conf["threads"])
    return {"command": command, "result": result, "manifest": manifest.to_dict()}


def _emit(doc: dict, out: str | None):
    text = dumps(doc) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    with open(out, "w", encoding="utf-8") as f:
        f.write(text)
    if doc["command"] in ("benchmark", "sensitivity"):
        stem = out[:-5] if out.endswith(".json") else out
        with open(stem + ".csv", "w", encoding="utf-8") as f:
            f.write(rows_csv(rows_from_document(doc)))
        print(f"wrote {out} and {stem}.csv", file=sys.stderr)
    else:
        print(f"wrote {out}", file=sys.stderr)


# -- argument parsing ------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="medfx", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"medfx {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat JSON key/value file (or an emitted document to replay)")
        p.add_argument("--k1", type=float, help="slack constant of the first weight problem (default 2.75)")
        p.add_argument("--k2", type=float, help="slack constant of the second weight problem (default 2.75)")
        p.add_argument("--level", type=float, help="confidence level (default 0.95)")
        p.add_argument("--seed", type=int, help="seed (fallback: MEDFX_SEED)")
        p.add_argument("--threads", type=int, help="worker processes (default: all cores)")
        p.add_argument("--out", help="write the document here instead of stdout")

    def data_flags(p):
        p.add_argument("--input", help=f"CSV with columns Y, A, X1..Xp, M1..Mq ({EXAMPLE}: bundled example)")

    def sim_flags(p):
        p.add_argument("--n", help="sample size(s), comma separated")
        p.add_argument("--p", help="covariate count(s), comma separated")
        p.add_argument("--q", help="mediator count(s), comma separated")
        p.add_argument("--sigma2", help="noise variance(s), comma separated")
        p.add_argument("--reps", type=int, help="replications per cell (default 100)")

    p = sub.add_parser("estimate", help="debiased estimate of E[Y(1, M(0))] on a CSV file")
    common(p), data_flags(p)
    p.add_argument("--crossfit", action="store_true", help="average over both fold orders")
    p = sub.add_parser("effects", help="counterfactual means and NIE / NDE / ATE")
    common(p), data_flags(p)
    p.add_argument("--bootstrap", type=int, help="bootstrap replicates for quantile intervals (>= 50)")
    p = sub.add_parser("benchmark", help="simulation RMSE table, one row per (n, p, q, sigma2) cell")
    common(p), sim_flags(p)
    p.add_argument("--crossfit", action="store_true", help="cross-fitted estimates")
    p = sub.add_parser("sensitivity", help="simulation RMSE over a grid of (K1, K2)")
    common(p), sim_flags(p)
    p.add_argument("--K-grid", dest="K_grid", help='cells "K1,K2;K1,K2;..." (default {2.25,2.5,2.75,3}^2)')
    p = sub.add_parser("replay", help="re-run the command recorded in an emitted document")
    p.add_argument("document")
    p.add_argument("--threads", type=int, help="worker processes (does not change results)")
    p.add_argument("--out", help="write the document here instead of stdout")
    return ap


def _replay_conf(args) -> tuple[str, dict]:
    try:
        with open(args.document, encoding="utf-8") as f:
            doc = json.load(f)
        man = RunManifest.from_dict(doc["manifest"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SchemaError(f"cannot read manifest from {args.document}: {exc}", column=None) from None
    conf = dict(DEFAULTS)
    conf.update(man.config)
    conf["threads"] = args.threads
    conf["out"] = args.out
    return man.command, conf


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "replay":
            command, conf = _replay_conf(args)
        else:
            command, conf = args.command, _resolve(args, args.command)
        doc = run_command(command, conf)
        _emit(doc, conf["out"])
    except SchemaError as exc:
        print(f"medfx: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except GroupTooSmall as exc:
        print(f"medfx: group too small ({exc.step or 'split'}): {exc}", file=sys.stderr)
        return EXIT_GROUP
    except StillInfeasible as exc:
        print(f"medfx: infeasible balancing problem ({exc.step}): {exc}", file=sys.stderr)
        for entry in exc.log:
            print("  " + ", ".join(f"{k}={v}" for k, v in entry.items()), file=sys.stderr)
        return EXIT_INFEASIBLE
    except TooManyFailures as exc:
        print(f"medfx: {exc}", file=sys.stderr)
        return EXIT_FAILURES
    except ValueError as exc:
        print(f"medfx: invalid argument: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except MedfxError as exc:
        print(f"medfx: {type(exc).__name__} ({exc.step}): {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
