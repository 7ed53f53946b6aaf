"""Config-driven experiment runner: ``privopt run|sweep|check``.

Configs are TOML. Rows go to a CSV with a fixed schema and every run's
ledger goes to a JSON audit file next to it. Exit codes: 0 success,
1 config error or failed check, 2 privacy budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import evaluation as ev
from . import geometry as geo
from .data import STREAM_TRAIN, TaskSpec, fresh_eval_stream, sample_dataset
from .privacy import BudgetExhausted
from .solvers import ALGORITHMS, OVERRIDE_KEYS, ConfigError, SolverConfig, solve

CSV_COLUMNS = ("algorithm", "n", "d", "p", "epsilon", "delta", "seed", "trial", "metric",
               "value", "ci", "wall_ms")

DEFAULT_METRICS = {
    "phased_sgd": ("excess_risk",),
    "noisy_frank_wolfe": ("excess_risk",),
    "poly_sfw": ("stationarity_gap",),
    "noisy_sfw": ("stationarity_gap",),
    "pg_psmd": ("prox_distance", "prox_gap"),
}

PRESETS = ("l2_gll_constrained", "l2_gll_unconstrained", "l1_gll_polytope",
           "l1_smooth_nonconvex", "lp_weakly_convex")


@dataclass
class ExperimentConfig:
    algorithm: str
    task: TaskSpec
    W: geo.ConstraintSet
    epsilon: float
    delta: float
    n_grid: list
    trials: int = 1
    seed: int = 0
    eval_samples: int = 100_000
    metrics: tuple = ()
    overrides: dict = field(default_factory=dict)
    prox_iters: int = 4000
    csv_path: str | None = None
    audit_path: str | None = None
    source: str = ""


# ---------------------------------------------------------------- config

def _need(tbl: dict, key: str, where: str):
    if key not in tbl:
        raise ConfigError(f"{where}.{key}" if where else key, "missing required key")
    return tbl[key]


def _table(doc, name):
    t = doc.get(name, {})
    if not isinstance(t, dict):
        raise ConfigError(name, "must be a table")
    return t


def _typed(key, val, kind):
    if kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ConfigError(key, f"expected an integer, got {val!r}")
        return val
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(key, f"expected a number, got {val!r}")
    return float(val)


def build_geometry(g: dict, d: int) -> geo.ConstraintSet:
    kind = g.get("kind", "l2_ball")
    try:
        if kind == "unconstrained":
            return geo.unconstrained(d)
        r = _typed("geometry.radius", g.get("radius", 1.0), float)
        if kind == "l2_ball":
            return geo.lp_ball(np.zeros(d), r, 2.0)
        if kind == "lp_ball":
            return geo.lp_ball(np.zeros(d), r, _typed("geometry.p", _need(g, "p", "geometry"), float))
        if kind == "l1_ball":
            return geo.l1_ball(d, r)
        if kind == "polytope":
            return geo.polytope(np.asarray(_need(g, "vertices", "geometry"), dtype=float),
                                _typed("geometry.p", g.get("p", 1.0), float))
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError("geometry", str(e)) from None
    raise ConfigError("geometry.kind", f"unknown geometry {kind!r}")


def parse_config(doc: dict, source: str = "") -> ExperimentConfig:
    alg = _need(doc, "algorithm", "")
    if alg not in ALGORITHMS:
        raise ConfigError("algorithm", f"unknown algorithm {alg!r}; choose from {ALGORITHMS}")
    t = _table(doc, "task")
    tk = {}
    for k, kind in (("d", int), ("R", float), ("p", float), ("radius", float), ("noise", float),
                    ("margin", float), ("task_seed", int)):
        if k in t:
            tk[k] = _typed(f"task.{k}", t[k], kind)
    for k in ("family", "law"):
        if k in t:
            tk[k] = str(t[k])
    _need(t, "family", "task")
    _need(t, "d", "task")
    unknown = set(t) - set(tk)
    if unknown:
        raise ConfigError(f"task.{sorted(unknown)[0]}", "unknown key")
    try:
        task = TaskSpec(**tk)
    except ValueError as e:
        raise ConfigError("task", str(e)) from None
    W = build_geometry(_table(doc, "geometry"), task.d)
    pv = _table(doc, "privacy")
    eps = _typed("privacy.epsilon", _need(pv, "epsilon", "privacy"), float)
    delta = _typed("privacy.delta", _need(pv, "delta", "privacy"), float)
    ex = _table(doc, "experiment")
    grid = _need(ex, "n_grid", "experiment")
    if not isinstance(grid, list) or not grid:
        raise ConfigError("experiment.n_grid", "must be a nonempty list of integers")
    grid = [_typed("experiment.n_grid", n, int) for n in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("experiment.n_grid", "must be strictly increasing")
    trials = _typed("experiment.trials", ex.get("trials", 1), int)
    if trials < 1:
        raise ConfigError("experiment.trials", "must be >= 1")
    metrics = tuple(ex.get("metrics", DEFAULT_METRICS[alg]))
    for m in metrics:
        if m not in ev.METRICS:
            raise ConfigError("experiment.metrics", f"unknown metric {m!r}")
    sv = dict(_table(doc, "solver"))
    for k in sv:
        if k not in OVERRIDE_KEYS:
            raise ConfigError(f"solver.{k}", "unknown solver override")
    out = _table(doc, "output")
    cfg = ExperimentConfig(
        algorithm=alg, task=task, W=W, epsilon=eps, delta=delta, n_grid=grid, trials=trials,
        seed=_typed("experiment.seed", ex.get("seed", 0), int),
        eval_samples=_typed("experiment.eval_samples", ex.get("eval_samples", 100_000), int),
        metrics=metrics, overrides=sv,
        prox_iters=_typed("experiment.prox_iters", ex.get("prox_iters", 4000), int),
        csv_path=out.get("csv"), audit_path=out.get("audit"), source=source)
    if cfg.eval_samples < 2:
        raise ConfigError("experiment.eval_samples", "must be >= 2")
    # surface solver-level config errors before any work
    SolverConfig(alg, W, task.loss(), eps, delta, cfg.seed, sv)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    """Read a TOML file, or a shipped preset by name."""
    p = Path(path)
    if not p.exists() and path in PRESETS:
        text = resources.files("privopt").joinpath("presets", f"{path}.toml").read_text()
        source = f"preset:{path}"
    else:
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError("config", f"cannot read {path}: {e.strerror}") from None
        source = str(p)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError("config", f"{path}: {e}") from None
    return parse_config(doc, source)


# ---------------------------------------------------------------- running

def run_seed(master: int, n: int, trial: int) -> int:
    """Per-run seed derived from (master seed, n, trial)."""
    ss = np.random.SeedSequence(int(master), spawn_key=(int(n), int(trial)))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class TrialResult:
    n: int
    trial: int
    seed: int
    metrics: list
    audit: dict
    wall_ms: float


class Experiment:
    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.loss = cfg.task.loss()
        self.sample = fresh_eval_stream(cfg.task, cfg.eval_samples, cfg.seed, 0)
        self.reference = None
        if "excess_risk" in cfg.metrics:
            self.reference = ev.reference_point(cfg.task, cfg.W, seed=cfg.seed)

    def trial(self, n: int, trial: int) -> TrialResult:
        c = self.cfg
        seed = run_seed(c.seed, n, trial)
        data = sample_dataset(c.task, n, seed, STREAM_TRAIN)
        sc = SolverConfig(c.algorithm, c.W, self.loss, c.epsilon, c.delta, seed, dict(c.overrides))
        run = solve(data, sc)
        out, done = [], {}
        for m in c.metrics:
            if m not in done:
                for e in self.evaluate(m, run):
                    done[e.name] = e
            out.append(done[m])
        audit = {"algorithm": c.algorithm, "seed": seed, "n": n, "trial": trial,
                 "overrides": c.overrides, "schedule": _jsonable(run.schedule),
                 "ledger": run.ledger.audit(), "wall_ms": run.wall_ms}
        return TrialResult(n, trial, seed, out, audit, run.wall_ms)

    def evaluate(self, metric: str, run) -> list:
        c, w = self.cfg, run.output
        if metric == "risk":
            return [ev.estimate_population_risk(w, c.task, 0, 0, sample=self.sample)]
        if metric == "excess_risk":
            return [ev.excess_risk(w, c.task, c.W, 0, 0, reference=self.reference, sample=self.sample)]
        if metric == "stationarity_gap":
            return [ev.stationarity_gap(w, c.task, c.W, 0, 0, sample=self.sample)]
        sch = run.schedule
        beta = sch.get("beta", 2.0 * self.loss.rho)
        pbar = sch.get("pbar", 2.0)
        dist, gap = ev.prox_near_stationarity(w, c.task, beta, pbar, c.W, 0, 0, c.prox_iters,
                                              sample=self.sample)
        return [dist, gap]

    def run(self, threads: int = 1, progress=None) -> list:
        jobs = [(n, t) for n in self.cfg.n_grid for t in range(self.cfg.trials)]
        if threads <= 1:
            results = []
            for j in jobs:
                results.append(self.trial(*j))
                if progress:
                    progress(results[-1])
            return results
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futs = [pool.submit(self.trial, *j) for j in jobs]
            results = [f.result() for f in futs]
        # rows come out in (n, trial) order whatever the completion order
        return results


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items() if not callable(v)}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    return x


def csv_rows(cfg: ExperimentConfig, results, wall_clock: bool = False) -> list:
    rows = []
    p = cfg.W.p if cfg.W.kind != "unconstrained" else cfg.task.p
    for r in results:
        for m in r.metrics:
            rows.append([cfg.algorithm, r.n, cfg.task.d, repr(float(p)), repr(cfg.epsilon),
                         repr(cfg.delta), r.seed, r.trial, m.name, repr(float(m.value)),
                         repr(float(m.ci_half_width)),
                         f"{r.wall_ms:.3f}" if wall_clock else ""])
    return rows


def write_csv(path, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    w.writerows(rows)
    Path(path).write_text(buf.getvalue())


def audit_path_for(csv_path: str) -> str:
    p = Path(csv_path)
    return str(p.with_name(p.stem + ".audit.json"))


def execute(cfg: ExperimentConfig, out: str | None, threads: int, quiet: bool,
            wall_clock: bool):
    exp = Experiment(cfg)

    def progress(r):
        if not quiet:
            vals = ", ".join(f"{m.name}={m.value:.4g}" for m in r.metrics)
            print(f"n={r.n} trial={r.trial} {vals}", file=sys.stderr)

    results = exp.run(threads, progress)
    csv_path = out or cfg.csv_path or "results.csv"
    write_csv(csv_path, csv_rows(cfg, results, wall_clock))
    audit = {"config": cfg.source, "runs": [r.audit for r in results]}
    apath = cfg.audit_path if (cfg.audit_path and not out) else audit_path_for(csv_path)
    Path(apath).write_text(json.dumps(_jsonable(audit), indent=1, sort_keys=True) + "\n")
    if not quiet:
        print(f"wrote {csv_path} and {apath}", file=sys.stderr)
    return results


def summarize(cfg: ExperimentConfig, results) -> list:
    """(metric, slope, half width, means) per metric over the n grid."""
    out = []
    names = []
    for r in results:
        for m in r.metrics:
            if m.name not in names:
                names.append(m.name)
    for name in names:
        means = []
        for n in cfg.n_grid:
            v = [m.value for r in results if r.n == n for m in r.metrics if m.name == name]
            means.append(float(np.mean(v)))
        if len(means) >= 3 and all(v > 0 for v in means):
            s, h = ev.fit_rate_ci(cfg.n_grid, means)
        else:
            s, h = math.nan, math.nan
        out.append((name, s, h, means))
    return out


# ---------------------------------------------------------------- entry point

def _apply_flags(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.trials is not None:
        if args.trials < 1:
            raise ConfigError("--trials", "must be >= 1")
        cfg.trials = args.trials
    return cfg


def _common(p):
    p.add_argument("--config", required=True, help="TOML config file or preset name")
    p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
    p.add_argument("--out", default=None, help="CSV output path (audit JSON goes next to it)")
    p.add_argument("--trials", type=int, default=None, help="override experiment.trials")
    p.add_argument("--threads", type=int, default=1, help="trials run in parallel")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--wall-clock", action="store_true",
                   help="fill the wall_ms column (makes CSVs run-dependent)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="privopt", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("run", help="run an experiment config"))
    _common(sub.add_parser("sweep", help="run the n grid and fit log-log rates"))
    ck = sub.add_parser("check", help="run the property suite")
    ck.add_argument("--filter", default=None, help="only suites whose name contains this")
    ck.add_argument("--quiet", action="store_true")
    sub.add_parser("presets", help="list shipped presets")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        for name in PRESETS:
            print(name)
        return 0
    if args.command == "check":
        from . import checks
        return checks.main(args.filter, args.quiet)
    try:
        cfg = _apply_flags(load_config(args.config), args)
        results = execute(cfg, args.out, args.threads, args.quiet, args.wall_clock)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except BudgetExhausted as e:
        print(f"budget exhausted: {e}", file=sys.stderr)
        return 2
    if args.command == "sweep":
        for name, s, h, means in summarize(cfg, results):
            pts = " ".join(f"{v:.4g}" for v in means)
            print(f"{name}: slope {s:.4f} +/- {h:.4f}  (means over n: {pts})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
