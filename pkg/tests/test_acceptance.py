"""Acceptance suite: the ten criteria at their stated tolerances.

Each test records one PASS/FAIL line; conftest.py prints them after the
run, and ``python3 tests/test_acceptance.py`` prints them directly.
"""

from __future__ import annotations

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from privopt import checks, cli, data, geometry as geo, losses, privacy as pv, solvers as S
from privopt import evaluation as E

RESULTS: dict = {}
GRID = [2 ** k for k in range(10, 15)]


def report(k: int, ok: bool, detail: str) -> None:
    RESULTS[k] = (bool(ok), detail)
    assert ok, f"criterion {k}: {detail}"


def _monotone(v) -> bool:
    return all(b <= a for a, b in zip(v, v[1:]))


def _fmt(v) -> str:
    return " ".join(f"{x:.4g}" for x in v)


def _run_preset(name, trials=None, threads=1):
    cfg = cli.load_config(name)
    if trials is not None:
        cfg.trials = trials
    return cfg, cli.Experiment(cfg).run(threads)


def _means(cfg, results, metric):
    return [float(np.mean([m.value for r in results if r.n == n for m in r.metrics if m.name == metric]))
            for n in cfg.n_grid]


# 1 -------------------------------------------------------------------------

def test_c1_oracle_accuracy():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errs = subs = 0
    worst_err = worst_sub = 0.0
    trials = 5000
    for i in range(trials):
        link = losses.ABSOLUTE if i % 2 else losses.HINGE
        d = int(rng.integers(1, 8))
        R = float(rng.uniform(0.5, 3.0))
        spec = losses.make_gll(link.name, R=R, p=2.0)
        x = rng.standard_normal(d)
        x *= R * rng.uniform(0.0, 1.0) / max(np.linalg.norm(x), 1e-300)
        w = rng.standard_normal(d) * rng.uniform(0.1, 10.0)
        y = float(rng.choice([-1.0, 1.0])) if link.name == "hinge" else float(rng.normal(0, 2))
        beta = float(10 ** rng.uniform(0, 3))
        alpha = float(10 ** rng.uniform(-4, -1))
        g = losses.bisection_oracle(w, x, y, spec, beta, alpha)
        exact = losses.smoothed_grad(w, x, y, spec, beta)
        err = float(np.linalg.norm(g - exact))
        m = float(w @ x)
        u = float(losses.prox_scalar(link, y, m, beta))
        _, hb = losses.bisection_point(m, y, spec, beta, alpha)
        gap = hb - (link.value(u, y) + 0.5 * beta * (u - m) ** 2)
        cap = alpha ** 2 / (2 * beta * R * R)
        errs += err > alpha
        subs += gap > cap * (1 + 1e-9) + 1e-15
        worst_err, worst_sub = max(worst_err, err / alpha), max(worst_sub, gap / cap)
    secs = time.perf_counter() - t0
    ok = errs == 0 and subs == 0 and secs < 10
    report(1, ok, f"{trials} draws, error>alpha: {errs}, subopt>cap: {subs}, worst err/alpha "
                  f"{worst_err:.3g}, worst subopt/cap {worst_sub:.3g}, {secs:.1f}s")


# 2 -------------------------------------------------------------------------

def test_c2_schedule_pins():
    script = Path(__file__).parent / "oracles" / "derive_pins.py"
    oracle = json.loads(subprocess.run([sys.executable, str(script)], capture_output=True,
                                       text=True, check=True).stdout)
    got = checks.computed_pins()
    listed = {"phased_eta": 0.010417, "fw_s": 0.2879, "sfw_s_1": 0.8143, "nsfw_sigma_r0": 0.04,
              "bisection_T": 6, "pbar": 1.2171, "beta_wc": 9.2103, "adv_eps": 6.3082,
              "adv_delta": 1.01e-4}
    bad = [k for k in oracle if abs(got[k] - oracle[k]) > 1e-4 * abs(oracle[k])]
    # the rounded values quoted for the default schedules agree with the oracle to their printed digits
    bad += [f"{k}(quoted)" for k, v in listed.items() if abs(oracle[k] - v) > 5e-4 * abs(v)]
    report(2, not bad, f"{len(oracle)} pins vs oracle at 1e-4 relative"
                       + ("" if not bad else f"; mismatches: {bad}"))


# 3 -------------------------------------------------------------------------

def _random_config(rng, k):
    alg = S.ALGORITHMS[k % len(S.ALGORITHMS)]
    d = int(rng.integers(2, 8))
    seed = int(rng.integers(1 << 30))
    eps = float(rng.uniform(0.5, 2.0))
    if alg == "phased_sgd":
        t = data.TaskSpec("hinge_gll", d=d, noise=0.1, task_seed=k)
        W = geo.lp_ball(np.zeros(d), 1.0, 2.0) if rng.random() < 0.5 else geo.unconstrained(d)
        n, ov = int(rng.integers(64, 1500)), {}
    elif alg == "noisy_frank_wolfe":
        t = data.TaskSpec("hinge_gll", d=d, p=1.0, noise=0.1, task_seed=k)
        W, n, ov = geo.l1_ball(d, 1.0), int(rng.integers(1000, 3000)), {}
    elif alg == "poly_sfw":
        t = data.TaskSpec("smooth_nonconvex", d=d, p=1.0, noise=0.1, task_seed=k)
        R = int(rng.integers(1, 4))
        W, n, ov = geo.l1_ball(d, 1.0), int(rng.integers(512, 3000)), {"rounds": R, "batch": "max"}
    elif alg == "noisy_sfw":
        t = data.TaskSpec("smooth_nonconvex", d=d, p=2.0, noise=0.1, task_seed=k)
        R = int(rng.integers(1, 4))
        W, n, ov = geo.lp_ball(np.zeros(d), 1.0, 2.0), int(rng.integers(512, 3000)), {"rounds": R, "batch": "max"}
    else:
        t = data.TaskSpec("phase_retrieval", d=d, noise=0.1, task_seed=k)
        W, n, ov = geo.lp_ball(np.zeros(d), 1.0, 2.0), int(rng.integers(256, 2000)), {"rounds": int(rng.integers(2, 9))}
    return t, W, n, S.SolverConfig(alg, W, t.loss(), eps, 1e-5, seed, ov)


def test_c3_privacy_plumbing():
    rng = np.random.default_rng(7)
    fired, over = [], []
    for k in range(100):
        t, W, n, cfg = _random_config(rng, k)
        try:
            run = S.solve(data.sample_dataset(t, n, k), cfg)
            run.ledger.check_disjoint()
            S.check_disjoint(run.slices)
        except AssertionError as e:
            fired.append(f"{cfg.algorithm}: {e}")
            continue
        tot = run.ledger.total()
        if tot.epsilon > cfg.epsilon * (1 + 1e-12) or tot.delta > cfg.delta * (1 + 1e-12):
            over.append(cfg.algorithm)

    scenarios = []
    # two disjoint single-mechanism groups compose in parallel
    led = pv.PrivacyLedger(delta_prime=1e-6)
    led.record(pv.LedgerEntry("gaussian", 0.7, 1e-6, "a", (0, 50)))
    led.record(pv.LedgerEntry("laplace", 0.4, 0.0, "b", (50, 100)))
    scenarios.append((led.total(), pv.PrivacyBudget(0.7, 1e-6)))
    # 100 identical Laplace steps on one group: advanced composition
    led = pv.PrivacyLedger(delta_prime=1e-6)
    for _ in range(100):
        led.record(pv.LedgerEntry("laplace", 0.1, 1e-6, "g", (0, 10)))
    hand = 0.1 * math.sqrt(2 * 100 * math.log(1e6)) + 100 * 0.1 * math.expm1(0.1)
    scenarios.append((led.total(), pv.PrivacyBudget(hand, 100 * 1e-6 + 1e-6)))
    # three small steps: basic composition beats advanced; a second group runs in parallel
    led = pv.PrivacyLedger(delta_prime=1e-6)
    for e in (0.2, 0.3, 0.1):
        led.record(pv.LedgerEntry("noisy_max", e, 0.0, "s", (0, 20)))
    led.record(pv.LedgerEntry("gaussian", 0.5, 1e-7, "t", (20, 40)))
    scenarios.append((led.total(), pv.PrivacyBudget(max(0.2 + 0.3 + 0.1, 0.5), max(0.0, 1e-7))))
    mismatch = [i for i, (a, b) in enumerate(scenarios) if a != b]

    g = np.random.default_rng(11)
    lap = pv.laplace_sample(1.7, g, 100_000)
    gau = pv.gaussian_sample(0.6, g, 100_000)
    p_lap = stats.kstest(lap, stats.laplace(scale=1.7).cdf).pvalue
    p_gau = stats.kstest(gau, stats.norm(scale=0.6).cdf).pvalue
    ok = not fired and not over and not mismatch and p_lap > 1e-3 and p_gau > 1e-3
    report(3, ok, f"100 configs: {len(fired)} disjointness failures, {len(over)} over budget; "
                  f"scenario mismatches {mismatch}; KS p laplace={p_lap:.3g} gaussian={p_gau:.3g}")


# 4 -------------------------------------------------------------------------

def test_c4_noiseless_degeneration():
    ok, detail = checks.check_degeneration()
    report(4, ok, f"d=10, n=256: {detail}")


# 5 -------------------------------------------------------------------------

def test_c5_sensitivity_audit():
    d, b = 5, 32
    rng = np.random.default_rng(5)
    W = geo.l1_ball(d, 1.0)
    viol, worst, checked = 0, 0.0, 0
    for k in range(200):
        t = data.TaskSpec("smooth_nonconvex", d=d, R=float(rng.uniform(0.5, 2.0)), p=1.0,
                          noise=0.1, task_seed=k)
        loss = t.loss()
        R = int(rng.integers(1, 4))
        n = max(S.sfw_samples(R, b), b * R * R) + int(rng.integers(0, 50))
        ds = data.sample_dataset(t, n, k)
        cfg = S.SolverConfig("poly_sfw", W, loss, 1.0, 1e-5, k, {"rounds": R, "batch": b, "record": True})
        run = S.solve(ds, cfg)
        X, y, _, _ = S._prepare(ds, cfg)
        # replace one record that the run actually consumed
        i = int(rng.integers(S.sfw_samples(R, b)))
        z = data.sample_dataset(t, 1, 10 ** 6 + k)
        X2, y2 = X.copy(), y.copy()
        X2[i], y2[i] = z.X[0], z.y[0]
        log = run.extras["log"]
        for e, g1, g2 in zip(log, S.poly_sfw_replay(loss, X, y, log), S.poly_sfw_replay(loss, X2, y2, log)):
            bound = (loss.L0 + loss.L1 * W.diameter) * 2 ** (e["r"] / 2.0) / b
            ratio = geo.dual_norm(g1 - g2, 1.0) / bound
            worst = max(worst, ratio)
            viol += ratio > 1.0
            checked += 1
    report(5, viol == 0, f"200 replace-one pairs, {checked} estimates: {viol} violations, "
                         f"worst |change|/bound {worst:.3g}")


# 6 -------------------------------------------------------------------------

def test_c6_convex_rates():
    t0 = time.perf_counter()
    cfg, res = _run_preset("l2_gll_constrained")
    m_sgd = _means(cfg, res, "excess_risk")
    s_sgd = E.fit_rate(cfg.n_grid, m_sgd)
    cfg2, res2 = _run_preset("l1_gll_polytope")
    m_fw = _means(cfg2, res2, "excess_risk")
    s_fw = E.fit_rate(cfg2.n_grid, m_fw)
    secs = time.perf_counter() - t0
    ok = (cfg.trials >= 20 and cfg2.trials >= 20 and cfg.n_grid == GRID and cfg2.n_grid == GRID
          and _monotone(m_sgd) and -0.75 <= s_sgd <= -0.30 and -0.8 <= s_fw <= -0.25 and secs < 600)
    report(6, ok, f"Phased SGD means {_fmt(m_sgd)} slope {s_sgd:.3f} (monotone {_monotone(m_sgd)}); "
                  f"Noisy FW means {_fmt(m_fw)} slope {s_fw:.3f}; {secs:.0f}s")


# 7 -------------------------------------------------------------------------

def _feasible_exact(W, iterates) -> bool:
    c, r = W.ball_of
    return all(geo.lp_norm(w - c, 1.0) <= r * (1 + 1e-12) for w in iterates)


def test_c7_nonconvex_stationarity():
    cfg = cli.load_config("l1_smooth_nonconvex")
    loss, ev_sample = cfg.task.loss(), data.fresh_eval_stream(cfg.task, cfg.eval_samples, cfg.seed, 0)
    means, infeasible = [], 0
    for n in cfg.n_grid:
        vals = []
        for tr in range(cfg.trials):
            seed = cli.run_seed(cfg.seed, n, tr)
            ds = data.sample_dataset(cfg.task, n, seed)
            run = S.solve(ds, S.SolverConfig("poly_sfw", cfg.W, loss, cfg.epsilon, cfg.delta, seed,
                                             dict(cfg.overrides)))
            infeasible += not _feasible_exact(cfg.W, run.iterates)
            vals.append(E.stationarity_gap(run.output, cfg.task, cfg.W, 0, 0, sample=ev_sample).value)
        means.append(float(np.mean(vals)))
    slope = E.fit_rate(cfg.n_grid, means)

    # noisy_sfw at p = 2: same grid and monotonicity check
    t2 = data.TaskSpec("smooth_nonconvex", d=20, R=2.0, p=2.0, radius=1.0, noise=0.1)
    W2 = geo.lp_ball(np.zeros(20), 1.0, 2.0)
    ev2 = data.fresh_eval_stream(t2, 50_000, 0, 0)
    m2 = []
    for n in GRID:
        vals = []
        for tr in range(100):
            seed = cli.run_seed(1, n, tr)
            run = S.solve(data.sample_dataset(t2, n, seed),
                          S.SolverConfig("noisy_sfw", W2, t2.loss(), 1.0, 1e-5, seed,
                                         {"rounds": 3, "batch": "max"}))
            vals.append(E.stationarity_gap(run.output, t2, W2, 0, 0, sample=ev2).value)
        m2.append(float(np.mean(vals)))
    ok = (cfg.trials >= 20 and cfg.n_grid == GRID and _monotone(means) and -0.6 <= slope <= -0.15
          and infeasible == 0 and _monotone(m2))
    report(7, ok, f"poly_sfw means {_fmt(means)} slope {slope:.3f} (monotone {_monotone(means)}), "
                  f"{infeasible} runs with infeasible iterates; noisy_sfw p=2 means {_fmt(m2)} "
                  f"(monotone {_monotone(m2)})")


# 8 -------------------------------------------------------------------------

def test_c8_weakly_convex():
    cfg, res = _run_preset("lp_weakly_convex", threads=1)
    m = _means(cfg, res, "prox_distance")
    grid_ok = cfg.task.d == 10 and cfg.n_grid == [2 ** k for k in range(12, 16)]
    # beta sweep over three decades at a fixed non-stationary point
    t = cfg.task
    W = cfg.W
    w = 0.5 * t.planted() + 0.2 * np.eye(t.d)[0]
    ev_sample = data.fresh_eval_stream(t, 20_000, 3)
    betas = 4.0 * np.logspace(0, 3, 7)
    sweep = [E.prox_near_stationarity(w, t, float(b), 2.0, W, 0, 0, iters=1000, sample=ev_sample,
                                      restart=False)[0].value for b in betas]
    strictly = all(b < a for a, b in zip(sweep, sweep[1:]))
    ok = grid_ok and _monotone(m) and strictly and sweep[-1] < 0.01 * sweep[0]
    report(8, ok, f"pg_psmd prox_distance means {_fmt(m)} (monotone {_monotone(m)}); "
                  f"beta 4..4000 sweep {_fmt(sweep)} (decreasing {strictly})")


# 9 -------------------------------------------------------------------------

def test_c9_determinism(tmp_path):
    bad = []
    for name in cli.PRESETS:
        bodies = []
        for i, threads in enumerate((1, 1, 4)):
            out = tmp_path / f"{name}_{i}.csv"
            code = cli.main(["run", "--config", name, "--trials", "2", "--seed", "3",
                             "--threads", str(threads), "--out", str(out), "--quiet"])
            if code != 0:
                bad.append(f"{name} exit {code}")
            bodies.append(out.read_bytes())
        if not bodies[0] == bodies[1] == bodies[2]:
            bad.append(name)
    report(9, not bad, f"{len(cli.PRESETS)} presets, 2 trials each, threads 1/1/4: "
                       + ("byte-identical" if not bad else f"differences in {bad}"))


# 10 ------------------------------------------------------------------------

def test_c10_finite_differences():
    rng = np.random.default_rng(10)
    worst = {}
    for fam in ("smooth_nonconvex", "logistic"):
        w_max = 0.0
        for _ in range(1000):
            d = int(rng.integers(1, 10))
            p = float(rng.choice([1.0, 1.5, 2.0]))
            R = float(rng.uniform(0.5, 2.0))
            model = (losses.smooth_nonconvex_model(R, p) if fam == "smooth_nonconvex"
                     else losses.gll_model(losses.make_gll("logistic", R=R, p=p)))
            x = rng.standard_normal(d)
            x *= R / geo.dual_norm(x, p)
            y = float(rng.normal()) if fam == "smooth_nonconvex" else float(rng.choice([-1.0, 1.0]))
            w = rng.standard_normal(d) * rng.uniform(0.1, 3.0)
            g = model.grads(w, x[None, :], [y])[0]
            h = 1e-5
            fd = np.array([(model.values(w + h * e, x[None, :], [y])[0]
                            - model.values(w - h * e, x[None, :], [y])[0]) / (2 * h) for e in np.eye(d)])
            scale = max(np.linalg.norm(g), 1e-3)
            w_max = max(w_max, float(np.linalg.norm(g - fd)) / scale)
        worst[fam] = w_max
    ok = all(v <= 1e-5 for v in worst.values())
    report(10, ok, "1000 points each, worst relative error "
                   + ", ".join(f"{k} {v:.2g}" for k, v in worst.items()))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
