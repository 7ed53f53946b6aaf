import math

import numpy as np
import pytest

from privopt import data, geometry as geo, solvers as S

HINGE2 = data.TaskSpec("hinge_gll", d=5, R=1.0, p=2.0, noise=0.1)
HINGE1 = data.TaskSpec("hinge_gll", d=5, R=1.0, p=1.0, noise=0.1)
SNC1 = data.TaskSpec("smooth_nonconvex", d=5, R=1.0, p=1.0, noise=0.1)
SNC2 = data.TaskSpec("smooth_nonconvex", d=5, R=1.0, p=2.0, noise=0.1)
PR = data.TaskSpec("phase_retrieval", d=5, R=1.0, p=2.0, noise=0.1)


def _cfg(alg, W, task, seed=0, **ov):
    return S.SolverConfig(alg, W, task.loss(), 1.0, 1e-5, seed, ov)


def test_config_errors_name_the_key():
    W = geo.lp_ball(np.zeros(5), 1.0, 2.0)
    with pytest.raises(S.ConfigError) as e:
        _cfg("phased_sgd", W, HINGE2, bogus=1)
    assert e.value.key == "bogus"
    with pytest.raises(S.ConfigError) as e:
        S.SolverConfig("phased_sgd", W, HINGE2.loss(), 0.0, 1e-5)
    assert e.value.key == "epsilon"
    with pytest.raises(S.ConfigError):
        S.SolverConfig("nope", W, HINGE2.loss(), 1.0, 1e-5)


def test_phased_schedule_structure():
    s = S.phased_sgd_schedule(1000, 4, 1.0, 1e-5, 1.0, 1.0, 2.0)
    assert s["n_used"] == 512 and s["K"] == 9
    assert sum(s["T_k"]) == 511
    assert all(a / b == pytest.approx(4.0) for a, b in zip(s["eta_k"], s["eta_k"][1:]))
    with pytest.raises(S.ConfigError):
        S.phased_sgd_schedule(1000, 4, 10.0, 1e-5, 1.0, 1.0, 2.0)


def test_phased_sgd_runs_feasible_and_accounts():
    W = geo.lp_ball(np.zeros(5), 1.0, 2.0)
    ds = data.sample_dataset(HINGE2, 300, 0)
    run = S.solve(ds, _cfg("phased_sgd", W, HINGE2))
    assert W.contains(run.output)
    assert run.schedule["discarded"] == 300 - 256
    assert run.ledger.total().epsilon <= 1.0
    S.check_disjoint(run.slices)
    again = S.solve(ds, _cfg("phased_sgd", W, HINGE2))
    assert np.array_equal(run.output, again.output)


def test_phased_sgd_zero_features_stay_at_start_without_noise():
    t = data.TaskSpec("hinge_gll", d=3)
    ds = data.sample_dataset(t, 64, 0)
    zero = data.Dataset(np.zeros_like(ds.X), ds.y, t, 0)
    run = S.solve(zero, _cfg("phased_sgd", geo.unconstrained(3), t, noise_multiplier=0.0))
    assert np.array_equal(run.output, np.zeros(3))


def test_noisy_fw_schedule_and_errors():
    s = S.noisy_fw_schedule(1000, 1.0, 1e-5, 4, 1.0, 1.0, 1.0)
    assert s["T"] >= 1
    with pytest.raises(S.ConfigError):
        S.noisy_fw_schedule(10, 1.0, 1e-5, 4, 1.0, 1.0, 1.0)
    assert S.fw_step(1) == 1.0 and S.fw_step(4) == 0.5


def test_noisy_fw_feasible_and_returns_w_T():
    W = geo.l1_ball(5, 1.0)
    run = S.solve(data.sample_dataset(HINGE1, 2000, 0), _cfg("noisy_frank_wolfe", W, HINGE1))
    assert all(W.contains(w, 1e-12) for w in run.iterates)
    assert np.array_equal(run.output, run.iterates[run.schedule["T"] - 1])
    assert run.ledger.total().epsilon <= 1.0
    with pytest.raises(S.ConfigError):
        S.solve(data.sample_dataset(HINGE1, 100, 0),
                _cfg("noisy_frank_wolfe", geo.lp_ball(np.zeros(5), 1.0, 2.0), HINGE1))


def test_sfw_batch_rules():
    assert S.sfw_samples(2, 100) == 250
    assert S.max_batch(1024, 4) == 64
    s = S.poly_sfw_schedule(4096, 1.0, 1e-5, 10, 1.0, 1.0, 2.0, rounds="log-6", batch="max")
    assert s["R"] == 6 and s["b"] >= 64 and s["samples"] <= 4096
    with pytest.raises(S.ConfigError):
        S.poly_sfw_schedule(4096, 1.0, 1e-5, 10, 1.0, 1.0, 2.0, rounds=3, batch=4)
    with pytest.raises(S.ConfigError):
        S.poly_sfw_schedule(1000, 1.0, 1e-5, 10, 1.0, 1.0, 2.0, rounds=2, batch=300)
    with pytest.raises(S.ConfigError):
        S.poly_sfw_schedule(1000, 1.0, 1e-5, 10, 1.0, 1.0, 2.0, rounds="log-x")


def test_poly_sfw_round_structure_and_privacy():
    W = geo.l1_ball(5, 1.0)
    run = S.solve(data.sample_dataset(SNC1, 2048, 0), _cfg("poly_sfw", W, SNC1, rounds=3, batch=64))
    assert len(run.iterates) == 1 + 2 + 4
    assert all(W.contains(w, 1e-12) for w in run.iterates)
    assert any(np.array_equal(run.output, w) for w in run.iterates)
    assert run.ledger.total().epsilon <= 1.0
    sizes = [hi - lo for lo, hi in run.slices]
    assert sizes == [64, 64, 32, 64, 32, 21, 16]


def test_poly_sfw_replay_matches_run():
    W = geo.l1_ball(5, 1.0)
    ds = data.sample_dataset(SNC1, 1024, 1)
    run = S.solve(ds, _cfg("poly_sfw", W, SNC1, rounds=3, batch=32, record=True))
    X, y, _, _ = S._prepare(ds, run_cfg := _cfg("poly_sfw", W, SNC1, rounds=3, batch=32))
    rep = S.poly_sfw_replay(run_cfg.loss, X, y, run.extras["log"])
    assert all(np.allclose(a, e["est"]) for a, e in zip(rep, run.extras["log"]))


def test_full_batches_need_noise_off():
    W = geo.l1_ball(5, 1.0)
    with pytest.raises(S.ConfigError):
        S.solve(data.sample_dataset(SNC1, 256, 0), _cfg("poly_sfw", W, SNC1, rounds=2, full_batches=True))


def test_noisy_sfw_feasible():
    W = geo.lp_ball(np.zeros(5), 1.0, 2.0)
    run = S.solve(data.sample_dataset(SNC2, 2048, 0), _cfg("noisy_sfw", W, SNC2, rounds=3, batch="max"))
    assert all(W.contains(w, 1e-9) for w in run.iterates)
    assert run.ledger.total().epsilon <= 1.0 + 1e-12
    with pytest.raises(S.ConfigError):
        S.solve(data.sample_dataset(SNC1, 256, 0), _cfg("noisy_sfw", geo.l1_ball(5, 1.0), SNC1))


def test_pg_psmd_schedule_and_run():
    s = S.pg_psmd_schedule(10 ** 6, 100, 1.0, 1.0, 1e-5, 1.0, 1.0, 2.0)
    assert s["pbar"] == pytest.approx(1 + 1 / math.log(100))
    assert s["beta"] == pytest.approx(2 * math.log(100))
    assert s["modulus"] == pytest.approx(1.0)
    with pytest.raises(S.ConfigError):
        S.pg_psmd_schedule(10 ** 6, 100, 1.0, 1.0, 1e-5, 1.0, 1.0, 2.0, beta=1.0)
    W = geo.lp_ball(np.zeros(5), 1.0, 2.0)
    run = S.solve(data.sample_dataset(PR, 2048, 0), _cfg("pg_psmd", W, PR, rounds=8))
    assert len(run.ledger.entries) == 8
    tot = run.ledger.total()
    assert tot.epsilon == pytest.approx(1.0) and tot.delta == pytest.approx(1e-5)
    assert all(W.contains(w, 1e-9) for w in run.iterates)


def test_dp_strongly_convex_quadratic_recovers_minimizer():
    rng = np.random.default_rng(0)
    d, lam = 3, 1.0
    W = geo.lp_ball(np.zeros(d), 2.0, 2.0)
    w_star = np.array([0.5, -0.3, 0.2])
    out = S.dp_strongly_convex_solve(lambda w, t: lam * (w - w_star), 10 ** 4, lam, W, 2.0,
                                     1e6, 1e-5, rng, G=10.0)
    assert np.linalg.norm(out - w_star) <= 0.05 * W.diameter
    with pytest.raises(ValueError):
        S.dp_strongly_convex_solve(lambda w, t: w, 10, 0.0, W, 2.0, 1.0, 1e-5, rng, 1.0)


def test_dp_strongly_convex_records_one_entry():
    from privopt.privacy import PrivacyLedger
    led = PrivacyLedger()
    W = geo.lp_ball(np.zeros(2), 1.0, 2.0)
    S.dp_strongly_convex_solve(lambda w, t: np.zeros(2), 20, 1.0, W, 2.0, 0.5, 1e-6,
                               np.random.default_rng(0), 1.0, ledger=led, slice_range=(0, 20))
    assert len(led.entries) == 1 and led.entries[0].epsilon == 0.5


def test_constant_loss_converges_to_regularizer_center():
    W = geo.lp_ball(np.zeros(2), 1.0, 2.0)
    c = np.array([0.3, 0.1])
    out = S.dp_strongly_convex_solve(lambda w, t: np.zeros(2), 2000, 1.0, W, 2.0, 1.0, 1e-5,
                                     np.random.default_rng(0), 1.0, reg_grad=S.reg_sq_grad(c, 1.0, 2.0),
                                     noise_multiplier=0.0)
    assert np.allclose(out, c, atol=1e-3)
