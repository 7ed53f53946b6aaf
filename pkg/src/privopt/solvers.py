"""The six private optimization procedures and their schedules.

Every solver takes a Dataset and a SolverConfig and returns a SolverRun.
Randomness comes from substreams of ``config.seed``: one master shuffle of
the data (slices are then taken sequentially, so disjointness is easy to
audit), one stream for mechanism noise and one for output selection.

Privacy accounting: each mechanism records the budget its noise realizes
under the per-record sensitivity bounds used in the privacy arguments (a
changed record moves a sum by at most one per-record bound), with the
standard guarantees of report-noisy-max (2 * sensitivity / scale) and the
classical Gaussian mechanism. The ledger audit also reports the total with
doubled sensitivities (replace-one neighbours).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from . import losses
from .data import STREAM_SELECT, STREAM_SOLVER, Dataset, substream
from .privacy import (LedgerEntry, PrivacyLedger, advanced_composition, gaussian_epsilon,
                      gaussian_sample, report_noisy_argmin, split_budget, target_budget)

ALGORITHMS = ("phased_sgd", "noisy_frank_wolfe", "poly_sfw", "noisy_sfw", "pg_psmd")

OVERRIDE_KEYS = ("beta", "alpha", "rounds", "batch", "eta", "theta", "w0",
                 "noise_multiplier", "full_batches", "record", "composition",
                 "sc_average", "iterations")


class ConfigError(ValueError):
    """Invalid solver configuration; ``key`` names the offending setting."""

    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


@dataclass
class SolverConfig:
    algorithm: str
    W: geo.ConstraintSet
    loss: losses.LossModel
    epsilon: float
    delta: float
    seed: int = 0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm", f"unknown algorithm {self.algorithm!r}")
        bad = set(self.overrides) - set(OVERRIDE_KEYS)
        if bad:
            raise ConfigError(sorted(bad)[0], "unknown solver override")
        try:
            target_budget(self.epsilon, self.delta)
        except ValueError as e:
            raise ConfigError("epsilon" if "epsilon" in str(e) else "delta", str(e)) from None
        if not 0 < self.delta:
            raise ConfigError("delta", "all algorithms here need delta > 0")

    def get(self, key, default=None):
        v = self.overrides.get(key)
        return default if v is None else v


@dataclass
class SolverRun:
    algorithm: str
    output: np.ndarray
    ledger: PrivacyLedger
    schedule: dict
    iterates: list = field(default_factory=list)
    slices: list = field(default_factory=list)
    wall_ms: float = 0.0
    extras: dict = field(default_factory=dict)


# ---------------------------------------------------------------- schedules

def _ln(x: float) -> float:
    return math.log(x)


def phased_sgd_schedule(n: int, d: int, epsilon: float, delta: float, L0: float, R: float,
                        D: float, constrained: bool = True, theta: float | None = None,
                        eta: float | None = None) -> dict:
    """rho, K, eta and the per-phase (T_k, eta_k, sigma_k)."""
    if n < 2:
        raise ConfigError("n", "phased SGD needs n >= 2")
    lnd = _ln(1.0 / delta)
    if epsilon > math.sqrt(lnd):
        raise ConfigError("epsilon", f"phased SGD needs epsilon <= sqrt(ln(1/delta)) = {math.sqrt(lnd):.4g}")
    K = int(math.floor(math.log2(n)))
    n_used = 2 ** K
    rho = epsilon / (2.0 * math.sqrt(lnd))
    if eta is None:
        if constrained:
            eta = D / (3.0 * L0 * R) * min(rho / math.sqrt(d), 1.0 / math.sqrt(n_used))
        else:
            th = float(n_used if theta is None else theta)
            eta = 1.0 / (3.0 * L0 * R) * min(rho / math.sqrt(th), 1.0 / math.sqrt(n_used))
    T = [n_used // 2 ** k for k in range(1, K + 1)]
    etas = [eta / 4 ** k for k in range(1, K + 1)]
    sig = [4.0 * L0 * R * e / rho for e in etas]
    return {"n_used": n_used, "K": K, "rho": rho, "eta": eta, "T_k": T, "eta_k": etas, "sigma_k": sig}


def noisy_fw_schedule(n: int, epsilon: float, delta: float, J: int, L0: float, R: float,
                      D: float) -> dict:
    if J < 2:
        raise ConfigError("geometry", "noisy Frank-Wolfe needs at least 2 vertices")
    lnd = _ln(1.0 / delta)
    T = int(math.floor(n * epsilon / (_ln(J) * _ln(n) * math.sqrt(lnd))))
    if T < 1:
        raise ConfigError("n", f"n={n} too small for the budget: T floors to 0")
    s = 3.0 * L0 * R * D * math.sqrt(8.0 * T * lnd) / (n * epsilon)
    return {"T": T, "s": s}


def fw_step(t: int) -> float:
    """mu_t = 3 / (t + 2)."""
    return 3.0 / (t + 2.0)


def sfw_batch_default(n: int) -> int:
    return max(1, int(math.floor(n / _ln(n) ** 2)))


def poly_sfw_schedule(n: int, epsilon: float, delta: float, J: int, L0: float, L1: float,
                      D: float, rounds: int | None = None, batch: int | None = None) -> dict:
    lnd = _ln(1.0 / delta)
    arg = n * epsilon / (_ln(J) ** 2 * _ln(n) ** 2 * math.sqrt(lnd))
    default = max(1, int(math.floor((2.0 / 3.0) * _ln(arg))) if arg > 1 else 0)
    b, rounds = _resolve_batch_rounds(batch, rounds, n, default)
    _check_batches(n, rounds, b)
    s = [2.0 * D * (L0 + L1 * D) * 2 ** r * math.sqrt(lnd) / (b * epsilon) for r in range(rounds)]
    return {"R": rounds, "b": b, "s_r": s, "samples": sfw_samples(rounds, b)}


def max_rounds(n: int, b: int) -> int:
    """Largest R with b R^2 <= n, b >= 2^R and the sample schedule within n."""
    r = 0
    while b * (r + 1) ** 2 <= n and b >= 2 ** (r + 1) and sfw_samples(r + 1, b) <= n:
        r += 1
    return r


def _log_rounds(rounds, n):
    """'log-K' means R = floor(log2 n) - K, at least 1."""
    try:
        k = int(rounds[4:])
    except ValueError:
        raise ConfigError("rounds", f"expected 'log-K' with integer K, got {rounds!r}") from None
    return max(1, int(math.floor(math.log2(n))) - k)


def _resolve_rounds(rounds, n, b, default):
    if rounds == "max":
        return max_rounds(n, b)
    if rounds is None:
        return default
    if isinstance(rounds, str) and rounds.startswith("log-"):
        return _log_rounds(rounds, n)
    if isinstance(rounds, bool) or isinstance(rounds, str) or int(rounds) != rounds:
        raise ConfigError("rounds", f"expected an integer, 'max' or 'log-K', got {rounds!r}")
    return int(rounds)


def max_batch(n: int, rounds: int) -> int:
    """Largest b with b R^2 <= n and the sample schedule within n."""
    b = n // rounds ** 2
    while b > 0 and sfw_samples(rounds, b) > n:
        b -= 1
    return b


def _resolve_batch_rounds(batch, rounds, n, default):
    if batch == "max":
        if rounds in (None, "max"):
            raise ConfigError("batch", "batch = 'max' needs an integer or 'log-K' rounds")
        r = _resolve_rounds(rounds, n, 0, default)
        return max_batch(n, r), r
    if batch is not None and (isinstance(batch, bool) or int(batch) != batch):
        raise ConfigError("batch", f"expected an integer or 'max', got {batch!r}")
    b = sfw_batch_default(n) if batch is None else int(batch)
    return b, _resolve_rounds(rounds, n, b, default)


def _check_batches(n, rounds, b):
    if rounds < 1:
        raise ConfigError("rounds", "need at least one round")
    if b < 1:
        raise ConfigError("batch", "batch size must be >= 1")
    if b * rounds ** 2 > n:
        raise ConfigError("batch", f"b R^2 = {b * rounds ** 2} exceeds n = {n}")
    if b < 2 ** rounds:
        raise ConfigError("batch", f"b = {b} < 2^R = {2 ** rounds}")
    if sfw_samples(rounds, b) > n:
        raise ConfigError("batch", f"schedule needs {sfw_samples(rounds, b)} samples, n = {n}")


def sfw_samples(rounds: int, b: int) -> int:
    """Total samples drawn: sum over rounds r and t < 2^r of floor(b/(t+1)) (min 1)."""
    return sum(max(1, b // (t + 1)) for r in range(rounds) for t in range(2 ** r))


def noisy_sfw_schedule(n: int, d: int, p: float, epsilon: float, delta: float, L0: float,
                       L1: float, D: float, rounds: int | None = None,
                       batch: int | None = None) -> dict:
    if not 1.0 < p <= 2.0:
        raise ConfigError("p", f"noisy SFW needs 1 < p <= 2, got {p}")
    lnd = _ln(1.0 / delta)
    rc = geo.regularity_constants(p, d, "noisy_sfw")
    arg = n * epsilon / (math.sqrt(d * rc.kappa_tilde * lnd) * rc.kappa ** (5.0 / 3.0) * _ln(n) ** 2)
    default = max(1, int(math.floor(0.8 * _ln(arg))) if arg > 1 else 0)
    b, rounds = _resolve_batch_rounds(batch, rounds, n, default)
    _check_batches(n, rounds, b)
    c = d ** (2.0 / p - 1.0) * lnd / (b * b * epsilon * epsilon)
    return {"R": rounds, "b": b, "kappa": rc.kappa, "kappa_tilde": rc.kappa_tilde,
            "sigma_r0": math.sqrt(16.0 * L0 ** 2 * c),
            "sigma_rt": lambda t: math.sqrt(16.0 * L0 ** 2 * (t + 1) ** 2 * c),
            "sigmahat_rt": lambda t: math.sqrt(16.0 * L1 ** 2 * D ** 2 * (1.0 / (t + 1)) * (t + 1) ** 2 * c)}


def pg_psmd_schedule(n: int, d: int, p: float, epsilon: float, delta: float, L0: float,
                     rho: float, D: float, rounds: int | None = None,
                     beta: float | None = None) -> dict:
    if not 1.0 <= p <= 2.0:
        raise ConfigError("p", f"need 1 <= p <= 2, got {p}")
    if d < 2:
        raise ConfigError("d", "pg_psmd needs d >= 2")
    # 1 + 1/ln d exceeds 2 when d < e; the l2 map is the natural cap there
    pbar = min(2.0, max(p, 1.0 + 1.0 / _ln(d)))
    rc = geo.regularity_constants(p, d, "weakly_convex")
    kappa, kt = rc.kappa, rc.kappa_tilde
    if beta is None:
        beta = 2.0 * rho * kappa
    if rounds is None:
        a = math.sqrt(n * D * rho / (kappa * L0))
        bnd = (kt * kappa ** 2) ** (-1.0 / 3.0) * (D * (n * epsilon) ** 2 * rho / (L0 * d * _ln(1.0 / delta))) ** (1.0 / 3.0)
        rounds = int(math.floor(min(a, bnd)))
    if rounds < 1:
        raise ConfigError("rounds", f"n={n} too small: the number of rounds floors to 0")
    rounds = min(int(rounds), n)
    lam = beta / kappa - rho
    if lam <= 0:
        raise ConfigError("beta", f"beta/kappa - rho = {lam:.4g} <= 0: subproblems not strongly convex")
    return {"pbar": pbar, "kappa": kappa, "kappa_tilde": kt, "beta": beta, "R": rounds,
            "n_r": n // rounds, "modulus": lam}


# ---------------------------------------------------------------- helpers

def _prepare(data: Dataset, cfg: SolverConfig):
    n = len(data)
    perm = substream(cfg.seed, STREAM_SOLVER, 0).permutation(n)
    X = np.ascontiguousarray(data.X[perm])
    y = np.ascontiguousarray(data.y[perm])
    return X, y, substream(cfg.seed, STREAM_SOLVER, 1), substream(cfg.seed, STREAM_SELECT)


def _ledger(cfg: SolverConfig) -> PrivacyLedger:
    return PrivacyLedger(target=target_budget(cfg.epsilon, cfg.delta), delta_prime=cfg.delta)


def _noise_mult(cfg) -> float:
    m = float(cfg.get("noise_multiplier", 1.0))
    if m < 0:
        raise ConfigError("noise_multiplier", "must be >= 0")
    return m


def _centroid_radius(W: geo.ConstraintSet) -> float:
    """max_j ||v_j - mean(V)||; a common shift of all scores leaves the argmin unchanged."""
    c = W.vertices.mean(axis=0)
    return max(geo.lp_norm(v - c, W.p) for v in W.vertices)


def _require_in(W, w, what):
    if not W.contains(w, 1e-9):
        raise AssertionError(f"{what} left the constraint set")


class _SliceCursor:
    """Hands out consecutive disjoint index ranges of the shuffled data."""

    def __init__(self, n: int, full: bool = False):
        self.n, self.pos, self.full, self.taken = n, 0, full, []

    def take(self, k: int) -> tuple:
        if self.full:
            return (0, self.n)
        if self.pos + k > self.n:
            raise AssertionError(f"slice [{self.pos}, {self.pos + k}) runs past n = {self.n}")
        r = (self.pos, self.pos + k)
        self.pos += k
        self.taken.append(r)
        return r


def check_disjoint(slices) -> None:
    s = sorted(slices)
    for a, b in zip(s, s[1:]):
        if b[0] < a[1]:
            raise AssertionError(f"slices {a} and {b} overlap")


# ---------------------------------------------------------------- Phased SGD

def phased_sgd(data: Dataset, cfg: SolverConfig) -> SolverRun:
    """Phased SGD with the bisection oracle for smoothed GLLs (l2 geometry)."""
    t0 = time.perf_counter()
    loss, W = cfg.loss, cfg.W
    if loss.kind != "gll":
        raise ConfigError("loss", "phased SGD needs a GLL loss")
    if W.kind == "polytope" or (W.kind == "lp_ball" and W.p != 2.0):
        raise ConfigError("geometry", "phased SGD runs on an l2 ball or unconstrained")
    spec = loss.gll
    n, d = len(data), data.X.shape[1]
    constrained = W.kind != "unconstrained"
    D = W.diameter if constrained else None
    sch = phased_sgd_schedule(n, d, cfg.epsilon, cfg.delta, spec.L0, spec.R, D, constrained,
                              cfg.get("theta"), cfg.get("eta"))
    nu = sch["n_used"]
    if constrained:
        beta = cfg.get("beta", math.sqrt(nu) * spec.L0 / (spec.R * D))
    else:
        beta = cfg.get("beta", math.sqrt(nu) * spec.L0 / spec.R)
    alpha = cfg.get("alpha", spec.L0 * spec.R / (nu * _ln(nu)))
    T_or = losses.bisection_steps(spec.L0, spec.R, alpha)
    sch.update(beta=beta, alpha=alpha, oracle_steps=T_or, discarded=n - nu)
    X, y, rng, _ = _prepare(data, cfg)
    mult = _noise_mult(cfg)
    ledger = _ledger(cfg)
    cur = _SliceCursor(n)
    w_tilde = np.asarray(cfg.get("w0", W.default_point()), dtype=float)
    link, dom, L0 = spec.link, spec.domain, spec.L0
    bis = losses._bisect
    G = 2.0 * spec.L0 * spec.R + alpha  # oracle output bound
    trace = []
    for k, (Tk, ek, sk) in enumerate(zip(sch["T_k"], sch["eta_k"], sch["sigma_k"]), start=1):
        lo, hi = cur.take(Tk)
        w = w_tilde.copy()
        if constrained:
            w = geo.project(w, W)
        acc = np.zeros(d)
        for i in range(lo, hi):
            x = X[i]
            m = float(x @ w)
            ub, _ = bis(link, float(y[i]), m, beta, L0, T_or, dom)
            w = w - (ek * beta * (m - ub)) * x
            if constrained:
                w = geo.project(w, W)
            acc += w
        wk = acc / Tk
        sigma = sk * mult
        if sigma > 0:
            eps_k = gaussian_epsilon(G * ek, sigma, cfg.delta)
            ledger.record(LedgerEntry("gaussian", eps_k, cfg.delta, f"phase{k}", (lo, hi),
                                      note=f"sigma={sigma!r}"))
            w_tilde = wk + gaussian_sample(sigma, rng, d)
        else:
            w_tilde = wk
        trace.append(w_tilde.copy())
    out = geo.project(w_tilde, W) if constrained else w_tilde
    check_disjoint(cur.taken)
    return SolverRun("phased_sgd", out, ledger, sch, iterates=trace, slices=cur.taken,
                     wall_ms=1e3 * (time.perf_counter() - t0), extras={"w_tilde_K": w_tilde})


# ---------------------------------------------------------------- Noisy Frank-Wolfe

def noisy_frank_wolfe(data: Dataset, cfg: SolverConfig) -> SolverRun:
    """Noisy Frank-Wolfe over a polytope with full-data oracle gradients."""
    t0 = time.perf_counter()
    loss, W = cfg.loss, cfg.W
    if W.kind != "polytope":
        raise ConfigError("geometry", "noisy Frank-Wolfe needs a polytope")
    if loss.kind != "gll":
        raise ConfigError("loss", "noisy Frank-Wolfe needs a GLL loss")
    spec = loss.gll
    n = len(data)
    J, D = W.n_vertices, W.diameter
    sch = noisy_fw_schedule(n, cfg.epsilon, cfg.delta, J, spec.L0, spec.R, D)
    lnd = _ln(1.0 / cfg.delta)
    beta = cfg.get("beta", spec.L0 * math.sqrt(n * cfg.epsilon)
                   / (spec.R * D * lnd ** 0.25 * math.sqrt(_ln(J) * _ln(n))))
    alpha = cfg.get("alpha", spec.L0 * spec.R / (n * _ln(n)))
    sch.update(beta=beta, alpha=alpha, oracle_steps=losses.bisection_steps(spec.L0, spec.R, alpha))
    X, y, rng, _ = _prepare(data, cfg)
    mult = _noise_mult(cfg)
    s = sch["s"] * mult
    ledger = _ledger(cfg)
    V = W.vertices
    sens = _centroid_radius(W) * (2.0 * spec.L0 * spec.R + alpha) / n
    lam = np.zeros(J)
    lam[0] = 1.0
    w = np.asarray(cfg.get("w0", V[0]), dtype=float)
    if "w0" in cfg.overrides:
        lam = None
    iterates = [w.copy()]
    T = sch["T"]
    for t in range(1, T + 1):
        g = losses.oracle_batch(w, X, y, spec, beta, alpha).mean(axis=0)
        if s > 0:
            ledger.record(LedgerEntry("noisy_max", 2.0 * sens / s, 0.0, "fw", (0, n),
                                      note=f"t={t} scale={s!r}"))
        j = report_noisy_argmin(V @ g, s, rng)
        mu = fw_step(t)
        w = (1.0 - mu) * w + mu * V[j]
        if lam is not None:
            lam *= 1.0 - mu
            lam[j] += mu
            if lam.min() < -1e-12 or abs(lam.sum() - 1.0) > 1e-9:
                raise AssertionError("Frank-Wolfe weights left the simplex")
        iterates.append(w.copy())
    out = iterates[T - 1]  # w_T; the final update produces w_{T+1}
    return SolverRun("noisy_frank_wolfe", out, ledger, sch, iterates=iterates, slices=[(0, n)],
                     wall_ms=1e3 * (time.perf_counter() - t0))


# ---------------------------------------------------------------- stochastic FW family

class RecursiveEstimator:
    """grad_t = (1 - eta)(grad_{t-1} + Delta_t) + eta g_t over a batch.

    Gradients are batch means (equal to the (t+1)/b scaling when b/(t+1)
    divides evenly). ``noise`` adds pre-drawn Gaussian vectors to the three
    released quantities of the Gaussian variant.
    """

    def __init__(self, loss: losses.LossModel, X, y):
        self.loss, self.X, self.y = loss, X, y
        self.value = None

    def start(self, w, rng_slice, noise=None):
        lo, hi = rng_slice
        self.value = self.loss.mean_grad(w, self.X[lo:hi], self.y[lo:hi])
        if noise is not None:
            self.value = self.value + noise
        return self.value

    def update(self, w, w_prev, rng_slice, eta, noise_delta=None, noise_g=None):
        lo, hi = rng_slice
        Xb, yb = self.X[lo:hi], self.y[lo:hi]
        g = self.loss.mean_grad(w, Xb, yb)
        delta = g - self.loss.mean_grad(w_prev, Xb, yb)
        if noise_delta is not None:
            delta = delta + noise_delta
        if noise_g is not None:
            g = g + noise_g
        self.value = (1.0 - eta) * (self.value + delta) + eta * g
        return self.value


def _sfw_common(data, cfg):
    loss, W = cfg.loss, cfg.W
    if loss.L1 is None:
        raise ConfigError("loss", "stochastic Frank-Wolfe needs a smooth loss (L1)")
    return loss, W


def poly_sfw(data: Dataset, cfg: SolverConfig) -> SolverRun:
    """Private polyhedral stochastic Frank-Wolfe with a recursive gradient estimator."""
    t0 = time.perf_counter()
    loss, W = _sfw_common(data, cfg)
    if W.kind != "polytope":
        raise ConfigError("geometry", "poly_sfw needs a polytope")
    n = len(data)
    J, D = W.n_vertices, W.diameter
    full = bool(cfg.get("full_batches", False))
    sch = poly_sfw_schedule(n, cfg.epsilon, cfg.delta, J, loss.L0, loss.L1, D,
                            cfg.get("rounds"), cfg.get("batch"))
    X, y, rng, sel = _prepare(data, cfg)
    mult = _noise_mult(cfg)
    if full and mult > 0:
        raise ConfigError("full_batches", "full-dataset batches are only allowed with noise off")
    ledger = _ledger(cfg)
    cur = _SliceCursor(n, full)
    est = RecursiveEstimator(loss, X, y)
    V = W.vertices
    rV = _centroid_radius(W)
    record = bool(cfg.get("record", False))
    w = np.asarray(cfg.get("w0", V[0]), dtype=float)
    lam = np.zeros(J)
    lam[0] = 1.0
    track = "w0" not in cfg.overrides
    iterates, log = [], []
    b = sch["b"]
    for r in range(sch["R"]):
        s_r = sch["s_r"][r] * mult
        sens = rV * (loss.L0 + loss.L1 * D) * 2 ** (r / 2.0) / b
        w_prev = None
        for t in range(2 ** r):
            bt = b if t == 0 else max(1, b // (t + 1))
            sl = cur.take(bt)
            eta = 1.0 / math.sqrt(t + 1)
            g = est.start(w, sl) if t == 0 else est.update(w, w_prev, sl, eta)
            if s_r > 0:
                ledger.record(LedgerEntry("noisy_max", 2.0 * sens / s_r, 0.0, f"round{r}", sl,
                                          note=f"t={t} scale={s_r!r}"))
            iterates.append(w.copy())
            if record:
                log.append({"r": r, "t": t, "slice": sl, "w": w.copy(),
                            "w_prev": None if w_prev is None else w_prev.copy(), "est": g.copy()})
            j = report_noisy_argmin(V @ g, s_r, rng)
            w_prev = w
            w = (1.0 - eta) * w + eta * V[j]
            if track:
                lam *= 1.0 - eta
                lam[j] += eta
                if lam.min() < -1e-12 or abs(lam.sum() - 1.0) > 1e-9:
                    raise AssertionError("Frank-Wolfe weights left the simplex")
            if W.ball_of is not None:
                _require_in(W, w, "poly_sfw iterate")
    if not full:
        check_disjoint(cur.taken)
    out = iterates[int(sel.integers(len(iterates)))]
    return SolverRun("poly_sfw", out.copy(), ledger, sch, iterates=iterates, slices=cur.taken,
                     wall_ms=1e3 * (time.perf_counter() - t0), extras={"log": log, "final": w})


def poly_sfw_replay(loss: losses.LossModel, X, y, log) -> list:
    """Recompute the estimator on (X, y) along a recorded trajectory.

    Iterates and batch slices are taken from ``log`` (a poly_sfw run with
    ``record=True``); X, y are in the run's shuffled order.
    """
    est = RecursiveEstimator(loss, X, y)
    out = []
    for e in log:
        if e["t"] == 0:
            out.append(est.start(e["w"], e["slice"]).copy())
        else:
            out.append(est.update(e["w"], e["w_prev"], e["slice"], 1.0 / math.sqrt(e["t"] + 1)).copy())
    return out


def noisy_sfw(data: Dataset, cfg: SolverConfig) -> SolverRun:
    """Noisy stochastic Frank-Wolfe for l_p geometry, 1 < p <= 2."""
    t0 = time.perf_counter()
    loss, W = _sfw_common(data, cfg)
    p = W.p
    if W.kind == "unconstrained":
        raise ConfigError("geometry", "noisy SFW needs a bounded set")
    if not 1.0 < p <= 2.0:
        raise ConfigError("p", f"noisy SFW needs 1 < p <= 2, got {p}")
    n, d = len(data), data.X.shape[1]
    D = W.diameter
    full = bool(cfg.get("full_batches", False))
    sch = noisy_sfw_schedule(n, d, p, cfg.epsilon, cfg.delta, loss.L0, loss.L1, D,
                             cfg.get("rounds"), cfg.get("batch"))
    X, y, rng, sel = _prepare(data, cfg)
    mult = _noise_mult(cfg)
    if full and mult > 0:
        raise ConfigError("full_batches", "full-dataset batches are only allowed with noise off")
    ledger = _ledger(cfg)
    cur = _SliceCursor(n, full)
    est = RecursiveEstimator(loss, X, y)
    b = sch["b"]
    dscale = d ** (1.0 / p - 0.5)
    w = np.asarray(cfg.get("w0", W.default_point()), dtype=float)
    iterates = []
    for r in range(sch["R"]):
        w_prev = None
        for t in range(2 ** r):
            bt = b if t == 0 else max(1, b // (t + 1))
            sl = cur.take(bt)
            eta = 1.0 / math.sqrt(t + 1)
            if t == 0:
                sig = sch["sigma_r0"] * mult
                nz = gaussian_sample(sig, rng, d) if sig > 0 else None
                if sig > 0:
                    eps_t = gaussian_epsilon(loss.L0 * dscale / b, sig, cfg.delta)
                    ledger.record(LedgerEntry("gaussian", eps_t, cfg.delta, f"r{r}t{t}", sl))
                g = est.start(w, sl, nz)
            else:
                sig, sh = sch["sigma_rt"](t) * mult, sch["sigmahat_rt"](t) * mult
                nd = gaussian_sample(sh, rng, d) if sh > 0 else None
                ng = gaussian_sample(sig, rng, d) if sig > 0 else None
                if sig > 0:
                    # two Gaussian releases on one batch act as one Gaussian
                    # with the root-sum-square sensitivity-to-noise ratio
                    ratio = math.hypot(loss.L1 * D * eta * (t + 1) * dscale / b / sh,
                                       loss.L0 * (t + 1) * dscale / b / sig)
                    eps_t = gaussian_epsilon(ratio, 1.0, cfg.delta)
                    ledger.record(LedgerEntry("gaussian", eps_t, cfg.delta, f"r{r}t{t}", sl))
                g = est.update(w, w_prev, sl, eta, nd, ng)
            iterates.append(w.copy())
            v = geo.linear_minimize(g, W)
            w_prev = w
            w = (1.0 - eta) * w + eta * v
            _require_in(W, w, "noisy_sfw iterate")
    if not full:
        check_disjoint(cur.taken)
    out = iterates[int(sel.integers(len(iterates)))]
    sch = {k: v for k, v in sch.items() if not callable(v)}
    return SolverRun("noisy_sfw", out.copy(), ledger, sch, iterates=iterates, slices=cur.taken,
                     wall_ms=1e3 * (time.perf_counter() - t0), extras={"final": w})


# ---------------------------------------------------------------- weakly convex

def dp_strongly_convex_solve(sample_grad, m: int, lam: float, W: geo.ConstraintSet,
                             pbar: float, epsilon: float, delta: float, rng, G: float,
                             reg_grad=None, w0=None, ledger: PrivacyLedger | None = None,
                             group: str = "sc", slice_range=(0, 0), noise_multiplier: float = 1.0,
                             composition: str = "advanced", average: bool = True) -> np.ndarray:
    """Stand-in (epsilon, delta)-DP solver for a lam-strongly convex objective.

    Single pass of noisy stochastic mirror descent with mirror map
    (1/2)||.||_pbar^2 and step 1/(lam t). ``sample_grad(w, t)`` is the data
    gradient of sample t, clipped to l2 norm G; ``reg_grad(w)`` is the
    data-free part. Per-step Gaussian noise is calibrated so that m-fold
    advanced composition stays within (epsilon, delta); with
    ``composition="parallel"`` each step gets the full budget, which is
    valid because every sample is touched once.
    """
    if not lam > 0:
        raise ValueError("strong convexity modulus must be positive")
    if m < 1:
        raise ValueError("need at least one sample")
    if composition == "advanced":
        e0, d0 = split_budget(epsilon, delta, m)
    elif composition == "parallel":
        e0, d0 = epsilon, delta
    else:
        raise ValueError(f"unknown composition {composition!r}")
    sigma = noise_multiplier * G * math.sqrt(2.0 * math.log(1.25 / d0)) / e0
    if ledger is not None and sigma > 0:
        ledger.record(LedgerEntry("gaussian", float(epsilon), float(delta), group, tuple(slice_range),
                                  note=f"{m} noisy mirror steps, sigma={sigma!r}, {composition}"))
    d = W.dim
    w = W.default_point() if w0 is None else np.array(w0, dtype=float)
    acc = np.zeros(d)
    wsum = 0.0
    for t in range(1, m + 1):
        g = np.asarray(sample_grad(w, t - 1), dtype=float)
        gn = float(np.linalg.norm(g))
        if gn > G:
            g = g * (G / gn)
        if sigma > 0:
            g = g + sigma * rng.standard_normal(d)
        if reg_grad is not None:
            g = g + reg_grad(w)
        w = geo.mirror_step(w, g, 1.0 / (lam * t), W, pbar)
        acc += t * w
        wsum += t
    return acc / wsum if average else w


def reg_sq_grad(center, beta: float, pbar: float):
    """Gradient map of (beta/2)||w - center||_pbar^2."""
    c = np.asarray(center, dtype=float)
    return lambda w: beta * geo.lp_sq_grad(w - c, pbar)


def _l2_grad_bound(loss: losses.LossModel, d: int) -> float:
    q = geo.dual_exponent(loss.p)
    # ||g||_2 <= d^{1/2 - 1/q} ||g||_q for q >= 2
    return loss.L0 * (d ** (0.5 - 1.0 / q) if q >= 2 else 1.0)


def pg_psmd(data: Dataset, cfg: SolverConfig) -> SolverRun:
    """Proximally guided private stochastic mirror descent for weakly convex losses."""
    t0 = time.perf_counter()
    loss, W = cfg.loss, cfg.W
    if loss.rho is None:
        raise ConfigError("loss", "pg_psmd needs a weakly convex loss (rho)")
    if W.kind == "unconstrained":
        raise ConfigError("geometry", "pg_psmd needs a bounded set")
    n, d = len(data), data.X.shape[1]
    p = 1.0 if W.ball_of is not None else W.p
    sch = pg_psmd_schedule(n, d, p, cfg.epsilon, cfg.delta, loss.L0, loss.rho, W.diameter,
                           cfg.get("rounds"), cfg.get("beta"))
    X, y, rng, sel = _prepare(data, cfg)
    mult = _noise_mult(cfg)
    ledger = _ledger(cfg)
    cur = _SliceCursor(n)
    pbar, beta, lam, nr = sch["pbar"], sch["beta"], sch["modulus"], sch["n_r"]
    G = _l2_grad_bound(loss, d)
    comp = cfg.get("composition", "advanced")
    avg = bool(cfg.get("sc_average", True))
    w = np.asarray(cfg.get("w0", W.default_point()), dtype=float)
    ws = [w.copy()]
    for r in range(1, sch["R"] + 1):
        lo, hi = cur.take(nr)
        Xr, yr = X[lo:hi], y[lo:hi]

        def sample_grad(v, t, Xr=Xr, yr=yr):
            return loss.grads(v, Xr[t:t + 1], yr[t:t + 1])[0]

        w = dp_strongly_convex_solve(sample_grad, nr, lam, W, pbar, cfg.epsilon, cfg.delta, rng, G,
                                     reg_grad=reg_sq_grad(w, beta, pbar), w0=w, ledger=ledger,
                                     group=f"round{r}", slice_range=(lo, hi),
                                     noise_multiplier=mult, composition=comp, average=avg)
        ws.append(w.copy())
    check_disjoint(cur.taken)
    choices = ws[:sch["R"]]  # (w_r) for r = 1..R
    out = choices[int(sel.integers(len(choices)))]
    sch.update(composition=comp, G=G)
    return SolverRun("pg_psmd", out.copy(), ledger, sch, iterates=ws, slices=cur.taken,
                     wall_ms=1e3 * (time.perf_counter() - t0))


SOLVERS = {
    "phased_sgd": phased_sgd,
    "noisy_frank_wolfe": noisy_frank_wolfe,
    "poly_sfw": poly_sfw,
    "noisy_sfw": noisy_sfw,
    "pg_psmd": pg_psmd,
}


def solve(data: Dataset, cfg: SolverConfig) -> SolverRun:
    return SOLVERS[cfg.algorithm](data, cfg)
