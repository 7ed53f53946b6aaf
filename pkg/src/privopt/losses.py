"""Loss models, Moreau smoothing of scalar links and the bisection oracle.

A generalized linear loss (GLL) is f(w, (x, y)) = l_y(<w, x>) with a convex
scalar link l_y. Smoothing the link instead of f keeps the proximal problem
one dimensional, which is what makes the bisection oracle cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import dual_norm

INF = math.inf


# ---------------------------------------------------------------- links
# Each built-in link has a scalar form (used on the per-example hot path) and
# a vectorized numpy form. Subgradients at kinks pick 0 when 0 is in the
# subdifferential, otherwise the right derivative.

def _hinge(u, y):
    return max(0.0, 1.0 - y * u)


def _hinge_d(u, y):
    return -y if y * u < 1.0 else 0.0


def _abs(u, y):
    return abs(u - y)


def _abs_d(u, y):
    t = u - y
    return 1.0 if t > 0 else (-1.0 if t < 0 else 0.0)


def _logistic(u, y):
    z = -y * u
    if z > 0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


def _logistic_d(u, y):
    z = y * u
    # -y * sigmoid(-z), written to avoid overflow
    if z >= 0:
        e = math.exp(-z)
        return -y * e / (1.0 + e)
    return -y / (1.0 + math.exp(z))


def _hinge_v(u, y):
    return np.maximum(0.0, 1.0 - y * u)


def _hinge_dv(u, y):
    return np.where(y * u < 1.0, -y, 0.0)


def _abs_v(u, y):
    return np.abs(u - y)


def _abs_dv(u, y):
    return np.sign(u - y)


def _logistic_v(u, y):
    return np.logaddexp(0.0, -y * u)


def _logistic_dv(u, y):
    # -y * sigmoid(-y u)
    return -y * np.exp(-np.logaddexp(0.0, y * u))


@dataclass(frozen=True)
class Link:
    """Scalar convex link l_y(u) with its Lipschitz bound on labels in use."""

    name: str
    L0: float
    value: Callable
    deriv: Callable
    value_v: Callable
    deriv_v: Callable


HINGE = Link("hinge", 1.0, _hinge, _hinge_d, _hinge_v, _hinge_dv)
ABSOLUTE = Link("absolute", 1.0, _abs, _abs_d, _abs_v, _abs_dv)
LOGISTIC = Link("logistic", 1.0, _logistic, _logistic_d, _logistic_v, _logistic_dv)
LINKS = {"hinge": HINGE, "absolute": ABSOLUTE, "logistic": LOGISTIC}


def custom_link(name: str, value, deriv, L0: float) -> Link:
    """Wrap user scalar functions. ``deriv`` must return a subgradient."""
    vv = np.vectorize(value, otypes=[float])
    dv = np.vectorize(deriv, otypes=[float])
    return Link(name, float(L0), value, deriv, vv, dv)


def get_link(link) -> Link:
    if isinstance(link, Link):
        return link
    try:
        return LINKS[link]
    except KeyError:
        raise ValueError(f"unknown link {link!r}; choose from {sorted(LINKS)}") from None


@dataclass(frozen=True)
class GllSpec:
    """GLL description: link, link Lipschitz constant L0, feature bound R.

    ``p`` is the primal norm; features satisfy ||x||_* <= R in its dual.
    ``domain`` is the closed interval M on which the link lives.
    """

    link: Link
    L0: float
    R: float
    p: float = 2.0
    domain: tuple = (-INF, INF)

    def __post_init__(self):
        if self.L0 <= 0 or self.R <= 0:
            raise ValueError("L0 and R must be positive")
        if not self.domain[0] < self.domain[1]:
            raise ValueError("domain must be a nondegenerate interval")


def make_gll(link="hinge", R: float = 1.0, p: float = 2.0, L0: float | None = None,
             domain=(-INF, INF)) -> GllSpec:
    lk = get_link(link)
    return GllSpec(lk, lk.L0 if L0 is None else float(L0), float(R), float(p), tuple(domain))


# ---------------------------------------------------------------- prox

def _logistic_prox(m, y, beta):
    m = np.asarray(m, dtype=float)
    y = np.broadcast_to(np.asarray(y, dtype=float), m.shape)
    ay = np.abs(y)
    # |l'| <= |y| so the root lies within |y|/beta of m
    lo = m - ay / beta
    hi = m + ay / beta
    u = m.copy()
    for _ in range(200):
        s = np.exp(-np.logaddexp(0.0, y * u))  # sigmoid(-y u)
        g = -y * s + beta * (u - m)
        lo = np.where(g > 0, np.minimum(lo, u), np.where(g < 0, u, lo))
        hi = np.where(g > 0, u, np.where(g < 0, np.maximum(hi, u), hi))
        hpp = y * y * s * (1.0 - s) + beta
        step = g / hpp
        new = u - step
        # fall back to the bracket midpoint if Newton leaves it
        bad = (new <= lo) | (new >= hi)
        new = np.where(bad, 0.5 * (lo + hi), new)
        done = np.abs(new - u) <= 1e-13 * np.maximum(1.0, np.abs(u))
        u = new
        if np.all(done):
            break
    return u


def prox_scalar(link, y, m, beta: float, domain=(-INF, INF)):
    """Exact minimizer over M of l_y(u) + (beta/2)(u - m)^2.

    Vectorized over m and y. Logistic uses a safeguarded Newton solve.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    lk = get_link(link)
    scalar = np.ndim(m) == 0 and np.ndim(y) == 0
    m = np.asarray(m, dtype=float)
    y = np.asarray(y, dtype=float)
    if lk.name == "absolute":
        u = m - np.clip(m - y, -1.0 / beta, 1.0 / beta)
    elif lk.name == "hinge":
        u1 = m + y / beta
        with np.errstate(divide="ignore", invalid="ignore"):
            kink = np.where(y != 0, 1.0 / np.where(y != 0, y, 1.0), m)
        u = np.where(y * m >= 1.0, m, np.where(y * u1 < 1.0, u1, kink))
        u = np.where(y == 0, m, u)
    elif lk.name == "logistic":
        u = _logistic_prox(m, y, beta)
    else:
        # generic links: high-accuracy bisection used as the reference
        u = np.vectorize(lambda mm, yy: _bisect(lk, yy, mm, beta, lk.L0, 200, domain)[0],
                         otypes=[float])(m, y)
    u = np.clip(u, domain[0], domain[1])
    return float(u) if scalar else u


def envelope_value(link, y, m, beta: float, domain=(-INF, INF)):
    """Moreau envelope l_{y,beta}(m) from the exact prox point."""
    lk = get_link(link)
    u = prox_scalar(lk, y, m, beta, domain)
    return lk.value_v(np.asarray(u), np.asarray(y, dtype=float)) + 0.5 * beta * (u - np.asarray(m)) ** 2


# ---------------------------------------------------------------- oracle

def bisection_steps(L0: float, R: float, alpha: float) -> int:
    """T = ceil(log2(16 L0^2 R^2 / alpha^2))."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if alpha >= 4.0 * L0 * R:
        raise ValueError(f"alpha={alpha} >= 4*L0*R={4 * L0 * R}: bisection would take no steps")
    return int(math.ceil(math.log2(16.0 * L0 * L0 * R * R / (alpha * alpha))))


def _bisect(lk: Link, y: float, m: float, beta: float, L0: float, T: int, domain):
    """Bisection on h(u) = l_y(u) + (beta/2)(u - m)^2.

    Returns (u_bar, h(u_bar)). The comparison uses the sign of a subgradient
    of h at the midpoint, so the minimizer always stays in [a, b];
    u_bar is the best midpoint seen.
    """
    a = max(domain[0], m - 2.0 * L0 / beta)
    b = min(domain[1], m + 2.0 * L0 / beta)
    val, der = lk.value, lk.deriv
    best, hbest = a, INF
    for _ in range(T):
        mt = 0.5 * (a + b)
        dm = mt - m
        h = val(mt, y) + 0.5 * beta * dm * dm
        if h < hbest:
            best, hbest = mt, h
        g = der(mt, y) + beta * dm
        if g > 0:
            b = mt
        elif g < 0:
            a = mt
        else:
            a = b = mt
    return best, hbest


def bisection_oracle(w, x, y, spec: GllSpec, beta: float, alpha: float) -> np.ndarray:
    """Approximate gradient of the smoothed GLL at w for one example.

    Output is beta (m - u_bar) x with m = <w, x>; its dual-norm error against
    the exact smoothed gradient is at most alpha when ||x||_* <= R.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    T = bisection_steps(spec.L0, spec.R, alpha)
    x = np.asarray(x, dtype=float)
    m = float(np.dot(w, x))
    ubar, _ = _bisect(spec.link, float(y), m, beta, spec.L0, T, spec.domain)
    return beta * (m - ubar) * x


def bisection_point(m: float, y: float, spec: GllSpec, beta: float, alpha: float):
    """(u_bar, h(u_bar)) for a scalar margin m; exposed for audits."""
    T = bisection_steps(spec.L0, spec.R, alpha)
    return _bisect(spec.link, float(y), float(m), beta, spec.L0, T, spec.domain)


def bisection_prox_batch(m, y, spec: GllSpec, beta: float, alpha: float) -> np.ndarray:
    """Vectorized bisection over arrays of margins; same iterates as _bisect."""
    T = bisection_steps(spec.L0, spec.R, alpha)
    lk = spec.link
    m = np.asarray(m, dtype=float)
    y = np.broadcast_to(np.asarray(y, dtype=float), m.shape)
    a = np.maximum(spec.domain[0], m - 2.0 * spec.L0 / beta)
    b = np.minimum(spec.domain[1], m + 2.0 * spec.L0 / beta)
    best = a.copy()
    hbest = np.full(m.shape, INF)
    for _ in range(T):
        mt = 0.5 * (a + b)
        dm = mt - m
        h = lk.value_v(mt, y) + 0.5 * beta * dm * dm
        take = h < hbest
        best = np.where(take, mt, best)
        hbest = np.where(take, h, hbest)
        g = lk.deriv_v(mt, y) + beta * dm
        b = np.where(g > 0, mt, np.where(g == 0, mt, b))
        a = np.where(g < 0, mt, np.where(g == 0, mt, a))
    return best


def oracle_batch(w, X, y, spec: GllSpec, beta: float, alpha: float) -> np.ndarray:
    """Per-example oracle outputs stacked as rows (n x d)."""
    X = np.asarray(X, dtype=float)
    m = X @ np.asarray(w, dtype=float)
    ubar = bisection_prox_batch(m, y, spec, beta, alpha)
    return (beta * (m - ubar))[:, None] * X


def smoothed_value(w, x, y, spec: GllSpec, beta: float):
    """f_beta(w, (x, y)) = l_y(u*) + (beta/2)(u* - m)^2."""
    m = np.asarray(x, dtype=float) @ np.asarray(w, dtype=float)
    return envelope_value(spec.link, y, m, beta, spec.domain)


def smoothed_grad(w, x, y, spec: GllSpec, beta: float) -> np.ndarray:
    """Exact gradient beta (m - prox(m)) x of the smoothed GLL."""
    x = np.asarray(x, dtype=float)
    m = x @ np.asarray(w, dtype=float)
    u = prox_scalar(spec.link, y, m, beta, spec.domain)
    c = beta * (m - u)
    return c[..., None] * x if np.ndim(c) else c * x


# ---------------------------------------------------------------- loss models

@dataclass(frozen=True)
class Example:
    x: np.ndarray
    y: float


@dataclass
class LossModel:
    """Per-example loss with (sub)gradients, evaluated in batch.

    L0 is the Lipschitz constant of f(., z) in the primal norm l_p, L1 its
    smoothness (if smooth), rho its weak-convexity modulus (if used).
    """

    kind: str
    p: float
    L0: float
    L1: float | None = None
    rho: float | None = None
    gll: GllSpec | None = None
    name: str = ""
    params: dict = field(default_factory=dict)

    # values and gradients for arrays X (n x d), y (n,)
    def values(self, w, X, y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = X @ np.asarray(w, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "gll":
            return self.gll.link.value_v(t, y)
        if self.kind == "smooth_nonconvex":
            r = t - y
            return r * r / (1.0 + r * r)
        if self.kind == "weakly_convex":
            return np.abs(t * t - y)
        raise ValueError(f"unknown loss kind {self.kind!r}")

    def grads(self, w, X, y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = X @ np.asarray(w, dtype=float)
        return self.grads_coef(t, np.asarray(y, dtype=float))[:, None] * X

    def mean_grad(self, w, X, y) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        t = X @ np.asarray(w, dtype=float)
        # contract without building the n x d temporary
        return self.grads_coef(t, np.asarray(y, dtype=float)) @ X / X.shape[0]

    def grads_coef(self, t, y):
        """Scalar factor c with grad f(w, (x, y)) = c * x, for margins t = <x, w>."""
        if self.kind == "gll":
            return self.gll.link.deriv_v(t, y)
        if self.kind == "smooth_nonconvex":
            r = t - y
            q = 1.0 + r * r
            return 2.0 * r / (q * q)
        if self.kind == "weakly_convex":
            return np.sign(t * t - y) * 2.0 * t
        raise ValueError(f"unknown loss kind {self.kind!r}")

    def value(self, w, ex: Example) -> float:
        return float(self.values(w, ex.x[None, :], [ex.y])[0])


def grad(model: LossModel, w, ex: Example) -> np.ndarray:
    """Analytic gradient, or the documented subgradient at kinks."""
    return model.grads(w, np.asarray(ex.x, dtype=float)[None, :], [ex.y])[0]


# phi(t) = t^2/(1+t^2): sup|phi'| = 3 sqrt(3)/8 at t = 1/sqrt(3), sup|phi''| = 2 at 0
PHI_LIP = 3.0 * math.sqrt(3.0) / 8.0
PHI_SMOOTH = 2.0


def gll_model(spec: GllSpec) -> LossModel:
    L1 = spec.R ** 2 / 4.0 if spec.link.name == "logistic" else None
    return LossModel("gll", spec.p, spec.L0 * spec.R, L1=L1, gll=spec, name=spec.link.name)


def smooth_nonconvex_model(R: float, p: float = 1.0) -> LossModel:
    """phi(<x, w> - y) with ||x||_* <= R."""
    return LossModel("smooth_nonconvex", p, PHI_LIP * R, L1=PHI_SMOOTH * R * R,
                     name="smooth_nonconvex", params={"R": R})


def phase_retrieval_model(R: float, w_bound: float, p: float = 2.0) -> LossModel:
    """|<x, w>^2 - y| with ||x||_* <= R on a set with ||w||_p <= w_bound.

    rho = 2 R^2 (weak convexity) and L0 = 2 R^2 w_bound (subgradient bound).
    """
    return LossModel("weakly_convex", p, 2.0 * R * R * w_bound, rho=2.0 * R * R,
                     name="phase_retrieval", params={"R": R, "w_bound": w_bound})


def check_feature_bound(X, spec: GllSpec, tol: float = 1e-12) -> None:
    worst = max((dual_norm(x, spec.p) for x in np.atleast_2d(X)), default=0.0)
    if worst > spec.R * (1 + tol):
        raise ValueError(f"feature dual norm {worst} exceeds R={spec.R}")
