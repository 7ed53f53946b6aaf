"""lp norms, dual exponents, regularity constants and constraint sets.

Natural logarithms are used wherever a log appears in a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

INF = math.inf


def _check_p(p: float) -> float:
    p = float(p)
    if math.isnan(p) or p < 1.0:
        raise ValueError(f"invalid exponent p={p}; need p >= 1")
    return p


def lp_norm(v, p: float) -> float:
    p = _check_p(p)
    a = np.abs(np.asarray(v, dtype=float)).ravel()
    if a.size == 0:
        return 0.0
    if p == INF:
        return float(a.max())
    if p == 1.0:
        return float(a.sum())
    if p == 2.0:
        return float(math.sqrt(np.dot(a, a)))
    top = a.max()
    if top == 0.0:
        return 0.0
    # scale first so large p does not overflow
    return float(top * np.sum((a / top) ** p) ** (1.0 / p))


def dual_exponent(p: float) -> float:
    p = _check_p(p)
    if p == 1.0:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


def dual_norm(v, p: float) -> float:
    """Norm of v in the dual of l_p."""
    return lp_norm(v, dual_exponent(p))


@dataclass(frozen=True)
class RegularityConstants:
    kappa: float
    kappa_tilde: float
    variant: str


VARIANTS = ("noisy_sfw", "weakly_convex")


def regularity_constants(p: float, d: int, variant: str = "noisy_sfw") -> RegularityConstants:
    """kappa and kappa_tilde for l_p^d.

    The ``noisy_sfw`` variant uses kappa = min(1/(p-1), 2 ln d); the
    ``weakly_convex`` variant drops the factor 2.
    """
    p = _check_p(p)
    if p > 2.0:
        raise ValueError(f"regularity constants need 1 <= p <= 2, got {p}")
    if int(d) != d or d < 2:
        raise ValueError(f"need integer d >= 2, got {d}")
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    logd = math.log(d)
    inv = INF if p == 1.0 else 1.0 / (p - 1.0)
    cap = 2.0 * logd if variant == "noisy_sfw" else logd
    kappa = min(inv, cap)
    kappa_tilde = 1.0 + (logd if p < 2.0 else 0.0)
    return RegularityConstants(kappa, kappa_tilde, variant)


@dataclass(frozen=True, eq=False)
class ConstraintSet:
    """Feasible set: an l_p ball, an explicit-vertex polytope, or all of R^d.

    Build instances with :func:`lp_ball`, :func:`polytope`, :func:`l1_ball`
    or :func:`unconstrained`.
    """

    kind: str
    dim: int
    p: float = 2.0
    center: np.ndarray | None = None
    radius: float = 0.0
    vertices: np.ndarray | None = None
    diameter: float = INF
    # set by l1_ball(): lets membership use the norm instead of an LP
    ball_of: tuple | None = field(default=None)

    @property
    def bounded(self) -> bool:
        return self.kind != "unconstrained"

    @property
    def n_vertices(self) -> int:
        return 0 if self.vertices is None else len(self.vertices)

    def default_point(self) -> np.ndarray:
        if self.kind == "polytope":
            return self.vertices[0].copy()
        if self.kind == "lp_ball":
            return self.center.copy()
        return np.zeros(self.dim)

    def contains(self, w, tol: float = 1e-9) -> bool:
        w = np.asarray(w, dtype=float)
        if self.kind == "unconstrained":
            return bool(np.all(np.isfinite(w)))
        if self.kind == "lp_ball":
            r = lp_norm(w - self.center, self.p)
            return r <= self.radius * (1.0 + tol) + tol
        if self.ball_of is not None:
            c, r = self.ball_of
            return lp_norm(w - c, 1.0) <= r * (1.0 + tol) + tol
        return _in_hull(w, self.vertices, tol)


def lp_ball(center, radius: float, p: float = 2.0) -> ConstraintSet:
    p = _check_p(p)
    if np.isscalar(center):
        raise ValueError("center must be a vector; use np.zeros(d) for the origin")
    center = np.asarray(center, dtype=float).copy()
    radius = float(radius)
    if radius <= 0:
        raise ValueError("radius must be positive")
    center.setflags(write=False)
    return ConstraintSet("lp_ball", center.size, p=p, center=center, radius=radius,
                         diameter=2.0 * radius)


def polytope(vertices, p: float = 1.0) -> ConstraintSet:
    """Convex hull of an explicit vertex list; diameter measured in l_p."""
    p = _check_p(p)
    V = np.atleast_2d(np.asarray(vertices, dtype=float)).copy()
    if V.shape[0] < 1 or V.shape[1] < 1:
        raise ValueError("polytope needs at least one vertex")
    V.setflags(write=False)
    return ConstraintSet("polytope", V.shape[1], p=p, vertices=V,
                         diameter=_max_pairwise(V, p))


def l1_ball(d: int, radius: float = 1.0, center=None) -> ConstraintSet:
    """The l1 ball as a polytope with 2d vertices (+r e_i, then -r e_i)."""
    c = np.zeros(d) if center is None else np.asarray(center, dtype=float)
    eye = float(radius) * np.eye(d)
    V = np.vstack([c + eye, c - eye])
    V.setflags(write=False)
    c = c.copy()
    c.setflags(write=False)
    return ConstraintSet("polytope", d, p=1.0, vertices=V, diameter=2.0 * float(radius),
                         ball_of=(c, float(radius)))


def unconstrained(d: int) -> ConstraintSet:
    return ConstraintSet("unconstrained", int(d))


def _max_pairwise(V: np.ndarray, p: float) -> float:
    best = 0.0
    # row blocks keep memory at O(block * J * d)
    block = max(1, 2_000_000 // max(1, V.shape[0] * V.shape[1]))
    for i in range(0, len(V), block):
        diff = np.abs(V[i:i + block, None, :] - V[None, :, :])
        if p == INF:
            m = diff.max(axis=2)
        elif p == 1.0:
            m = diff.sum(axis=2)
        else:
            m = np.sum(diff ** p, axis=2) ** (1.0 / p)
        best = max(best, float(m.max()))
    return best


def _in_hull(w: np.ndarray, V: np.ndarray, tol: float) -> bool:
    from scipy.optimize import linprog

    J = len(V)
    A_eq = np.vstack([V.T, np.ones((1, J))])
    b_eq = np.concatenate([w, [1.0]])
    # minimize slack-free feasibility; tolerance handled by a relaxed check
    res = linprog(np.zeros(J), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 0:
        return True
    # retry with a small box around w
    A_ub = np.vstack([V.T, -V.T])
    b_ub = np.concatenate([w + tol, -(w - tol)])
    res = linprog(np.zeros(J), A_ub=A_ub, b_ub=b_ub, A_eq=np.ones((1, J)), b_eq=[1.0],
                  bounds=(0, None), method="highs")
    return res.status == 0


def linear_minimize(c, W: ConstraintSet) -> np.ndarray:
    """argmin over W of <c, v>.

    Polytopes return the minimizing vertex, lowest index on ties. Balls use
    the closed form; a zero direction returns the center.
    """
    c = np.asarray(c, dtype=float)
    if W.kind == "unconstrained":
        raise ValueError("linear minimization needs a bounded constraint set")
    if W.kind == "polytope":
        return W.vertices[int(np.argmin(W.vertices @ c))].copy()
    top = float(np.max(np.abs(c))) if c.size else 0.0
    if top == 0.0:
        return W.center.copy()
    p, r = W.p, W.radius
    if p == 1.0:
        j = int(np.argmax(np.abs(c)))
        v = W.center.copy()
        v[j] -= r * math.copysign(1.0, c[j])
        return v
    if p == INF:
        return W.center - r * np.sign(c)
    q = dual_exponent(p)
    u = c / top
    a = np.abs(u) ** (q - 1.0)
    nrm = lp_norm(u, q)
    return W.center - r * np.sign(u) * a / nrm ** (q - 1.0)


def project(v, W: ConstraintSet) -> np.ndarray:
    """Euclidean projection onto an l2 ball; identity when unconstrained."""
    v = np.asarray(v, dtype=float)
    if W.kind == "unconstrained":
        return v.copy()
    if W.kind != "lp_ball" or W.p != 2.0:
        raise ValueError(f"projection is only supported on l2 balls, not {W.kind} (p={W.p})")
    diff = v - W.center
    nrm = float(np.linalg.norm(diff))
    if nrm <= W.radius:
        return v.copy()
    return W.center + diff * (W.radius / nrm)


def lp_sq_grad(v, p: float) -> np.ndarray:
    """Gradient of (1/2)||v||_p^2 for 1 < p < inf."""
    v = np.asarray(v, dtype=float)
    nrm = lp_norm(v, p)
    if nrm == 0.0:
        return np.zeros_like(v)
    return np.sign(v) * np.abs(v / nrm) ** (p - 1.0) * nrm


def lp_sq_grad_inverse(g, p: float) -> np.ndarray:
    """Inverse of the map v -> grad (1/2)||v||_p^2, i.e. the dual map with q."""
    return lp_sq_grad(g, dual_exponent(p))


def _soft(theta: np.ndarray, mu: float) -> np.ndarray:
    return np.sign(theta) * np.maximum(np.abs(theta) - mu, 0.0)


def mirror_step(w, g, step: float, W: ConstraintSet, pbar: float) -> np.ndarray:
    """One mirror-descent step with mirror map (1/2)||v - c||_pbar^2.

    c is the centre of W (origin if W has none). The Bregman projection is
    exact for l_pbar balls (radial), l1 balls (soft-threshold plus a scalar
    search) and R^d.
    """
    if not 1.0 < pbar <= 2.0:
        raise ValueError(f"mirror map needs 1 < pbar <= 2, got {pbar}")
    w = np.asarray(w, dtype=float)
    if W.kind == "lp_ball":
        c, r, p = W.center, W.radius, W.p
    elif W.ball_of is not None:
        (c, r), p = W.ball_of, 1.0
    elif W.kind == "unconstrained":
        c, r, p = np.zeros(W.dim), INF, pbar
    else:
        raise ValueError("mirror descent needs an l_p ball, an l1 ball or R^d")
    theta = lp_sq_grad(w - c, pbar) - step * np.asarray(g, dtype=float)
    u = lp_sq_grad_inverse(theta, pbar)
    if r == INF:
        return c + u
    if p == pbar:
        nrm = lp_norm(u, pbar)
        return c + (u if nrm <= r else u * (r / nrm))
    if p != 1.0:
        raise ValueError(f"Bregman projection onto an l_{p} ball with pbar={pbar} is not supported")
    if lp_norm(u, 1.0) <= r:
        return c + u
    lo, hi = 0.0, float(np.max(np.abs(theta)))
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if lp_norm(lp_sq_grad_inverse(_soft(theta, mid), pbar), 1.0) > r:
            lo = mid
        else:
            hi = mid
    u = lp_sq_grad_inverse(_soft(theta, hi), pbar)
    # hi side is feasible; trim rounding so the point is inside the ball
    s = lp_norm(u, 1.0)
    if s > r:
        u = u * (r / s)
    return c + u
