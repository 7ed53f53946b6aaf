"""Synthetic tasks with planted structure, dataset materialization and a
plain-text dataset format."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import losses
from .geometry import dual_exponent, lp_norm

FAMILIES = ("hinge_gll", "absolute_gll", "logistic_gll", "smooth_nonconvex", "phase_retrieval")
LAWS = ("sphere", "box", "sparse")

# substream ids; every random draw in the package hangs off one of these
STREAM_PLANT = 1
STREAM_TRAIN = 2
STREAM_EVAL = 3
STREAM_SOLVER = 4
STREAM_SELECT = 5


def substream(seed: int, *ids) -> np.random.Generator:
    """Independent generator for (seed, ids...), stable across runs and machines."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(i) for i in ids))))


@dataclass(frozen=True)
class TaskSpec:
    """A data distribution.

    ``p`` is the primal geometry and ``radius`` the radius of the feasible
    ball the planted parameter sits on. ``R`` bounds ||x||_* in the dual of
    l_p. ``margin`` > 0 (hinge only) pushes every feature so that
    |<x, w*>| >= margin, which makes w* a zero-risk minimizer.
    ``task_seed`` fixes w*, so training and evaluation draws share it.
    """

    family: str
    d: int
    R: float = 1.0
    p: float = 2.0
    radius: float = 1.0
    law: str = ""
    noise: float = 0.0
    margin: float = 0.0
    task_seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; choose from {FAMILIES}")
        if int(self.d) != self.d or self.d < 1:
            raise ValueError("d must be a positive integer")
        if self.R <= 0 or self.radius <= 0:
            raise ValueError("R and radius must be positive")
        if self.law and self.law not in LAWS:
            raise ValueError(f"unknown feature law {self.law!r}")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if self.margin > 0:
            if self.family != "hinge_gll":
                raise ValueError("margin only applies to hinge_gll")
            if self.R * self.radius <= self.margin:
                raise ValueError("margin needs R * radius > margin")

    @property
    def feature_law(self) -> str:
        if self.law:
            return self.law
        return "box" if self.p == 1.0 else "sphere"

    def planted(self) -> np.ndarray:
        """w* on the boundary of the radius-``radius`` l_p ball."""
        rng = substream(self.task_seed, STREAM_PLANT)
        g = rng.standard_normal(self.d)
        return self.radius * g / lp_norm(g, self.p)

    def loss(self) -> losses.LossModel:
        link = {"hinge_gll": "hinge", "absolute_gll": "absolute", "logistic_gll": "logistic"}
        if self.family in link:
            return losses.gll_model(losses.make_gll(link[self.family], R=self.R, p=self.p))
        if self.family == "smooth_nonconvex":
            return losses.smooth_nonconvex_model(self.R, self.p)
        return losses.phase_retrieval_model(self.R, self.radius, self.p)


@dataclass(frozen=True, eq=False)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: TaskSpec
    seed: int
    stream: tuple = field(default=())

    def __len__(self) -> int:
        return len(self.y)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Dataset) and self.task == other.task and self.seed == other.seed
                and np.array_equal(self.X, other.X) and np.array_equal(self.y, other.y))

    def example(self, i: int) -> losses.Example:
        return losses.Example(self.X[i], float(self.y[i]))

    def take(self, idx) -> "Dataset":
        return Dataset(_frozen(self.X[idx]), _frozen(self.y[idx]), self.task, self.seed, self.stream)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


def _features(task: TaskSpec, n: int, rng) -> np.ndarray:
    d, R = task.d, task.R
    law = task.feature_law
    if law == "box":
        if task.p != 1.0:
            # ||x||_q <= R needs a radius shrink by d^{1/q}
            q = dual_exponent(task.p)
            R = R / d ** (1.0 / q)
        return rng.uniform(-R, R, size=(n, d))
    if law == "sparse":
        X = np.zeros((n, d))
        j = rng.integers(0, d, size=n)
        X[np.arange(n), j] = R * rng.choice([-1.0, 1.0], size=n)
        return X
    # the l2 sphere of radius R sits inside every l_q ball of radius R, q >= 2
    g = rng.standard_normal((n, d))
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    nrm[nrm == 0] = 1.0
    return R * g / nrm


def _aligned(task: TaskSpec, w: np.ndarray) -> np.ndarray:
    """Feature a with ||a||_* <= R maximizing <a, w> within the feature law's support."""
    law = task.feature_law
    R = task.R
    if law == "box":
        if task.p != 1.0:
            R = R / task.d ** (1.0 / dual_exponent(task.p))
        return R * np.sign(w)
    if law == "sparse":
        j = int(np.argmax(np.abs(w)))
        a = np.zeros_like(w)
        a[j] = R * math.copysign(1.0, w[j])
        return a
    return R * w / lp_norm(w, 2.0)


def sample_dataset(task: TaskSpec, n: int, seed: int, stream: int = STREAM_TRAIN, *ids) -> Dataset:
    """n i.i.d. draws from ``task``; deterministic in (seed, stream, ids)."""
    if int(n) != n or n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n = int(n)
    rng = substream(seed, stream, *ids)
    w = task.planted()
    X = _features(task, n, rng)
    if task.margin > 0:
        a = _aligned(task, w)
        top = float(a @ w)
        if top <= task.margin:
            raise ValueError("feature law cannot reach the requested margin")
        m = X @ w
        s = np.where(m >= 0, 1.0, -1.0)
        short = np.abs(m) < task.margin
        lam = np.where(short, (task.margin - np.abs(m)) / (top - np.abs(m)), 0.0)
        X = (1.0 - lam)[:, None] * X + lam[:, None] * (s[:, None] * a[None, :])
    m = X @ w
    f = task.family
    if f == "hinge_gll":
        y = np.where(m >= 0, 1.0, -1.0)
        if task.noise > 0:
            flip = rng.random(n) < task.noise
            y = np.where(flip, -y, y)
    elif f == "logistic_gll":
        prob = 1.0 / (1.0 + np.exp(-m))
        y = np.where(rng.random(n) < prob, 1.0, -1.0)
    elif f in ("absolute_gll", "smooth_nonconvex"):
        y = m + task.noise * rng.standard_normal(n)
    else:
        y = m * m + task.noise * rng.standard_normal(n)
    return Dataset(_frozen(X), _frozen(y), task, int(seed), (stream, *ids))


def fresh_eval_stream(task: TaskSpec, m: int, seed: int, *ids) -> Dataset:
    """Held-out draws on the evaluation substream (never the training one)."""
    return sample_dataset(task, m, seed, STREAM_EVAL, *ids)


# ---------------------------------------------------------------- persistence

class DatasetFormatError(ValueError):
    def __init__(self, line: int, column: int, msg: str):
        super().__init__(f"line {line}, column {column}: {msg}")
        self.line, self.column = line, column


_HEADER = "#privopt-dataset"
_TASK_KEYS = [f.name for f in fields(TaskSpec)]


def save_dataset(ds: Dataset, path) -> None:
    t = ds.task
    head = [_HEADER, f"family={t.family}", f"d={t.d}", f"n={len(ds)}", f"R={t.R!r}", f"seed={ds.seed}"]
    head += [f"{k}={getattr(t, k)!r}" for k in _TASK_KEYS if k not in ("family", "d", "R")]
    lines = [" ".join(head)]
    for x, y in zip(ds.X, ds.y):
        lines.append(" ".join(repr(float(v)) for v in x) + " " + repr(float(y)))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_value(key, raw, line, col):
    try:
        if key in ("family", "law"):
            v = raw.strip("'\"")
            return v
        if key in ("d", "n", "seed", "task_seed"):
            return int(raw)
        return float(raw)
    except ValueError:
        raise DatasetFormatError(line, col, f"bad value {raw!r} for {key}") from None


def load_dataset(path) -> Dataset:
    with open(path, encoding="ascii") as fh:
        text = fh.read()
    rows = text.split("\n")
    if rows and rows[-1] == "":
        rows.pop()
    if not rows:
        raise DatasetFormatError(1, 1, "empty file, missing header")
    head = rows[0]
    if not head.startswith(_HEADER):
        raise DatasetFormatError(1, 1, f"header must start with {_HEADER}")
    meta = {}
    col = len(_HEADER) + 2
    for tok in head[len(_HEADER):].split(" "):
        if not tok:
            col += 1
            continue
        if "=" not in tok:
            raise DatasetFormatError(1, col, f"expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        meta[k] = _parse_value(k, v, 1, col + len(k) + 1)
        col += len(tok) + 1
    for k in ("family", "d", "n", "R", "seed"):
        if k not in meta:
            raise DatasetFormatError(1, 1, f"header is missing {k}")
    n, d = meta["n"], meta["d"]
    if len(rows) == 1 or n == 0:
        raise DatasetFormatError(2, 1, "dataset has no examples")
    X = np.empty((n, d))
    y = np.empty(n)
    for i in range(n):
        ln = i + 2
        if ln - 1 >= len(rows):
            raise DatasetFormatError(ln, 1, f"truncated: expected {n} examples, found {i}")
        row = rows[ln - 1]
        toks = row.split(" ")
        col = 1
        vals = []
        for tok in toks:
            try:
                vals.append(float(tok))
            except ValueError:
                raise DatasetFormatError(ln, col, f"not a number: {tok!r}") from None
            col += len(tok) + 1
        if len(vals) != d + 1:
            raise DatasetFormatError(ln, len(row) + 1, f"expected {d + 1} values, found {len(vals)}")
        X[i] = vals[:d]
        y[i] = vals[d]
    if len(rows) > n + 1:
        raise DatasetFormatError(n + 2, 1, "extra lines after the declared examples")
    keys = {k: meta[k] for k in _TASK_KEYS if k in meta}
    task = TaskSpec(**keys)
    return Dataset(_frozen(X), _frozen(y), task, meta["seed"], ())


def with_task(task: TaskSpec, **changes) -> TaskSpec:
    return replace(task, **changes)
