"""Noise mechanisms, advanced composition and an append-only privacy ledger."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

MECHANISMS = ("laplace", "gaussian", "noisy_max")


class BudgetExhausted(RuntimeError):
    """Raised before a mechanism fires if it would exceed the run's target."""


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise ValueError(f"epsilon must be finite and >= 0, got {self.epsilon}")
        if not 0 <= self.delta < 1:
            raise ValueError(f"delta must lie in [0, 1), got {self.delta}")


def target_budget(epsilon: float, delta: float) -> PrivacyBudget:
    """Validated run target: epsilon > 0, 0 <= delta < 1."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    return PrivacyBudget(float(epsilon), float(delta))


def advanced_composition(eps_step: float, delta_step: float, k: int,
                         delta_prime: float) -> PrivacyBudget:
    """k-fold adaptive composition of (eps, delta)-DP mechanisms.

    Returns (eps sqrt(2k ln(1/delta')) + k eps (e^eps - 1), k delta + delta').
    """
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    if not eps_step > 0:
        raise ValueError(f"eps_step must be positive, got {eps_step}")
    if delta_step < 0:
        raise ValueError(f"delta_step must be >= 0, got {delta_step}")
    if not 0 < delta_prime < 1:
        raise ValueError(f"delta_prime must lie in (0, 1), got {delta_prime}")
    e = eps_step * math.sqrt(2.0 * k * math.log(1.0 / delta_prime)) + k * eps_step * math.expm1(eps_step)
    return PrivacyBudget(e, k * delta_step + delta_prime)


# ---------------------------------------------------------------- samplers

def laplace_sample(scale: float, rng: np.random.Generator, size=None):
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    return rng.laplace(0.0, scale, size)


def gaussian_sample(sigma: float, rng: np.random.Generator, size=None):
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return sigma * rng.standard_normal(size)


def report_noisy_argmin(scores, scale: float, rng: np.random.Generator | None) -> int:
    """argmin_j scores_j + Lap(scale)_j; scale 0 is the exact argmin (lowest index)."""
    s = np.asarray(scores, dtype=float).ravel()
    if s.size == 0:
        raise ValueError("scores must be nonempty")
    if scale < 0:
        raise ValueError(f"scale must be >= 0, got {scale}")
    if scale == 0:
        return int(np.argmin(s))
    return int(np.argmin(s + laplace_sample(scale, rng, s.size)))


# ---------------------------------------------------------------- ledger

@dataclass(frozen=True)
class LedgerEntry:
    """One mechanism invocation.

    Entries sharing ``group`` compose sequentially on the group's data.
    Different groups must touch disjoint half-open index ranges ``slice``
    of the master-shuffled dataset and compose in parallel.
    """

    mechanism: str
    epsilon: float
    delta: float
    group: str
    slice: tuple
    steps: int = 1
    note: str = ""

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        PrivacyBudget(self.epsilon, self.delta)
        lo, hi = self.slice
        if not 0 <= lo <= hi:
            raise ValueError(f"bad slice {self.slice}")


def _overlap(a, b) -> bool:
    return max(a[0], b[0]) < min(a[1], b[1])


def group_total(entries, delta_prime: float) -> PrivacyBudget:
    """Budget of one sequential group.

    A single entry is taken at face value. For k >= 2 entries the smaller
    epsilon of basic composition (sums) and advanced composition at the
    largest per-step (eps, delta) is used; both are valid bounds.
    """
    entries = list(entries)
    if not entries:
        return PrivacyBudget(0.0, 0.0)
    k = sum(e.steps for e in entries)
    if k == 1:
        return PrivacyBudget(entries[0].epsilon, entries[0].delta)
    basic = PrivacyBudget(sum(e.epsilon * e.steps for e in entries),
                          min(0.999999999, sum(e.delta * e.steps for e in entries)))
    emax = max(e.epsilon for e in entries)
    if emax == 0:
        return basic
    adv = advanced_composition(emax, max(e.delta for e in entries), k, delta_prime)
    return adv if adv.epsilon < basic.epsilon else basic


@dataclass
class PrivacyLedger:
    """Append-only record of mechanism invocations for one solver run."""

    target: PrivacyBudget | None = None
    delta_prime: float | None = None
    entries: list = field(default_factory=list)

    def _delta_prime(self, delta_prime):
        if delta_prime is not None:
            return delta_prime
        if self.delta_prime is not None:
            return self.delta_prime
        if self.target is not None and self.target.delta > 0:
            return self.target.delta
        return 1e-9

    def groups(self) -> dict:
        out = {}
        for e in self.entries:
            out.setdefault(e.group, []).append(e)
        return out

    def check_disjoint(self, entries=None) -> None:
        groups = self.groups() if entries is None else _groups_of(entries)
        spans = {g: (min(e.slice[0] for e in es), max(e.slice[1] for e in es)) for g, es in groups.items()}
        names = sorted(spans)
        for i, a in enumerate(names):
            for b in names[i + 1:]:
                if _overlap(spans[a], spans[b]):
                    raise AssertionError(f"groups {a!r} {spans[a]} and {b!r} {spans[b]} overlap")

    def total(self, delta_prime: float | None = None, entries=None) -> PrivacyBudget:
        """Parallel composition: max over groups of each group's sequential total."""
        source = self.entries if entries is None else entries
        if not source:
            return PrivacyBudget(0.0, 0.0)
        dp = self._delta_prime(delta_prime)
        totals = [group_total(es, dp) for es in _groups_of(source).values()]
        return PrivacyBudget(max(t.epsilon for t in totals), max(t.delta for t in totals))

    def record(self, entry: LedgerEntry) -> None:
        """Append ``entry``; raises BudgetExhausted (and records nothing) if the
        new total would exceed the target."""
        groups = self.groups()
        mine = groups.get(entry.group, []) + [entry]
        lo = min(e.slice[0] for e in mine)
        hi = max(e.slice[1] for e in mine)
        for g, es in groups.items():
            if g == entry.group:
                continue
            span = (min(e.slice[0] for e in es), max(e.slice[1] for e in es))
            if _overlap((lo, hi), span):
                raise AssertionError(f"groups {entry.group!r} {(lo, hi)} and {g!r} {span} overlap")
        if self.target is not None:
            t = group_total(mine, self._delta_prime(None))
            tol = 1e-12
            if t.epsilon > self.target.epsilon * (1 + tol) or t.delta > self.target.delta * (1 + tol) + tol:
                raise BudgetExhausted(
                    f"{entry.mechanism} in group {entry.group!r} would bring the total to "
                    f"({t.epsilon:.6g}, {t.delta:.3g}) over target "
                    f"({self.target.epsilon:.6g}, {self.target.delta:.3g})")
        self.entries.append(entry)

    def replace_one_total(self) -> PrivacyBudget:
        """Total if one changed record moves a sum by two per-record bounds.

        Entries are calibrated under the per-record convention; doubling every
        sensitivity doubles each entry's epsilon for both mechanisms.
        """
        twin = PrivacyLedger(delta_prime=self._delta_prime(None))
        for e in self.entries:
            twin.record(replace(e, epsilon=2.0 * e.epsilon))
        return twin.total()

    def audit(self) -> dict:
        t = self.total()
        return {
            "target": None if self.target is None else asdict(self.target),
            "delta_prime": self._delta_prime(None),
            "total": asdict(t),
            "total_replace_one": asdict(self.replace_one_total()),
            "entries": [
                {"mechanism": e.mechanism, "group": e.group, "epsilon": e.epsilon,
                 "delta": e.delta, "steps": e.steps, "slice": list(e.slice), "note": e.note}
                for e in self.entries
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.audit(), sort_keys=True)


def _groups_of(entries) -> dict:
    out = {}
    for e in entries:
        out.setdefault(e.group, []).append(e)
    return out


def ledger_record(ledger: PrivacyLedger, entry: LedgerEntry) -> None:
    ledger.record(entry)


def ledger_total(ledger: PrivacyLedger, delta_prime: float | None = None) -> PrivacyBudget:
    return ledger.total(delta_prime)


def gaussian_epsilon(sensitivity: float, sigma: float, delta: float) -> float:
    """Classical Gaussian-mechanism epsilon, sqrt(2 ln(1.25/delta)) Delta / sigma.

    Valid as an (eps, delta) guarantee for eps <= 1.
    """
    return math.sqrt(2.0 * math.log(1.25 / delta)) * sensitivity / sigma


def split_budget(epsilon: float, delta: float, k: int) -> tuple:
    """Largest per-step (eps0, delta0) whose k-fold composition stays within
    (epsilon, delta): the better of the basic split and advanced composition
    with delta' = delta/2."""
    if k == 1:
        return float(epsilon), float(delta)
    dp = delta / 2.0
    d0 = delta / (2.0 * k)

    def over(e):
        try:
            return advanced_composition(e, d0, k, dp).epsilon > epsilon
        except OverflowError:
            return True

    lo, hi = 0.0, float(epsilon)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid > 0 and over(mid):
            hi = mid
        else:
            lo = mid
    if epsilon / k >= lo:
        return epsilon / k, delta / k
    return lo, d0
