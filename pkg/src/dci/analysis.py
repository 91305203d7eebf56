"""Closed-form cost, call-count and information-theoretic calculators.

Conventions: entropy and the error bound use natural logs unless
``log_base="base2"``; capacity is always in bits. The per-call cost model
is ``L(k) = c0 + c2 * k**2``.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

LOG_BASES = ("natural", "base2")

# Default cost model. A positive fixed per-call cost is what makes the
# total cost U-shaped in k for large n.
DEFAULT_C0 = 2500.0
DEFAULT_C2 = 1.0


def _log(x: float, base: str) -> float:
    if base == "natural":
        return math.log(x)
    if base == "base2":
        return math.log2(x)
    raise ValueError(f"log_base must be one of {LOG_BASES}")


@dataclass(frozen=True)
class TheoryParams:
    k_labels: int
    beta: float = 1.0
    i_max: float = 0.0
    w_bandwidth: float = 1.0
    log_base: str = "natural"

    def __post_init__(self) -> None:
        if self.k_labels < 2:
            raise ValueError("k_labels must be >= 2")
        if self.beta < 1:
            raise ValueError("beta must be >= 1")
        if self.i_max < 0:
            raise ValueError("i_max must be >= 0")
        if self.w_bandwidth <= 0:
            raise ValueError("w_bandwidth must be > 0")
        if self.log_base not in LOG_BASES:
            raise ValueError(f"log_base must be one of {LOG_BASES}")


def entropy_demand(p: TheoryParams) -> float:
    """Lower bound on label entropy when no class exceeds beta/K probability."""
    return _log(p.k_labels, p.log_base) - _log(p.beta, p.log_base)


def attention_snr(k_group: int) -> Fraction:
    """Expected signal-to-noise ratio of one candidate among ``k_group``: 1/(k-1).

    Returned as an exact fraction.
    """
    if k_group < 2:
        raise ValueError("k_group must be >= 2")
    return Fraction(1, k_group - 1)


def capacity_bound(w: float, k_group: int) -> float:
    """Bits: w * log2(1 + 1/(k-1))."""
    if k_group < 2:
        raise ValueError("k_group must be >= 2")
    if w <= 0:
        raise ValueError("w must be > 0")
    return w * math.log2(k_group / (k_group - 1))


def fano_error_bound(p: TheoryParams) -> float:
    """max(0, 1 - (I_max + log 2beta) / log K), clipped to a probability."""
    numer = p.i_max + _log(2 * p.beta, p.log_base)
    return max(0.0, 1.0 - numer / _log(p.k_labels, p.log_base))


@dataclass(frozen=True)
class DilutionStats:
    k: int
    trials: int
    mean: float
    variance: float

    @property
    def mean_times_k(self) -> float:
        return self.mean * self.k


def dilution_monte_carlo(k_group: int, trials: int, seed: int = 0,
                         chunk: int = 2_000_000) -> DilutionStats:
    """Empirical softmax weight of index 0 among ``k_group`` random logits.

    Logits are i.i.d. Uniform[0, 1], so ``exp(logit)`` has finite mean and
    variance. Work is chunked to bound memory for large ``k_group``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if k_group < 1:
        raise ValueError("k_group must be >= 1")
    rng = np.random.default_rng(seed)
    rows_per_chunk = max(1, chunk // k_group)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < trials:
        rows = min(rows_per_chunk, trials - done)
        z = np.exp(rng.random((rows, k_group)))
        w = z[:, 0] / z.sum(axis=1)
        total += float(w.sum())
        total_sq += float(np.square(w).sum())
        done += rows
    mean = total / trials
    var = max(0.0, total_sq / trials - mean * mean)
    return DilutionStats(k_group, trials, mean, var)


# -- complexity ------------------------------------------------------------


def ceil_log(n: int, k: int) -> int:
    """Smallest m >= 0 with k**m >= n, in exact integer arithmetic."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if k < 2:
        raise ValueError("k must be >= 2")
    m, power = 0, 1
    while power < n:
        power *= k
        m += 1
    return m


def log_k(n: float, k: float) -> float:
    """log base k of n; exact when n is an integer power of k."""
    if isinstance(n, int) and isinstance(k, int) and n >= 1 and k >= 2:
        m = ceil_log(n, k)
        if k**m == n:
            return float(m)
    return math.log(n) / math.log(k)


@dataclass(frozen=True)
class CostParams:
    n: int
    k: int
    c0: float = 0.0
    c2: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if self.c0 < 0 or self.c2 < 0:
            raise ValueError("cost coefficients must be >= 0")

    def latency(self, size: int) -> float:
        return self.c0 + self.c2 * size * size


def cost_recurrence(p: CostParams) -> float:
    """Iterate T(n) = ceil(n/k) L(k) + T(ceil(n/k)) down to T(n <= k) = L(n)."""
    n, total = p.n, 0.0
    lk = p.latency(p.k)
    while n > p.k:
        groups = -(-n // p.k)
        total += groups * lk
        n = groups
    return total + p.latency(n)


def cost_closed_form(p: CostParams) -> float:
    """(n/k + log_k n - 1) * L(k); for k >= n a single flat call L(n)."""
    if p.k >= p.n:
        return p.latency(p.n)
    return (p.n / p.k + log_k(p.n, p.k) - 1) * p.latency(p.k)


def cost_parallel_ideal(p: CostParams) -> float:
    """Fully parallel, zero-overhead variant: log_k n * L(k)."""
    if p.k >= p.n:
        return p.latency(p.n)
    return log_k(p.n, p.k) * p.latency(p.k)


def flat_cost(n: int, c0: float = 0.0, c2: float = 1.0) -> float:
    return c0 + c2 * n * n


def worst_case_calls(n: int, k: int) -> float:
    """n/(k-1) + ceil(log_k n); a single call when n <= k."""
    _check_nk(n, k)
    if n <= k:
        return 1.0
    return n / (k - 1) + ceil_log(n, k)


def best_case_calls(n: int, k: int) -> int:
    _check_nk(n, k)
    return -(-n // k)


def exact_all_survive_calls(n: int, k: int) -> int:
    """Calls when every group returns a candidate: sum of layered ceilings."""
    _check_nk(n, k)
    calls = 0
    while n > k:
        n = -(-n // k)
        calls += n
    return calls + 1


def _check_nk(n: int, k: int) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if k < 2:
        raise ValueError("k must be >= 2")


def advantage_region(n: int, k_range: Iterable[int], c0: float = DEFAULT_C0,
                     c2: float = DEFAULT_C2) -> list[int]:
    """Group sizes whose modelled DCI cost is strictly below flat inference."""
    flat = flat_cost(n, c0, c2)
    return [k for k in k_range
            if cost_closed_form(CostParams(n, k, c0, c2)) < flat]


# -- reports ---------------------------------------------------------------


@dataclass(frozen=True)
class CostRow:
    n: int
    k: int
    cost: float
    flat_cost: float
    in_region: bool


@dataclass
class CostReport:
    formula: str
    params: dict
    rows: list[CostRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"formula": self.formula, "params": self.params,
                "rows": [asdict(r) for r in self.rows]}


COST_FORMULAS = {
    "closed_form": cost_closed_form,
    "recurrence": cost_recurrence,
    "parallel": cost_parallel_ideal,
}


def cost_grid(n_values: Iterable[int], k_values: Iterable[int], c0: float = DEFAULT_C0,
              c2: float = DEFAULT_C2, formula: str = "closed_form") -> CostReport:
    if formula not in COST_FORMULAS:
        raise ValueError(f"formula must be one of {sorted(COST_FORMULAS)}")
    fn = COST_FORMULAS[formula]
    k_values = list(k_values)
    report = CostReport(formula, {"c0": c0, "c2": c2})
    for n in n_values:
        flat = flat_cost(n, c0, c2)
        for k in k_values:
            cost = fn(CostParams(n, k, c0, c2))
            if not math.isfinite(cost):
                raise ArithmeticError(f"non-finite cost at n={n}, k={k}")
            report.rows.append(CostRow(n, k, cost, flat, cost < flat))
    return report


@dataclass
class BoundsReport:
    params: dict
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"params": self.params, "rows": self.rows}


def bounds_grid(k_values: Iterable[int], beta: float = 1.0, i_max: float = 0.0,
                w_bandwidth: float = 1.0, log_base: str = "natural") -> BoundsReport:
    report = BoundsReport({"beta": beta, "i_max": i_max, "w_bandwidth": w_bandwidth,
                           "log_base": log_base})
    for k in k_values:
        p = TheoryParams(k, beta, i_max, w_bandwidth, log_base)
        report.rows.append({
            "k": k,
            "entropy_demand": entropy_demand(p),
            "attention_snr": float(attention_snr(k)),
            "capacity_bits": capacity_bound(w_bandwidth, k),
            "fano_error_bound": fano_error_bound(p),
        })
    return report
