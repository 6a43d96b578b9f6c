"""Exact fairness evaluation.

The worst-case proportional-fairness level of an allocation x is the
value of a linear program over alternatives w whose only constraints are
per-round caps and the overall budget.  That LP is a fractional
knapsack: each round contributes at most one good (its best coefficient)
and the budget is spread over rounds in decreasing coefficient order, so
the maximum is computed exactly with a sort.  The same oracle doubles as
the linear-subproblem solver for the offline log-welfare benchmark.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (
    EPS_KKT,
    EPS_OBJ,
    AllocationLike,
    DimensionError,
    DualCertificate,
    Instance,
    SolverConvergenceError,
    harmonic,
    ratio,
    utilities,
)

BENCHMARK_MAX_ITERS = 50_000


@dataclass(frozen=True)
class PFResult:
    """Proportional-fairness value with the maximizing alternative."""

    pf_value: float
    witness: np.ndarray
    dual_bound: Optional[float] = None


def budget_knapsack(coeffs: np.ndarray, budget: float) -> tuple[np.ndarray, float]:
    """Maximize sum(coeffs * w) over {w >= 0, row sums <= 1, total <= budget}.

    Per round only the best good can carry mass; rounds are then filled
    in decreasing order of their best coefficient (ties to the earlier
    round).  Rounds with non-positive coefficients are left empty.
    """
    num_rounds, _ = coeffs.shape
    best_good = np.argmax(coeffs, axis=1)
    best = coeffs[np.arange(num_rounds), best_good]
    order = np.argsort(-best, kind="stable")
    w = np.zeros_like(coeffs)
    remaining = float(budget)
    value = 0.0
    for t in order:
        if remaining <= 0 or best[t] <= 0:
            break
        mass = min(1.0, remaining)
        w[t, best_good[t]] = mass
        value += mass * best[t]
        remaining -= mass
    return w, value


def _inverse_scaled_utils(instance: Instance, alloc: AllocationLike,
                          scale_c: Optional[np.ndarray]):
    """Per-agent 1/(c_i u_i) split into the regular, 0/0 and +inf groups."""
    u = utilities(instance, alloc)
    c = np.ones(instance.num_agents) if scale_c is None else np.asarray(scale_c, dtype=float)
    if c.shape != u.shape:
        raise DimensionError(f"scale_c shape {c.shape} != ({instance.num_agents},)")
    has_value = instance.values.sum(axis=(0, 2)) > 0
    zero_zero = (u == 0) & ~has_value
    infinite = (u == 0) & has_value
    inv = np.zeros_like(u)
    regular = u > 0
    inv[regular] = 1.0 / (c[regular] * u[regular])
    return u, inv, zero_zero, infinite


def evaluate_pf(instance: Instance, alloc: AllocationLike,
                scale_c: Optional[np.ndarray] = None) -> PFResult:
    """Exact worst-case fairness level of an allocation.

    Agents with zero utility and no value anywhere contribute 1 to the
    average by the 0/0 convention; an agent with zero utility but
    positive value somewhere makes the value +inf.
    """
    _, inv, zero_zero, infinite = _inverse_scaled_utils(instance, alloc, scale_c)
    n = instance.num_agents
    if np.any(infinite):
        i = int(np.flatnonzero(infinite)[0])
        flat = int(np.argmax(instance.values[:, i, :]))
        t, l = divmod(flat, instance.batch_size)
        witness = np.zeros((instance.num_rounds, instance.batch_size))
        witness[t, l] = min(1.0, instance.budget)
        return PFResult(pf_value=math.inf, witness=witness)
    kappa = np.einsum("til,i->tl", instance.values, inv) / n
    witness, value = budget_knapsack(kappa, instance.budget)
    return PFResult(pf_value=value + zero_zero.sum() / n, witness=witness)


def verify_certificate(instance: Instance, alloc: AllocationLike, cert: DualCertificate,
                       scale_c: Optional[np.ndarray] = None,
                       tol: float = EPS_KKT) -> tuple[bool, float]:
    """Check the dual constraints p_t + q >= max_l (1/N) sum_i v/(c_i u_i)
    within tol and return the objective sum(p) + B*q."""
    if cert.p.shape != (instance.num_rounds,):
        raise DimensionError(f"certificate covers {cert.p.shape[0]} rounds, "
                             f"instance has {instance.num_rounds}")
    _, inv, _, infinite = _inverse_scaled_utils(instance, alloc, scale_c)
    bound = cert.bound(instance.budget)
    if np.any(infinite):
        hit = instance.values[:, infinite, :].sum(axis=(1, 2)) > 0
        if np.any(hit):
            return False, bound
    kappa = np.einsum("til,i->tl", instance.values, inv) / instance.num_agents
    needed = kappa.max(axis=1)
    feasible = bool(np.all(cert.p + cert.q >= needed - tol))
    return feasible, bound


def nash_welfare(instance: Instance, alloc: AllocationLike) -> float:
    """Geometric mean of utilities, 0 whenever some agent gets nothing."""
    u = utilities(instance, alloc)
    if np.any(u <= 0):
        return 0.0
    return float(np.exp(np.mean(np.log(u))))


@dataclass(frozen=True)
class BenchmarkResult:
    allocation: np.ndarray
    nsw: float
    iterations: int
    gap: float
    degenerate: bool       # every agent values nothing, allocation is all-zero
    pf_self_check: float = 1.0  # fairness of the returned allocation


def _benchmark_line_search(u: np.ndarray, du: np.ndarray, s_max: float) -> float:
    """Largest s in [0, s_max] before d/ds sum ln(u + s du) turns negative."""
    def slope(s: float) -> float:
        denom = u + s * du
        if np.any(denom <= 0):
            return -math.inf
        return float(np.sum(du / denom))

    if slope(s_max) >= 0:
        return s_max
    lo, hi = 0.0, s_max
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if slope(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, s_max):
            break
    return 0.5 * (lo + hi)


def offline_pf_benchmark(instance: Instance, gap_tol: Optional[float] = None,
                         max_iters: int = BENCHMARK_MAX_ITERS) -> BenchmarkResult:
    """Hindsight allocation maximizing sum_i ln(u_i) over the feasible
    polytope, by pairwise conditional gradient with the knapsack oracle.

    The duality gap of this program at iterate w equals
    N * (pf(w) - 1), so stopping at gap <= N * EPS_OBJ certifies the
    returned allocation is (1 + EPS_OBJ)-proportionally fair.  Agents
    with no value anywhere are excluded from the objective; if there are
    none left the zero allocation is returned with the degenerate flag.
    """
    shape = (instance.num_rounds, instance.batch_size)
    active = instance.values.sum(axis=(0, 2)) > 0
    if not np.any(active):
        return BenchmarkResult(np.zeros(shape), 0.0, 0, 0.0, True)
    if instance.budget == 0:
        return BenchmarkResult(np.zeros(shape), 0.0, 0, 0.0, False)
    vals = instance.values[:, active, :]
    if gap_tol is None:
        gap_tol = instance.num_agents * EPS_OBJ

    per_round = min(1.0, instance.budget / instance.num_rounds)
    w = np.full(shape, per_round / instance.batch_size)
    atoms = [w.copy()]
    weights = [1.0]

    gap = math.inf
    for iteration in range(1, max_iters + 1):
        u = np.einsum("til,tl->i", vals, w)
        grad = np.einsum("til,i->tl", vals, 1.0 / u)
        target, target_val = budget_knapsack(grad, instance.budget)
        gap = target_val - float(np.sum(grad * w))
        if gap <= gap_tol:
            break
        scores = [float(np.sum(grad * a)) for a in atoms]
        away = int(np.argmin(scores))
        direction = target - atoms[away]
        du = np.einsum("til,tl->i", vals, direction)
        step = _benchmark_line_search(u, du, weights[away])
        if step <= 0.0:
            # pairwise step blocked; fall back to a plain conditional step
            direction = target - w
            du = np.einsum("til,tl->i", vals, direction)
            step = _benchmark_line_search(u, du, 1.0)
            if step <= 0.0:
                break
            w = w + step * direction
            weights = [x * (1.0 - step) for x in weights]
            atoms.append(target)
            weights.append(step)
        else:
            w = w + step * direction
            weights[away] -= step
            for j, a in enumerate(atoms):
                if a is not target and np.array_equal(a, target):
                    weights[j] += step
                    break
            else:
                atoms.append(target)
                weights.append(step)
        keep = [j for j, x in enumerate(weights) if x > 1e-15]
        atoms = [atoms[j] for j in keep]
        weights = [weights[j] for j in keep]
    else:
        raise SolverConvergenceError(
            f"offline benchmark did not reach gap {gap_tol:.1e} within "
            f"{max_iters} iterations (gap {gap:.3e})"
        )

    w = np.clip(w, 0.0, 1.0)
    self_check = evaluate_pf(instance, w).pf_value
    if self_check > 1.0 + 10.0 * EPS_OBJ:
        raise SolverConvergenceError(
            f"benchmark self-check failed: fairness {self_check:.10f} despite gap {gap:.3e}")
    return BenchmarkResult(w, nash_welfare(instance, w), iteration, gap, False, self_check)


def nsw_ratio_report(instance: Instance, alloc: AllocationLike,
                     benchmark: Optional[BenchmarkResult] = None) -> float:
    """NSW of the hindsight benchmark over the allocation's NSW; the 0/0
    convention makes the ratio 1 when both welfare values vanish."""
    if benchmark is None:
        benchmark = offline_pf_benchmark(instance)
    return ratio(benchmark.nsw, nash_welfare(instance, alloc))


def harmonic_lemma_check(big_s: int, w_cap: float, y: np.ndarray) -> bool:
    """Whether max_l (l+1) / (W + sum_{j<=l} j*y_j) >= H_S / (2W).

    Holds for every y in [0,1]^S with sum(y) <= W and W >= 1; fuzzing
    this is how the harmonic floor used by the adversarial suites is
    validated.
    """
    y = np.asarray(y, dtype=float)
    if big_s < 1 or y.shape != (big_s,):
        raise ValueError(f"expected {big_s} ladder entries, got shape {y.shape}")
    if w_cap < 1:
        raise ValueError(f"W must be at least 1, got {w_cap}")
    if np.any(y < -1e-12) or np.any(y > 1 + 1e-12):
        raise ValueError("y entries must lie in [0, 1]")
    if float(y.sum()) > w_cap + 1e-12:
        raise ValueError(f"sum(y) = {y.sum()} exceeds W = {w_cap}")
    ladder = np.arange(1, big_s + 1)
    denom = w_cap + np.cumsum(ladder * y)
    lhs = float(np.max((ladder + 1) / denom))
    return lhs >= harmonic(big_s) / (2.0 * w_cap)
