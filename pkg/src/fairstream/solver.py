"""Greedy semi-allocation subproblems.

Each round the engine must choose a greedy investment z given the agents'
running promised-utility floors.  The single-good case is a monotone
threshold inversion; the batched case maximizes

    F(z, lam) = (1/N) sum_i ln(gamma_i + sum_l v[i, l] z_l) + lam * q

over the scaled simplex {z >= 0, lam >= 0, sum z + lam = cap}.  The
partial derivatives of F are exactly the marginal value-per-promised-
utility scores

    Phi_l(z) = (1/N) sum_i v[i, l] / (gamma_i + sum_l' v[i, l'] z_l')

for the goods and the constant q for lam, which is what makes a
conditional-gradient method natural: the linear oracle just picks the
coordinate with the largest score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    EPS_BISECT,
    TAU_FEAS,
    DegeneratePredictionError,
    SolverConvergenceError,
)

MAX_ITERS = 100_000  # per-round cap; exceeding it raises, never silent


@dataclass(frozen=True)
class RoundPhi:
    """One round's score function: values (N, L) against floors gamma (N,).

    gamma_i is the agent's promised utility before this round's greedy
    move: the budget-scaled prediction plus all greedy value accumulated
    in earlier rounds.  Agents with gamma_i = 0 must have no positive
    value this round, otherwise the score is infinite and the prediction
    is degenerate.
    """

    values: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        g = np.asarray(self.gamma, dtype=float)
        if v.ndim != 2 or g.shape != (v.shape[0],):
            raise ValueError(f"values must be (N, L) and gamma (N,), got {v.shape}, {g.shape}")
        if np.any(g < 0):
            raise ValueError("gamma must be non-negative")
        bad = (g == 0) & (v.max(axis=1) > 0)
        if np.any(bad):
            raise DegeneratePredictionError(
                f"agents {np.flatnonzero(bad).tolist()} have positive value but zero "
                "promised utility; clamp their predicted totals first"
            )
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "gamma", g)

    @property
    def num_agents(self) -> int:
        return self.values.shape[0]

    @property
    def num_goods(self) -> int:
        return self.values.shape[1]

    def promised(self, z: np.ndarray) -> np.ndarray:
        return self.gamma + self.values @ z

    def phi(self, z: np.ndarray) -> np.ndarray:
        """Score vector Phi_l(z); agents with zero promised utility have
        zero value and contribute nothing."""
        u = self.promised(z)
        active = u > 0
        scores = np.zeros(self.num_goods)
        if np.any(active):
            scores = self.values[active].T @ (1.0 / u[active])
        return scores / self.num_agents


@dataclass(frozen=True)
class GreedySolution:
    """Output of the batched round solver."""

    z: np.ndarray
    lam: float
    budget_cap: float
    kkt_residual: float
    fw_gap: float
    iterations: int


def solve_threshold_L1(phi: RoundPhi, q: float, cap: float) -> float:
    """Smallest z >= 0 with Phi(z) <= q, clipped to [0, cap].

    Phi is strictly decreasing wherever it is positive, so bisection on
    the bracket [0, hi] converges unconditionally; hi is either cap or
    an a-priori upper bound k/(N q) on the threshold root (each of the
    k positive-value terms is at most 1/z once z dominates gamma).
    """
    if q <= 0:
        raise ValueError(f"threshold level q must be positive, got {q}")
    if cap < 0:
        raise ValueError(f"cap must be non-negative, got {cap}")
    if phi.num_goods != 1:
        raise ValueError(f"threshold solver handles L=1 only, got L={phi.num_goods}")

    def value(z: float) -> float:
        return float(phi.phi(np.array([z]))[0])

    if value(0.0) <= q:
        return 0.0
    liked = int(np.count_nonzero(phi.values[:, 0] > 0))
    hi = min(cap, liked / (phi.num_agents * q))
    if value(hi) > q:
        return cap  # threshold unreachable inside the cap
    lo = 0.0
    while hi - lo > EPS_BISECT:
        mid = 0.5 * (lo + hi)
        if value(mid) <= q:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _line_search(w: np.ndarray, u0: np.ndarray, const: float, n: float, s_max: float) -> float:
    """Maximal step along a pairwise swap direction.

    The directional derivative h(s) = (1/n) sum_i w_i / (u0_i + s w_i) + const
    is monotone non-increasing; h(0) > 0.  Returns s_max if h stays
    positive, else the root, by safeguarded Newton.
    """
    mask = w != 0
    if not np.any(mask):
        return s_max if const > 0 else 0.0
    wm = w[mask]
    um = u0[mask]

    def h_and_slope(s: float):
        denom = um + s * wm
        h = float(np.sum(wm / denom)) / n + const
        slope = -float(np.sum((wm / denom) ** 2)) / n
        return h, slope

    h_hi, _ = h_and_slope(s_max)
    if h_hi >= 0:
        return s_max
    lo, hi = 0.0, s_max
    s = 0.5 * s_max
    for _ in range(100):
        h, slope = h_and_slope(s)
        if h > 0:
            lo = s
        else:
            hi = s
        if hi - lo <= 1e-15 * max(1.0, s_max):
            break
        step = s - h / slope if slope < 0 else None
        if step is not None and lo < step < hi:
            s = step
        else:
            s = 0.5 * (lo + hi)
    return 0.5 * (lo + hi)


def solve_batched(phi: RoundPhi, q: float, budget_cap: float,
                  max_iters: int = MAX_ITERS) -> GreedySolution:
    """Maximize (1/N) sum_i ln(promised_i(z)) + lam*q over the scaled simplex.

    Pairwise conditional-gradient: every step transfers mass from the
    active coordinate with the smallest partial derivative to the
    coordinate with the largest one (ties break to the lowest index,
    with lam ordered last), with an exact line search along the swap.
    Stops when the largest-minus-smallest-active partial gap is below
    tolerance, which bounds both the stationarity residual and the
    Frank-Wolfe duality gap (the cap is at most 1).
    """
    if q <= 0:
        raise ValueError(f"price q must be positive, got {q}")
    if budget_cap < 0:
        raise ValueError(f"budget_cap must be non-negative, got {budget_cap}")
    L = phi.num_goods
    n = float(phi.num_agents)
    if budget_cap == 0.0:
        sol = GreedySolution(np.zeros(L), 0.0, 0.0, 0.0, 0.0, 0)
        return sol

    v = phi.values
    vext = np.concatenate([v, np.zeros((v.shape[0], 1))], axis=1)  # lam column
    x = np.zeros(L + 1)
    x[L] = budget_cap

    partials = np.empty(L + 1)
    iterations = 0
    gap = np.inf
    for iterations in range(1, max_iters + 1):
        u = phi.promised(x[:L])
        partials[:L] = phi.phi(x[:L])
        partials[L] = q
        toward = int(np.argmax(partials))
        active = np.flatnonzero(x > 0)
        away = int(active[np.argmin(partials[active])])
        gap = partials[toward] - partials[away]
        tol = max(1e-10, 1e-13 * (abs(partials[toward]) + q))
        if gap <= tol or toward == away:
            break
        w = vext[:, toward] - vext[:, away]
        const = q * (1.0 if toward == L else 0.0) - q * (1.0 if away == L else 0.0)
        step = _line_search(w, u, const, n, float(x[away]))
        if step <= 0.0:
            break
        if step >= x[away]:
            x[toward] += x[away]
            x[away] = 0.0
        else:
            x[toward] += step
            x[away] -= step
    else:
        raise SolverConvergenceError(
            f"round solver did not converge within {max_iters} iterations "
            f"(last pairwise gap {gap:.3e})"
        )

    z = x[:L].copy()
    lam = float(x[L])
    fw_gap = float(budget_cap * partials.max() - partials @ x)
    sol = GreedySolution(z, lam, budget_cap, 0.0, fw_gap, iterations)
    residual = check_kkt(sol, phi, q)
    object.__setattr__(sol, "kkt_residual", residual)
    return sol


def check_kkt(solution: GreedySolution, phi: RoundPhi, q: float,
              eps_active: float = TAU_FEAS) -> float:
    """Stationarity residual of a round solution.

    Largest violation over the three certificate properties: active
    goods must sit at the maximal score, a slack budget forces the
    maximal score below q, and any positive greedy spend forces it to
    reach q.
    """
    z = solution.z
    scores = phi.phi(z)
    total = float(z.sum())
    residual = 0.0
    if scores.size:
        top = float(scores.max())
        for l in np.flatnonzero(z > 0):
            residual = max(residual, top - float(scores[l]))
        if total < solution.budget_cap - eps_active:
            residual = max(residual, top - q)
        if total > eps_active:
            residual = max(residual, q - top)
    return residual
