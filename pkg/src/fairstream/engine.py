"""Online allocation engines.

Three streaming state machines share the set-aside/greedy budget split:

* ``run_binary``      -- 0/1 values, unit budget, horizon-independent.
                         Set-aside 1/(2N) on each agent's first liked good,
                         greedy by threshold inversion at level alpha.
* ``run_single_good`` -- one good per round, general values and budget,
                         prediction-driven, set-aside B/(2T) everywhere,
                         greedy threshold at alpha/(2B).
* ``run_batched``     -- L goods per round; set-aside B/(2|F_t|T) on the
                         round's favorite-goods set, greedy from the
                         concave round subproblem.

Decisions in round t depend only on rounds 1..t (the stream is pulled
one batch at a time); observed values are additionally retained so the
post-run report can evaluate fairness metrics against the full instance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import metrics, solver
from .model import (
    TAU_FEAS,
    Allocation,
    CertifiedInfeasibilityError,
    ConfigurationError,
    DualCertificate,
    FeasibilityReport,
    Instance,
    PredictionSet,
    SolverConvergenceError,
    ValueStream,
    feasibility,
    utilities,
)

VARIANTS = ("binary", "single", "batched")

# Zero predictions with positive observed value would blow up the greedy
# threshold; they get clamped to this fraction of the first observed
# round value, which perturbs nothing at reporting precision.
PREDICTION_CLAMP = 1e-9


@dataclass(frozen=True)
class AlgorithmConfig:
    """Run parameters.  alpha=None selects the tightest certified level
    for the declared underestimation bounds d (d defaults to 1, i.e.
    trusted predictions, which is flagged in the report warnings)."""

    variant: str
    alpha: Optional[float] = None
    budget: Optional[float] = None
    horizon: Optional[int] = None
    d_bound: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigurationError("alpha must be positive")


def certified_alpha(variant: str, num_agents: int, horizon: Optional[int] = None,
                    batch_size: int = 1, budget: float = 1.0,
                    d_bound: Optional[np.ndarray] = None) -> float:
    """Smallest alpha at which the variant's fairness guarantee is proven."""
    if variant == "binary":
        return 2.0 * math.log(2.0 * num_agents)
    if horizon is None:
        raise ConfigurationError(f"{variant} needs the horizon to compute its certified alpha")
    d = np.ones(num_agents) if d_bound is None else np.broadcast_to(
        np.asarray(d_bound, dtype=float), (num_agents,))
    penalty = 4.0 * float(np.log(d).sum()) / num_agents
    if variant == "single":
        return 4.0 * math.log(2.0 * horizon / budget) + penalty
    if variant == "batched":
        m = min(num_agents, batch_size)
        return 4.0 * math.log(2.0 * m * horizon / budget) + penalty
    raise ConfigurationError(f"unknown variant {variant!r}")


@dataclass
class PromisedUtilityLedger:
    """Per-agent floors plus accumulated greedy value: gamma = delta + accum.

    ``promised(z)`` for a candidate round move is gamma + v_t @ z, the
    utility each agent is already guaranteed by the set-aside floor and
    the greedy history.
    """

    delta: np.ndarray
    accum: np.ndarray

    @property
    def gamma(self) -> np.ndarray:
        return self.delta + self.accum

    def absorb(self, round_values: np.ndarray, z: np.ndarray) -> None:
        self.accum += round_values @ z


@dataclass
class RunReport:
    """Utilities, fairness metrics, certificate and diagnostics for one run."""

    variant: str
    alpha: float
    q: float
    budget: float
    certified: bool
    utilities: np.ndarray
    pf_value: float
    pf_scaled: float  # fairness with ratios scaled by the declared c_i
    nsw: float
    dual_bound: float
    dual_feasible: bool
    key_invariant_residual: float
    setaside_spend: float
    greedy_spend: float
    feasibility: FeasibilityReport
    setaside_floor_slack: float
    promised_bound_slack: float
    max_kkt_residual: float
    kkt_residuals: np.ndarray
    solver_iterations: int
    allocation: Allocation
    certificate: DualCertificate
    alpha_certified_floor: float = 0.0
    warnings: list[str] = field(default_factory=list)
    clamped_agents: list[int] = field(default_factory=list)
    nsw_ratio: Optional[float] = None
    instance_id: str = ""
    sweep_value: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "algorithm": self.variant,
            "alpha": self.alpha,
            "q": self.q,
            "budget": self.budget,
            "certified": self.certified,
            "alloc": {
                "set_aside": self.allocation.set_aside.tolist(),
                "greedy": self.allocation.greedy.tolist(),
            },
            "utilities": self.utilities.tolist(),
            "pf": self.pf_value,
            "pf_scaled": self.pf_scaled,
            "nsw": self.nsw,
            "nsw_ratio": self.nsw_ratio,
            "certificate": {"q": self.certificate.q, "p": self.certificate.p.tolist()},
            "residuals": {
                "key_invariant": self.key_invariant_residual,
                "max_kkt": self.max_kkt_residual,
                "kkt_per_round": self.kkt_residuals.tolist(),
                "dual_bound": self.dual_bound,
                "dual_feasible": self.dual_feasible,
                "box_slack": self.feasibility.box_slack,
                "round_slack": self.feasibility.round_slack,
                "budget_slack": self.feasibility.budget_slack,
                "setaside_floor_slack": self.setaside_floor_slack,
                "promised_bound_slack": self.promised_bound_slack,
            },
            "spend": {"set_aside": self.setaside_spend, "greedy": self.greedy_spend},
            "solver_iterations": self.solver_iterations,
            "clamped_agents": self.clamped_agents,
            "warnings": list(self.warnings),
        }


def key_invariant_residual(report: RunReport) -> float:
    """Signed slack of the certificate-spend inequality.

    For the prediction-driven engines this is
    sum_t (p_t + q) * sum_l z[t, l] - alpha/4; the binary engine's
    threshold works at level alpha rather than alpha/(2B), so its
    analogous budget identity is against alpha/2.
    """
    z_round = report.allocation.greedy.sum(axis=1)
    spend = float(np.sum((report.certificate.p + report.certificate.q) * z_round))
    target = report.alpha / 2.0 if report.variant == "binary" else report.alpha / 4.0
    return spend - target


class _RoundCollector:
    """Accumulates per-round engine state into final arrays."""

    def __init__(self, num_agents: int, batch_size: int):
        self.num_agents = num_agents
        self.batch_size = batch_size
        self.values: list[np.ndarray] = []
        self.set_aside: list[np.ndarray] = []
        self.greedy: list[np.ndarray] = []
        self.prices: list[float] = []
        self.kkt: list[float] = []
        self.iterations = 0

    def add(self, values: np.ndarray, y: np.ndarray, z: np.ndarray,
            price: float, kkt: float, iterations: int = 0) -> None:
        self.values.append(values)
        self.set_aside.append(y)
        self.greedy.append(z)
        self.prices.append(price)
        self.kkt.append(kkt)
        self.iterations += iterations

    def finish(self, budget: float) -> tuple[Instance, Allocation, np.ndarray]:
        num_rounds = len(self.values)
        if num_rounds == 0:
            raise ValueError("stream contained no rounds")
        instance = Instance(
            num_agents=self.num_agents,
            num_rounds=num_rounds,
            batch_size=self.batch_size,
            budget=budget,
            values=np.stack(self.values),
        )
        alloc = Allocation(np.stack(self.set_aside), np.stack(self.greedy))
        return instance, alloc, np.asarray(self.prices)


def _check_round(values: np.ndarray, num_agents: int, batch_size: int, t: int) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.shape != (num_agents, batch_size):
        raise ValueError(f"round {t}: values shape {v.shape} != {(num_agents, batch_size)}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError(f"round {t}: values must be finite and non-negative")
    return v


def _threshold_price_and_residual(phi: solver.RoundPhi, z: float, q: float,
                                  cap: float) -> tuple[float, float]:
    score = float(phi.phi(np.array([z]))[0])
    price = max(0.0, score - q)
    residual = 0.0
    if z < cap - TAU_FEAS:
        residual = max(residual, score - q)
    if z > TAU_FEAS:
        residual = max(residual, q - score)
    return price, residual


def _finalize(collector: _RoundCollector, budget: float, variant: str, alpha: float,
              q: float, certified: bool, alpha_floor: float,
              ledger: PromisedUtilityLedger, scale_c: np.ndarray,
              warnings: list[str], clamped: list[int]) -> tuple[Allocation, RunReport]:
    instance, alloc, prices = collector.finish(budget)
    cert = DualCertificate(q=q, p=prices)
    u = utilities(instance, alloc)
    pf = metrics.evaluate_pf(instance, alloc)
    if np.any(scale_c != 1.0):
        pf_scaled = metrics.evaluate_pf(instance, alloc, scale_c).pf_value
    else:
        pf_scaled = pf.pf_value
    # the certificate prices the c-scaled objective; with honest
    # predictions its bound dominates pf_scaled by weak duality
    dual_feasible, dual_bound = metrics.verify_certificate(instance, alloc, cert, scale_c)
    feas = feasibility(instance, alloc)
    if variant == "binary":
        # floor is 1/(2N) for every agent who likes at least one good
        liked = instance.values.sum(axis=(0, 2)) > 0
        floor = np.where(liked, 1.0 / (2.0 * instance.num_agents), 0.0)
    else:
        m = min(instance.num_agents, instance.batch_size)
        floor = instance.budget / (2.0 * m * instance.num_rounds) * instance.total_values()
    setaside_utility = np.einsum("til,tl->i", instance.values, alloc.set_aside)
    floor_slack = float(np.min(setaside_utility - floor))
    promised_slack = float(np.min(scale_c * u - ledger.gamma))
    report = RunReport(
        variant=variant,
        alpha=alpha,
        q=q,
        budget=instance.budget,
        certified=certified,
        utilities=u,
        pf_value=pf.pf_value,
        pf_scaled=pf_scaled,
        nsw=metrics.nash_welfare(instance, alloc),
        dual_bound=dual_bound,
        dual_feasible=dual_feasible,
        key_invariant_residual=0.0,
        setaside_spend=float(alloc.set_aside.sum()),
        greedy_spend=float(alloc.greedy.sum()),
        feasibility=feas,
        setaside_floor_slack=floor_slack,
        promised_bound_slack=promised_slack,
        max_kkt_residual=float(max(collector.kkt, default=0.0)),
        kkt_residuals=np.asarray(collector.kkt),
        solver_iterations=collector.iterations,
        allocation=alloc,
        certificate=cert,
        alpha_certified_floor=alpha_floor,
        warnings=warnings,
        clamped_agents=clamped,
    )
    report.key_invariant_residual = key_invariant_residual(report)
    return alloc, report


def run_binary(stream: ValueStream, config: AlgorithmConfig) -> tuple[Allocation, RunReport]:
    """Unit-budget engine for 0/1 values; needs no horizon or predictions.

    Each round whose good is some agent's first liked good gets a
    set-aside of 1/(2N); the greedy move is the smallest z keeping the
    average value-to-promised-utility score at or below alpha.
    """
    header = stream.header
    n = header.num_agents
    budget = header.budget if config.budget is None else config.budget
    if budget != 1.0:
        raise ConfigurationError(f"binary engine requires unit budget, got B={budget}")
    if header.batch_size != 1:
        raise ConfigurationError(f"binary engine requires L=1, got L={header.batch_size}")
    floor = certified_alpha("binary", n)
    alpha = floor if config.alpha is None else config.alpha
    certified = alpha >= floor - 1e-12
    warnings: list[str] = []
    if not certified:
        warnings.append(f"alpha={alpha:.6g} below certified level {floor:.6g}; guarantee void")

    ledger = PromisedUtilityLedger(delta=np.zeros(n), accum=np.zeros(n))
    seen = np.zeros(n, dtype=bool)
    collector = _RoundCollector(n, 1)
    clip_warned = False

    for batch in stream:
        v = _check_round(batch.values, n, 1, batch.round_index)
        if not np.all((v == 0.0) | (v == 1.0)):
            raise ValueError(f"round {batch.round_index}: binary engine observed non-binary value")
        likes = v[:, 0] == 1.0
        fresh = likes & ~seen
        y_t = 1.0 / (2.0 * n) if np.any(fresh) else 0.0
        ledger.delta[fresh] = 1.0 / (2.0 * n)
        seen |= fresh

        phi = solver.RoundPhi(values=v, gamma=ledger.gamma)
        z_free = solver.solve_threshold_L1(phi, q=alpha, cap=math.inf)
        z_t = min(z_free, 1.0 - y_t)
        if z_t < z_free and not clip_warned:
            warnings.append(f"round {batch.round_index}: greedy move clipped by per-round cap")
            clip_warned = True
        price, residual = _threshold_price_and_residual(phi, z_t, alpha, cap=math.inf)
        ledger.absorb(v, np.array([z_t]))
        collector.add(v, np.array([y_t]), np.array([z_t]), price, residual)

    total_z = float(sum(z.sum() for z in collector.greedy))
    if total_z > 0.5 + TAU_FEAS:
        raise CertifiedInfeasibilityError(
            f"greedy spend {total_z:.12f} exceeds 1/2; impossible under alpha >= 2 ln(2N)"
        )
    return _finalize(collector, budget, "binary", alpha, alpha, certified, floor,
                     ledger, np.ones(n), warnings, [])


def _clamp_predictions(v_tilde: np.ndarray, gamma: np.ndarray, v: np.ndarray,
                       clamped: list[int], warnings: list[str],
                       t: int) -> np.ndarray:
    """Replace zero predictions with eta * first observed round value so the
    threshold stays finite; records which agents were touched."""
    bad = (gamma == 0) & (v.sum(axis=1) > 0)
    if np.any(bad):
        idx = np.flatnonzero(bad)
        v_tilde = v_tilde.copy()
        v_tilde[idx] = PREDICTION_CLAMP * v[idx].sum(axis=1)
        clamped.extend(int(i) for i in idx)
        warnings.append(
            f"round {t}: clamped zero predictions for agents {idx.tolist()} "
            "(guarantee no longer certified for them)"
        )
    return v_tilde


def _prediction_run_setup(stream: ValueStream, predictions: Optional[PredictionSet],
                          config: AlgorithmConfig, variant: str):
    header = stream.header
    if predictions is None:
        raise ConfigurationError(f"{variant} engine requires total-value predictions")
    n = header.num_agents
    if predictions.v_tilde.shape != (n,):
        raise ConfigurationError(
            f"predictions cover {predictions.v_tilde.shape[0]} agents, stream has {n}")
    horizon = config.horizon if config.horizon is not None else header.total_rounds
    if horizon is None:
        raise ConfigurationError(
            f"{variant} engine is horizon-aware: its set-aside B/(2T) needs T")
    budget = header.budget if config.budget is None else config.budget
    d = config.d_bound if config.d_bound is not None else predictions.d
    d = np.broadcast_to(np.asarray(d, dtype=float), (n,))
    warnings: list[str] = []
    floor = certified_alpha(variant, n, horizon, header.batch_size, budget, d)
    alpha = floor if config.alpha is None else config.alpha
    if config.alpha is None and config.d_bound is None and np.all(predictions.d == 1.0):
        warnings.append("alpha default assumes d_i = 1 everywhere (trusted predictions)")
    certified = alpha >= floor - 1e-12
    if not certified:
        warnings.append(f"alpha={alpha:.6g} below certified level {floor:.6g}; guarantee void")
    return n, horizon, budget, alpha, certified, floor, warnings


def run_single_good(stream: ValueStream, predictions: PredictionSet,
                    config: AlgorithmConfig) -> tuple[Allocation, RunReport]:
    """Prediction-driven engine for one good per round.

    Set-aside is the uniform B/(2T); the greedy move inverts the score
    threshold at q = alpha/(2B) against predicted promised utilities.
    The greedy half-budget is never overdrawn: once B/2 is spent further
    moves are truncated (only reachable when the declared prediction
    bounds are violated) and flagged.
    """
    header = stream.header
    if header.batch_size != 1:
        raise ConfigurationError(f"single-good engine requires L=1, got L={header.batch_size}")
    n, horizon, budget, alpha, certified, floor, warnings = _prediction_run_setup(
        stream, predictions, config, "single")
    if budget <= 0:
        raise ConfigurationError("single-good engine requires a positive budget")
    q = alpha / (2.0 * budget)
    y_each = budget / (2.0 * horizon)
    v_tilde = predictions.v_tilde.copy()
    ledger = PromisedUtilityLedger(delta=y_each * v_tilde, accum=np.zeros(n))
    collector = _RoundCollector(n, 1)
    clamped: list[int] = []
    spent_z = 0.0
    guard_warned = False

    for batch in stream:
        t = batch.round_index
        if t > horizon:
            raise ConfigurationError(f"stream exceeded declared horizon T={horizon}")
        v = _check_round(batch.values, n, 1, t)
        new_tilde = _clamp_predictions(v_tilde, ledger.gamma, v, clamped, warnings, t)
        if new_tilde is not v_tilde:
            v_tilde = new_tilde
            ledger.delta = y_each * v_tilde

        phi = solver.RoundPhi(values=v, gamma=ledger.gamma)
        cap = 1.0 - y_each
        z_free = solver.solve_threshold_L1(phi, q=q, cap=cap)
        remaining = max(0.0, budget / 2.0 - spent_z)
        z_t = min(z_free, remaining)
        if z_t < z_free - 1e-15 and not guard_warned:
            warnings.append(
                f"round {t}: greedy half-budget exhausted, move truncated "
                "(prediction bounds likely violated)")
            guard_warned = True
        price, residual = _threshold_price_and_residual(phi, z_t, q, cap)
        ledger.absorb(v, np.array([z_t]))
        spent_z += z_t
        collector.add(v, np.array([y_each]), np.array([z_t]), price, residual)

    return _finalize(collector, budget, "single", alpha, q, certified, floor,
                     ledger, predictions.c, warnings, clamped)


def run_batched(stream: ValueStream, predictions: PredictionSet,
                config: AlgorithmConfig) -> tuple[Allocation, RunReport]:
    """Prediction-driven engine for batches of L goods per round.

    The set-aside budget is split across the round's favorite-goods set
    (one argmax good per agent, ties to the lowest index); the greedy
    semi-allocation maximizes the average log promised utility plus the
    price of leftover budget.  Greedy spend is truncated at B/2 as in
    the single-good engine.
    """
    header = stream.header
    batch_size = header.batch_size
    n, horizon, budget, alpha, certified, floor, warnings = _prediction_run_setup(
        stream, predictions, config, "batched")
    if not (1.0 <= budget <= horizon):
        raise ConfigurationError(f"batched engine requires 1 <= B <= T, got B={budget}, T={horizon}")
    q = alpha / (2.0 * budget)
    m = min(n, batch_size)
    scale = budget / (2.0 * m * horizon)
    v_tilde = predictions.v_tilde.copy()
    ledger = PromisedUtilityLedger(delta=scale * v_tilde, accum=np.zeros(n))
    collector = _RoundCollector(n, batch_size)
    clamped: list[int] = []
    spent_z = 0.0
    guard_warned = False
    round_cap = 1.0 - budget / (2.0 * horizon)

    for batch in stream:
        t = batch.round_index
        if t > horizon:
            raise ConfigurationError(f"stream exceeded declared horizon T={horizon}")
        v = _check_round(batch.values, n, batch_size, t)
        new_tilde = _clamp_predictions(v_tilde, ledger.gamma, v, clamped, warnings, t)
        if new_tilde is not v_tilde:
            v_tilde = new_tilde
            ledger.delta = scale * v_tilde

        has_value = v.max(axis=1) > 0
        favorites = np.unique(np.argmax(v, axis=1)[has_value])
        y_t = np.zeros(batch_size)
        if favorites.size:
            y_t[favorites] = budget / (2.0 * favorites.size * horizon)

        phi = solver.RoundPhi(values=v, gamma=ledger.gamma)
        cap = min(round_cap, max(0.0, budget / 2.0 - spent_z))
        if cap < round_cap - 1e-15 and not guard_warned:
            warnings.append(
                f"round {t}: greedy half-budget exhausted, cap truncated "
                "(prediction bounds likely violated)")
            guard_warned = True
        try:
            sol = solver.solve_batched(phi, q=q, budget_cap=cap)
        except SolverConvergenceError as exc:
            raise SolverConvergenceError(f"round {t}: {exc}") from exc
        scores = phi.phi(sol.z)
        price = max(0.0, float(scores.max(initial=0.0)) - q)
        ledger.absorb(v, sol.z)
        spent_z += float(sol.z.sum())
        collector.add(v, y_t, sol.z, price, sol.kkt_residual, sol.iterations)

    alloc, report = _finalize(collector, budget, "batched", alpha, q, certified, floor,
                              ledger, predictions.c, warnings, clamped)
    if not report.feasibility.feasible:
        raise CertifiedInfeasibilityError(
            f"batched run produced an infeasible allocation: {report.feasibility}")
    return alloc, report
