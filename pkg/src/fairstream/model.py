"""Core domain types for online public-goods allocation.

An instance has N agents, T rounds and L public goods per round.  The
algorithm invests x[t, l] in good l of round t subject to a per-round
cap (sum over l at most 1) and an overall budget (sum over t, l at most
B).  Agent utilities are linear:  u_i = sum_t sum_l v[t, i, l] * x[t, l].

Value tensors are stored round-major with shape (T, N, L), so
``instance.values[t]`` is the N x L value matrix revealed in round t+1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Optional, Union

import numpy as np

# Numerical policy, shared across modules.  Feasibility slacks are sums of
# products of desk-scale quantities, so 1e-9 absolute is generous.
TAU_FEAS = 1e-9      # absolute feasibility tolerance per constraint
EPS_BISECT = 1e-10   # absolute tolerance in z for threshold bisection
EPS_OBJ = 1e-8       # objective duality-gap target for the round solver
EPS_KKT = 1e-6       # certificate / stationarity residual tolerance


class DimensionError(ValueError):
    """Shapes of an allocation, certificate or prediction set do not match."""


class ConfigurationError(ValueError):
    """A run is missing required configuration (horizon, predictions, ...)."""


class DegeneratePredictionError(RuntimeError):
    """An agent has positive value but a zero predicted total, so the
    greedy threshold function is infinite."""


class CertifiedInfeasibilityError(RuntimeError):
    """A run that should be budget-feasible by its certified guarantee
    overspent anyway; indicates violated prediction bounds or a bug."""


class SolverConvergenceError(RuntimeError):
    """The round subproblem solver hit its iteration cap."""


def ratio(numer: float, denom: float) -> float:
    """Extended-real quotient: 0/0 = 1 and x/0 = +inf for x > 0."""
    if numer < 0 or denom < 0:
        raise ValueError(f"ratio() requires non-negative arguments, got {numer}, {denom}")
    if denom == 0.0:
        return 1.0 if numer == 0.0 else math.inf
    return numer / denom


def harmonic(k: int) -> float:
    """k-th harmonic number, summed in ascending order of denominators."""
    if k < 1:
        raise ValueError(f"harmonic() requires k >= 1, got {k}")
    total = 0.0
    for i in range(1, k + 1):
        total += 1.0 / i
    return total


@dataclass(frozen=True)
class Instance:
    """A full valuation tensor plus budget metadata.

    values has shape (T, N, L) and must be finite and non-negative.
    For batched instances (L > 1) the budget must satisfy 1 <= B <= T;
    single-good instances only require B >= 0.
    """

    num_agents: int
    num_rounds: int
    batch_size: int
    budget: float
    values: np.ndarray

    def __post_init__(self):
        if self.num_agents < 1 or self.num_rounds < 1 or self.batch_size < 1:
            raise ValueError("num_agents, num_rounds and batch_size must be positive")
        vals = np.asarray(self.values, dtype=float)
        expected = (self.num_rounds, self.num_agents, self.batch_size)
        if vals.shape != expected:
            raise DimensionError(f"values shape {vals.shape} != {expected}")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0):
            raise ValueError("values must be finite and non-negative")
        if self.batch_size > 1:
            if not (1.0 <= self.budget <= self.num_rounds):
                raise ValueError(
                    f"batched instances require 1 <= B <= T, got B={self.budget}, T={self.num_rounds}"
                )
        elif self.budget < 0:
            raise ValueError(f"budget must be non-negative, got {self.budget}")
        object.__setattr__(self, "values", vals)
        self.values.setflags(write=False)

    def total_values(self) -> np.ndarray:
        """Per-agent total value V_i = sum_t max_l v[t, i, l].

        For L = 1 this is the plain sum of the agent's values; for
        batches it matches the floor the set-aside semi-allocation can
        actually promise (one favorite good per round).
        """
        return self.values.max(axis=2).sum(axis=0)


@dataclass(frozen=True)
class RoundBatch:
    """Values revealed in one round: an N x L matrix, 1-based round index."""

    round_index: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise DimensionError(f"round values must be 2-d, got shape {vals.shape}")
        object.__setattr__(self, "values", vals)
        self.values.setflags(write=False)


@dataclass(frozen=True)
class StreamHeader:
    """Metadata preceding a round stream.  total_rounds may be None for
    horizon-independent runs."""

    num_agents: int
    batch_size: int
    budget: float
    total_rounds: Optional[int] = None


@dataclass(frozen=True)
class ValueStream:
    """A header plus an iterable of RoundBatch events in round order."""

    header: StreamHeader
    batches: Iterable[RoundBatch]

    def __iter__(self) -> Iterator[RoundBatch]:
        return iter(self.batches)

    @staticmethod
    def from_instance(instance: Instance, announce_horizon: bool = True) -> "ValueStream":
        header = StreamHeader(
            num_agents=instance.num_agents,
            batch_size=instance.batch_size,
            budget=instance.budget,
            total_rounds=instance.num_rounds if announce_horizon else None,
        )

        def _rounds():
            for t in range(instance.num_rounds):
                yield RoundBatch(round_index=t + 1, values=instance.values[t])

        return ValueStream(header=header, batches=_rounds())


@dataclass(frozen=True)
class Allocation:
    """Per-round investments split into set-aside and greedy halves.

    set_aside and greedy have shape (T, L); total is their sum.
    """

    set_aside: np.ndarray
    greedy: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.set_aside, dtype=float)
        z = np.asarray(self.greedy, dtype=float)
        if y.shape != z.shape or y.ndim != 2:
            raise DimensionError(f"semi-allocation shapes differ: {y.shape} vs {z.shape}")
        object.__setattr__(self, "set_aside", y)
        object.__setattr__(self, "greedy", z)
        self.set_aside.setflags(write=False)
        self.greedy.setflags(write=False)

    @property
    def total(self) -> np.ndarray:
        return self.set_aside + self.greedy

    @staticmethod
    def zeros(num_rounds: int, batch_size: int) -> "Allocation":
        shape = (num_rounds, batch_size)
        return Allocation(np.zeros(shape), np.zeros(shape))


@dataclass(frozen=True)
class PredictionSet:
    """Per-agent total-value estimates with declared error factors.

    c[i] >= 1 bounds overestimation (analysis only), d[i] >= 1 bounds
    underestimation (an algorithm input): v_tilde[i] in [V_i/d_i, c_i V_i].
    """

    v_tilde: np.ndarray
    c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        vt = np.asarray(self.v_tilde, dtype=float)
        c = np.asarray(self.c, dtype=float)
        d = np.asarray(self.d, dtype=float)
        if not (vt.shape == c.shape == d.shape) or vt.ndim != 1:
            raise DimensionError("v_tilde, c, d must be 1-d arrays of equal length")
        if np.any(vt < 0) or not np.all(np.isfinite(vt)):
            raise ValueError("predictions must be finite and non-negative")
        if np.any(c < 1) or np.any(d < 1):
            raise ValueError("error factors c, d must be >= 1")
        object.__setattr__(self, "v_tilde", vt)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)
        for arr in (self.v_tilde, self.c, self.d):
            arr.setflags(write=False)

    @staticmethod
    def perfect(instance: Instance) -> "PredictionSet":
        v = instance.total_values()
        ones = np.ones(instance.num_agents)
        return PredictionSet(v_tilde=v, c=ones, d=ones.copy())


@dataclass(frozen=True)
class DualCertificate:
    """Prices (p_t, q) witnessing an upper bound on the proportional
    fairness value via weak LP duality; the bound is sum(p) + B*q."""

    q: float
    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 1:
            raise DimensionError(f"p must be 1-d, got shape {p.shape}")
        if self.q < 0 or np.any(p < 0):
            raise ValueError("certificate prices must be non-negative")
        object.__setattr__(self, "p", p)
        self.p.setflags(write=False)

    def bound(self, budget: float) -> float:
        return float(self.p.sum() + budget * self.q)


AllocationLike = Union[Allocation, np.ndarray]


def _as_alloc_array(x: AllocationLike) -> np.ndarray:
    if isinstance(x, Allocation):
        return x.total
    return np.asarray(x, dtype=float)


def utilities(instance: Instance, alloc: AllocationLike) -> np.ndarray:
    """Linear utilities u_i = sum_t sum_l v[t, i, l] * x[t, l]."""
    x = _as_alloc_array(alloc)
    if x.shape != (instance.num_rounds, instance.batch_size):
        raise DimensionError(
            f"allocation shape {x.shape} != {(instance.num_rounds, instance.batch_size)}"
        )
    return np.einsum("til,tl->i", instance.values, x)


@dataclass(frozen=True)
class FeasibilityReport:
    """Signed slacks for every allocation constraint (negative = violated)."""

    box_slack: float          # min over t, l of min(x, 1 - x)
    round_slack: float        # min over t of 1 - sum_l x[t, l]
    budget_slack: float       # B - sum_{t,l} x[t, l]
    feasible: bool


def feasibility(instance: Instance, alloc: AllocationLike, tol: float = TAU_FEAS) -> FeasibilityReport:
    """Check x in [0,1], per-round sums <= 1 and total spend <= B."""
    x = _as_alloc_array(alloc)
    if x.shape != (instance.num_rounds, instance.batch_size):
        raise DimensionError(
            f"allocation shape {x.shape} != {(instance.num_rounds, instance.batch_size)}"
        )
    box = float(min(x.min(initial=np.inf), (1.0 - x).min(initial=np.inf)))
    round_slack = float((1.0 - x.sum(axis=1)).min(initial=np.inf))
    budget_slack = float(instance.budget - x.sum())
    ok = box >= -tol and round_slack >= -tol and budget_slack >= -tol
    return FeasibilityReport(box, round_slack, budget_slack, ok)


# ---------------------------------------------------------------------------
# File formats.  Whole instances are one JSON object; streams are one JSON
# object per line: a header {"n", "l", "b", "t_total"} followed by rounds
# {"t", "values"} with values indexed [i][l].
# ---------------------------------------------------------------------------

def instance_to_dict(instance: Instance) -> dict:
    return {
        "n": instance.num_agents,
        "t": instance.num_rounds,
        "l": instance.batch_size,
        "b": instance.budget,
        "values": instance.values.tolist(),
    }


def instance_from_dict(data: dict) -> Instance:
    return Instance(
        num_agents=int(data["n"]),
        num_rounds=int(data["t"]),
        batch_size=int(data["l"]),
        budget=float(data["b"]),
        values=np.asarray(data["values"], dtype=float),
    )


def save_instance(instance: Instance, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(instance), fh)


def load_instance(path: str) -> Instance:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def write_stream(instance: Instance, fh: IO[str], announce_horizon: bool = True) -> None:
    header = {
        "n": instance.num_agents,
        "l": instance.batch_size,
        "b": instance.budget,
        "t_total": instance.num_rounds if announce_horizon else None,
    }
    fh.write(json.dumps(header) + "\n")
    for t in range(instance.num_rounds):
        fh.write(json.dumps({"t": t + 1, "values": instance.values[t].tolist()}) + "\n")


def read_stream(fh: IO[str]) -> ValueStream:
    """Parse the line-delimited stream format lazily.

    Round lines are consumed only as the returned stream is iterated, so
    an engine driven by this stream genuinely cannot peek ahead.
    """
    header_line = fh.readline()
    if not header_line.strip():
        raise ValueError("empty stream: missing header line")
    raw = json.loads(header_line)
    header = StreamHeader(
        num_agents=int(raw["n"]),
        batch_size=int(raw["l"]),
        budget=float(raw["b"]),
        total_rounds=None if raw.get("t_total") is None else int(raw["t_total"]),
    )

    def _rounds():
        expected = 1
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            t = int(rec["t"])
            if t != expected:
                raise ValueError(f"stream rounds out of order: expected {expected}, got {t}")
            expected += 1
            yield RoundBatch(round_index=t, values=np.asarray(rec["values"], dtype=float))

    return ValueStream(header=header, batches=_rounds())
