"""Instance constructors.

The three adversarial families realize the hardness proofs' inputs:
binary block instances whose prefixes are indistinguishable, geometric
single-agent value ramps, and the prediction-proof block ladder whose
total value is identical across variants.  Each family also exposes the
proof's hindsight comparator so suites measure ratios against exactly
the alternative the argument uses.  Random generators cover property
testing; everything is deterministic under its seed.
"""

from __future__ import annotations

import numpy as np

from .model import Instance, PredictionSet

DISTRIBUTIONS = ("uniform01", "exponential", "sparse", "binary")
PREDICTION_MODES = ("worst_over", "worst_under", "uniform_log")


def _cyclic_block(num_agents: int, r: int) -> np.ndarray:
    """S_r: num_agents consecutive goods, good t liked by the r agents
    {t, t+1, ..., t+r-1} cyclically; every agent likes exactly r goods."""
    block = np.zeros((num_agents, num_agents))
    for t in range(num_agents):
        for j in range(r):
            block[t, (t + j) % num_agents] = 1.0
    return block  # shape (goods, agents)


def gen_binary_lower_bound(num_agents: int, k: int) -> Instance:
    """Binary block instance I_k with T = N(N^2+N-2)/2 goods and B = 1.

    Blocks L_r (a dense cyclic block of degree r+1 padded with r all-zero
    blocks) appear for r <= k, then the sparse variants L'_r (r+1 copies
    of the degree-1 cyclic block).  Both variants of block r have the
    same length and give each agent exactly r+1 liked goods, so runs on
    I_k and I_{k'} agree on the first min(k, k') blocks.
    """
    n = num_agents
    if n < 2:
        raise ValueError("need at least 2 agents")
    if not (1 <= k <= n - 1):
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    goods = []
    for r in range(1, n):
        if r <= k:
            goods.append(_cyclic_block(n, r + 1))
            for _ in range(r):
                goods.append(np.zeros((n, n)))
        else:
            for _ in range(r + 1):
                goods.append(_cyclic_block(n, 1))
    stacked = np.concatenate(goods, axis=0)  # (T, N)
    return Instance(num_agents=n, num_rounds=stacked.shape[0], batch_size=1,
                    budget=1.0, values=stacked[:, :, None])


def binary_block_offset(num_agents: int, r: int) -> int:
    """Index of the first good of block r (either variant) in I_k."""
    return sum((j + 1) * num_agents for j in range(1, r))


def binary_lower_bound_comparator(num_agents: int, k: int) -> np.ndarray:
    """The proof's alternative on I_k: 1/N on each good of the dense
    cyclic portion of block k, giving every agent utility (k+1)/N."""
    inst_rounds = num_agents * (num_agents**2 + num_agents - 2) // 2
    w = np.zeros((inst_rounds, 1))
    start = binary_block_offset(num_agents, k)
    w[start:start + num_agents, 0] = 1.0 / num_agents
    return w


def gen_geometric_no_predictions(num_rounds: int, t_stop: int, m: float,
                                 budget: float = 1.0) -> Instance:
    """Single-agent ramp (1, M, ..., M^(t_stop-1), 0, ..., 0).

    A run cannot tell variants apart before their stopping round, which
    is what forces prediction-free algorithms to hedge every round.
    """
    if not (1 <= t_stop <= num_rounds):
        raise ValueError(f"t_stop must be in [1, {num_rounds}], got {t_stop}")
    if m <= 1:
        raise ValueError(f"growth factor must exceed 1, got {m}")
    vals = np.zeros((num_rounds, 1, 1))
    vals[:t_stop, 0, 0] = m ** np.arange(t_stop)
    return Instance(1, num_rounds, 1, budget, vals)


def geometric_comparator(num_rounds: int, t_stop: int) -> np.ndarray:
    """Hindsight optimum on the ramp: everything on the last ramp good."""
    w = np.zeros((num_rounds, 1))
    w[t_stop - 1, 0] = 1.0
    return w


def gen_prediction_hardness(budget: int, t_prime: int, k: int) -> Instance:
    """Single-agent block ladder I_k with T = B(T'(T'+1)-2)/2 goods.

    Block r is B(r+1) goods: the concentrated variant S_r puts value
    (r+1)/T' on its first B goods and zero after; the flat variant S'_r
    spreads value 1/T' over all of them.  Both carry total value
    B(r+1)/T', so every I_k has the same agent total and a perfect
    total-value prediction reveals nothing about k.
    """
    if budget < 1 or budget != int(budget):
        raise ValueError(f"budget must be a positive integer, got {budget}")
    if t_prime < 2:
        raise ValueError(f"T' must be at least 2, got {t_prime}")
    if not (1 <= k <= t_prime - 1):
        raise ValueError(f"k must be in [1, {t_prime - 1}], got {k}")
    budget = int(budget)
    chunks = []
    for r in range(1, t_prime):
        size = budget * (r + 1)
        block = np.zeros(size)
        if r <= k:
            block[:budget] = (r + 1) / t_prime
        else:
            block[:] = 1.0 / t_prime
        chunks.append(block)
    vals = np.concatenate(chunks)
    return Instance(1, vals.size, 1, float(budget), vals[:, None, None])


def prediction_hardness_comparator(budget: int, t_prime: int, k: int) -> np.ndarray:
    """Hindsight optimum on I_k: 1 on each of the first B goods of its
    concentrated block k, worth B(k+1)/T'."""
    budget = int(budget)
    total = budget * (t_prime * (t_prime + 1) - 2) // 2
    start = sum(budget * (r + 1) for r in range(1, k))
    w = np.zeros((total, 1))
    w[start:start + budget, 0] = 1.0
    return w


def gen_random(num_agents: int, batch_size: int, num_rounds: int, budget: float,
               distribution: str = "uniform01", seed: int = 0, *,
               mu: float = 1.0, p: float = 0.5) -> Instance:
    """Random instance; draws are agent-major (agent, then good, then
    round) from a single seeded stream, then laid out round-major."""
    if distribution not in DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {distribution!r}, expected one of {DISTRIBUTIONS}")
    rng = np.random.default_rng(seed)
    shape = (num_agents, batch_size, num_rounds)
    if distribution == "uniform01":
        vals = rng.random(shape)
    elif distribution == "exponential":
        if mu <= 0:
            raise ValueError(f"exponential scale must be positive, got {mu}")
        vals = rng.exponential(scale=mu, size=shape)
    elif distribution == "sparse":
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"sparsity p must be in [0, 1], got {p}")
        mask = rng.random(shape) < p
        vals = rng.random(shape) * mask
    else:  # binary
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"like probability p must be in [0, 1], got {p}")
        vals = (rng.random(shape) < p).astype(float)
    return Instance(num_agents, num_rounds, batch_size, budget,
                    vals.transpose(2, 0, 1))


def gen_predictions(instance: Instance, c, d, mode: str = "worst_over",
                    seed: int = 0) -> PredictionSet:
    """Predictions inside the declared bracket [V_i/d_i, c_i V_i].

    worst_over / worst_under sit at the bracket's ends; uniform_log
    draws log-uniformly inside it.  Zero-total agents get a zero
    prediction in every mode.
    """
    if mode not in PREDICTION_MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {PREDICTION_MODES}")
    n = instance.num_agents
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
    d = np.broadcast_to(np.asarray(d, dtype=float), (n,)).copy()
    v = instance.total_values()
    if mode == "worst_over":
        v_tilde = c * v
    elif mode == "worst_under":
        v_tilde = v / d
    else:
        rng = np.random.default_rng(seed)
        v_tilde = np.zeros(n)
        pos = v > 0
        lo = np.log(v[pos] / d[pos])
        hi = np.log(c[pos] * v[pos])
        v_tilde[pos] = np.exp(lo + rng.random(pos.sum()) * (hi - lo))
    return PredictionSet(v_tilde=v_tilde, c=c, d=d)


def private_goods_embed(private_values: np.ndarray, copies_per_round: int = 1) -> Instance:
    """Embed a private-goods stream as a batched public instance.

    private_values[i, t] is agent i's value for round t's private good.
    Good j of the batch is reserved for agent j mod N (others value it
    zero), the batch is the block replicated copies_per_round times and
    the budget equals the horizon, so only the per-round cap binds.
    """
    if copies_per_round < 1:
        raise ValueError("copies_per_round must be at least 1")
    private = np.asarray(private_values, dtype=float)
    if private.ndim != 2:
        raise ValueError(f"private values must be (N, T), got shape {private.shape}")
    n, t = private.shape
    block = np.zeros((t, n, n))
    idx = np.arange(n)
    block[:, idx, idx] = private.T
    vals = np.tile(block, (1, 1, copies_per_round))
    return Instance(n, t, copies_per_round * n, float(t), vals)
