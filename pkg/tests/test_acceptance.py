"""Acceptance gate: one test per shipped guarantee, each printing a
PASS/FAIL line (run with ``pytest tests/test_acceptance.py -s``).

Randomized criteria use fixed seeds so reruns are bit-identical.
"""

import math
import time

import numpy as np
import pytest

from fairstream.engine import AlgorithmConfig, run_batched, run_binary
from fairstream.generators import gen_random
from fairstream.harness import lower_bound_suite, sweep_prediction_error
from fairstream.metrics import (
    evaluate_pf,
    harmonic_lemma_check,
    offline_pf_benchmark,
)
from fairstream.model import Instance, PredictionSet, ValueStream, harmonic
from fairstream.solver import RoundPhi, solve_batched, solve_threshold_L1

from gridsearch import grid_nsw_max


def _verdict(number: int, name: str, ok: bool, detail: str = "") -> None:
    tag = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"criterion {number:2d} [{name}]: {tag}{suffix}")
    assert ok, f"criterion {number} failed: {detail}"


@pytest.fixture(scope="module")
def batched_runs():
    """200 certified batched runs on uniform01 instances:
    N in [2,8], L in [1,4], T in [20,200], B uniform in [1,T]."""
    rng = np.random.default_rng(20240101)
    runs = []
    start = time.time()
    for _ in range(200):
        n = int(rng.integers(2, 9))
        l = int(rng.integers(1, 5))
        t = int(rng.integers(20, 201))
        b = float(rng.uniform(1.0, t))
        inst = gen_random(n, l, t, b, "uniform01", seed=int(rng.integers(1 << 31)))
        m = min(n, l)
        alpha = 4.0 * math.log(2.0 * m * t / b)
        alloc, report = run_batched(ValueStream.from_instance(inst),
                                    PredictionSet.perfect(inst),
                                    AlgorithmConfig("batched", alpha=alpha))
        runs.append((inst, alloc, report))
    return runs, time.time() - start


@pytest.fixture(scope="module")
def binary_runs():
    """100 certified binary runs: N in [2,16], T in [50,300], B = 1."""
    rng = np.random.default_rng(20240202)
    runs = []
    for _ in range(100):
        n = int(rng.integers(2, 17))
        t = int(rng.integers(50, 301))
        p = float(rng.uniform(0.3, 0.7))
        inst = gen_random(n, 1, t, 1.0, "binary",
                          seed=int(rng.integers(1 << 31)), p=p)
        alloc, report = run_binary(ValueStream.from_instance(inst),
                                   AlgorithmConfig("binary", alpha=2 * math.log(2 * n)))
        runs.append((inst, alloc, report))
    return runs


def test_criterion_1_certified_pf_bound(batched_runs):
    runs, elapsed = batched_runs
    worst = max(r.pf_value - r.alpha for _, _, r in runs)
    ok = worst <= 1e-4 and elapsed < 60.0
    _verdict(1, "certified PF bound", ok,
             f"max pf-alpha {worst:.2e}, {elapsed:.1f}s for 200 runs")


def test_criterion_2_key_invariant(batched_runs):
    runs, _ = batched_runs
    worst = max(r.key_invariant_residual for _, _, r in runs)
    _verdict(2, "key invariant", worst <= 1e-5, f"max residual {worst:.2e}")


def test_criterion_3_feasibility_and_floor(batched_runs):
    runs, _ = batched_runs
    budget_ok = all(r.feasibility.budget_slack >= -1e-9 for _, _, r in runs)
    round_ok = all(r.feasibility.round_slack >= -1e-9 for _, _, r in runs)
    floor_worst = min(r.setaside_floor_slack for _, _, r in runs)
    ok = budget_ok and round_ok and floor_worst >= -1e-9
    _verdict(3, "feasibility + set-aside floor", ok,
             f"min floor slack {floor_worst:.2e}")


def test_criterion_4_binary_guarantee(binary_runs):
    worst_pf = max(r.pf_value - r.alpha for _, _, r in binary_runs)
    worst_z = max(a.greedy.sum() for _, a, _ in binary_runs)
    ok = worst_pf <= 1e-4 and worst_z <= 0.5 + 1e-9
    _verdict(4, "binary guarantee", ok,
             f"max pf-alpha {worst_pf:.2e}, max greedy spend {worst_z:.4f}")


def test_criterion_5_binary_lower_bound():
    details = []
    ok = True
    for n in (4, 6, 8):
        report = lower_bound_suite("binary", n=n)
        ok &= report.max_ratio >= harmonic(n) / 2 - 1e-6
        details.append(f"N={n}: {report.max_ratio:.4f}>={report.floor:.4f}")
    _verdict(5, "binary hardness floor", ok, "; ".join(details))


def test_criterion_6_no_prediction_hardness():
    report = lower_bound_suite("geometric", t=8, b=1, m=1e3)
    ok = report.max_ratio >= 4.0 - 1e-6
    _verdict(6, "no-prediction hardness floor", ok,
             f"max ratio {report.max_ratio:.4f} >= 4")


def test_criterion_7_prediction_hardness():
    report = lower_bound_suite("prediction_hardness", b=1, t_prime=6)
    floor = harmonic(6) / 2
    ok = report.max_ratio >= floor - 1e-6
    _verdict(7, "with-prediction hardness floor", ok,
             f"max ratio {report.max_ratio:.4f} >= {floor:.4f}")


def test_criterion_8_graceful_degradation():
    inst = gen_random(4, 3, 60, 5.0, "uniform01", seed=808)
    m = min(4, 3)
    base = 4.0 * math.log(2.0 * m * 60 / 5.0)
    reports = sweep_prediction_error(inst, [1.0, math.e, math.e**2, math.e**3])
    worst = -math.inf
    for r in reports:
        budget_line = base + 4.0 * math.log(r.sweep_value)
        worst = max(worst, r.pf_value - budget_line)
    _verdict(8, "graceful degradation", worst <= 1e-4,
             f"max pf minus degraded alpha {worst:.2e}")


def test_criterion_9_solver_equivalence():
    rng = np.random.default_rng(20240303)
    worst_gap = 0.0
    worst_kkt = 0.0
    for _ in range(500):
        n = int(rng.integers(1, 9))
        v = rng.random((n, 1)) * (rng.random((n, 1)) < 0.9)
        phi = RoundPhi(values=v, gamma=rng.uniform(0.01, 2.0, size=n))
        q = float(rng.uniform(0.05, 5.0))
        cap = float(rng.uniform(0.0, 1.0))
        z_threshold = solve_threshold_L1(phi, q, cap)
        sol = solve_batched(phi, q, cap)
        worst_gap = max(worst_gap, abs(z_threshold - sol.z[0]))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    ok = worst_gap <= 1e-6 and worst_kkt <= 1e-6
    _verdict(9, "solver equivalence", ok,
             f"max |z difference| {worst_gap:.2e}, max KKT {worst_kkt:.2e}")


def test_criterion_10_harmonic_lemma_fuzz():
    rng = np.random.default_rng(20240404)
    failures = 0
    for _ in range(100_000):
        s = int(rng.integers(1, 51))
        w = float(rng.uniform(1.0, 10.0))
        y = rng.random(s)
        total = y.sum()
        if total > w:
            y *= rng.random() * w / total
        if not harmonic_lemma_check(s, w, y):
            failures += 1
    _verdict(10, "harmonic floor lemma", failures == 0,
             f"{failures} failures in 100000 fuzzed inputs")


def test_criterion_11_offline_benchmark():
    shapes = [(1, 6, 1.0), (1, 5, 2.0), (1, 4, 3.0), (2, 3, 1.0),
              (2, 3, 2.0), (3, 2, 1.0), (1, 3, 1.0), (1, 4, 2.0)]
    rng = np.random.default_rng(777)
    worst_diff = 0.0
    worst_pf = 0.0
    for i in range(50):
        l, t, b = shapes[i % len(shapes)]
        n = int(rng.integers(1, 5))
        inst = Instance(n, t, l, b, rng.random((t, n, l)))
        bench = offline_pf_benchmark(inst)
        worst_diff = max(worst_diff, abs(bench.nsw - grid_nsw_max(inst)))
        worst_pf = max(worst_pf, evaluate_pf(inst, bench.allocation).pf_value)
    ok = worst_diff <= 0.02 and worst_pf <= 1.0 + 1e-4
    _verdict(11, "offline benchmark vs grid", ok,
             f"max |nsw diff| {worst_diff:.5f}, max pf {worst_pf:.8f}")


def test_criterion_12_weak_duality(batched_runs, binary_runs):
    runs, _ = batched_runs
    worst = -math.inf
    for _, _, r in list(runs) + list(binary_runs):
        worst = max(worst, r.pf_value - r.dual_bound)
        assert r.dual_feasible
    _verdict(12, "weak duality", worst <= 1e-4,
             f"max pf minus dual bound {worst:.2e}")
