"""Experiment runner: instance x algorithm x prediction grids, the
adversarial lower-bound suites, and CSV/JSON emission.

Suites measure each engine against the hindsight comparator that the
corresponding hardness argument uses (not the offline benchmark), so
the reported max-over-variants ratio is directly comparable to the
argument's harmonic or T/(2B) floor.  That verifies the floor for the
engines implemented here; the underlying statements quantify over all
online algorithms, which no test harness can do.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import engine, generators, metrics
from .model import (
    CertifiedInfeasibilityError,
    Instance,
    PredictionSet,
    SolverConvergenceError,
    ValueStream,
    harmonic,
    load_instance,
    ratio,
)

CSV_COLUMNS = [
    "instance_id", "algorithm", "alpha", "pf", "nsw", "nsw_ratio",
    "dual_bound", "key_invariant_residual", "certified", "feasible",
    "dual_feasible", "budget_slack", "max_kkt_residual", "n_warnings",
]

PLOT_COLUMNS = ["sweep", "pf", "nsw_ratio", "certified_alpha"]

GENERATOR_FAMILIES = {
    "random": generators.gen_random,
    "binary_lower_bound": generators.gen_binary_lower_bound,
    "geometric": generators.gen_geometric_no_predictions,
    "prediction_hardness": generators.gen_prediction_hardness,
}


@dataclass(frozen=True)
class PredictionSpec:
    """How to fabricate predictions for a run; perfect means c = d = 1."""

    mode: str = "perfect"
    c: float = 1.0
    d: float = 1.0
    seed: int = 0

    def build(self, instance: Instance) -> PredictionSet:
        if self.mode == "perfect":
            return PredictionSet.perfect(instance)
        return generators.gen_predictions(instance, self.c, self.d, self.mode, self.seed)


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid of runs; fully serializable, reruns are bit-identical.

    Instance sources are either file paths or generator specs
    ``{"family": name, **params}``.
    """

    sources: tuple
    algorithm: str
    alpha: Optional[float] = None  # None = certified default
    prediction: PredictionSpec = PredictionSpec()
    trials: int = 1
    with_benchmark: bool = True

    def to_dict(self) -> dict:
        return {
            "sources": list(self.sources),
            "algorithm": self.algorithm,
            "alpha": self.alpha,
            "prediction": vars(self.prediction).copy(),
            "trials": self.trials,
            "with_benchmark": self.with_benchmark,
        }


@dataclass
class ExperimentResult:
    reports: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # {"instance_id", "error"}


def resolve_source(source: Union[str, dict]) -> tuple[str, Instance]:
    if isinstance(source, str):
        return os.path.basename(source), load_instance(source)
    spec = dict(source)
    family = spec.pop("family")
    if family not in GENERATOR_FAMILIES:
        raise ValueError(f"unknown generator family {family!r}")
    label = family + "(" + ",".join(f"{k}={v}" for k, v in sorted(spec.items())) + ")"
    return label, GENERATOR_FAMILIES[family](**spec)


def run_cell(instance: Instance, algorithm: str, alpha: Optional[float],
             prediction: PredictionSpec, instance_id: str = "",
             with_benchmark: bool = True) -> engine.RunReport:
    """Run one (instance, algorithm, prediction) cell and attach metrics."""
    stream = ValueStream.from_instance(instance)
    config = engine.AlgorithmConfig(variant=algorithm, alpha=alpha)
    if algorithm == "binary":
        _, report = engine.run_binary(stream, config)
    elif algorithm == "single":
        _, report = engine.run_single_good(stream, prediction.build(instance), config)
    elif algorithm == "batched":
        _, report = engine.run_batched(stream, prediction.build(instance), config)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    report.instance_id = instance_id
    if with_benchmark:
        bench = metrics.offline_pf_benchmark(instance)
        report.nsw_ratio = ratio(bench.nsw, report.nsw)
    return report


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Execute every cell of the grid; engine aborts are recorded, not
    raised, so one poisoned cell cannot sink the rest of the grid."""
    result = ExperimentResult()
    for source in config.sources:
        instance_id, instance = resolve_source(source)
        for trial in range(config.trials):
            label = instance_id if config.trials == 1 else f"{instance_id}#{trial}"
            try:
                report = run_cell(instance, config.algorithm, config.alpha,
                                  config.prediction, label, config.with_benchmark)
                result.reports.append(report)
            except (CertifiedInfeasibilityError, SolverConvergenceError) as exc:
                result.failures.append({"instance_id": label, "error": str(exc)})
    return result


def sweep_prediction_error(instance: Instance, d_values, mode: str = "worst_under",
                           algorithm: str = "batched",
                           with_benchmark: bool = False) -> list[engine.RunReport]:
    """Run the same instance under increasingly underestimated predictions.

    Each run uses the certified default alpha for its declared d, so the
    report's alpha column traces the graceful-degradation curve."""
    reports = []
    for d in d_values:
        spec = PredictionSpec(mode=mode, c=1.0, d=float(d))
        report = run_cell(instance, algorithm, None, spec,
                          instance_id=f"d={d:g}", with_benchmark=with_benchmark)
        report.sweep_value = float(d)
        reports.append(report)
    return reports


@dataclass
class SuiteEntry:
    variant: int          # k or t_stop, the adversary's hidden choice
    alg_nsw: float
    comparator_nsw: float
    nsw_ratio: float


@dataclass
class SuiteReport:
    family: str
    params: dict
    floor: float
    entries: list
    max_ratio: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "params": self.params,
            "floor": self.floor,
            "max_ratio": self.max_ratio,
            "passed": self.passed,
            "entries": [vars(e).copy() for e in self.entries],
        }


def lower_bound_suite(family: str, **params) -> SuiteReport:
    """Run an engine across every variant of an adversarial family.

    binary:              params n;            floor H_n / 2
    geometric:           params t, b, m;      floor t / (2b)
    prediction_hardness: params b, t_prime;   floor H_t' / 2

    The geometric family feeds the single-good engine an uninformative
    prediction of 1 (it has nothing better without predictions); the
    prediction-hardness family feeds it perfect predictions, which are
    identical across variants by construction.
    """
    entries: list[SuiteEntry] = []
    if family == "binary":
        n = int(params["n"])
        floor = harmonic(n) / 2.0
        for k in range(1, n):
            instance = generators.gen_binary_lower_bound(n, k)
            _, report = engine.run_binary(ValueStream.from_instance(instance),
                                          engine.AlgorithmConfig("binary"))
            comparator = generators.binary_lower_bound_comparator(n, k)
            comp_nsw = metrics.nash_welfare(instance, comparator)
            entries.append(SuiteEntry(k, report.nsw, comp_nsw, ratio(comp_nsw, report.nsw)))
    elif family == "geometric":
        t, b, m = int(params["t"]), float(params["b"]), float(params.get("m", 1e3))
        floor = t / (2.0 * b)
        for t_stop in range(1, t + 1):
            instance = generators.gen_geometric_no_predictions(t, t_stop, m, budget=b)
            preds = PredictionSet(v_tilde=np.ones(1), c=np.ones(1), d=np.ones(1))
            _, report = engine.run_single_good(ValueStream.from_instance(instance),
                                               preds, engine.AlgorithmConfig("single"))
            comparator = generators.geometric_comparator(t, t_stop)
            comp_nsw = metrics.nash_welfare(instance, comparator)
            entries.append(SuiteEntry(t_stop, report.nsw, comp_nsw,
                                      ratio(comp_nsw, report.nsw)))
    elif family == "prediction_hardness":
        b, t_prime = int(params["b"]), int(params["t_prime"])
        floor = harmonic(t_prime) / 2.0
        for k in range(1, t_prime):
            instance = generators.gen_prediction_hardness(b, t_prime, k)
            preds = PredictionSet.perfect(instance)
            _, report = engine.run_single_good(ValueStream.from_instance(instance),
                                               preds, engine.AlgorithmConfig("single"))
            comparator = generators.prediction_hardness_comparator(b, t_prime, k)
            comp_nsw = metrics.nash_welfare(instance, comparator)
            entries.append(SuiteEntry(k, report.nsw, comp_nsw, ratio(comp_nsw, report.nsw)))
    else:
        raise ValueError(f"unknown suite family {family!r}")

    max_ratio = max(e.nsw_ratio for e in entries)
    return SuiteReport(family=family, params=dict(params), floor=floor,
                       entries=entries, max_ratio=max_ratio,
                       passed=max_ratio >= floor - 1e-6)


def passes_invariants(report: engine.RunReport, tol: float = 1e-9) -> bool:
    """All analysis-side checks a run must satisfy: feasibility, a
    feasible dual certificate, the set-aside floor, the promised-utility
    bound, and (when the run claims its certified level) the
    certificate-spend inequality."""
    from .model import EPS_KKT

    ok = report.feasibility.feasible and report.dual_feasible
    ok = ok and report.setaside_floor_slack >= -tol
    ok = ok and report.promised_bound_slack >= -tol
    if report.certified:
        ok = ok and report.key_invariant_residual <= EPS_KKT * report.budget
    return ok


def report_row(report: engine.RunReport) -> dict:
    return {
        "instance_id": report.instance_id,
        "algorithm": report.variant,
        "alpha": report.alpha,
        "pf": report.pf_value,
        "nsw": report.nsw,
        "nsw_ratio": report.nsw_ratio,
        "dual_bound": report.dual_bound,
        "key_invariant_residual": report.key_invariant_residual,
        "certified": report.certified,
        "feasible": report.feasibility.feasible,
        "dual_feasible": report.dual_feasible,
        "budget_slack": report.feasibility.budget_slack,
        "max_kkt_residual": report.max_kkt_residual,
        "n_warnings": len(report.warnings),
    }


def _write_csv(rows: list[dict], columns: list[str], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def emit_tables(reports: list, fmt: str, path: str) -> list[str]:
    """Write one row per run, plus a plot companion when the reports
    carry swept parameter values.  Returns the paths written."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown format {fmt!r}")
    written = [path]
    rows = [report_row(r) for r in reports]
    if fmt == "csv":
        _write_csv(rows, CSV_COLUMNS, path)
    else:
        with open(path, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=1)
    swept = [r for r in reports if getattr(r, "sweep_value", None) is not None]
    if swept:
        stem, ext = os.path.splitext(path)
        plot_path = f"{stem}_plot.csv"
        plot_rows = [{
            "sweep": r.sweep_value,
            "pf": r.pf_value,
            "nsw_ratio": r.nsw_ratio,
            "certified_alpha": r.alpha_certified_floor,
        } for r in swept]
        _write_csv(plot_rows, PLOT_COLUMNS, plot_path)
        written.append(plot_path)
    return written
