"""Replicate engine and metric aggregation for the simulation study.

Each replicate derives its sampling and response seeds from (master_seed,
replicate index, phase tag) through a splitmix64 mixer, so replicates can be
evaluated in any order or in parallel worker processes and still produce a
bit-identical study report: aggregation always runs over records sorted by
replicate index.
"""

from __future__ import annotations

import math
import multiprocessing
from dataclasses import dataclass, field

import numpy as np

from .designs import DesignSpec, draw_sample
from .estimators import (
    VARIANT_TO_EEKIND,
    Variant,
    ht_estimate,
    linearized_estimate,
    nwa_estimate,
    two_phase_estimate,
    gamma_cal_population,
)
from .population import Population
from .response import draw_response
from .solvers import EEKind, EstimatingEquation, SolverControls, solve
from .variance import VarianceEstimate, confidence_interval, var_hat_calS, var_hat_calU, var_hat_mle

__all__ = [
    "TAG_SAMPLING",
    "TAG_RESPONSE",
    "TAG_POPULATION",
    "mix_seed",
    "Scenario",
    "VariantOutcome",
    "ReplicateRecord",
    "VariantMetrics",
    "StudyReport",
    "run_replicate",
    "run_study",
    "relative_bias",
    "rrvar",
    "coverage_rate",
    "write_raw_records",
    "linearization_gap",
    "STATUS_OK",
    "STATUS_DEGENERATE",
]

_MASK64 = (1 << 64) - 1

# Phase tags keep the sampling, response, and population streams disjoint.
TAG_SAMPLING = 0x53414D50
TAG_RESPONSE = 0x52455350
TAG_POPULATION = 0x504F5055

STATUS_OK = "ok"
STATUS_DEGENERATE = "degenerate"


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(*parts: int) -> int:
    """Fold integers into one 64-bit seed with a splitmix64 avalanche per part."""
    acc = 0
    for part in parts:
        acc = _splitmix64((acc ^ (int(part) & _MASK64)) & _MASK64)
    return acc


@dataclass(frozen=True)
class Scenario:
    """One simulation cell: fixed population and design, replicated L times."""

    population: Population
    design: DesignSpec
    reps: int
    master_seed: int
    variants: tuple[Variant, ...] = (
        Variant.HT,
        Variant.TRUE_P,
        Variant.MLE_K1,
        Variant.MLE_KINVPI,
        Variant.CAL_U,
        Variant.CAL_S,
    )
    controls: SolverControls = SolverControls()

    def __post_init__(self):
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if self.population.size != self.design.size:
            raise ValueError("population and design sizes differ")


@dataclass(frozen=True)
class VariantOutcome:
    """Per-replicate result for one estimator variant.

    Failed fits carry a status and no numbers; the CI is None whenever the
    variance estimate was unavailable or negative.
    """

    status: str
    estimate: float | None = None
    v_sam: float | None = None
    v_nr: float | None = None
    ci: tuple[float, float] | None = None
    max_weight: float | None = None
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


@dataclass(frozen=True)
class ReplicateRecord:
    index: int
    n_sampled: int
    n_respondents: int
    outcomes: dict[Variant, VariantOutcome]


def _variance_for(
    variant: Variant,
    design: DesignSpec,
    pi_r: np.ndarray,
    x_r: np.ndarray,
    y_r: np.ndarray,
    p_hat_r: np.ndarray,
) -> VarianceEstimate:
    if variant is Variant.MLE_K1:
        return var_hat_mle(design, pi_r, x_r, y_r, p_hat_r, survey_weighted=False)
    if variant is Variant.MLE_KINVPI:
        return var_hat_mle(design, pi_r, x_r, y_r, p_hat_r, survey_weighted=True)
    if variant is Variant.CAL_U:
        return var_hat_calU(design, pi_r, x_r, y_r, p_hat_r)
    return var_hat_calS(design, pi_r, x_r, y_r, p_hat_r)


def run_replicate(scenario: Scenario, index: int) -> ReplicateRecord:
    """Draw one sample and respondent set, then fit and estimate every variant."""
    pop = scenario.population
    design = scenario.design
    sample = draw_sample(design, mix_seed(scenario.master_seed, index, TAG_SAMPLING))
    p_s = pop.true_p[sample.indices]
    resp = draw_response(sample, p_s, mix_seed(scenario.master_seed, index, TAG_RESPONSE))

    x_s = pop.aux[sample.indices]
    y_s = pop.y[sample.indices]
    pi_s = sample.pi_s
    mask = resp.resp_mask
    x_r, y_r, pi_r, p_r = x_s[mask], y_s[mask], pi_s[mask], p_s[mask]
    n_r = int(mask.sum())
    q = pop.n_aux

    outcomes: dict[Variant, VariantOutcome] = {}
    for variant in scenario.variants:
        if variant is Variant.HT:
            outcomes[variant] = VariantOutcome(
                status=STATUS_OK,
                estimate=ht_estimate(pi_s, y_s),
                max_weight=float(np.max(1.0 / pi_s)) if pi_s.size else None,
            )
            continue
        if variant is Variant.TRUE_P:
            outcomes[variant] = VariantOutcome(
                status=STATUS_OK,
                estimate=two_phase_estimate(pi_r, p_r, y_r),
                max_weight=float(np.max(1.0 / (pi_r * p_r))) if n_r else None,
            )
            continue
        if n_r < q:
            outcomes[variant] = VariantOutcome(status=STATUS_DEGENERATE)
            continue
        kind = VARIANT_TO_EEKIND[variant]
        if kind is EEKind.CAL_POPULATION:
            eq = EstimatingEquation.cal_population(x_s, pi_s, resp.r, pop.aux.sum(axis=0))
        elif kind is EEKind.CAL_SAMPLE:
            eq = EstimatingEquation.cal_sample(x_s, pi_s, resp.r)
        else:
            eq = EstimatingEquation.mle(x_s, pi_s, resp.r, survey_weighted=kind is EEKind.MLE_KINVPI)
        fit = solve(eq, scenario.controls)
        if not fit.converged:
            outcomes[variant] = VariantOutcome(status=fit.status.value, iterations=fit.iterations)
            continue
        p_hat_r = fit.p_hat[mask]
        record = nwa_estimate(variant, pi_r, y_r, p_hat_r, fit)
        ve = _variance_for(variant, design, pi_r, x_r, y_r, p_hat_r)
        ci = confidence_interval(record.value, ve.total) if math.isfinite(ve.total) else None
        outcomes[variant] = VariantOutcome(
            status=STATUS_OK,
            estimate=record.value,
            v_sam=ve.v_sam,
            v_nr=ve.v_nr,
            ci=ci,
            max_weight=float(np.max(record.weights)),
            iterations=fit.iterations,
        )

    return ReplicateRecord(
        index=index, n_sampled=sample.size, n_respondents=n_r, outcomes=outcomes
    )


def relative_bias(values: np.ndarray, true_total: float) -> float | None:
    """(mean estimate - Y) / Y; None on an empty stream."""
    if len(values) == 0:
        return None
    return (float(np.mean(values)) - true_total) / true_total


def rrvar(values: np.ndarray, true_total: float) -> float | None:
    """sqrt(sample variance of the estimates) / Y; None below two values."""
    if len(values) < 2:
        return None
    return math.sqrt(float(np.var(values, ddof=1))) / true_total


def coverage_rate(intervals: list[tuple[float, float]], true_total: float) -> float | None:
    """Fraction of intervals containing Y; None when no interval was formed."""
    if not intervals:
        return None
    hits = sum(1 for lo, hi in intervals if lo <= true_total <= hi)
    return hits / len(intervals)


@dataclass(frozen=True)
class VariantMetrics:
    """Study aggregates for one variant (None where undefined)."""

    variant: Variant
    n_ok: int
    n_failed: int
    failure_rate: float
    rb: float | None
    rrvar: float | None
    mc_variance: float | None
    mean_variance_estimate: float | None
    variance_rb: float | None
    mean_ci_length: float | None
    n_ci: int
    coverage: float | None
    max_weight: float | None


@dataclass(frozen=True)
class StudyReport:
    """Monte Carlo aggregates over all replicates of one scenario."""

    true_total: float
    reps: int
    master_seed: int
    design_kind: str
    rho: float
    metrics: dict[Variant, VariantMetrics] = field(default_factory=dict)


def _aggregate(scenario: Scenario, records: list[ReplicateRecord]) -> StudyReport:
    y_total = scenario.population.total
    metrics: dict[Variant, VariantMetrics] = {}
    for variant in scenario.variants:
        outs = [rec.outcomes[variant] for rec in records]
        ok = [o for o in outs if o.ok]
        estimates = np.array([o.estimate for o in ok], dtype=float)
        n_ok = len(ok)
        n_failed = len(outs) - n_ok
        rb = relative_bias(estimates, y_total) if n_ok else None
        rr = rrvar(estimates, y_total) if n_ok else None
        mc_var = float(np.var(estimates, ddof=1)) if n_ok >= 2 else None
        v_totals = np.array(
            [o.v_sam + o.v_nr for o in ok if o.v_sam is not None and math.isfinite(o.v_sam + o.v_nr)],
            dtype=float,
        )
        mean_v = float(np.mean(v_totals)) if v_totals.size else None
        var_rb = (
            (mean_v - mc_var) / mc_var
            if mean_v is not None and mc_var is not None and mc_var > 0.0
            else None
        )
        cis = [o.ci for o in ok if o.ci is not None]
        mean_len = float(np.mean([hi - lo for lo, hi in cis])) if cis else None
        cr = coverage_rate(cis, y_total)
        weights = [o.max_weight for o in ok if o.max_weight is not None]
        metrics[variant] = VariantMetrics(
            variant=variant,
            n_ok=n_ok,
            n_failed=n_failed,
            failure_rate=n_failed / len(outs),
            rb=rb,
            rrvar=rr,
            mc_variance=mc_var,
            mean_variance_estimate=mean_v,
            variance_rb=var_rb,
            mean_ci_length=mean_len,
            n_ci=len(cis),
            coverage=cr,
            max_weight=max(weights) if weights else None,
        )
    return StudyReport(
        true_total=y_total,
        reps=scenario.reps,
        master_seed=scenario.master_seed,
        design_kind=scenario.design.kind.value,
        rho=scenario.population.rho,
        metrics=metrics,
    )


def _run_chunk(args: tuple[Scenario, int, int]) -> list[ReplicateRecord]:
    scenario, start, stop = args
    return [run_replicate(scenario, i) for i in range(start, stop)]


def run_study(
    scenario: Scenario, threads: int = 1, return_records: bool = False
) -> StudyReport | tuple[StudyReport, list[ReplicateRecord]]:
    """Run every replicate and aggregate; bit-identical for any worker count.

    ``threads`` > 1 fans contiguous index chunks out to worker processes;
    records are re-assembled in index order before aggregation, so the report
    does not depend on scheduling.
    """
    L = scenario.reps
    if threads <= 1 or L < 2:
        records = [run_replicate(scenario, i) for i in range(L)]
    else:
        workers = min(threads, L)
        n_chunks = min(L, workers * 4)
        bounds = np.linspace(0, L, n_chunks + 1, dtype=int)
        tasks = [(scenario, int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if a < b]
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=workers) as pool:
            parts = pool.map(_run_chunk, tasks)
        records = [rec for part in parts for rec in part]
    report = _aggregate(scenario, records)
    if return_records:
        return report, records
    return report


def write_raw_records(path, records: list[ReplicateRecord], header_comment: str | None = None) -> None:
    """Stream per-replicate outcomes to CSV with round-trippable floats."""

    def fmt(v) -> str:
        return "" if v is None else f"{v:.17g}"

    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write("replicate,variant,estimate,v_sam,v_nr,ci_low,ci_high,max_w,status\n")
        for rec in records:
            for variant, o in rec.outcomes.items():
                lo, hi = o.ci if o.ci is not None else (None, None)
                fh.write(
                    f"{rec.index},{variant.value},{fmt(o.estimate)},{fmt(o.v_sam)},"
                    f"{fmt(o.v_nr)},{fmt(lo)},{fmt(hi)},{fmt(o.max_weight)},{o.status}\n"
                )


def linearization_gap(
    scenario: Scenario, variants: tuple[Variant, ...], reps: int | None = None
) -> dict[Variant, float]:
    """Median of |reweighted - linearized| / N over converged replicates.

    Diagnostic for the first-order equivalence: the gap shrinks with the
    sample size. Uses the scenario's seed scheme, true probabilities for the
    linearized form, and skips replicates whose fit did not converge.
    """
    pop = scenario.population
    design = scenario.design
    L = reps if reps is not None else scenario.reps
    gamma_u = gamma_cal_population(pop)
    gaps: dict[Variant, list[float]] = {v: [] for v in variants}
    for index in range(L):
        sample = draw_sample(design, mix_seed(scenario.master_seed, index, TAG_SAMPLING))
        p_s = pop.true_p[sample.indices]
        resp = draw_response(sample, p_s, mix_seed(scenario.master_seed, index, TAG_RESPONSE))
        x_s = pop.aux[sample.indices]
        pi_s = sample.pi_s
        mask = resp.resp_mask
        n_r = int(mask.sum())
        if n_r < pop.n_aux:
            continue
        y_r = pop.y[sample.indices][mask]
        pi_r = pi_s[mask]
        for variant in variants:
            kind = VARIANT_TO_EEKIND[variant]
            if kind is EEKind.CAL_POPULATION:
                eq = EstimatingEquation.cal_population(x_s, pi_s, resp.r, pop.aux.sum(axis=0))
            elif kind is EEKind.CAL_SAMPLE:
                eq = EstimatingEquation.cal_sample(x_s, pi_s, resp.r)
            else:
                eq = EstimatingEquation.mle(
                    x_s, pi_s, resp.r, survey_weighted=kind is EEKind.MLE_KINVPI
                )
            fit = solve(eq, scenario.controls)
            if not fit.converged:
                continue
            record = nwa_estimate(variant, pi_r, y_r, fit.p_hat[mask], fit)
            lin = linearized_estimate(
                variant,
                pop,
                sample,
                resp,
                gamma=gamma_u if variant is Variant.CAL_U else None,
            )
            gaps[variant].append(abs(record.value - lin) / pop.size)
    return {v: float(np.median(g)) for v, g in gaps.items() if g}
