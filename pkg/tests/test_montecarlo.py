import math

import numpy as np
import pytest

from nwacal import (
    GenConfig,
    Population,
    Variant,
    generate_population,
    poisson_design,
    srs_design,
)
from nwacal.montecarlo import (
    STATUS_OK,
    Scenario,
    coverage_rate,
    mix_seed,
    relative_bias,
    rrvar,
    run_replicate,
    run_study,
    write_raw_records,
)


def _scenario(pop, design, reps=50, seed=11):
    return Scenario(population=pop, design=design, reps=reps, master_seed=seed)


def test_mix_seed_deterministic_and_spread():
    a = mix_seed(1, 2, 3)
    assert a == mix_seed(1, 2, 3)
    vals = {mix_seed(5, i, 7) for i in range(1000)}
    assert len(vals) == 1000
    assert all(0 <= v < 2**64 for v in vals)
    assert mix_seed(5, 0, 1) != mix_seed(5, 0, 2)


def test_replicate_deterministic(study_population, study_srs):
    sc = _scenario(study_population, study_srs)
    a = run_replicate(sc, 3)
    b = run_replicate(sc, 3)
    assert a.n_respondents == b.n_respondents
    for v in sc.variants:
        oa, ob = a.outcomes[v], b.outcomes[v]
        assert oa.status == ob.status
        assert oa.estimate == ob.estimate
        assert oa.v_sam == ob.v_sam
        assert oa.ci == ob.ci


def test_replicates_differ_across_indices(study_population, study_srs):
    sc = _scenario(study_population, study_srs)
    a = run_replicate(sc, 0)
    b = run_replicate(sc, 1)
    assert a.outcomes[Variant.HT].estimate != b.outcomes[Variant.HT].estimate


def test_full_response_population_flags_fitted_variants(study_population, study_srs):
    pop = study_population
    ones = Population(
        aux=pop.aux, y=pop.y, true_lambda=None, true_p=np.ones(pop.size), rho=pop.rho
    )
    sc = _scenario(ones, study_srs)
    rec = run_replicate(sc, 0)
    assert rec.outcomes[Variant.HT].status == STATUS_OK
    assert rec.outcomes[Variant.TRUE_P].status == STATUS_OK
    for v in (Variant.MLE_K1, Variant.MLE_KINVPI, Variant.CAL_U, Variant.CAL_S):
        assert rec.outcomes[v].status == "diverged"
        assert rec.outcomes[v].estimate is None


def test_respondent_count_near_study_mean(study_population, study_srs):
    sc = _scenario(study_population, study_srs, reps=300)
    counts = [run_replicate(sc, i).n_respondents for i in range(300)]
    # mean respondent count sits near 84 out of n=100
    se = math.sqrt(100 * 0.84 * 0.16 / 300)
    assert abs(np.mean(counts) - 84.0) <= 4.0 * se + 1.0


def test_relative_bias_and_rrvar_two_point_oracle():
    vals = np.array([90.0, 110.0])
    assert relative_bias(vals, 100.0) == 0.0
    assert rrvar(vals, 100.0) == pytest.approx(0.1414213562373095, abs=1e-15)


def test_rrvar_degenerate_cases():
    assert rrvar(np.array([5.0]), 100.0) is None
    assert rrvar(np.array([7.0, 7.0]), 7.0) == 0.0


def test_empty_streams_give_absent_metrics():
    assert relative_bias(np.array([]), 10.0) is None
    assert rrvar(np.array([]), 10.0) is None
    assert coverage_rate([], 10.0) is None


def test_coverage_rate_cases():
    assert coverage_rate([], 10.0) is None
    assert coverage_rate([(9.0, 11.0), (9.5, 10.5)], 10.0) == 1.0
    assert coverage_rate([(11.0, 12.0)], 10.0) == 0.0


def test_identical_estimates_give_zero_spread():
    vals = np.full(10, 42.0)
    assert relative_bias(vals, 42.0) == 0.0
    assert rrvar(vals, 42.0) == 0.0
    assert coverage_rate([(41.0, 43.0)] * 10, 42.0) == 1.0


def test_study_report_deterministic(study_population, study_srs):
    sc = _scenario(study_population, study_srs, reps=40)
    a = run_study(sc)
    b = run_study(sc)
    for v in sc.variants:
        ma, mb = a.metrics[v], b.metrics[v]
        assert ma.rb == mb.rb
        assert ma.rrvar == mb.rrvar
        assert ma.mean_ci_length == mb.mean_ci_length
        assert ma.max_weight == mb.max_weight


def test_parallel_equals_serial(study_population, study_srs):
    sc = _scenario(study_population, study_srs, reps=60)
    serial = run_study(sc, threads=1)
    parallel = run_study(sc, threads=4)
    for v in sc.variants:
        ms, mp_ = serial.metrics[v], parallel.metrics[v]
        assert ms.rb == mp_.rb
        assert ms.rrvar == mp_.rrvar
        assert ms.variance_rb == mp_.variance_rb
        assert ms.coverage == mp_.coverage
        assert ms.max_weight == mp_.max_weight
        assert ms.failure_rate == mp_.failure_rate


def test_failure_accounting_excludes_per_variant(study_population):
    # Poisson + population-level calibration fails on some replicates; those
    # replicates still contribute to every other variant.
    pop = study_population
    design = poisson_design(pop, 100.0)
    sc = _scenario(pop, design, reps=150, seed=5)
    report, records = run_study(sc, return_records=True)
    m = report.metrics[Variant.CAL_U]
    assert m.n_ok + m.n_failed == 150
    assert report.metrics[Variant.CAL_S].failure_rate == 0.0
    assert report.metrics[Variant.HT].n_ok == 150
    failed = [r for r in records if not r.outcomes[Variant.CAL_U].ok]
    if failed:
        assert failed[0].outcomes[Variant.HT].estimate is not None


def test_unbiasedness_of_reference_estimators(small_population):
    design = srs_design(small_population.size, 30)
    sc = _scenario(small_population, design, reps=800, seed=8)
    report = run_study(sc, threads=2)
    Y = small_population.total
    for v in (Variant.HT, Variant.TRUE_P):
        m = report.metrics[v]
        se_rel = m.rrvar / math.sqrt(m.n_ok)
        assert abs(m.rb) <= 4.0 * se_rel


def test_write_raw_records_round_trip(tmp_path, study_population, study_srs):
    sc = _scenario(study_population, study_srs, reps=5)
    report, records = run_study(sc, return_records=True)
    path = tmp_path / "raw.csv"
    write_raw_records(path, records, header_comment="seed=11")
    lines = path.read_text().splitlines()
    assert lines[0] == "# seed=11"
    assert lines[1] == "replicate,variant,estimate,v_sam,v_nr,ci_low,ci_high,max_w,status"
    assert len(lines) == 2 + 5 * len(sc.variants)
    cells = lines[2].split(",")
    est = records[0].outcomes[Variant.HT].estimate
    assert float(cells[2]) == est  # 17 significant digits round-trip


def test_scenario_validation(study_population, study_srs):
    with pytest.raises(ValueError):
        Scenario(population=study_population, design=study_srs, reps=0, master_seed=1)
    small = generate_population(GenConfig(N=50, seed=1))
    with pytest.raises(ValueError):
        Scenario(population=small, design=study_srs, reps=5, master_seed=1)
