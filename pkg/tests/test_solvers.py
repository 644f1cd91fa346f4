import math

import numpy as np
import pytest

from conftest import random_instance
from oracles import fd_jacobian, grid_minimizer

from nwacal import (
    EEKind,
    EstimatingEquation,
    FitStatus,
    SolverControls,
    calib_residual,
    jacobian,
    residual,
    score_mle,
    solve,
)


def _logit(p):
    return math.log(p / (1 - p))


def test_score_single_unit_hand_value():
    got = score_mle([0.0], x=[[1.0]], pi=[0.5], r=[1])
    assert got == pytest.approx([0.5], abs=1e-15)


def test_score_survey_weights_proportional_under_equal_pi():
    x, pi, r, _ = random_instance(0)
    pi = np.full_like(pi, 0.3)
    lam = np.array([0.2, -0.1])
    plain = score_mle(lam, x, pi, r)
    weighted = score_mle(lam, x, pi, r, survey_weighted=True)
    assert np.allclose(weighted, plain / 0.3, rtol=1e-12)


def test_calib_residual_self_consistent():
    x, pi, r, _ = random_instance(1)
    mask = r == 1
    lam_star = np.array([0.3, 0.1])
    inv_f = 1.0 + np.exp(-(x[mask] @ lam_star))
    target = (inv_f / pi[mask]) @ x[mask]
    assert np.allclose(calib_residual(lam_star, x[mask], pi[mask], target), 0.0, atol=1e-10)


def test_calib_intercept_only_scalar_solution():
    # SRSWOR, intercept only: residual vanishes exactly at logit(n_r / n).
    n, n_r = 20, 13
    x = np.ones((n, 1))
    pi = np.full(n, 0.1)
    r = np.array([1] * n_r + [0] * (n - n_r))
    eq = EstimatingEquation.cal_sample(x, pi, r)
    lam_star = np.array([_logit(n_r / n)])
    assert np.allclose(residual(lam_star, eq), 0.0, atol=1e-9)
    fit = solve(eq)
    assert fit.converged
    assert fit.lambda_hat[0] == pytest.approx(lam_star[0], abs=1e-8)


def test_full_response_target_unreachable():
    # Calibrating on the full-sample HT total with everyone responding: the
    # residual stays strictly positive in the intercept coordinate for any
    # finite coefficients (motivates divergence detection).
    x, pi, _, _ = random_instance(2)
    r = np.ones(x.shape[0], dtype=np.int64)
    eq = EstimatingEquation.cal_sample(x, pi, r)
    for lam in ([0.0, 0.0], [3.0, 1.0], [10.0, -2.0]):
        assert residual(np.array(lam), eq)[0] > 0.0
    assert solve(eq).status is FitStatus.DIVERGED


def test_jacobian_single_unit_hand_value():
    eq = EstimatingEquation.mle(x=[[1.0]], pi=[0.5], r=[1])
    got = jacobian(np.array([0.0]), eq)
    assert got[0, 0] == pytest.approx(-0.25, abs=1e-15)


@pytest.mark.parametrize("seed", range(6))
def test_jacobian_matches_finite_differences(seed):
    x, pi, r, _ = random_instance(seed, n=15)
    pop_totals = x.sum(axis=0) * 1.3
    equations = [
        EstimatingEquation.mle(x, pi, r),
        EstimatingEquation.mle(x, pi, r, survey_weighted=True),
        EstimatingEquation.cal_sample(x, pi, r),
        EstimatingEquation.cal_population(x, pi, r, pop_totals),
    ]
    rng = np.random.default_rng(seed)
    lam = rng.normal(0, 0.5, size=2)
    for eq in equations:
        analytic = jacobian(lam, eq)
        numeric = fd_jacobian(lam, eq)
        assert np.allclose(analytic, numeric, rtol=1e-5, atol=1e-7)


def test_calibration_jacobian_negative_definite():
    x, pi, r, _ = random_instance(3)
    eq = EstimatingEquation.cal_sample(x, pi, r)
    jac = jacobian(np.array([0.1, 0.2]), eq)
    assert np.allclose(jac, jac.T)
    assert np.all(np.linalg.eigvalsh(jac) < 0.0)


@pytest.mark.parametrize("kind", list(EEKind))
def test_solve_matches_grid_oracle(kind):
    # Tiny instance: Newton solution against brute-force grid refinement.
    rng = np.random.default_rng(17)
    x1 = rng.normal(0.0, 1.0, 8)
    x = np.column_stack([np.ones(8), x1])
    pi = rng.uniform(0.3, 0.9, 8)
    r = np.array([1, 1, 0, 1, 1, 0, 1, 1])
    lam_star = np.array([0.4, -0.3])
    mask = r == 1
    if kind is EEKind.CAL_POPULATION:
        inv_f = 1.0 + np.exp(-(x[mask] @ lam_star))
        eq = EstimatingEquation.cal_population(x, pi, r, (inv_f / pi[mask]) @ x[mask])
    elif kind is EEKind.CAL_SAMPLE:
        eq = EstimatingEquation.cal_sample(x, pi, r)
    else:
        eq = EstimatingEquation.mle(x, pi, r, survey_weighted=kind is EEKind.MLE_KINVPI)
    fit = solve(eq)
    assert fit.converged
    oracle = grid_minimizer(eq)
    assert np.all(np.abs(fit.lambda_hat - oracle) <= 1e-4)


def test_converged_calibration_identities(study_population, study_srs):
    from nwacal import draw_response, draw_sample

    pop = study_population
    s = draw_sample(study_srs, 12)
    resp = draw_response(s, pop.true_p[s.indices], 13)
    x_s = pop.aux[s.indices]
    totals = pop.aux.sum(axis=0)
    eq_u = EstimatingEquation.cal_population(x_s, s.pi_s, resp.r, totals)
    fit_u = solve(eq_u)
    assert fit_u.converged
    mask = resp.resp_mask
    achieved = ((1.0 / (s.pi_s[mask] * fit_u.p_hat[mask]))[:, None] * x_s[mask]).sum(axis=0)
    scale = max(1.0, np.max(np.abs(totals)))
    assert np.max(np.abs(achieved - totals)) <= 1e-8 * scale

    eq_s = EstimatingEquation.cal_sample(x_s, s.pi_s, resp.r)
    fit_s = solve(eq_s)
    assert fit_s.converged
    ht = (x_s / s.pi_s[:, None]).sum(axis=0)
    achieved = ((1.0 / (s.pi_s[mask] * fit_s.p_hat[mask]))[:, None] * x_s[mask]).sum(axis=0)
    assert np.max(np.abs(achieved - ht)) <= 1e-8 * max(1.0, np.max(np.abs(ht)))


def test_converged_mle_score_within_tolerance(study_population, study_srs):
    from nwacal import draw_response, draw_sample

    pop = study_population
    s = draw_sample(study_srs, 21)
    resp = draw_response(s, pop.true_p[s.indices], 22)
    eq = EstimatingEquation.mle(pop.aux[s.indices], s.pi_s, resp.r)
    fit = solve(eq)
    assert fit.converged
    assert np.max(np.abs(residual(fit.lambda_hat, eq))) <= 1e-8


def test_full_response_mle_diverges():
    x, pi, _, _ = random_instance(5)
    r = np.ones(x.shape[0], dtype=np.int64)
    fit = solve(EstimatingEquation.mle(x, pi, r))
    assert fit.status is FitStatus.DIVERGED


def test_empty_respondents_diverges():
    x, pi, _, _ = random_instance(6)
    r = np.zeros(x.shape[0], dtype=np.int64)
    fit = solve(EstimatingEquation.cal_sample(x, pi, r))
    assert fit.status is FitStatus.DIVERGED


def test_fitted_probabilities_in_open_interval():
    for seed in range(8):
        x, pi, r, _ = random_instance(seed)
        fit = solve(EstimatingEquation.mle(x, pi, r))
        assert np.all(fit.p_hat > 0.0)
        assert np.all(fit.p_hat < 1.0)


def test_srs_k_modes_same_solution(study_population, study_srs):
    from nwacal import draw_response, draw_sample

    pop = study_population
    s = draw_sample(study_srs, 30)
    resp = draw_response(s, pop.true_p[s.indices], 31)
    x_s = pop.aux[s.indices]
    fit1 = solve(EstimatingEquation.mle(x_s, s.pi_s, resp.r))
    fit2 = solve(EstimatingEquation.mle(x_s, s.pi_s, resp.r, survey_weighted=True))
    assert fit1.converged and fit2.converged
    assert np.allclose(fit1.lambda_hat, fit2.lambda_hat, atol=1e-10)


@pytest.mark.parametrize("a,b", [(2.0, -1.0), (0.5, 3.0)])
def test_affine_reparameterization_invariance(a, b):
    x, pi, r, _ = random_instance(9, n=30)
    fit = solve(EstimatingEquation.mle(x, pi, r))
    x2 = x.copy()
    x2[:, 1] = a * x[:, 1] + b
    fit2 = solve(EstimatingEquation.mle(x2, pi, r))
    assert fit.converged and fit2.converged
    assert np.allclose(fit.p_hat, fit2.p_hat, atol=1e-8)
    assert not np.allclose(fit.lambda_hat, fit2.lambda_hat)


def test_controls_validation():
    with pytest.raises(ValueError):
        SolverControls(tol=0.0)
    with pytest.raises(ValueError):
        SolverControls(max_iter=0)
    with pytest.raises(ValueError):
        SolverControls(max_step=-1.0)


def test_lambda0_override_and_trace():
    x, pi, r, _ = random_instance(10)
    eq = EstimatingEquation.mle(x, pi, r)
    controls = SolverControls(lambda0=np.array([0.0, 0.0]), trace=True)
    fit = solve(eq, controls)
    assert fit.converged
    assert len(fit.trace) == fit.iterations
    iters, res_norms, steps = zip(*fit.trace)
    assert list(iters) == list(range(1, fit.iterations + 1))
    assert all(s > 0 for s in steps)
    assert res_norms[-1] == fit.residual_norm


def test_singular_jacobian_detected():
    # Collinear auxiliaries make the score Jacobian rank deficient. The
    # intercept-only start would solve this instance directly, so force a
    # start that needs a Newton step.
    x = np.column_stack([np.ones(10), np.full(10, 2.0)])
    pi = np.full(10, 0.5)
    r = np.array([1, 0] * 5)
    controls = SolverControls(lambda0=np.array([1.0, -1.0]))
    fit = solve(EstimatingEquation.mle(x, pi, r), controls)
    assert fit.status is FitStatus.SINGULAR_JACOBIAN
