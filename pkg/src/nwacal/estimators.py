"""Point estimators of the population total and the linearization diagnostics.

Six estimator variants are tracked: the full-sample HT estimator, the
two-phase estimator with true response probabilities, and the four
reweighted variants whose response probabilities come from a fitted
estimating equation. The linearized forms and their gamma coefficients
require true response probabilities (and, for the population-level variant,
full-population data), so they live behind a simulation-diagnostics
boundary and are never part of production estimation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .population import Population
from .designs import Sample
from .response import RespondentSet
from .solvers import EEKind, FitNotConvergedError, FitResult

__all__ = [
    "Variant",
    "EstimateRecord",
    "GammaCoefficients",
    "ht_estimate",
    "two_phase_estimate",
    "nwa_estimate",
    "gamma_cal_population",
    "gamma_cal_sample",
    "gamma_mle_sample",
    "gamma_hat_mle",
    "gamma_hat_cal",
    "gamma_coefficients",
    "linearized_estimate",
]


class Variant(enum.Enum):
    HT = "ht"
    TRUE_P = "p"
    MLE_K1 = "mle_1"
    MLE_KINVPI = "mle_invpi"
    CAL_U = "cal_U"
    CAL_S = "cal_S"


#: Variants whose weights come from a fitted estimating equation.
FITTED_VARIANTS = (Variant.MLE_K1, Variant.MLE_KINVPI, Variant.CAL_U, Variant.CAL_S)

VARIANT_TO_EEKIND = {
    Variant.MLE_K1: EEKind.MLE_K1,
    Variant.MLE_KINVPI: EEKind.MLE_KINVPI,
    Variant.CAL_U: EEKind.CAL_POPULATION,
    Variant.CAL_S: EEKind.CAL_SAMPLE,
}


@dataclass(frozen=True)
class EstimateRecord:
    """A total estimate with the final per-unit weights that produced it."""

    variant: Variant
    value: float
    weights: np.ndarray
    fit: FitResult | None = None

    def csv_row(self, n: int, n_r: int) -> str:
        max_w = float(np.max(self.weights)) if self.weights.size else float("nan")
        status = self.fit.status.value if self.fit is not None else ""
        iters = self.fit.iterations if self.fit is not None else 0
        return (
            f"{self.variant.value},{self.value:.17g},{n},{n_r},"
            f"{max_w:.17g},{status},{iters}"
        )


def ht_estimate(pi_s: np.ndarray, y_s: np.ndarray) -> float:
    """Horvitz-Thompson total sum_S y_i / pi_i."""
    pi_s = np.asarray(pi_s, dtype=float)
    y_s = np.asarray(y_s, dtype=float)
    return float(np.sum(y_s / pi_s))


def two_phase_estimate(pi_r: np.ndarray, p_r: np.ndarray, y_r: np.ndarray) -> float:
    """Double-expansion total sum_{S_r} y_i / (pi_i p_i) with known probabilities."""
    pi_r = np.asarray(pi_r, dtype=float)
    p_r = np.asarray(p_r, dtype=float)
    y_r = np.asarray(y_r, dtype=float)
    if np.any(p_r <= 0.0):
        raise ValueError("response probabilities must be strictly positive")
    return float(np.sum(y_r / (pi_r * p_r)))


def nwa_estimate(
    variant: Variant,
    pi_r: np.ndarray,
    y_r: np.ndarray,
    p_hat_r: np.ndarray,
    fit: FitResult,
) -> EstimateRecord:
    """Reweighted total sum_{S_r} y_i / (pi_i p_hat_i) from a converged fit.

    Refuses non-converged fits; the caller decides how to account for them.
    """
    if not fit.converged:
        raise FitNotConvergedError(
            f"cannot build a {variant.value} estimate from a {fit.status.value} fit"
        )
    pi_r = np.asarray(pi_r, dtype=float)
    y_r = np.asarray(y_r, dtype=float)
    p_hat_r = np.asarray(p_hat_r, dtype=float)
    w = 1.0 / (pi_r * p_hat_r)
    return EstimateRecord(variant=variant, value=float(w @ y_r), weights=w, fit=fit)


def _solve_normal_equations(
    x: np.ndarray, y: np.ndarray, w_matrix: np.ndarray, w_rhs: np.ndarray
) -> np.ndarray | None:
    """Solve [sum w_matrix_i x_i x_i^T] g = sum w_rhs_i x_i y_i; None if singular."""
    a = (x * w_matrix[:, None]).T @ x
    b = x.T @ (w_rhs * y)
    if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
        return None
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e12:
        return None
    return np.linalg.solve(a, b)


def gamma_cal_population(pop: Population) -> np.ndarray | None:
    """Population regression coefficient with weights (1 - p_i), over all of U."""
    w = 1.0 - pop.true_p
    return _solve_normal_equations(pop.aux, pop.y, w, w)


def gamma_cal_sample(x_s, y_s, pi_s, p_s) -> np.ndarray | None:
    """Sample-level coefficient with weights (1 - p_i)/pi_i over S."""
    x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
    w = (1.0 - np.asarray(p_s, dtype=float)) / np.asarray(pi_s, dtype=float)
    return _solve_normal_equations(x_s, np.asarray(y_s, dtype=float), w, w)


def gamma_mle_sample(x_s, y_s, pi_s, p_s, survey_weighted: bool = False) -> np.ndarray | None:
    """Sample-level MLE coefficient: [sum k p(1-p) xx^T]^{-1} sum (1-p)/pi x y."""
    x_s = np.atleast_2d(np.asarray(x_s, dtype=float))
    pi_s = np.asarray(pi_s, dtype=float)
    p_s = np.asarray(p_s, dtype=float)
    k = 1.0 / pi_s if survey_weighted else np.ones_like(pi_s)
    w_matrix = k * p_s * (1.0 - p_s)
    w_rhs = (1.0 - p_s) / pi_s
    return _solve_normal_equations(x_s, np.asarray(y_s, dtype=float), w_matrix, w_rhs)


def gamma_hat_mle(x_r, y_r, pi_r, p_hat_r, survey_weighted: bool = False) -> np.ndarray | None:
    """Respondent plug-in MLE coefficient: [sum k(1-p) xx^T]^{-1} sum (1/pi)((1-p)/p) x y."""
    x_r = np.atleast_2d(np.asarray(x_r, dtype=float))
    pi_r = np.asarray(pi_r, dtype=float)
    p_hat_r = np.asarray(p_hat_r, dtype=float)
    k = 1.0 / pi_r if survey_weighted else np.ones_like(pi_r)
    w_matrix = k * (1.0 - p_hat_r)
    w_rhs = (1.0 - p_hat_r) / (pi_r * p_hat_r)
    return _solve_normal_equations(x_r, np.asarray(y_r, dtype=float), w_matrix, w_rhs)


def gamma_hat_cal(x_r, y_r, pi_r, p_hat_r) -> np.ndarray | None:
    """Respondent plug-in calibration coefficient with weights (1/pi)((1-p)/p)."""
    x_r = np.atleast_2d(np.asarray(x_r, dtype=float))
    w = (1.0 - np.asarray(p_hat_r, dtype=float)) / (
        np.asarray(pi_r, dtype=float) * np.asarray(p_hat_r, dtype=float)
    )
    return _solve_normal_equations(x_r, np.asarray(y_r, dtype=float), w, w)


@dataclass(frozen=True)
class GammaCoefficients:
    """Bundle of theory and plug-in gamma vectors; None marks a singular system
    or missing inputs."""

    gamma_mle_n: np.ndarray | None = None
    gamma_calU_n: np.ndarray | None = None
    gamma_calS_n: np.ndarray | None = None
    gamma_hat_mle: np.ndarray | None = None
    gamma_hat_cal: np.ndarray | None = None


def gamma_coefficients(
    pop: Population | None = None,
    sample_data: tuple | None = None,
    respondent_data: tuple | None = None,
    survey_weighted: bool = False,
) -> GammaCoefficients:
    """Assemble every gamma vector the provided data allows.

    ``sample_data`` is (x_s, y_s, pi_s, p_s) with true probabilities;
    ``respondent_data`` is (x_r, y_r, pi_r, p_hat_r) with fitted ones.
    The population-level coefficient additionally needs ``pop``.
    """
    g_calU = gamma_cal_population(pop) if pop is not None else None
    g_mle = g_calS = None
    if sample_data is not None:
        x_s, y_s, pi_s, p_s = sample_data
        g_mle = gamma_mle_sample(x_s, y_s, pi_s, p_s, survey_weighted=survey_weighted)
        g_calS = gamma_cal_sample(x_s, y_s, pi_s, p_s)
    gh_mle = gh_cal = None
    if respondent_data is not None:
        x_r, y_r, pi_r, p_hat_r = respondent_data
        gh_mle = gamma_hat_mle(x_r, y_r, pi_r, p_hat_r, survey_weighted=survey_weighted)
        gh_cal = gamma_hat_cal(x_r, y_r, pi_r, p_hat_r)
    return GammaCoefficients(
        gamma_mle_n=g_mle,
        gamma_calU_n=g_calU,
        gamma_calS_n=g_calS,
        gamma_hat_mle=gh_mle,
        gamma_hat_cal=gh_cal,
    )


def linearized_estimate(
    variant: Variant,
    pop: Population,
    sample: Sample,
    resp: RespondentSet,
    gamma: np.ndarray | None = None,
    survey_weighted: bool = False,
) -> float:
    """First-order expansion of a reweighted estimator around the true model.

    Simulation-only diagnostic: uses the true response probabilities, and the
    population-level variant also reads the whole population. When ``gamma``
    is omitted it is computed from the same data.
    """
    idx = sample.indices
    x_s = pop.aux[idx]
    y_s = pop.y[idx]
    p_s = pop.true_p[idx]
    pi_s = sample.pi_s
    r = resp.r.astype(float)

    if variant in (Variant.MLE_K1, Variant.MLE_KINVPI):
        sw = variant is Variant.MLE_KINVPI
        if gamma is None:
            gamma = gamma_mle_sample(x_s, y_s, pi_s, p_s, survey_weighted=sw)
        if gamma is None:
            raise ValueError("singular gamma system for the MLE linearization")
        k = 1.0 / pi_s if sw else np.ones_like(pi_s)
        fitted = k * pi_s * p_s * (x_s @ gamma)
        return float(np.sum((fitted + (r / p_s) * (y_s - fitted)) / pi_s))
    if variant is Variant.CAL_U:
        if gamma is None:
            gamma = gamma_cal_population(pop)
        if gamma is None:
            raise ValueError("singular gamma system for the population-level linearization")
        fitted_s = x_s @ gamma
        return float(np.sum(pop.aux @ gamma) + np.sum((r / (pi_s * p_s)) * (y_s - fitted_s)))
    if variant is Variant.CAL_S:
        if gamma is None:
            gamma = gamma_cal_sample(x_s, y_s, pi_s, p_s)
        if gamma is None:
            raise ValueError("singular gamma system for the sample-level linearization")
        fitted = x_s @ gamma
        return float(np.sum((fitted + (r / p_s) * (y_s - fitted)) / pi_s))
    raise ValueError(f"no linearized form for variant {variant}")
