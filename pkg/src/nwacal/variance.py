"""Variance estimators for the reweighted totals and the exact variance oracle.

Each estimator splits into a sampling component (a double sum over respondent
pairs with the design's joint inclusion probabilities) and a nonresponse
component (a single sum of squared residuals, hence nonnegative). For Poisson
designs the pair term vanishes identically and is short-circuited to an exact
zero. The theoretical decomposition evaluates both components in closed form
from the full population and true probabilities, for oracle use in tests and
simulations only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .designs import DesignKind, DesignSpec
from .estimators import (
    Variant,
    gamma_cal_population,
    gamma_hat_cal,
    gamma_hat_mle,
)
from .population import Population

__all__ = [
    "Z_95",
    "VarianceEstimate",
    "TheoreticalVariance",
    "var_hat_ht",
    "var_hat_mle",
    "var_hat_calU",
    "var_hat_calS",
    "theoretical_variance",
    "confidence_interval",
]

# Normal critical value for the nominal 95% interval, fixed by convention.
Z_95 = 1.96


@dataclass(frozen=True)
class VarianceEstimate:
    """Sampling + nonresponse variance components for one reweighted total.

    A singular gamma system leaves the dependent pieces NaN with
    ``gamma_hat=None``; the sampling component of the sample-level variants
    never needs gamma and stays usable. ``v_sam`` may be negative under
    SRSWOR in pathological samples and is reported as-is.
    """

    v_sam: float
    v_nr: float
    gamma_hat: np.ndarray | None
    residuals: np.ndarray | None

    @property
    def total(self) -> float:
        return self.v_sam + self.v_nr

    @property
    def gamma_singular(self) -> bool:
        return self.gamma_hat is None

    def csv_row(self, variant: Variant, estimate: float) -> str:
        ci = confidence_interval(estimate, self.total) if math.isfinite(self.total) else None
        lo, hi = ci if ci is not None else (math.nan, math.nan)
        return (
            f"{variant.value},{self.v_sam:.17g},{self.v_nr:.17g},"
            f"{self.total:.17g},{lo:.17g},{hi:.17g}"
        )


@dataclass(frozen=True)
class TheoreticalVariance:
    """Exact variance decomposition under known design and probabilities."""

    variant: Variant
    v_sam: float
    v_nr: float

    @property
    def total(self) -> float:
        return self.v_sam + self.v_nr


def _cross_term(design: DesignSpec, u: np.ndarray) -> float:
    """Pair term sum_{i != j} (pi_ij - pi_i pi_j)/pi_ij * u_i u_j.

    ``u`` already carries the 1/pi expansion (u_i = z_i / (pi_i p_i)). Zero
    for Poisson designs (pi_ij = pi_i pi_j exactly). For SRSWOR the
    coefficient is constant and the double sum is evaluated literally in
    O(m^2).
    """
    if design.kind is DesignKind.POISSON:
        return 0.0
    N = design.size
    n = design.n_target
    pi_ij = n * (n - 1.0) / (N * (N - 1.0))
    pi_i = n / N
    coeff = (pi_ij - pi_i * pi_i) / pi_ij
    outer = np.outer(u, u)
    return coeff * float(outer.sum() - np.trace(outer))


def var_hat_ht(design: DesignSpec, pi_s: np.ndarray, y_s: np.ndarray) -> float:
    """Design-unbiased variance estimator of the full-sample HT total."""
    pi_s = np.asarray(pi_s, dtype=float)
    y_s = np.asarray(y_s, dtype=float)
    single = float(np.sum((1.0 - pi_s) / pi_s**2 * y_s**2))
    return single + _cross_term(design, y_s / pi_s)


def _assemble(
    design: DesignSpec,
    pi_r: np.ndarray,
    p_hat_r: np.ndarray,
    sam_num: np.ndarray,
    nr_resid: np.ndarray | None,
    gamma: np.ndarray | None,
) -> VarianceEstimate:
    single = float(np.sum((1.0 - pi_r) / pi_r**2 * sam_num**2 / p_hat_r))
    v_sam = single + _cross_term(design, sam_num / (pi_r * p_hat_r))
    if nr_resid is None:
        return VarianceEstimate(v_sam=v_sam, v_nr=math.nan, gamma_hat=None, residuals=None)
    v_nr = float(np.sum((1.0 - p_hat_r) / (pi_r * p_hat_r) ** 2 * nr_resid**2))
    return VarianceEstimate(v_sam=v_sam, v_nr=v_nr, gamma_hat=gamma, residuals=nr_resid)


def _degenerate_gamma(p_hat_r: np.ndarray, q: int) -> np.ndarray | None:
    # Full-response edge: every (1 - p_hat) weight vanishes, so the gamma
    # system is all zeros and any coefficient gives the same (zero)
    # nonresponse component; use the zero vector.
    if np.all(p_hat_r == 1.0):
        return np.zeros(q)
    return None


def var_hat_mle(
    design: DesignSpec,
    pi_r: np.ndarray,
    x_r: np.ndarray,
    y_r: np.ndarray,
    p_hat_r: np.ndarray,
    survey_weighted: bool = False,
) -> VarianceEstimate:
    """Variance estimate for an MLE-reweighted total (k = 1 or 1/pi)."""
    pi_r = np.asarray(pi_r, dtype=float)
    x_r = np.atleast_2d(np.asarray(x_r, dtype=float))
    y_r = np.asarray(y_r, dtype=float)
    p_hat_r = np.asarray(p_hat_r, dtype=float)
    gamma = gamma_hat_mle(x_r, y_r, pi_r, p_hat_r, survey_weighted=survey_weighted)
    if gamma is None:
        gamma = _degenerate_gamma(p_hat_r, x_r.shape[1])
    if gamma is None:
        return _assemble(design, pi_r, p_hat_r, y_r, None, None)
    k = 1.0 / pi_r if survey_weighted else np.ones_like(pi_r)
    resid = y_r - k * pi_r * p_hat_r * (x_r @ gamma)
    return _assemble(design, pi_r, p_hat_r, y_r, resid, gamma)


def var_hat_calU(
    design: DesignSpec,
    pi_r: np.ndarray,
    x_r: np.ndarray,
    y_r: np.ndarray,
    p_hat_r: np.ndarray,
) -> VarianceEstimate:
    """Variance estimate for the population-level calibration total.

    Both components run over the residuals e_i = y_i - x_i.gamma_hat, since
    the linearized estimator tracks the HT total of those residuals.
    """
    pi_r = np.asarray(pi_r, dtype=float)
    x_r = np.atleast_2d(np.asarray(x_r, dtype=float))
    y_r = np.asarray(y_r, dtype=float)
    p_hat_r = np.asarray(p_hat_r, dtype=float)
    gamma = gamma_hat_cal(x_r, y_r, pi_r, p_hat_r)
    if gamma is None:
        gamma = _degenerate_gamma(p_hat_r, x_r.shape[1])
    if gamma is None:
        return VarianceEstimate(v_sam=math.nan, v_nr=math.nan, gamma_hat=None, residuals=None)
    resid = y_r - x_r @ gamma
    return _assemble(design, pi_r, p_hat_r, resid, resid, gamma)


def var_hat_calS(
    design: DesignSpec,
    pi_r: np.ndarray,
    x_r: np.ndarray,
    y_r: np.ndarray,
    p_hat_r: np.ndarray,
) -> VarianceEstimate:
    """Variance estimate for the sample-level calibration total.

    The sampling component runs over the raw y values (the linearized
    estimator keeps the full-sample HT sampling variance); the nonresponse
    component uses the same residuals as the population-level variant.
    """
    pi_r = np.asarray(pi_r, dtype=float)
    x_r = np.atleast_2d(np.asarray(x_r, dtype=float))
    y_r = np.asarray(y_r, dtype=float)
    p_hat_r = np.asarray(p_hat_r, dtype=float)
    gamma = gamma_hat_cal(x_r, y_r, pi_r, p_hat_r)
    if gamma is None:
        gamma = _degenerate_gamma(p_hat_r, x_r.shape[1])
    if gamma is None:
        return _assemble(design, pi_r, p_hat_r, y_r, None, None)
    resid = y_r - x_r @ gamma
    return _assemble(design, pi_r, p_hat_r, y_r, resid, gamma)


def _gamma_mle_population(pop: Population, design: DesignSpec, survey_weighted: bool) -> np.ndarray:
    # Design expectation of the sample-level MLE gamma system:
    # A = sum_U pi k p(1-p) x x^T, b = sum_U (1-p) x y.
    p = pop.true_p
    k = 1.0 / design.pi if survey_weighted else np.ones_like(design.pi)
    w = design.pi * k * p * (1.0 - p)
    a = (pop.aux * w[:, None]).T @ pop.aux
    b = pop.aux.T @ ((1.0 - p) * pop.y)
    return np.linalg.solve(a, b)


def theoretical_variance(
    pop: Population,
    design: DesignSpec,
    variant: Variant,
    survey_weighted: bool = False,
) -> TheoreticalVariance:
    """Exact two-phase variance decomposition under known p and design.

    Sampling component: per-unit closed form for Poisson, the classical
    N^2 (1-f)/n S_z^2 for SRSWOR, with z the raw y or the population
    regression residual depending on the variant. Nonresponse component:
    the design expectation of the conditional variance, a single sum over U.
    """
    pi = design.pi
    p = pop.true_p
    y = pop.y
    N = pop.size
    full_response = bool(np.all(p == 1.0))

    if variant is Variant.CAL_U:
        gamma = gamma_cal_population(pop)
        if gamma is None and full_response:
            gamma = np.zeros(pop.n_aux)
        if gamma is None:
            raise ValueError("singular population gamma system")
        z = y - pop.aux @ gamma
    else:
        z = y

    if design.kind is DesignKind.POISSON:
        v_sam = float(np.sum((1.0 - pi) / pi * z**2))
    else:
        f = design.n_target / N
        s2 = float(np.var(z, ddof=1))
        v_sam = N * N * (1.0 - f) / design.n_target * s2

    if variant is Variant.HT:
        v_nr = 0.0
    elif full_response:
        # every (1 - p) factor vanishes
        v_nr = 0.0
    elif variant is Variant.TRUE_P:
        v_nr = float(np.sum((1.0 - p) / (pi * p) * y**2))
    elif variant in (Variant.MLE_K1, Variant.MLE_KINVPI):
        sw = survey_weighted or variant is Variant.MLE_KINVPI
        gamma = _gamma_mle_population(pop, design, sw)
        k = 1.0 / pi if sw else np.ones_like(pi)
        resid = y - k * pi * p * (pop.aux @ gamma)
        v_nr = float(np.sum((1.0 - p) / (pi * p) * resid**2))
    elif variant is Variant.CAL_U:
        v_nr = float(np.sum((1.0 - p) / (pi * p) * z**2))
    elif variant is Variant.CAL_S:
        gamma = gamma_cal_population(pop)
        if gamma is None:
            raise ValueError("singular population gamma system")
        resid = y - pop.aux @ gamma
        v_nr = float(np.sum((1.0 - p) / (pi * p) * resid**2))
    else:
        raise ValueError(f"no variance decomposition for variant {variant}")

    return TheoreticalVariance(variant=variant, v_sam=v_sam, v_nr=v_nr)


def confidence_interval(estimate: float, variance: float) -> tuple[float, float] | None:
    """Nominal 95% interval estimate +- 1.96 sqrt(variance); None if variance < 0."""
    if not math.isfinite(variance) or variance < 0.0:
        return None
    half = Z_95 * math.sqrt(variance)
    return (estimate - half, estimate + half)
