"""Damped Newton solvers for the response-probability estimating equations.

Four equation kinds are supported: the maximum-likelihood score over the full
sample (unit weights or survey weights 1/pi) and calibration of the
respondent-weighted auxiliary totals against a population-level or
sample-level target. Calibration residuals are evaluated in raking form,
1/f = 1 + exp(-x.lam), which is exact and avoids dividing by saturated
probabilities.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

__all__ = [
    "EEKind",
    "EstimatingEquation",
    "SolverControls",
    "FitStatus",
    "FitResult",
    "FitNotConvergedError",
    "score_mle",
    "calib_residual",
    "residual",
    "jacobian",
    "solve",
]

_COND_LIMIT = 1e12
_MAX_HALVINGS = 30


class EEKind(enum.Enum):
    MLE_K1 = "mle_k1"
    MLE_KINVPI = "mle_kinvpi"
    CAL_POPULATION = "cal_population"
    CAL_SAMPLE = "cal_sample"


class FitStatus(enum.Enum):
    CONVERGED = "converged"
    MAX_ITERATIONS = "max_iterations"
    SINGULAR_JACOBIAN = "singular_jacobian"
    DIVERGED = "diverged"


class FitNotConvergedError(RuntimeError):
    """Raised when a downstream consumer requires a converged fit."""


@dataclass(frozen=True)
class EstimatingEquation:
    """Per-unit data (x_i, pi_i, r_i) over the sample plus the equation target.

    The target is the zero vector for the MLE kinds, the population totals of
    the auxiliaries for population-level calibration, and the full-sample HT
    totals for sample-level calibration. Calibration kinds need at least q
    respondents spanning R^q for the Jacobian to be invertible.
    """

    kind: EEKind
    x: np.ndarray
    pi: np.ndarray
    r: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        pi = np.asarray(self.pi, dtype=float)
        r = np.asarray(self.r, dtype=np.int64)
        target = np.asarray(self.target, dtype=float)
        n, q = x.shape
        if pi.shape != (n,) or r.shape != (n,):
            raise ValueError("x, pi, r must agree on the number of sampled units")
        if target.shape != (q,):
            raise ValueError("target length must match the auxiliary dimension")
        if np.any(pi <= 0.0) or np.any(pi > 1.0):
            raise ValueError("inclusion probabilities must lie in (0, 1]")
        if not np.all((r == 0) | (r == 1)):
            raise ValueError("r must be 0/1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "pi", pi)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "target", target)

    @classmethod
    def mle(cls, x, pi, r, survey_weighted: bool = False) -> "EstimatingEquation":
        q = np.atleast_2d(np.asarray(x)).shape[1]
        kind = EEKind.MLE_KINVPI if survey_weighted else EEKind.MLE_K1
        return cls(kind=kind, x=x, pi=pi, r=r, target=np.zeros(q))

    @classmethod
    def cal_population(cls, x, pi, r, population_totals) -> "EstimatingEquation":
        return cls(kind=EEKind.CAL_POPULATION, x=x, pi=pi, r=r, target=population_totals)

    @classmethod
    def cal_sample(cls, x, pi, r) -> "EstimatingEquation":
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pi = np.asarray(pi, dtype=float)
        target = (x / pi[:, None]).sum(axis=0)
        return cls(kind=EEKind.CAL_SAMPLE, x=x, pi=pi, r=r, target=target)

    @property
    def n_respondents(self) -> int:
        return int(self.r.sum())


@dataclass(frozen=True)
class SolverControls:
    """Newton iteration controls.

    tol is relative to max(1, ||target||_inf); divergence_bound cuts off
    runaway coefficients (the logistic saturates well before 50); max_step
    caps a single Newton step in the infinity norm before any halving.
    """

    tol: float = 1e-8
    max_iter: int = 50
    max_step: float = 10.0
    lambda0: np.ndarray | None = None
    divergence_bound: float = 50.0
    trace: bool = False

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.max_step <= 0.0 or self.divergence_bound <= 0.0:
            raise ValueError("max_step and divergence_bound must be positive")


@dataclass(frozen=True)
class FitResult:
    """Outcome of one estimating-equation solve.

    p_hat holds fitted probabilities for every sampled unit (clipped into the
    open interval so reweighting never divides by zero); trace rows are
    (iteration, residual_norm, step_size) when tracing was requested.
    """

    lambda_hat: np.ndarray
    p_hat: np.ndarray
    status: FitStatus
    iterations: int
    residual_norm: float
    condition_estimate: float
    trace: tuple = ()

    @property
    def converged(self) -> bool:
        return self.status is FitStatus.CONVERGED


def _k_weights(eq: EstimatingEquation) -> np.ndarray:
    if eq.kind is EEKind.MLE_K1:
        return np.ones_like(eq.pi)
    if eq.kind is EEKind.MLE_KINVPI:
        return 1.0 / eq.pi
    raise ValueError(f"no k weights for equation kind {eq.kind}")


def score_mle(lam, x, pi, r, survey_weighted: bool = False) -> np.ndarray:
    """MLE score sum_S k_i (r_i - f_i) x_i with k = 1 or 1/pi."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pi = np.asarray(pi, dtype=float)
    r = np.asarray(r, dtype=float)
    f = expit(x @ np.asarray(lam, dtype=float))
    k = 1.0 / pi if survey_weighted else np.ones_like(pi)
    return (k * (r - f)) @ x


def calib_residual(lam, x_r, pi_r, target) -> np.ndarray:
    """Calibration residual sum_{S_r} x_i/(pi_i f_i) - target in raking form."""
    x_r = np.atleast_2d(np.asarray(x_r, dtype=float))
    pi_r = np.asarray(pi_r, dtype=float)
    eta = x_r @ np.asarray(lam, dtype=float)
    with np.errstate(over="ignore"):
        inv_f = 1.0 + np.exp(-eta)
    return (inv_f / pi_r) @ x_r - np.asarray(target, dtype=float)


def residual(lam, eq: EstimatingEquation) -> np.ndarray:
    """Residual of the estimating equation at lam (zero at a solution)."""
    if eq.kind in (EEKind.MLE_K1, EEKind.MLE_KINVPI):
        return score_mle(lam, eq.x, eq.pi, eq.r, survey_weighted=eq.kind is EEKind.MLE_KINVPI)
    mask = eq.r == 1
    return calib_residual(lam, eq.x[mask], eq.pi[mask], eq.target)


def jacobian(lam, eq: EstimatingEquation) -> np.ndarray:
    """Analytical Jacobian of the residual with respect to lam."""
    lam = np.asarray(lam, dtype=float)
    if eq.kind in (EEKind.MLE_K1, EEKind.MLE_KINVPI):
        f = expit(eq.x @ lam)
        u = _k_weights(eq) * f * (1.0 - f)
        return -(eq.x * u[:, None]).T @ eq.x
    mask = eq.r == 1
    x_r = eq.x[mask]
    with np.errstate(over="ignore"):
        g = np.exp(-(x_r @ lam)) / eq.pi[mask]
    return -(x_r * g[:, None]).T @ x_r


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _initial_point(eq: EstimatingEquation) -> np.ndarray:
    # Intercept-only solution of each equation: a cheap globalization that
    # starts Newton at the correct overall response level.
    inv_pi = 1.0 / eq.pi
    resp = eq.r == 1
    if eq.kind is EEKind.MLE_K1:
        frac = eq.r.mean()
    elif eq.kind is EEKind.MLE_KINVPI:
        frac = float(inv_pi @ eq.r) / float(inv_pi.sum())
    elif eq.kind is EEKind.CAL_SAMPLE:
        frac = float(inv_pi[resp].sum()) / float(inv_pi.sum())
    else:
        frac = float(inv_pi[resp].sum()) / float(eq.target[0])
    frac = min(max(frac, 1e-6), 1.0 - 1e-6)
    lam0 = np.zeros(eq.x.shape[1])
    lam0[0] = _logit(frac)
    return lam0


def _clip_probs(p: np.ndarray) -> np.ndarray:
    tiny = np.finfo(float).tiny
    return np.clip(p, tiny, np.nextafter(1.0, 0.0))


def solve(eq: EstimatingEquation, controls: SolverControls = SolverControls()) -> FitResult:
    """Solve the estimating equation by damped Newton iteration.

    The step is halved (at most 30 times) until the residual norm decreases;
    convergence requires ||residual||_inf <= tol * max(1, ||target||_inf).
    Non-convergence is reported through the status, never raised: a boundary
    respondent set (none, or all of the sample) has no finite solution and is
    flagged DIVERGED immediately, a Jacobian with condition estimate above
    1e12 gives SINGULAR_JACOBIAN, and coefficients passing the divergence
    bound (separation or an infeasible calibration target) give DIVERGED.
    """
    n = eq.x.shape[0]
    n_r = eq.n_respondents
    if n_r == 0 or n_r == n:
        lam = (
            np.asarray(controls.lambda0, dtype=float).copy()
            if controls.lambda0 is not None
            else np.zeros(eq.x.shape[1])
        )
        return FitResult(
            lambda_hat=lam,
            p_hat=_clip_probs(expit(eq.x @ lam)),
            status=FitStatus.DIVERGED,
            iterations=0,
            residual_norm=float(np.max(np.abs(residual(lam, eq)))),
            condition_estimate=math.nan,
        )
    lam = (
        np.asarray(controls.lambda0, dtype=float).copy()
        if controls.lambda0 is not None
        else _initial_point(eq)
    )

    scale = max(1.0, float(np.max(np.abs(eq.target))))
    res = residual(lam, eq)
    rn = float(np.max(np.abs(res)))
    cond = math.nan
    iterations = 0
    trace: list[tuple[int, float, float]] = []
    status = None

    while status is None:
        if rn <= controls.tol * scale:
            status = FitStatus.CONVERGED
            break
        if iterations >= controls.max_iter:
            status = FitStatus.MAX_ITERATIONS
            break
        jac = jacobian(lam, eq)
        if not np.all(np.isfinite(jac)):
            status = FitStatus.SINGULAR_JACOBIAN
            break
        cond = float(np.linalg.cond(jac))
        if not math.isfinite(cond) or cond > _COND_LIMIT:
            status = FitStatus.SINGULAR_JACOBIAN
            break
        delta = np.linalg.solve(jac, -res)
        dn = float(np.max(np.abs(delta)))
        if dn > controls.max_step:
            delta *= controls.max_step / dn
        alpha = 1.0
        accepted = False
        for _ in range(_MAX_HALVINGS + 1):
            cand = lam + alpha * delta
            cand_res = residual(cand, eq)
            cand_rn = float(np.max(np.abs(cand_res)))
            if cand_rn < rn:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # No descent along the Newton direction within 30 halvings:
            # the iteration has stalled.
            status = FitStatus.MAX_ITERATIONS
            break
        lam, res, rn = cand, cand_res, cand_rn
        iterations += 1
        if controls.trace:
            trace.append((iterations, rn, alpha * float(np.max(np.abs(delta)))))
        if float(np.max(np.abs(lam))) > controls.divergence_bound:
            status = FitStatus.DIVERGED
            break

    return FitResult(
        lambda_hat=lam,
        p_hat=_clip_probs(expit(eq.x @ lam)),
        status=status,
        iterations=iterations,
        residual_norm=rn,
        condition_estimate=cond,
        trace=tuple(trace),
    )
