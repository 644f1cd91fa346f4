"""Finite populations with a logistic response model.

A population carries an auxiliary matrix whose first column is identically 1,
a study variable, and per-unit response probabilities following a logistic
model. The synthetic generator draws (y, x1) pairs from a bivariate normal
with unit marginal variances and configurable correlation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit, ndtri

__all__ = [
    "Population",
    "GenConfig",
    "logistic",
    "logistic_probs",
    "generate_population",
    "population_total",
    "population_to_csv",
    "population_from_csv",
]


def logistic(x, lam) -> float:
    """Response probability 1 / (1 + exp(-x.lam)) for a single unit.

    Evaluated through the branch that never exponentiates a positive
    argument, so it is stable for linear predictors up to +-700.
    """
    x = np.asarray(x, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if x.shape != lam.shape:
        raise ValueError(f"length mismatch: x has shape {x.shape}, lambda has shape {lam.shape}")
    eta = float(x @ lam)
    if not math.isfinite(eta):
        raise ValueError("non-finite linear predictor")
    if eta >= 0.0:
        return 1.0 / (1.0 + math.exp(-eta))
    z = math.exp(eta)
    return z / (1.0 + z)


def logistic_probs(aux: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """Vectorized logistic probabilities for the rows of an auxiliary matrix."""
    return expit(np.asarray(aux, dtype=float) @ np.asarray(lam, dtype=float))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Population:
    """Finite population of size N with auxiliaries, study variable, and response model.

    Fields
    ------
    aux : (N, q) matrix whose first column is identically 1.
    y : study variable, length N.
    true_lambda : coefficient vector of the response model, or None when the
        population was loaded from an external fixture that did not record it.
    true_p : per-unit response probabilities; equal to the logistic model
        evaluated at ``true_lambda`` whenever that vector is present.
    rho : correlation used by the generator (NaN for external fixtures).
    total : sum of y, cached at construction via compensated summation.
    """

    aux: np.ndarray
    y: np.ndarray
    true_lambda: np.ndarray | None
    true_p: np.ndarray
    rho: float
    total: float = field(init=False)

    def __post_init__(self):
        aux = _frozen(np.atleast_2d(self.aux))
        y = _frozen(self.y)
        p = _frozen(self.true_p)
        lam = None if self.true_lambda is None else _frozen(self.true_lambda)
        n, q = aux.shape
        if n < 1:
            raise ValueError("population must contain at least one unit")
        if y.shape != (n,) or p.shape != (n,):
            raise ValueError("aux, y, and true_p must agree on the number of units")
        if not np.all(aux[:, 0] == 1.0):
            raise ValueError("first auxiliary column must be identically 1")
        # The generator only ever produces interior probabilities; p == 1 is
        # tolerated so the degenerate full-response mechanism stays representable.
        if np.any(p <= 0.0) or np.any(p > 1.0):
            raise ValueError("true_p must lie in (0, 1]")
        if lam is not None:
            if lam.shape != (q,):
                raise ValueError("true_lambda length must match the auxiliary dimension")
            if not np.allclose(p, logistic_probs(aux, lam), rtol=0.0, atol=1e-12):
                raise ValueError("true_p is inconsistent with the logistic model at true_lambda")
        if not (math.isnan(self.rho) or -1.0 <= self.rho <= 1.0):
            raise ValueError("rho must lie in [-1, 1]")
        object.__setattr__(self, "aux", aux)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "true_p", p)
        object.__setattr__(self, "true_lambda", lam)
        object.__setattr__(self, "total", math.fsum(y))

    @property
    def size(self) -> int:
        return self.aux.shape[0]

    @property
    def n_aux(self) -> int:
        return self.aux.shape[1]


@dataclass(frozen=True)
class GenConfig:
    """Settings for the synthetic bivariate-normal population generator."""

    N: int
    mean_mu: tuple[float, float] = (4.0, 4.0)
    rho: float = 0.6
    lam: tuple[float, float] = (0.1, 0.4)
    seed: int = 0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if not abs(self.rho) < 1.0:
            raise ValueError("|rho| must be strictly less than 1")
        if len(self.mean_mu) != 2 or len(self.lam) != 2:
            raise ValueError("mean_mu and lam must have length 2")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


def _standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    # Inverse-CDF transform of (k + 0.5) / 2^64 with k a raw PCG64 64-bit
    # draw: deterministic, endpoint-free, and reproducible from the seed
    # alone (no dependence on the generator's rejection-sampling internals).
    k = rng.integers(0, 2**64, size=size, dtype=np.uint64)
    u = (k.astype(np.float64) + 0.5) * 2.0**-64
    return ndtri(u)


def generate_population(cfg: GenConfig) -> Population:
    """Draw a population of (y, x1) pairs per the generator settings.

    The pairs are i.i.d. bivariate normal with mean ``cfg.mean_mu``, unit
    marginal variances, and correlation ``cfg.rho``, realized through the
    conditional decomposition y = mu_y + z1, x1 = mu_x + rho*z1 +
    sqrt(1-rho^2)*z2 with independent standard normals. Response
    probabilities follow the logistic model at ``cfg.lam``. Deterministic
    for a fixed seed (PCG64 stream).
    """
    rng = np.random.default_rng(int(cfg.seed))
    z1 = _standard_normal(rng, cfg.N)
    z2 = _standard_normal(rng, cfg.N)
    mu_y, mu_x = float(cfg.mean_mu[0]), float(cfg.mean_mu[1])
    rho = float(cfg.rho)
    y = mu_y + z1
    x1 = mu_x + rho * z1 + math.sqrt(1.0 - rho * rho) * z2
    aux = np.column_stack([np.ones(cfg.N), x1])
    lam = np.asarray(cfg.lam, dtype=float)
    p = logistic_probs(aux, lam)
    return Population(aux=aux, y=y, true_lambda=lam, true_p=p, rho=rho)


def population_total(pop: Population) -> float:
    """Exact total of the study variable (compensated summation)."""
    return math.fsum(pop.y)


def population_to_csv(pop: Population, path: str | Path) -> None:
    """Write a population as ``unit,x1,y,p_true`` rows.

    Generator metadata (lambda, rho) goes into a leading comment so the file
    round-trips into an identical Population. Values are printed with 17
    significant digits so doubles survive the text round trip.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        if pop.true_lambda is not None:
            lam_txt = ",".join(f"{v:.17g}" for v in pop.true_lambda)
            fh.write(f"# lambda={lam_txt} rho={pop.rho:.17g}\n")
        fh.write("unit,x1,y,p_true\n")
        for i in range(pop.size):
            fh.write(f"{i},{pop.aux[i, 1]:.17g},{pop.y[i]:.17g},{pop.true_p[i]:.17g}\n")


def population_from_csv(path: str | Path) -> Population:
    """Read a ``unit,x1,y,p_true`` file back into a Population.

    Accepts files without the metadata comment (cross-implementation
    fixtures); those populations carry ``true_lambda=None``.
    """
    path = Path(path)
    lam = None
    rho = math.nan
    rows: list[tuple[float, float, float]] = []
    with path.open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "lambda":
                        lam = np.array([float(v) for v in val.split(",")])
                    elif key == "rho":
                        rho = float(val)
                continue
            if line.startswith("unit,"):
                continue
            _, x1, y, p = line.split(",")
            rows.append((float(x1), float(y), float(p)))
    if not rows:
        raise ValueError(f"no population rows found in {path}")
    x1s = np.array([r[0] for r in rows])
    ys = np.array([r[1] for r in rows])
    ps = np.array([r[2] for r in rows])
    aux = np.column_stack([np.ones(len(rows)), x1s])
    return Population(aux=aux, y=ys, true_lambda=lam, true_p=ps, rho=rho)
