"""Response mechanism: independent Bernoulli response per sampled unit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .designs import Sample

__all__ = ["RespondentSet", "draw_response"]


@dataclass(frozen=True)
class RespondentSet:
    """Realized response indicators over a sample.

    ``r`` aligns with ``sample.indices``; ``respondents`` and
    ``nonrespondents`` hold the corresponding unit indices and partition the
    sample.
    """

    sample: Sample
    r: np.ndarray
    respondents: np.ndarray
    nonrespondents: np.ndarray

    def __post_init__(self):
        r = np.array(self.r, dtype=np.int64, copy=True)
        r.flags.writeable = False
        if r.shape != self.sample.indices.shape:
            raise ValueError("r must align with the sample")
        if not np.all((r == 0) | (r == 1)):
            raise ValueError("r must be 0/1")
        resp = np.array(self.respondents, dtype=np.int64, copy=True)
        nonresp = np.array(self.nonrespondents, dtype=np.int64, copy=True)
        resp.flags.writeable = False
        nonresp.flags.writeable = False
        if not np.array_equal(resp, self.sample.indices[r == 1]):
            raise ValueError("respondents inconsistent with r")
        if not np.array_equal(nonresp, self.sample.indices[r == 0]):
            raise ValueError("nonrespondents inconsistent with r")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "respondents", resp)
        object.__setattr__(self, "nonrespondents", nonresp)

    @property
    def n_respondents(self) -> int:
        return int(self.r.sum())

    @property
    def resp_mask(self) -> np.ndarray:
        return self.r == 1


def draw_response(sample: Sample, p: np.ndarray, seed: int) -> RespondentSet:
    """Independent Bernoulli(p_i) response per sampled unit.

    ``p`` aligns with ``sample.indices``. The seed stream is the caller's to
    manage and is independent of the sampling stream, so the two phases can
    be varied separately.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != sample.indices.shape:
        raise ValueError("p must provide one probability per sampled unit")
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError("response probabilities must lie in (0, 1]")
    rng = np.random.default_rng(int(seed))
    u = rng.random(sample.size)
    r = (u < p).astype(np.int64)
    return RespondentSet(
        sample=sample,
        r=r,
        respondents=sample.indices[r == 1],
        nonrespondents=sample.indices[r == 0],
    )
