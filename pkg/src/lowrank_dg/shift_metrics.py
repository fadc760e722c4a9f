"""Domain-shift measurements: KL divergence of mean-feature softmax and accuracy margins."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import softmax

from .errors import EmptyDomain, ShapeError


@dataclass(frozen=True)
class DomainDistribution:
    probs: np.ndarray


@dataclass(frozen=True)
class ShiftReport:
    d_shift: float
    kld: np.ndarray
    weights: np.ndarray

    def to_dict(self) -> dict:
        return {
            "d_shift": float(self.d_shift),
            "kld": self.kld.tolist(),
            "weights": self.weights.tolist(),
        }


def domain_distribution(features) -> DomainDistribution:
    """Softmax of the instance-mean feature vector."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.size == 0 or feats.shape[0] == 0:
        raise EmptyDomain("cannot build a distribution from zero instances")
    if feats.ndim != 2:
        raise ShapeError(f"features must be (instances, dims), got {feats.shape}")
    return DomainDistribution(softmax(feats.mean(axis=0)))


def kld(p: DomainDistribution, q: DomainDistribution) -> float:
    """``KL(p || q)`` in nats."""
    p_ = p.probs if isinstance(p, DomainDistribution) else np.asarray(p, dtype=np.float64)
    q_ = q.probs if isinstance(q, DomainDistribution) else np.asarray(q, dtype=np.float64)
    if p_.shape != q_.shape:
        raise ShapeError(f"distributions of shape {p_.shape} and {q_.shape}")
    return float(np.sum(p_ * (np.log(p_) - np.log(q_))))


def domain_shift(sources, targets) -> ShiftReport:
    """Weighted mean pairwise KL divergence from source to target domains.

    Source ``i`` is weighted by ``n * N_i / sum(N)`` so that equal-size
    sources give a plain mean.
    """
    if len(sources) == 0 or len(targets) == 0:
        raise EmptyDomain("need at least one source and one target domain")
    src = [domain_distribution(f) for f in sources]
    tgt = [domain_distribution(f) for f in targets]
    sizes = np.array([len(f) for f in sources], dtype=np.float64)
    weights = len(sources) * sizes / sizes.sum()
    matrix = np.array([[kld(p, q) for q in tgt] for p in src])
    d_shift = float((weights[:, None] * matrix).sum() / matrix.size)
    return ShiftReport(d_shift, matrix, weights)


def accuracy_margin(within, cross):
    """Per-domain ``within - cross`` accuracy and the mean margin."""
    within = np.asarray(within, dtype=np.float64)
    cross = np.asarray(cross, dtype=np.float64)
    if within.shape != cross.shape or within.ndim != 1:
        raise ShapeError(f"within {within.shape} and cross {cross.shape} must align")
    margins = within - cross
    return margins, float(margins.mean()) if margins.size else float("nan")
