"""Tucker factorization: HO-SVD, rank selection and parameter counting.

Factor matrices are stored as ``D_m x K_m`` so that reconstruction applies
them directly (``W = G x_0 U_0 x_1 U_1 ...``); projection onto the core uses
their transposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidRank, ShapeError
from .tensor_core import (
    as_tensor,
    left_singular_vectors,
    multi_mode_product,
    svd,
    unfold,
)


@dataclass
class TuckerFactors:
    core: np.ndarray
    factors: list[np.ndarray]

    def __post_init__(self):
        self.core = np.ascontiguousarray(self.core, dtype=np.float64)
        self.factors = [np.ascontiguousarray(u, dtype=np.float64) for u in self.factors]
        if self.core.ndim != len(self.factors):
            raise ShapeError(
                f"core of order {self.core.ndim} needs {self.core.ndim} factors, "
                f"got {len(self.factors)}"
            )
        for m, u in enumerate(self.factors):
            if u.ndim != 2 or u.shape[1] != self.core.shape[m]:
                raise ShapeError(
                    f"factor {m} has shape {u.shape}, expected (D, {self.core.shape[m]})"
                )

    @property
    def ranks(self) -> tuple[int, ...]:
        return tuple(self.core.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors)

    def n_params(self) -> int:
        return int(self.core.size + sum(u.size for u in self.factors))

    def reconstruct(self) -> np.ndarray:
        return reconstruct(self)

    def copy(self) -> "TuckerFactors":
        return TuckerFactors(self.core.copy(), [u.copy() for u in self.factors])


@dataclass(frozen=True)
class RankSelection:
    ranks: tuple[int, ...]
    achieved_error: float
    budget: float
    singular_values: list[np.ndarray] = field(default_factory=list, repr=False, compare=False)


def reconstruct(f: TuckerFactors) -> np.ndarray:
    return multi_mode_product(f.core, f.factors)


def relative_error(t: np.ndarray, approx: np.ndarray) -> float:
    norm = np.linalg.norm(t)
    if norm == 0:
        return float(np.linalg.norm(approx) > 0)
    return float(np.linalg.norm(t - approx) / norm)


def _check_ranks(shape, ranks) -> tuple[int, ...]:
    ranks = tuple(int(k) for k in ranks)
    if len(ranks) != len(shape):
        raise InvalidRank(f"need {len(shape)} ranks, got {len(ranks)}")
    for k, d in zip(ranks, shape):
        if not 1 <= k <= d:
            raise InvalidRank(f"rank {k} outside [1, {d}]")
    return ranks


def hosvd(t, ranks) -> TuckerFactors:
    """Truncated higher-order SVD.

    Each factor holds the leading left singular vectors of the matching
    unfolding; the core is ``t`` projected onto all factors.
    """
    t = as_tensor(t)
    ranks = _check_ranks(t.shape, ranks)
    factors = [left_singular_vectors(unfold(t, m), k)[0] for m, k in enumerate(ranks)]
    core = multi_mode_product(t, factors, transpose=True)
    return TuckerFactors(core, factors)


def _mode_spectra(t: np.ndarray) -> list[np.ndarray]:
    out = []
    for m, d in enumerate(t.shape):
        s = svd(unfold(t, m)).S
        if s.shape[0] < d:
            s = np.concatenate([s, np.zeros(d - s.shape[0])])
        out.append(s)
    return out


def _truncation_rank(s: np.ndarray, budget_sq: float) -> int:
    # tail[k] = energy discarded when keeping k components
    tail = np.concatenate([np.cumsum((s**2)[::-1])[::-1], [0.0]])
    k = next(k for k in range(1, len(s) + 1) if tail[k] <= budget_sq)
    # A tie at the cut would make the kept subspace ambiguous: keep the twin too.
    while k < len(s) and s[k] > 0 and np.isclose(s[k], s[k - 1], rtol=1e-12, atol=0.0):
        k += 1
    return k


def select_ranks(t, epsilon: float) -> RankSelection:
    """Smallest per-mode ranks whose HO-SVD meets a relative error budget.

    Each mode may discard at most ``epsilon**2 / M`` of the squared norm.
    The achieved error is measured on a real reconstruction; if it still
    exceeds ``epsilon``, the mode with the largest next singular value grows
    by one until the budget holds.
    """
    t = as_tensor(t)
    if not 0 < epsilon < 1:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    spectra = _mode_spectra(t)
    total = float(np.sum(t * t))
    budget_sq = epsilon**2 / t.ndim * total
    ranks = [_truncation_rank(s, budget_sq) for s in spectra]
    while True:
        err = relative_error(t, reconstruct(hosvd(t, ranks)))
        if err <= epsilon:
            break
        candidates = [
            (spectra[m][ranks[m]], -m) for m in range(t.ndim) if ranks[m] < t.shape[m]
        ]
        if not candidates:
            break
        _, neg_m = max(candidates)
        ranks[-neg_m] += 1
    return RankSelection(tuple(ranks), err, float(epsilon), spectra)


def param_count_full(dims, n_domains: int) -> int:
    """Scalars in the un-factorized weight tensor ``D_1 x ... x D_{M-1} x (S+1)``."""
    return int(np.prod([int(d) for d in dims], dtype=np.int64)) * (int(n_domains) + 1)


def param_count_tucker(dims, ranks, n_domains: int) -> int:
    """Scalars in core plus factors; ``ranks`` includes the domain-mode rank last."""
    dims = [int(d) for d in dims]
    ranks = [int(k) for k in ranks]
    if len(ranks) != len(dims) + 1:
        raise ShapeError(f"need {len(dims) + 1} ranks for {len(dims)} dims")
    core = int(np.prod(ranks, dtype=np.int64))
    return core + sum(d * k for d, k in zip(dims, ranks[:-1])) + ranks[-1] * (int(n_domains) + 1)


def stack_domains(per_domain, agnostic) -> np.ndarray:
    """Stack ``S`` domain tensors plus the agnostic one along a new last mode."""
    tensors = [as_tensor(w) for w in per_domain] + [as_tensor(agnostic)]
    shape = tensors[-1].shape
    for w in tensors:
        if w.shape != shape:
            raise ShapeError(f"stack member has shape {w.shape}, expected {shape}")
    return np.stack(tensors, axis=-1)


def init_from_stack(per_domain, agnostic, epsilon: float) -> TuckerFactors:
    stacked = stack_domains(per_domain, agnostic)
    sel = select_ranks(stacked, epsilon)
    return hosvd(stacked, sel.ranks)


def expand_mode(f: TuckerFactors, mode: int) -> np.ndarray:
    """Core with every factor except ``mode`` applied."""
    return multi_mode_product(f.core, f.factors, skip=mode)


__all__ = [
    "RankSelection",
    "TuckerFactors",
    "expand_mode",
    "hosvd",
    "init_from_stack",
    "param_count_full",
    "param_count_tucker",
    "reconstruct",
    "relative_error",
    "select_ranks",
    "stack_domains",
]
