"""Domain descriptors and domain-conditioned weight generators.

A generator owns a weight tensor with a trailing domain mode of extent
``S + 1`` (the last entry is the shared, domain-agnostic slot) and produces
concrete layer weights by contracting that mode with a descriptor ``z``.

Three forms share one interface (``generate``, ``backward``, ``params``):

* ``SharedWeights`` - plain weights, ``z`` ignored (unconditioned baseline).
* ``FullGenerator`` - the whole ``D_1 x ... x D_{M-1} x (S+1)`` tensor.
* ``FactoredGenerator`` - the same tensor held as Tucker factors.

Every generated layer also carries an ``(S+1) x n_out`` bias table that is
contracted with ``z`` like the weights, but never factorized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidDomain, ShapeError
from .tensor_core import mode_n_vec_product, multi_mode_product, unfold
from .tucker import TuckerFactors, hosvd, reconstruct

TWO_HOT = "two_hot"
AGNOSTIC = "agnostic"


@dataclass(frozen=True)
class DomainDescriptor:
    values: np.ndarray
    kind: str
    domain: int | None = None
    rho: float | None = None

    @property
    def n_domains(self) -> int:
        return self.values.shape[0] - 1

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def encode_domain(domain: int, n_domains: int, rho: float = 0.3) -> DomainDescriptor:
    """2-hot code: ``rho`` at slot ``domain`` (0-based), 1 at the shared slot."""
    if not 0 <= domain < n_domains:
        raise InvalidDomain(f"domain {domain} outside [0, {n_domains})")
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    values = np.zeros(n_domains + 1)
    values[domain] = rho
    values[-1] = 1.0
    return DomainDescriptor(_frozen(values), TWO_HOT, int(domain), float(rho))


def agnostic_descriptor(n_domains: int) -> DomainDescriptor:
    if n_domains < 1:
        raise ValueError(f"need at least one domain, got {n_domains}")
    values = np.zeros(n_domains + 1)
    values[-1] = 1.0
    return DomainDescriptor(_frozen(values), AGNOSTIC)


def _z(z, n_domains: int) -> np.ndarray:
    v = np.asarray(z.values if isinstance(z, DomainDescriptor) else z, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != n_domains + 1:
        raise ShapeError(f"descriptor of length {v.shape} does not match S+1={n_domains + 1}")
    return v


class SharedWeights:
    """Unconditioned weights; generation ignores the descriptor."""

    form = "shared"

    def __init__(self, weight, bias, n_domains: int):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.n_domains = int(n_domains)

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return self.weight.shape

    def params(self) -> dict[str, np.ndarray]:
        return {"weight": self.weight, "bias": self.bias}

    def generate(self, z):
        _z(z, self.n_domains)
        return self.weight, self.bias

    def backward(self, z, d_weight, d_bias) -> dict[str, np.ndarray]:
        return {"weight": d_weight, "bias": d_bias}


class FullGenerator:
    """``W(z) = 𝒲 x_M z`` with the complete parameter tensor."""

    form = "full"

    def __init__(self, tensor, bias_table):
        self.tensor = np.asarray(tensor, dtype=np.float64)
        self.bias_table = np.asarray(bias_table, dtype=np.float64)
        if self.bias_table.ndim != 2 or self.bias_table.shape[0] != self.tensor.shape[-1]:
            raise ShapeError(
                f"bias table {self.bias_table.shape} does not match domain mode "
                f"{self.tensor.shape[-1]}"
            )

    @property
    def n_domains(self) -> int:
        return self.tensor.shape[-1] - 1

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return self.tensor.shape[:-1]

    def params(self) -> dict[str, np.ndarray]:
        return {"tensor": self.tensor, "bias_table": self.bias_table}

    def slice(self, k: int) -> np.ndarray:
        return self.tensor[..., k]

    def generate(self, z):
        v = _z(z, self.n_domains)
        return mode_n_vec_product(self.tensor, v, self.tensor.ndim - 1), v @ self.bias_table

    def backward(self, z, d_weight, d_bias) -> dict[str, np.ndarray]:
        v = _z(z, self.n_domains)
        return {
            "tensor": np.multiply.outer(d_weight, v),
            "bias_table": np.outer(v, d_bias),
        }


class FactoredGenerator:
    """Tucker-factorized generator; contracts ``z`` into the domain factor first."""

    form = "factored"

    def __init__(self, factors: TuckerFactors, bias_table):
        self.factors = factors
        self.bias_table = np.asarray(bias_table, dtype=np.float64)
        if self.bias_table.ndim != 2 or self.bias_table.shape[0] != factors.shape[-1]:
            raise ShapeError(
                f"bias table {self.bias_table.shape} does not match domain mode "
                f"{factors.shape[-1]}"
            )

    @property
    def n_domains(self) -> int:
        return self.factors.shape[-1] - 1

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return self.factors.shape[:-1]

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.factors.ranks

    def params(self) -> dict[str, np.ndarray]:
        out = {"core": self.factors.core}
        for m, u in enumerate(self.factors.factors):
            out[f"factor_{m}"] = u
        out["bias_table"] = self.bias_table
        return out

    def _domain_core(self, v):
        last = self.factors.core.ndim - 1
        w = self.factors.factors[-1].T @ v
        return w, mode_n_vec_product(self.factors.core, w, last)

    def generate(self, z):
        v = _z(z, self.n_domains)
        _, core_z = self._domain_core(v)
        return multi_mode_product(core_z, self.factors.factors[:-1]), v @ self.bias_table

    def backward(self, z, d_weight, d_bias) -> dict[str, np.ndarray]:
        v = _z(z, self.n_domains)
        spatial = self.factors.factors[:-1]
        n = len(spatial)
        w, core_z = self._domain_core(v)
        d_core_z = multi_mode_product(d_weight, spatial, transpose=True)
        grads = {"core": np.multiply.outer(d_core_z, w)}
        for m in range(n):
            partial = multi_mode_product(core_z, spatial, skip=m)
            grads[f"factor_{m}"] = unfold(d_weight, m) @ unfold(partial, m).T
        d_w = np.tensordot(d_core_z, self.factors.core, axes=(list(range(n)), list(range(n))))
        grads[f"factor_{n}"] = np.outer(v, d_w)
        grads["bias_table"] = np.outer(v, d_bias)
        return dict((k, grads[k]) for k in self.params())

    def to_full(self) -> FullGenerator:
        return FullGenerator(reconstruct(self.factors), self.bias_table.copy())


def factorize(gen: FullGenerator, ranks=None) -> FactoredGenerator:
    """HO-SVD of a full generator at ``ranks`` (full ranks by default)."""
    ranks = gen.tensor.shape if ranks is None else ranks
    return FactoredGenerator(hosvd(gen.tensor, ranks), gen.bias_table.copy())


def generate(gen, z):
    """Concrete ``(weight, bias)`` for descriptor ``z``."""
    return gen.generate(z)


def undo_bias_linear(stacked, z) -> np.ndarray:
    """Linear generator ``Theta @ z`` with columns ``[Delta_1 .. Delta_S, Theta_0]``."""
    stacked = np.asarray(stacked, dtype=np.float64)
    v = np.asarray(z.values if isinstance(z, DomainDescriptor) else z, dtype=np.float64)
    if stacked.ndim != 2 or v.ndim != 1 or stacked.shape[1] != v.shape[0]:
        raise ShapeError(f"cannot contract {stacked.shape} with descriptor of length {v.shape}")
    return stacked @ v


def init_full(weight_shape, fan_in: int, n_domains: int, rng, domain_scale: float = 0.1):
    """Fan-in scaled uniform init; domain-specific slices shrunk by ``domain_scale``."""
    limit = np.sqrt(6.0 / fan_in)
    tensor = rng.uniform(-limit, limit, size=tuple(weight_shape) + (n_domains + 1,))
    tensor[..., :-1] *= domain_scale
    bias_table = np.zeros((n_domains + 1, weight_shape[-1]))
    return FullGenerator(tensor, bias_table)


def init_shared(weight_shape, fan_in: int, n_domains: int, rng) -> SharedWeights:
    limit = np.sqrt(6.0 / fan_in)
    weight = rng.uniform(-limit, limit, size=tuple(weight_shape))
    return SharedWeights(weight, np.zeros(weight_shape[-1]), n_domains)
