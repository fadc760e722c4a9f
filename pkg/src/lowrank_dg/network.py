"""Small numpy network whose weight-bearing layers are domain-conditioned.

Inputs are batched along axis 0. Dense layers take ``(N, H)``; convolution
layers take channels-last ``(N, height, width, depth)`` with stride 1 and
valid padding. Labels are 0-based class ids.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset_io import MultiDomainDataset, split_train_val
from .domain_param import (
    FactoredGenerator,
    FullGenerator,
    SharedWeights,
    agnostic_descriptor,
    encode_domain,
    factorize,
    init_full,
    init_shared,
)
from .errors import EmptyBatch, LabelSpaceError, ShapeError


def relu(x):
    return np.maximum(x, 0.0)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(scores: np.ndarray, y: np.ndarray):
    """Mean cross-entropy and its gradient with respect to ``scores``."""
    logp = log_softmax(scores)
    n = scores.shape[0]
    loss = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return float(loss), grad / n


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (N, H, W, C) -> (N, Ho, Wo, kh * kw * C), patch order (row, col, channel)
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N, Ho, Wo, C, kh, kw
    n, ho, wo = win.shape[:3]
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n, ho, wo, -1)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    kh, kw, _, f = weight.shape
    cols = _im2col(x, kh, kw)
    return cols @ weight.reshape(-1, f) + bias


class Dense:
    kind = "fc"

    def __init__(self, generator, trainable: bool = True):
        if len(generator.weight_shape) != 2:
            raise ShapeError(f"dense weights must be H x C, got {generator.weight_shape}")
        self.generator = generator
        self.trainable = trainable

    def output_shape(self, input_shape):
        h, c = self.generator.weight_shape
        if tuple(input_shape) != (h,):
            raise ShapeError(f"dense layer expects input ({h},), got {tuple(input_shape)}")
        return (c,)

    @staticmethod
    def apply(x, weight, bias):
        return x @ weight + bias

    def backward(self, x, weight, grad_out, need_input_grad=True):
        d_w = x.T @ grad_out
        d_b = grad_out.sum(axis=0)
        d_x = grad_out @ weight.T if need_input_grad else None
        return d_w, d_b, d_x


class Conv2D:
    kind = "conv"

    def __init__(self, generator, trainable: bool = True):
        if len(generator.weight_shape) != 4:
            raise ShapeError(
                f"conv weights must be height x width x depth x filters, got {generator.weight_shape}"
            )
        self.generator = generator
        self.trainable = trainable

    def output_shape(self, input_shape):
        kh, kw, depth, filters = self.generator.weight_shape
        if len(input_shape) != 3 or input_shape[2] != depth:
            raise ShapeError(f"conv layer expects (H, W, {depth}) input, got {tuple(input_shape)}")
        h, w = input_shape[0] - kh + 1, input_shape[1] - kw + 1
        if h < 1 or w < 1:
            raise ShapeError(f"kernel {kh}x{kw} larger than input {tuple(input_shape[:2])}")
        return (h, w, filters)

    @staticmethod
    def apply(x, weight, bias):
        return conv2d(x, weight, bias)

    def backward(self, x, weight, grad_out, need_input_grad=True):
        kh, kw, depth, filters = weight.shape
        cols = _im2col(x, kh, kw)
        g = grad_out.reshape(-1, filters)
        d_w = (cols.reshape(-1, cols.shape[-1]).T @ g).reshape(weight.shape)
        d_b = g.sum(axis=0)
        if not need_input_grad:
            return d_w, d_b, None
        d_cols = (g @ weight.reshape(-1, filters).T).reshape(
            grad_out.shape[:3] + (kh, kw, depth)
        )
        d_x = np.zeros_like(x)
        ho, wo = grad_out.shape[1:3]
        for i in range(kh):
            for j in range(kw):
                d_x[:, i:i + ho, j:j + wo, :] += d_cols[:, :, :, i, j, :]
        return d_w, d_b, d_x


class ReLU:
    kind = "relu"
    generator = None
    trainable = False

    def output_shape(self, input_shape):
        return tuple(input_shape)


class Flatten:
    kind = "flatten"
    generator = None
    trainable = False

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


WEIGHTED = (Dense, Conv2D)


class Network:
    """Ordered layers ending in class scores; the softmax loss is applied outside.

    ``rho`` is the 2-hot ratio used to build training descriptors.
    """

    def __init__(self, layers, input_shape, n_domains: int, n_classes: int, rho: float = 0.3):
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        self.n_domains = int(n_domains)
        self.n_classes = int(n_classes)
        self.rho = float(rho)
        shape = self.input_shape
        for layer in self.layers:
            if layer.generator is not None and layer.generator.n_domains != self.n_domains:
                raise ShapeError("generator domain count disagrees with network")
            shape = layer.output_shape(shape)
        if shape != (self.n_classes,):
            raise ShapeError(f"network outputs {shape}, expected ({self.n_classes},)")

    def descriptor(self, domain: int | None):
        if domain is None:
            return agnostic_descriptor(self.n_domains)
        return encode_domain(int(domain), self.n_domains, self.rho)

    def params(self) -> dict[tuple[int, str], np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            if layer.generator is not None:
                for name, arr in layer.generator.params().items():
                    out[(i, name)] = arr
        return out

    def trainable_keys(self) -> list[tuple[int, str]]:
        return [k for k in self.params() if self.layers[k[0]].trainable]

    def n_params(self) -> int:
        return int(sum(a.size for a in self.params().values()))

    def get_state(self) -> dict[tuple[int, str], np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}

    def set_state(self, state) -> None:
        for k, arr in self.params().items():
            arr[...] = state[k]

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != {self.input_shape}")
        return x, single

    def _run(self, x, z):
        cache = []
        for layer in self.layers:
            if layer.generator is not None:
                weight, bias = layer.generator.generate(z)
                cache.append((x, weight))
                x = layer.apply(x, weight, bias)
            elif layer.kind == "relu":
                cache.append((x, None))
                x = relu(x)
            else:
                cache.append((x, None))
                x = x.reshape(x.shape[0], -1)
        return x, cache

    def forward(self, x, z=None):
        """Class scores for ``x`` (one instance or a batch) under descriptor ``z``.

        ``z`` defaults to the agnostic descriptor.
        """
        x, single = self._check_input(x)
        z = agnostic_descriptor(self.n_domains) if z is None else z
        scores, _ = self._run(x, z)
        return scores[0] if single else scores

    def _backward(self, cache, grad, z, only_trainable):
        grads = {}
        lowest = 0
        if only_trainable:
            trainable = [i for i, l in enumerate(self.layers) if l.trainable]
            lowest = min(trainable) if trainable else len(self.layers)
        for i in range(len(self.layers) - 1, lowest - 1, -1):
            layer = self.layers[i]
            x_in, weight = cache[i]
            need_dx = i > lowest
            if layer.generator is not None:
                d_w, d_b, grad = layer.backward(x_in, weight, grad, need_dx)
                if layer.trainable or not only_trainable:
                    for name, g in layer.generator.backward(z, d_w, d_b).items():
                        grads[(i, name)] = g
            elif layer.kind == "relu":
                grad = grad * (x_in > 0)
            else:
                grad = grad.reshape(x_in.shape)
        return grads

    def loss_and_grads(self, X, y, domains, only_trainable=False):
        """Mean over domains of the per-domain mean cross-entropy, with gradients.

        ``domains[j]`` is the source-domain index of instance ``j``, or ``-1``
        for the agnostic descriptor.
        """
        X, _ = self._check_input(X)
        y = np.asarray(y, dtype=np.int64)
        domains = np.asarray(domains, dtype=np.int64)
        if len(y) == 0:
            raise EmptyBatch("loss over an empty batch")
        if X.shape[0] != len(y) or len(domains) != len(y):
            raise ShapeError("X, y and domains must have equal length")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise LabelSpaceError(f"labels outside [0, {self.n_classes})")
        present = np.unique(domains)
        total = 0.0
        grads: dict = {}
        for d in present:
            mask = domains == d
            z = self.descriptor(None if d < 0 else int(d))
            scores, cache = self._run(X[mask], z)
            loss, g = softmax_cross_entropy(scores, y[mask])
            total += loss
            for k, v in self._backward(cache, g, z, only_trainable).items():
                grads[k] = grads[k] + v if k in grads else v
        n = len(present)
        return total / n, {k: v / n for k, v in grads.items()}

    def extract_agnostic(self) -> "ConcreteNetwork":
        z = agnostic_descriptor(self.n_domains)
        layers = []
        for layer in self.layers:
            if layer.generator is None:
                layers.append((layer.kind, None, None))
            else:
                w, b = layer.generator.generate(z)
                layers.append((layer.kind, np.array(w), np.array(b)))
        return ConcreteNetwork(layers, self.input_shape, self.n_classes)

    def clone(self) -> "Network":
        return copy.deepcopy(self)


class ConcreteNetwork:
    """Plain-weight network: list of ``(kind, weight, bias)`` tuples."""

    _apply = {"fc": Dense.apply, "conv": Conv2D.apply}

    def __init__(self, layers, input_shape, n_classes):
        self.layers = [(k, w, b) for k, w, b in layers]
        self.input_shape = tuple(input_shape)
        self.n_classes = int(n_classes)

    def _run(self, x, stop=None):
        x = np.asarray(x, dtype=np.float64)
        single = x.shape == self.input_shape
        if single:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} != {self.input_shape}")
        for kind, w, b in self.layers[:stop]:
            if kind in self._apply:
                x = self._apply[kind](x, w, b)
            elif kind == "relu":
                x = relu(x)
            else:
                x = x.reshape(x.shape[0], -1)
        return x[0] if single else x

    def forward(self, x):
        return self._run(x)

    def features(self, x):
        """Activations entering the final weight-bearing layer."""
        last = max(i for i, (k, _, _) in enumerate(self.layers) if k in self._apply)
        return self._run(x, stop=last)


def predict_labels(scores: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class id.
    return np.argmax(scores, axis=-1)


def evaluate(model, X, y, z=None) -> float:
    """Multi-class accuracy of ``model`` (Network or ConcreteNetwork)."""
    y = np.asarray(y)
    if len(y) == 0:
        return float("nan")
    scores = model.forward(X) if isinstance(model, ConcreteNetwork) else model.forward(X, z)
    return float(np.mean(predict_labels(np.atleast_2d(scores)) == y))


# --------------------------------------------------------------------------
# construction


def _make_generator(form, weight_shape, fan_in, n_domains, rng, ranks=None):
    if form == "shared":
        return init_shared(weight_shape, fan_in, n_domains, rng)
    full = init_full(weight_shape, fan_in, n_domains, rng)
    if form == "full":
        return full
    if form == "factored":
        return factorize(full, ranks)
    raise ValueError(f"unknown generator form {form!r}")


def build_mlp(input_dim, hidden, n_classes, n_domains, form="full", seed=0, rho=0.3, ranks=None):
    """Dense/ReLU stack. ``form`` is one generator form for every layer or a list.

    ``ranks`` optionally gives a rank tuple per layer for factored layers.
    """
    rng = np.random.default_rng(seed)
    sizes = [int(input_dim), *[int(h) for h in hidden], int(n_classes)]
    n_layers = len(sizes) - 1
    forms = [form] * n_layers if isinstance(form, str) else list(form)
    ranks = ranks or [None] * n_layers
    layers = []
    for i in range(n_layers):
        shape = (sizes[i], sizes[i + 1])
        layers.append(Dense(_make_generator(forms[i], shape, sizes[i], n_domains, rng, ranks[i])))
        if i < n_layers - 1:
            layers.append(ReLU())
    return Network(layers, (sizes[0],), n_domains, n_classes, rho)


def build_convnet(input_shape, kernels, n_classes, n_domains, form="full", seed=0, rho=0.3,
                  hidden=(), ranks=None):
    """Conv/ReLU stack, flatten, then Dense layers. ``kernels`` = [(kh, kw, filters), ...]."""
    rng = np.random.default_rng(seed)
    n_weighted = len(kernels) + len(hidden) + 1
    forms = [form] * n_weighted if isinstance(form, str) else list(form)
    ranks = ranks or [None] * n_weighted
    layers, shape, k = [], tuple(input_shape), 0
    for kh, kw, filters in kernels:
        wshape = (kh, kw, shape[2], filters)
        layer = Conv2D(_make_generator(forms[k], wshape, kh * kw * shape[2], n_domains, rng, ranks[k]))
        shape = layer.output_shape(shape)
        layers += [layer, ReLU()]
        k += 1
    layers.append(Flatten())
    width = int(np.prod(shape))
    for h in [*hidden, n_classes]:
        layers.append(Dense(_make_generator(forms[k], (width, h), width, n_domains, rng, ranks[k])))
        if k < n_weighted - 1:
            layers.append(ReLU())
        width = h
        k += 1
    return Network(layers, input_shape, n_domains, n_classes, rho)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    """SGD-with-momentum settings. ``batch_size`` is drawn from *each* domain."""

    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 64
    max_iterations: int = 1000
    rho: float = 0.3
    seed: int = 0
    val_fraction: float = 0.1
    weight_decay: float = 0.0
    eval_every: int = 50

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning_rate must be >= 0 and momentum in [0, 1)")
        if self.batch_size < 1 or self.max_iterations < 0 or self.eval_every < 1:
            raise ValueError("batch_size and eval_every must be positive")
        if self.rho <= 0 or not 0 < self.val_fraction < 1 or self.weight_decay < 0:
            raise ValueError("rho > 0, 0 < val_fraction < 1 and weight_decay >= 0 required")

    @classmethod
    def finetune_preset(cls, **overrides) -> "TrainConfig":
        """Slow fine-tuning schedule for large pretrained backbones (25k iterations)."""
        return cls(**{"learning_rate": 5e-5, "max_iterations": 25000, **overrides})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    iterations: list[int] = field(default_factory=list)
    loss: list[float | None] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_iteration: int = 0
    best_val_accuracy: float = float("nan")
    config: dict = field(default_factory=dict)
    best_state: dict | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "loss": self.loss,
            "val_accuracy": self.val_accuracy,
            "best_iteration": self.best_iteration,
            "best_val_accuracy": self.best_val_accuracy,
            "config": self.config,
            "seed": self.config.get("seed"),
        }


class _DomainSampler:
    """Cycles through seeded per-domain permutations."""

    def __init__(self, n: int, rng):
        self.n, self.rng = n, rng
        self.perm, self.pos = rng.permutation(n), 0

    def draw(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos == self.n:
                self.perm, self.pos = self.rng.permutation(self.n), 0
            take = min(k, self.n - self.pos)
            out.append(self.perm[self.pos:self.pos + take])
            self.pos += take
            k -= take
        return np.concatenate(out)


def _val_score(net: Network, val: MultiDomainDataset) -> float:
    accs = [evaluate(net, d.X, d.y) for d in val.domains if len(d)]
    return float(np.mean(accs)) if accs else float("nan")


def train(net: Network, data: MultiDomainDataset, cfg: TrainConfig, val=None,
          domain_ids=None) -> TrainReport:
    """Train ``net`` in place on the multi-domain objective.

    Each step draws ``cfg.batch_size`` instances from every domain. Unless
    ``val`` is given, ``data`` is split 9:1 (``cfg.val_fraction``) per
    domain. Validation uses the agnostic descriptor; the best validation
    state is restored at the end.

    ``domain_ids`` maps dataset domains to network descriptor slots (default:
    ``0..S-1``; ``-1`` trains with the agnostic descriptor).
    """
    labels = np.concatenate([d.y for d in data.domains]) if len(data) else np.array([])
    if data.n_classes != net.n_classes or (labels.size and labels.max() >= net.n_classes):
        raise LabelSpaceError("dataset label space does not match the network")
    if val is None:
        data, val = split_train_val(data, cfg.val_fraction, cfg.seed)
    if domain_ids is None:
        domain_ids = list(range(len(data)))
    if any(len(d) == 0 for d in data.domains):
        raise EmptyBatch("a training domain has no instances")

    rng = np.random.default_rng(cfg.seed)
    samplers = [_DomainSampler(len(d), rng) for d in data.domains]
    keys = net.trainable_keys()
    params = net.params()
    velocity = {k: np.zeros_like(params[k]) for k in keys}

    report = TrainReport(config=cfg.to_dict())
    best = _val_score(net, val)
    report.best_val_accuracy, report.best_state = best, net.get_state()
    report.iterations.append(0)
    report.val_accuracy.append(best)
    # no steps taken yet, so there is no running training loss to report
    report.loss.append(None)
    running = []

    for it in range(1, cfg.max_iterations + 1):
        Xb, yb, db = [], [], []
        for d, sampler, slot in zip(data.domains, samplers, domain_ids):
            idx = sampler.draw(cfg.batch_size)
            Xb.append(d.X[idx])
            yb.append(d.y[idx])
            db.append(np.full(len(idx), slot))
        loss, grads = net.loss_and_grads(
            np.concatenate(Xb), np.concatenate(yb), np.concatenate(db), only_trainable=True
        )
        running.append(loss)
        for k in keys:
            g = grads[k] + cfg.weight_decay * params[k] if cfg.weight_decay else grads[k]
            v = velocity[k]
            v *= cfg.momentum
            v -= cfg.learning_rate * g
            params[k] += v
        if it % cfg.eval_every == 0 or it == cfg.max_iterations:
            acc = _val_score(net, val)
            report.iterations.append(it)
            report.loss.append(float(np.mean(running)))
            report.val_accuracy.append(acc)
            running = []
            if acc > report.best_val_accuracy:
                report.best_val_accuracy, report.best_iteration = acc, it
                report.best_state = net.get_state()
    net.set_state(report.best_state)
    return report


def to_full(net: Network) -> Network:
    """Copy of ``net`` with every factored generator multiplied out."""
    out = net.clone()
    for layer in out.layers:
        if isinstance(layer.generator, FactoredGenerator):
            layer.generator = layer.generator.to_full()
    return out


__all__ = [
    "ConcreteNetwork",
    "Conv2D",
    "Dense",
    "Flatten",
    "FullGenerator",
    "Network",
    "ReLU",
    "SharedWeights",
    "TrainConfig",
    "TrainReport",
    "build_convnet",
    "build_mlp",
    "evaluate",
    "softmax_cross_entropy",
    "train",
]
