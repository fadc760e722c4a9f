"""Training modes of the ablation ladder and the held-out-domain protocol.

Every mode starts from the same *pretrained* unconditioned network, trained
on the pooled source domains with equal per-domain batches. This stands in
for the ImageNet-pretrained body shared by all variants in the original
setting.

``deep_all``
    fine-tune every layer, no domain conditioning.
``tuning_last``
    fine-tune the final layer only, no domain conditioning.
``two_hot_last``
    final layer becomes a full 2-hot weight generator; body frozen.
``two_hot_decomp_last``
    as above, with the generator Tucker-factorized.
``full``
    every weight-bearing layer generated and factorized, all trainable.

Generated layers are initialized from the stack of single-domain fine-tunes
of the pretrained network: slice ``i`` holds ``(W_i - W_0) / rho`` and the
shared slice holds ``W_0``, so each domain's 2-hot code reproduces its own
fine-tuned weights before decomposition.
"""

from __future__ import annotations

import dataclasses
from functools import cached_property

import numpy as np

from .dataset_io import MultiDomainDataset, split_train_val
from .domain_param import FactoredGenerator, FullGenerator, SharedWeights
from .errors import ConfigError
from .network import Network, TrainConfig, TrainReport, build_mlp, evaluate, train
from .tucker import init_from_stack, select_ranks, stack_domains

MODES = ("deep_all", "tuning_last", "two_hot_last", "two_hot_decomp_last", "full")


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


def _weighted(net: Network):
    return [i for i, layer in enumerate(net.layers) if layer.generator is not None]


def _shared_state(net: Network, i: int):
    gen = net.layers[i].generator
    return gen.weight, gen.bias


def stacked_generator(base_w, base_b, singles, rho, factored, epsilon):
    """Generator whose 2-hot codes reproduce ``singles`` and whose shared slot is the base."""
    deltas_w = [(w - base_w) / rho for w, _ in singles]
    deltas_b = [(b - base_b) / rho for _, b in singles]
    bias_table = np.stack(deltas_b + [base_b])
    if factored:
        return FactoredGenerator(init_from_stack(deltas_w, base_w, epsilon), bias_table)
    return FullGenerator(stack_domains(deltas_w, base_w), bias_table)


class ModeRunner:
    """Trains the ablation modes on one set of source domains.

    Intermediate models (pretrained network, single-domain fine-tunes) are
    cached so that running several modes shares them.
    """

    def __init__(self, sources: MultiDomainDataset, cfg: TrainConfig, hidden=(32,),
                 pretrain_iterations=None, single_iterations=None, epsilon=0.1):
        if len(sources) < 1:
            raise ConfigError("need at least one source domain")
        if len(sources.input_shape) != 1:
            raise ConfigError("mode runner builds MLPs and needs vector inputs")
        self.sources = sources
        self.cfg = cfg
        self.hidden = tuple(int(h) for h in hidden)
        self.pretrain_iterations = (
            cfg.max_iterations if pretrain_iterations is None else int(pretrain_iterations)
        )
        self.single_iterations = (
            cfg.max_iterations if single_iterations is None else int(single_iterations)
        )
        self.epsilon = float(epsilon)
        self.train_set, self.val_set = split_train_val(sources, cfg.val_fraction, cfg.seed)
        self.reports: dict[str, TrainReport] = {}

    @property
    def n_domains(self) -> int:
        return len(self.sources)

    def _cfg(self, iterations, seed_offset=0):
        return dataclasses.replace(
            self.cfg, max_iterations=iterations, seed=self.cfg.seed + seed_offset
        )

    def _shared_net(self, seed):
        return build_mlp(
            self.sources.input_shape[0], self.hidden, self.sources.n_classes,
            self.n_domains, form="shared", seed=seed, rho=self.cfg.rho,
        )

    @cached_property
    def pretrained(self) -> Network:
        net = self._shared_net(self.cfg.seed)
        self.reports["pretrain"] = train(
            net, self.train_set, self._cfg(self.pretrain_iterations), val=self.val_set,
            domain_ids=list(range(self.n_domains)),
        )
        return net

    def _single_domain(self, k: int, last_only: bool) -> Network:
        net = self.pretrained.clone()
        if last_only:
            for i in _weighted(net)[:-1]:
                net.layers[i].trainable = False
        name = self.sources.names[k]
        train(
            net, self.train_set.subset([name]), self._cfg(self.single_iterations, 1 + k),
            val=self.val_set.subset([name]), domain_ids=[k],
        )
        return net

    @cached_property
    def singles_last(self) -> list[Network]:
        return [self._single_domain(k, True) for k in range(self.n_domains)]

    @cached_property
    def singles_all(self) -> list[Network]:
        return [self._single_domain(k, False) for k in range(self.n_domains)]

    def build(self, mode: str) -> Network:
        """Initial network for ``mode``, before its fine-tuning stage."""
        check_mode(mode)
        net = self.pretrained.clone()
        weighted = _weighted(net)
        if mode == "deep_all":
            return net
        if mode == "tuning_last":
            for i in weighted[:-1]:
                net.layers[i].trainable = False
            return net
        if mode in ("two_hot_last", "two_hot_decomp_last"):
            last = weighted[-1]
            for i in weighted[:-1]:
                net.layers[i].trainable = False
            base_w, base_b = _shared_state(self.pretrained, last)
            singles = [_shared_state(s, last) for s in self.singles_last]
            net.layers[last].generator = stacked_generator(
                base_w, base_b, singles, self.cfg.rho,
                factored=mode == "two_hot_decomp_last", epsilon=self.epsilon,
            )
            return net
        for i in weighted:
            base_w, base_b = _shared_state(self.pretrained, i)
            singles = [_shared_state(s, i) for s in self.singles_all]
            net.layers[i].generator = stacked_generator(
                base_w, base_b, singles, self.cfg.rho, factored=True, epsilon=self.epsilon
            )
        return net

    def fit(self, mode: str) -> Network:
        net = self.build(mode)
        self.reports[mode] = train(
            net, self.train_set, self._cfg(self.cfg.max_iterations, 100),
            val=self.val_set, domain_ids=list(range(self.n_domains)),
        )
        return net

    def single_source(self, name: str) -> Network:
        """Unconditioned network trained from scratch on one source domain."""
        k = self.sources.names.index(name)
        net = self._shared_net(self.cfg.seed + 200 + k)
        train(
            net, self.train_set.subset([name]),
            self._cfg(self.pretrain_iterations + self.cfg.max_iterations, 200 + k),
            val=self.val_set.subset([name]), domain_ids=[k],
        )
        return net


def domain_ranks(net: Network, epsilon: float) -> list[dict]:
    """Tucker ranks of every generated layer's full tensor at budget ``epsilon``."""
    rows = []
    for i, layer in enumerate(net.layers):
        gen = layer.generator
        if gen is None or isinstance(gen, SharedWeights):
            continue
        tensor = gen.to_full().tensor if isinstance(gen, FactoredGenerator) else gen.tensor
        sel = select_ranks(tensor, epsilon)
        rows.append({"layer": i, "ranks": list(sel.ranks), "achieved_error": sel.achieved_error})
    return rows


def held_out_accuracy(dataset: MultiDomainDataset, held_out: str, mode: str, cfg: TrainConfig,
                      **runner_kwargs) -> float:
    runner = ModeRunner(dataset.without(held_out), cfg, **runner_kwargs)
    target = dataset.domain(held_out)
    return evaluate(runner.fit(mode).extract_agnostic(), target.X, target.y)


def ablation_table(dataset: MultiDomainDataset, cfg: TrainConfig, single_source=True,
                   **runner_kwargs) -> dict:
    """Held-out accuracy of every mode, each domain held out in turn.

    Cell ``k`` (the ``k``-th held-out domain) is seeded with ``cfg.seed + k``.
    """
    accuracy, singles = {}, {}
    for k, held_out in enumerate(dataset.names):
        cell_cfg = dataclasses.replace(cfg, seed=cfg.seed + k)
        runner = ModeRunner(dataset.without(held_out), cell_cfg, **runner_kwargs)
        target = dataset.domain(held_out)
        row = {}
        for mode in MODES:
            row[mode] = evaluate(runner.fit(mode).extract_agnostic(), target.X, target.y)
        if single_source:
            singles[held_out] = {
                name: evaluate(runner.single_source(name).extract_agnostic(), target.X, target.y)
                for name in runner.sources.names
            }
            row["single_best"] = max(singles[held_out].values())
        accuracy[held_out] = row
    columns = list(next(iter(accuracy.values())))
    average = {c: float(np.mean([accuracy[h][c] for h in accuracy])) for c in columns}
    out = {"held_out": list(dataset.names), "accuracy": accuracy, "average": average}
    if single_source:
        out["single_source"] = singles
    return out


def accuracy_margins(dataset: MultiDomainDataset, cfg: TrainConfig, hidden=(32,),
                     pretrain_iterations=None) -> dict:
    """Within-domain versus cross-domain accuracy for every domain.

    Within: an unconditioned network trained on the domain's own training
    split, scored on its validation split. Cross: the ``deep_all`` model
    trained on all other domains, scored on the whole domain.
    """
    train_set, val_set = split_train_val(dataset, cfg.val_fraction, cfg.seed)
    iters = cfg.max_iterations if pretrain_iterations is None else int(pretrain_iterations)
    within, cross = [], []
    for k, name in enumerate(dataset.names):
        net = build_mlp(dataset.input_shape[0], hidden, dataset.n_classes, 1, form="shared",
                        seed=cfg.seed + k, rho=cfg.rho)
        train(net, train_set.subset([name]),
              dataclasses.replace(cfg, max_iterations=iters + cfg.max_iterations, seed=cfg.seed + k),
              val=val_set.subset([name]), domain_ids=[0])
        held = val_set.domain(name)
        within.append(evaluate(net, held.X, held.y))
        runner = ModeRunner(dataset.without(name), dataclasses.replace(cfg, seed=cfg.seed + k),
                            hidden=hidden, pretrain_iterations=pretrain_iterations)
        target = dataset.domain(name)
        cross.append(evaluate(runner.fit("deep_all").extract_agnostic(), target.X, target.y))
    return {"domains": list(dataset.names), "within": within, "cross": cross}
