"""Command-line entry point: ``lowrank-dg <command> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric failure.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from . import experiment
from .checkpoint import load_concrete, load_network, read_manifest, save_network
from .dataset_io import SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .domain_param import FactoredGenerator, SharedWeights
from .errors import (
    ConfigError,
    EmptyBatch,
    EmptyDomain,
    FormatError,
    InvalidDomain,
    InvalidMode,
    InvalidRank,
    LabelSpaceError,
    NumericError,
    ShapeError,
)
from .network import TrainConfig, evaluate
from .shift_metrics import accuracy_margin, domain_shift
from .tensor_core import read_dgt1
from .tucker import param_count_full, param_count_tucker, select_ranks

log = logging.getLogger("lowrank_dg")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

DEFAULT_ITERS = 300
DEFAULT_PRETRAIN_ITERS = 300
DEFAULT_SINGLE_ITERS = 200


def dump_json(data, path=None) -> str:
    text = json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    return text


def format_table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if j else c.ljust(w) for j, (c, w) in enumerate(zip(r, widths)))
             for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _parse_spec(text: str) -> SyntheticSpec:
    path = Path(text)
    try:
        raw = path.read_text() if path.is_file() else text
        data = json.loads(raw)
    except (json.JSONDecodeError, OSError) as exc:
        raise ConfigError(f"--synthetic-spec is neither a JSON file nor JSON text: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("--synthetic-spec must be a JSON object")
    try:
        return SyntheticSpec.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from exc


def resolve_dataset(dataset, synthetic_spec):
    if (dataset is None) == (synthetic_spec is None):
        raise ConfigError("give exactly one of --dataset or --synthetic-spec")
    if dataset is not None:
        return load_dataset(dataset)
    spec = _parse_spec(synthetic_spec)
    return generate_synthetic(spec)


def _check_domain(data, name, flag="--held-out"):
    if name not in data.names:
        raise ConfigError(f"{flag} {name!r} is not one of {data.names}")
    return name


def _train_config(seed, lr, batch_size, iters, rho, momentum) -> TrainConfig:
    try:
        return TrainConfig(
            learning_rate=lr, momentum=momentum, batch_size=batch_size,
            max_iterations=iters, rho=rho, seed=seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def data_options(f):
    f = click.option("--synthetic-spec", default=None,
                     help="Synthetic benchmark spec: JSON text or path to a JSON file.")(f)
    f = click.option("--dataset", type=click.Path(file_okay=False), default=None,
                     help="Dataset directory with manifest.json.")(f)
    return f


def train_options(f):
    for opt in reversed([
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=0, show_default=True),
        click.option("--lr", type=float, default=1e-2, show_default=True),
        click.option("--batch-size", type=int, default=64, show_default=True,
                     help="Instances drawn from each domain per step."),
        click.option("--iters", type=int, default=DEFAULT_ITERS, show_default=True),
        click.option("--pretrain-iters", type=int, default=DEFAULT_PRETRAIN_ITERS,
                     show_default=True),
        click.option("--single-iters", type=int, default=DEFAULT_SINGLE_ITERS,
                     show_default=True),
        click.option("--rho", type=float, default=None, help="2-hot ratio (default 0.3)."),
        click.option("--momentum", type=float, default=0.9, show_default=True),
        click.option("--epsilon", type=float, default=0.1, show_default=True,
                     help="Tucker reconstruction budget for factorized layers."),
        click.option("--hidden", default="32", show_default=True,
                     help="Comma-separated hidden layer widths."),
    ]):
        f = opt(f)
    return f


def _hidden(text) -> tuple[int, ...]:
    try:
        return tuple(int(h) for h in text.split(",") if h.strip())
    except ValueError as exc:
        raise ConfigError(f"--hidden: {exc}") from exc


def _runner_config(opts) -> TrainConfig:
    return _train_config(opts["seed"], opts["lr"], opts["batch_size"], opts["iters"],
                         0.3 if opts["rho"] is None else opts["rho"], opts["momentum"])


def _runner(data, held_out, opts) -> experiment.ModeRunner:
    cfg = _runner_config(opts)
    if not 0 < opts["epsilon"] < 1:
        raise ConfigError("--epsilon must lie in (0, 1)")
    # The training set is fixed here, before any mode-specific code runs.
    return experiment.ModeRunner(
        data.without(held_out), cfg, hidden=_hidden(opts["hidden"]),
        pretrain_iterations=opts["pretrain_iters"], single_iterations=opts["single_iters"],
        epsilon=opts["epsilon"],
    )


def _layer_summary(net):
    rows = []
    for i, layer in enumerate(net.layers):
        gen = layer.generator
        if gen is None:
            continue
        row = {"layer": i, "kind": layer.kind, "form": gen.form,
               "weight_shape": list(gen.weight_shape), "trainable": bool(layer.trainable),
               "n_params": int(sum(a.size for a in gen.params().values()))}
        if isinstance(gen, FactoredGenerator):
            row["ranks"] = list(gen.ranks)
        rows.append(row)
    return rows


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log progress to stderr.")
def cli(verbose):
    """Domain generalization with low-rank domain-conditioned networks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)


@cli.command()
@click.option("--synthetic-spec", required=True)
@click.option("--out", type=click.Path(file_okay=False), required=True)
def synth(synthetic_spec, out):
    """Write a synthetic benchmark to a dataset directory."""
    data = generate_synthetic(_parse_spec(synthetic_spec))
    save_dataset(data, out)
    click.echo(dump_json({"domains": data.names, "counts": [len(d) for d in data.domains],
                          "n_classes": data.n_classes}), nl=False)


@cli.command()
@data_options
@click.option("--held-out", required=True, help="Domain excluded from training.")
@click.option("--mode", default="full", show_default=True, help=", ".join(experiment.MODES))
@train_options
@click.option("--out", type=click.Path(file_okay=False), required=True)
def train(dataset, synthetic_spec, held_out, mode, out, **opts):
    """Train one mode on all domains except the held-out one."""
    experiment.check_mode(mode)
    if mode in ("deep_all", "tuning_last") and opts["rho"] is not None:
        click.echo(f"warning: --rho has no effect in mode {mode}", err=True)
    data = resolve_dataset(dataset, synthetic_spec)
    _check_domain(data, held_out)
    runner = _runner(data, held_out, opts)
    net = runner.fit(mode)
    out = Path(out)
    meta = {"mode": mode, "held_out": held_out, "sources": runner.sources.names,
            "seed": opts["seed"]}
    save_network(net, out / "checkpoint", extra=meta)
    report = {
        **meta,
        "train": runner.reports[mode].to_dict(),
        "pretrain": runner.reports["pretrain"].to_dict(),
        "layers": _layer_summary(net),
        "n_params": net.n_params(),
    }
    click.echo(dump_json(report, out / "train_report.json"), nl=False)


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(file_okay=False), required=True)
@data_options
@click.option("--domain", required=True, help="Domain to evaluate on (all of its instances).")
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def eval_cmd(checkpoint, dataset, synthetic_spec, domain, out):
    """Accuracy of the extracted domain-agnostic model on one domain."""
    model = load_concrete(checkpoint)
    data = resolve_dataset(dataset, synthetic_spec)
    _check_domain(data, domain, "--domain")
    target = data.domain(domain)
    if target.X.shape[1:] != model.input_shape:
        raise ShapeError(f"checkpoint expects {model.input_shape}, data has {target.X.shape[1:]}")
    result = {"domain": domain, "accuracy": evaluate(model, target.X, target.y),
              "n_instances": len(target), "checkpoint": Path(checkpoint).name}
    click.echo(dump_json(result, out), nl=False)


def _features(data, source, checkpoint):
    if source == "raw":
        return {d.name: d.X.reshape(len(d), -1) for d in data.domains}
    if checkpoint is None:
        raise ConfigError("--features checkpoint needs --checkpoint")
    model = load_concrete(checkpoint)
    return {d.name: model.features(d.X) for d in data.domains}


@cli.command()
@data_options
@click.option("--features", "feature_source", type=click.Choice(["raw", "checkpoint"]),
              default="raw", show_default=True)
@click.option("--checkpoint", type=click.Path(file_okay=False), default=None)
@click.option("--margins", is_flag=True,
              help="Also train within-domain and cross-domain models and report accuracy margins.")
@train_options
@click.option("--out", type=click.Path(file_okay=False), default=None)
def shift(dataset, synthetic_spec, feature_source, checkpoint, margins, out, **opts):
    """Domain shift of each held-out domain against the remaining sources."""
    data = resolve_dataset(dataset, synthetic_spec)
    feats = _features(data, feature_source, checkpoint)
    rows, per_domain = [], {}
    for name in data.names:
        sources = [feats[n] for n in data.names if n != name]
        if not sources:
            raise ConfigError("domain shift needs at least two domains")
        rep = domain_shift(sources, [feats[name]])
        per_domain[name] = rep.to_dict()
        rows.append([name, f"{rep.d_shift:.6f}"])
    average = float(np.mean([v["d_shift"] for v in per_domain.values()]))
    result = {"features": feature_source, "held_out": per_domain, "average_d_shift": average}
    header = ["held-out", "d_shift"]
    if margins:
        m = experiment.accuracy_margins(data, _runner_config(opts), hidden=_hidden(opts["hidden"]),
                                        pretrain_iterations=opts["pretrain_iters"])
        margin_values, mean_margin = accuracy_margin(m["within"], m["cross"])
        result["margins"] = {"within": m["within"], "cross": m["cross"],
                             "margin": margin_values.tolist(), "mean_margin": mean_margin}
        header += ["within", "cross", "margin"]
        for row, w, c, g in zip(rows, m["within"], m["cross"], margin_values):
            row += [f"{w:.4f}", f"{c:.4f}", f"{g:.4f}"]
    table = format_table(header, rows + [["average", f"{average:.6f}"] + [""] * (len(header) - 2)])
    if out is not None:
        dump_json(result, Path(out) / "shift_report.json")
        Path(out, "shift_table.txt").write_text(table)
    click.echo(table, nl=False, err=True)
    click.echo(dump_json(result), nl=False)


def decompose_network(net, epsilon: float) -> list[dict]:
    rows = []
    for i, layer in enumerate(net.layers):
        gen = layer.generator
        if gen is None:
            continue
        if isinstance(gen, SharedWeights):
            rows.append({"layer": i, "kind": layer.kind, "form": gen.form,
                         "weight_shape": list(gen.weight_shape), "conditioned": False})
            continue
        tensor = gen.to_full().tensor if isinstance(gen, FactoredGenerator) else gen.tensor
        sel = select_ranks(tensor, epsilon)
        dims = list(tensor.shape[:-1])
        rows.append({
            "layer": i, "kind": layer.kind, "form": gen.form, "conditioned": True,
            "weight_shape": dims, "tensor_shape": list(tensor.shape),
            "ranks": list(sel.ranks), "domain_rank": sel.ranks[-1],
            "achieved_error": sel.achieved_error,
            "param_count_full": param_count_full(dims, gen.n_domains),
            "param_count_tucker": param_count_tucker(dims, sel.ranks, gen.n_domains),
        })
    return rows


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=False), required=True,
              help="Network checkpoint directory or a DGT1 tensor file.")
@click.option("--epsilon", type=float, default=0.001, show_default=True)
@click.option("--out", type=click.Path(file_okay=False), default=None)
def decompose(checkpoint, epsilon, out):
    """Per-layer Tucker ranks of the domain-weight tensors at budget epsilon."""
    if not 0 < epsilon < 1:
        raise ConfigError("--epsilon must lie in (0, 1)")
    path = Path(checkpoint)
    if path.is_file():
        tensor = read_dgt1(path)
        if tensor.ndim < 2:
            raise FormatError("a domain-weight tensor needs at least two modes")
        sel = select_ranks(tensor, epsilon)
        dims = list(tensor.shape[:-1])
        n_dom = tensor.shape[-1] - 1
        layers = [{"layer": 0, "kind": "tensor", "form": "full", "conditioned": True,
                   "weight_shape": dims, "tensor_shape": list(tensor.shape),
                   "ranks": list(sel.ranks), "domain_rank": sel.ranks[-1],
                   "achieved_error": sel.achieved_error,
                   "param_count_full": param_count_full(dims, n_dom),
                   "param_count_tucker": param_count_tucker(dims, sel.ranks, n_dom)}]
        meta = {}
    else:
        manifest = read_manifest(path)
        layers = decompose_network(load_network(path), epsilon)
        meta = manifest.get("meta", {})
    result = {"epsilon": epsilon, "source": path.name, "meta": meta, "layers": layers}
    rows = [[r["layer"], r["kind"], "x".join(map(str, r.get("tensor_shape", r["weight_shape"]))),
             "x".join(map(str, r["ranks"])) if "ranks" in r else "-",
             f"{r['achieved_error']:.2e}" if "achieved_error" in r else "-"]
            for r in layers]
    table = format_table(["layer", "kind", "shape", "ranks", "error"], rows)
    if out is not None:
        dump_json(result, Path(out) / "decompose_report.json")
        Path(out, "decompose_table.txt").write_text(table)
    click.echo(table, nl=False, err=True)
    click.echo(dump_json(result), nl=False)


@cli.command()
@data_options
@train_options
@click.option("--with-single-source/--no-single-source", default=True, show_default=True,
              help="Also report the best single-source baseline per held-out domain.")
@click.option("--out", type=click.Path(file_okay=False), default=None)
def ablate(dataset, synthetic_spec, with_single_source, out, **opts):
    """Every mode x every held-out domain, as an accuracy table."""
    data = resolve_dataset(dataset, synthetic_spec)
    if len(data) < 2:
        raise ConfigError("ablation needs at least two domains")
    table = experiment.ablation_table(
        data, _runner_config(opts), hidden=_hidden(opts["hidden"]),
        pretrain_iterations=opts["pretrain_iters"], single_iterations=opts["single_iters"],
        epsilon=opts["epsilon"], single_source=with_single_source,
    )
    cols = list(experiment.MODES) + (["single_best"] if with_single_source else [])
    rows = [[h] + [f"{100 * table['accuracy'][h][c]:.2f}" for c in cols] for h in data.names]
    rows.append(["average"] + [f"{100 * table['average'][c]:.2f}" for c in cols])
    text = format_table(["held-out"] + cols, rows)
    result = {"seed": opts["seed"], "columns": cols, **table}
    if out is not None:
        dump_json(result, Path(out) / "ablation.json")
        Path(out, "ablation_table.txt").write_text(text)
    click.echo(text, nl=False, err=True)
    click.echo(dump_json(result), nl=False)


_EXIT_CODES = [
    ((ConfigError, InvalidDomain, InvalidMode, InvalidRank), EXIT_CONFIG),
    ((FormatError, LabelSpaceError, ShapeError, EmptyDomain, EmptyBatch, OSError), EXIT_DATA),
    ((NumericError, FloatingPointError), EXIT_NUMERIC),
]


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="lowrank-dg", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except click.Abort:
        return 1
    except Exception as exc:
        for types, code in _EXIT_CODES:
            if isinstance(exc, types):
                click.echo(f"error: {exc}", err=True)
                return code
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
