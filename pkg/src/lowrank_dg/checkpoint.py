"""Checkpoint directories: ``manifest.json`` plus one DGT1 file per array.

Two checkpoint types exist. ``network`` stores a domain-conditioned
:class:`Network` (generator form, ranks, trainable flags). ``concrete``
stores the plain weights of an extracted :class:`ConcreteNetwork`.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .domain_param import FactoredGenerator, FullGenerator, SharedWeights
from .errors import FormatError, LowRankDGError
from .network import ConcreteNetwork, Conv2D, Dense, Flatten, Network, ReLU
from .tensor_core import read_dgt1, write_dgt1
from .tucker import TuckerFactors

FORMAT_VERSION = 1

_LAYER_TYPES = {"fc": Dense, "conv": Conv2D}


def _dump(path: Path, manifest: dict) -> None:
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def save_network(net: Network, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, layer in enumerate(net.layers):
        entry = {"kind": layer.kind}
        gen = layer.generator
        if gen is not None:
            files = {}
            for name, arr in gen.params().items():
                fname = f"layer{i}_{name}.dgt"
                write_dgt1(path / fname, arr)
                files[name] = fname
            entry.update(
                form=gen.form,
                trainable=bool(layer.trainable),
                weight_shape=list(gen.weight_shape),
                files=files,
            )
            if isinstance(gen, FactoredGenerator):
                entry["ranks"] = list(gen.ranks)
        layers.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "type": "network",
        "n_domains": net.n_domains,
        "n_classes": net.n_classes,
        "rho": net.rho,
        "input_shape": list(net.input_shape),
        "layers": layers,
        "meta": extra or {},
    }
    _dump(path, manifest)
    return path


def save_concrete(net: ConcreteNetwork, path, extra: dict | None = None) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    layers = []
    for i, (kind, w, b) in enumerate(net.layers):
        entry = {"kind": kind}
        if w is not None:
            write_dgt1(path / f"layer{i}_weight.dgt", w)
            write_dgt1(path / f"layer{i}_bias.dgt", b)
            entry["files"] = {"weight": f"layer{i}_weight.dgt", "bias": f"layer{i}_bias.dgt"}
        layers.append(entry)
    manifest = {
        "format_version": FORMAT_VERSION,
        "type": "concrete",
        "n_classes": net.n_classes,
        "input_shape": list(net.input_shape),
        "layers": layers,
        "meta": extra or {},
    }
    _dump(path, manifest)
    return path


def read_manifest(path) -> dict:
    mpath = Path(path) / "manifest.json"
    if not mpath.is_file():
        raise FormatError(f"{path}: no manifest.json")
    try:
        manifest = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{mpath}: {exc}") from exc
    if not isinstance(manifest, dict) or manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{mpath}: missing or unsupported format_version")
    return manifest


def _generator(path: Path, entry: dict, n_domains: int):
    arrays = {name: read_dgt1(path / fname) for name, fname in entry["files"].items()}
    form = entry["form"]
    if form == "shared":
        return SharedWeights(arrays["weight"], arrays["bias"], n_domains)
    if form == "full":
        return FullGenerator(arrays["tensor"], arrays["bias_table"])
    if form == "factored":
        order = len(entry["ranks"])
        factors = [arrays[f"factor_{m}"] for m in range(order)]
        return FactoredGenerator(TuckerFactors(arrays["core"], factors), arrays["bias_table"])
    raise FormatError(f"unknown generator form {form!r}")


def load_network(path) -> Network:
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("type") != "network":
        raise FormatError(f"{path}: not a network checkpoint")
    try:
        n_domains = int(manifest["n_domains"])
        layers = []
        for entry in manifest["layers"]:
            kind = entry["kind"]
            if kind == "relu":
                layers.append(ReLU())
            elif kind == "flatten":
                layers.append(Flatten())
            elif kind in _LAYER_TYPES:
                gen = _generator(path, entry, n_domains)
                layers.append(_LAYER_TYPES[kind](gen, trainable=entry.get("trainable", True)))
            else:
                raise FormatError(f"unknown layer kind {kind!r}")
        return Network(
            layers, manifest["input_shape"], n_domains, manifest["n_classes"], manifest["rho"]
        )
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError, OSError, LowRankDGError) as exc:
        raise FormatError(f"{path}: corrupted checkpoint: {exc}") from exc


def load_concrete(path) -> ConcreteNetwork:
    """Load a concrete checkpoint, or extract the agnostic model from a network one."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("type") == "network":
        return load_network(path).extract_agnostic()
    if manifest.get("type") != "concrete":
        raise FormatError(f"{path}: unknown checkpoint type {manifest.get('type')!r}")
    try:
        layers = []
        for entry in manifest["layers"]:
            if "files" in entry:
                w = read_dgt1(path / entry["files"]["weight"])
                b = read_dgt1(path / entry["files"]["bias"])
                layers.append((entry["kind"], w, b))
            else:
                layers.append((entry["kind"], None, None))
        net = ConcreteNetwork(layers, manifest["input_shape"], manifest["n_classes"])
        net.forward(np.zeros(net.input_shape))
        return net
    except (KeyError, TypeError, ValueError, OSError, LowRankDGError) as exc:
        raise FormatError(f"{path}: corrupted checkpoint: {exc}") from exc
