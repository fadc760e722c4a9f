"""Multi-domain datasets: container, on-disk format and synthetic benchmark.

On disk a dataset is a directory holding ``manifest.json`` plus, per domain,
one DGT1 file stacking instances along a leading mode and one DGT1 label
file whose payload is little-endian ``u32``. Labels are 0-based class ids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, LabelSpaceError, ShapeError
from .tensor_core import read_dgt1, write_dgt1

FORMAT_VERSION = 1


@dataclass
class Domain:
    name: str
    X: np.ndarray
    y: np.ndarray
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.y), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.X.ndim < 2 or self.X.shape[0] != self.y.shape[0] or self.y.ndim != 1:
            raise ShapeError(
                f"domain {self.name!r}: X {self.X.shape} and y {self.y.shape} disagree"
            )
        if self.ids.shape != self.y.shape:
            raise ShapeError(f"domain {self.name!r}: ids shape {self.ids.shape}")

    def __len__(self) -> int:
        return int(self.y.shape[0])

    def take(self, idx) -> "Domain":
        return Domain(self.name, self.X[idx], self.y[idx], self.ids[idx])


@dataclass
class MultiDomainDataset:
    domains: list[Domain]
    n_classes: int

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.domains:
            raise ShapeError("dataset has no domains")
        names = [d.name for d in self.domains]
        if len(set(names)) != len(names):
            raise FormatError(f"duplicate domain names: {names}")
        shape = self.domains[0].X.shape[1:]
        for d in self.domains:
            if d.X.shape[1:] != shape:
                raise ShapeError(
                    f"domain {d.name!r} has input shape {d.X.shape[1:]}, expected {shape}"
                )
            if len(d) and (d.y.min() < 0 or d.y.max() >= self.n_classes):
                raise LabelSpaceError(
                    f"domain {d.name!r} has labels outside [0, {self.n_classes})"
                )

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.domains]

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.domains[0].X.shape[1:])

    def __len__(self) -> int:
        return len(self.domains)

    def domain(self, name: str) -> Domain:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(name)

    def subset(self, names) -> "MultiDomainDataset":
        return MultiDomainDataset([self.domain(n) for n in names], self.n_classes)

    def without(self, name: str) -> "MultiDomainDataset":
        self.domain(name)
        return self.subset([n for n in self.names if n != name])

    def pooled(self):
        """``(X, y, domain_index)`` over all domains."""
        X = np.concatenate([d.X for d in self.domains])
        y = np.concatenate([d.y for d in self.domains])
        dom = np.concatenate([np.full(len(d), i) for i, d in enumerate(self.domains)])
        return X, y, dom


def save_dataset(dataset: MultiDomainDataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, d in enumerate(dataset.domains):
        x_file, y_file, id_file = f"domain{i}_x.dgt", f"domain{i}_y.dgt", f"domain{i}_ids.dgt"
        write_dgt1(path / x_file, d.X)
        write_dgt1(path / y_file, d.y, dtype="<u4")
        write_dgt1(path / id_file, d.ids, dtype="<u4")
        entries.append(
            {"name": d.name, "count": len(d), "instances": x_file, "labels": y_file, "ids": id_file}
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "n_classes": int(dataset.n_classes),
        "input_shape": list(dataset.input_shape),
        "domains": entries,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(path) -> MultiDomainDataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.is_file():
        raise FormatError(f"{path}: no manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
        version = manifest["format_version"]
        n_classes = int(manifest["n_classes"])
        input_shape = tuple(int(s) for s in manifest["input_shape"])
        entries = manifest["domains"]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{manifest_path}: {exc}") from exc
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported dataset format_version {version}")
    domains = []
    for e in entries:
        try:
            X = read_dgt1(path / e["instances"])
            y = read_dgt1(path / e["labels"], dtype="<u4").astype(np.int64)
            ids = read_dgt1(path / e["ids"], dtype="<u4") if "ids" in e else None
        except (KeyError, OSError) as exc:
            raise FormatError(f"{manifest_path}: bad domain entry {e!r}: {exc}") from exc
        if X.shape[1:] != input_shape:
            raise ShapeError(f"domain {e['name']!r}: input shape {X.shape[1:]} != {input_shape}")
        if y.ndim != 1 or len(y) != X.shape[0] or len(y) != int(e.get("count", len(y))):
            raise FormatError(f"domain {e['name']!r}: instance/label counts disagree")
        domains.append(Domain(e["name"], X, y, ids))
    return MultiDomainDataset(domains, n_classes)


@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of the synthetic multi-domain benchmark.

    Class prototypes are shared by all domains. Domain ``d`` rotates
    prototype-plus-noise samples by ``angles[d]`` degrees simultaneously in
    ``rotation_planes`` orthogonal 2-planes of a shared random basis, then
    scales by ``scales[d]`` and shifts by ``shifts[d]`` times a shared random
    unit direction.
    """

    n_classes: int = 5
    angles: tuple[float, ...] = (0.0, 25.0, 50.0, 75.0)
    input_dim: int = 16
    per_class: int = 200
    prototype_scale: float = 3.0
    noise: float = 1.0
    scales: tuple[float, ...] | None = None
    shifts: tuple[float, ...] | None = None
    rotation_planes: int = 1
    label_noise: float = 0.0
    seed: int = 0
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        n = len(self.angles)
        if self.n_classes < 1 or n < 1 or self.input_dim < 2 or self.per_class < 1:
            raise ValueError("class count, domain count, input_dim and per_class must be positive")
        if not 0 <= self.label_noise < 0.5:
            raise ValueError("label_noise must lie in [0, 0.5)")
        for attr in ("scales", "shifts", "names"):
            value = getattr(self, attr)
            if value is not None and len(value) != n:
                raise ValueError(f"{attr} must have one entry per domain")
        planes = self.planes
        if not 1 <= planes <= self.input_dim // 2:
            raise ValueError(f"rotation_planes must lie in [1, {self.input_dim // 2}]")

    @property
    def planes(self) -> int:
        return int(self.rotation_planes)

    @property
    def domain_names(self) -> tuple[str, ...]:
        if self.names is not None:
            return tuple(self.names)
        return tuple(f"d{i}" for i in range(len(self.angles)))

    @classmethod
    def from_dict(cls, data: dict) -> "SyntheticSpec":
        data = dict(data)
        for key in ("angles", "scales", "shifts", "names"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        return cls(**data)

    def to_dict(self) -> dict:
        return {
            "n_classes": self.n_classes,
            "angles": list(self.angles),
            "input_dim": self.input_dim,
            "per_class": self.per_class,
            "prototype_scale": self.prototype_scale,
            "noise": self.noise,
            "scales": None if self.scales is None else list(self.scales),
            "shifts": None if self.shifts is None else list(self.shifts),
            "rotation_planes": self.rotation_planes,
            "label_noise": self.label_noise,
            "seed": self.seed,
            "names": list(self.domain_names),
        }


REFERENCE_SHIFTS = (2.0, -2.0, 6.0, -6.0)


def reference_spec(seed: int = 1, angles=(0.0, 25.0, 50.0, 75.0), **overrides) -> SyntheticSpec:
    """The 4-domain benchmark used for the acceptance experiments.

    5 classes, 16 dimensions, 200 instances per class and domain; rotations
    act in 4 planes and each domain is offset along a shared direction, so a
    model pooled over sources can learn to ignore the unstable directions.
    """
    params = dict(
        n_classes=5, angles=tuple(angles), input_dim=16, per_class=200,
        prototype_scale=3.0, noise=1.0, rotation_planes=4,
        shifts=REFERENCE_SHIFTS[: len(angles)], seed=seed,
    )
    params.update(overrides)
    return SyntheticSpec(**params)


def rotation_matrix(basis: np.ndarray, planes: int, degrees: float) -> np.ndarray:
    """Rotate by ``degrees`` in the first ``planes`` column pairs of ``basis``."""
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    block = np.eye(basis.shape[0])
    for p in range(planes):
        i, j = 2 * p, 2 * p + 1
        block[i, i], block[i, j], block[j, i], block[j, j] = c, -s, s, c
    return basis @ block @ basis.T


def generate_synthetic(spec: SyntheticSpec) -> MultiDomainDataset:
    rng = np.random.default_rng(spec.seed)
    dim, n_dom = spec.input_dim, len(spec.angles)
    prototypes = rng.standard_normal((spec.n_classes, dim))
    prototypes *= spec.prototype_scale / np.linalg.norm(prototypes, axis=1, keepdims=True)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    shift_dir = rng.standard_normal(dim)
    shift_dir /= np.linalg.norm(shift_dir)
    scales = spec.scales or (1.0,) * n_dom
    shifts = spec.shifts or (0.0,) * n_dom

    n = spec.n_classes * spec.per_class
    labels = np.repeat(np.arange(spec.n_classes), spec.per_class)
    domains = []
    for d, name in enumerate(spec.domain_names):
        # Per-domain draws come first so that changing one domain's transform
        # leaves every other random number untouched.
        noise = rng.standard_normal((n, dim)) * spec.noise
        flip = rng.random(n) < spec.label_noise
        wrong = (labels + rng.integers(1, max(spec.n_classes, 2), size=n)) % spec.n_classes
        rot = rotation_matrix(basis, spec.planes, spec.angles[d])
        X = ((prototypes[labels] + noise) @ rot.T) * scales[d] + shifts[d] * shift_dir
        y = np.where(flip, wrong, labels) if spec.n_classes > 1 else labels
        domains.append(Domain(name, X, y, np.arange(n) + d * n))
    return MultiDomainDataset(domains, spec.n_classes)


def split_train_val(dataset: MultiDomainDataset, fraction: float = 0.1, seed: int = 0):
    """Per-domain seeded shuffle; ``ceil(fraction * N)`` instances go to validation."""
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    train, val = [], []
    for d in dataset.domains:
        perm = rng.permutation(len(d))
        n_val = math.ceil(fraction * len(d))
        val.append(d.take(np.sort(perm[:n_val])))
        train.append(d.take(np.sort(perm[n_val:])))
    return (
        MultiDomainDataset(train, dataset.n_classes),
        MultiDomainDataset(val, dataset.n_classes),
    )
