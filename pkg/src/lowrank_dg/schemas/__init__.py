"""JSON schemas for every report and manifest the package writes."""

import json
from importlib import resources

NAMES = (
    "ablate",
    "checkpoint_manifest",
    "dataset_manifest",
    "decompose",
    "eval",
    "shift",
    "synth",
    "train_report",
)


def load_schema(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(f"no schema named {name!r}")
    text = resources.files(__name__).joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)
