"""Run configuration for ``pathdev train``.

Every section is merged over its defaults, unknown keys are rejected, and
the fully materialised document is what gets written to
``effective_config.json``.
"""

import copy
from dataclasses import asdict

from .errors import InvalidArgument
from .train import TrainConfig

GENERATOR_DEFAULTS = {
    "rotation": {
        "name": "rotation",
        "n": 900,
        "noise": 0.0,
        "seed": 0,
        "splits": {"train": 500, "val": 200, "test": 200},
    },
    "rigid_motion": {
        "name": "rigid_motion",
        "n": 900,
        "k": 5,
        "seed": 0,
        "noise": 0.05,
        "n_obs": 20,
        "speed": [0.5, 1.5],
        "turn": 0.05,
        "splits": {"train": 500, "val": 200, "test": 200},
    },
}

DATA_FILE_KEYS = (
    "train_csv",
    "train_labels",
    "val_csv",
    "val_labels",
    "test_csv",
    "test_labels",
)

DEFAULTS = {
    "algebra": {"family": "SO", "order": 4},
    "data": {"generator": None, **{k: None for k in DATA_FILE_KEYS}},
    "model": {"input_mode": "raw", "head": "linear", "init_scale": 1.0, "seed": None},
    "train": asdict(TrainConfig()),
    "output_dir": "run",
}


def _merge(defaults, given, where):
    if not isinstance(given, dict):
        raise InvalidArgument(f"{where}: expected an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise InvalidArgument(f"{where}: unknown key(s) {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    out.update(given)
    return out


def materialize(doc):
    """Return the effective configuration for a user document."""
    if not isinstance(doc, dict):
        raise InvalidArgument("config: expected a JSON object")
    unknown = sorted(set(doc) - set(DEFAULTS))
    if unknown:
        raise InvalidArgument(f"config: unknown key(s) {', '.join(unknown)}")
    cfg = {
        "algebra": _merge(DEFAULTS["algebra"], doc.get("algebra", {}), "algebra"),
        "data": _merge(DEFAULTS["data"], doc.get("data", {}), "data"),
        "model": _merge(DEFAULTS["model"], doc.get("model", {}), "model"),
        "train": _merge(DEFAULTS["train"], doc.get("train", {}), "train"),
        "output_dir": doc.get("output_dir", DEFAULTS["output_dir"]),
    }
    gen = cfg["data"]["generator"]
    if gen is not None:
        if not isinstance(gen, dict) or gen.get("name") not in GENERATOR_DEFAULTS:
            raise InvalidArgument(
                f"data.generator.name must be one of {sorted(GENERATOR_DEFAULTS)}"
            )
        cfg["data"]["generator"] = _merge(GENERATOR_DEFAULTS[gen["name"]], gen, "data.generator")
        if any(cfg["data"][k] for k in DATA_FILE_KEYS):
            raise InvalidArgument("data: give either a generator or CSV paths, not both")
    elif not cfg["data"]["train_csv"] or not cfg["data"]["train_labels"]:
        raise InvalidArgument("data: need a generator or train_csv and train_labels")
    if cfg["model"]["seed"] is None:
        cfg["model"]["seed"] = cfg["train"]["seed"]
    TrainConfig(**cfg["train"])
    return cfg
