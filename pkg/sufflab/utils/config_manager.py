"""
Experiment presets and config validation.

Presets live in presets/experiments.json, one entry per experiment tag. A user
config file is merged over the preset for its tag and validated into an
ExperimentConfig.
"""

from __future__ import annotations

import copy
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from sufflab.utils.errors import ConfigError

logger = logging.getLogger(__name__)

EXPERIMENT_TAGS = ("figure1", "topic", "vmf", "equivalence", "suff")
SCENARIO_VARIANTS = ("noisy_subspace", "vmf_halves", "topic_model")
THREADS_ENV = "SUFFLAB_THREADS"

DEFAULT_PRESETS: Dict[str, Dict[str, Any]] = {
    "figure1": {
        "seed": 20250101,
        "repetitions": 10,
        "scenario": {"variant": "noisy_subspace", "d": 100, "s": 10, "sigma1": 1.0, "sigma": 1.0},
        "training": {
            "n": 500,
            "K": 64,
            "hidden": 64,
            "lr": 0.001,
            "epochs": 1000,
            "link": "identity",
            "losses": ["infonce", "chisq"],
        },
        "downstream": {"m_grid": [150, 500, 5000], "eval_size": 100000, "truncation": 10.0},
    },
    "topic": {
        "seed": 20250102,
        "repetitions": 3,
        "scenario": {"variant": "topic_model", "M": 3, "S": 12, "B": 4.0},
        "training": {
            "n_grid": [500, 1000, 2000, 4000],
            "K": 8,
            "lr": 0.01,
            "epochs": 3000,
            "bound": 3.0,
            "link": "identity",
            "batches_per_step": "all",
        },
        "downstream": {"m_grid": [1000, 10000], "classifier_bound": 10.0, "steps": 2000, "lr": 0.05},
    },
    "vmf": {
        "seed": 20250103,
        "repetitions": 3,
        "scenario": {"variant": "vmf_halves", "d": 20, "sigma": 2.0, "coordinate_split": False},
        "training": {
            "n_grid": [1000, 3000, 10000],
            "K": 16,
            "lr": 0.01,
            "epochs": 500,
            "bound": 1.0,
            "batches_per_step": "all",
        },
        "downstream": {"heldout_pairs": 32000},
    },
    "equivalence": {
        "seed": 20250104,
        "repetitions": 1,
        "options": {
            "instances": 100,
            "max_rows": 6,
            "max_cols": 5,
            "bound_instances": 200,
            "minimizer_joints": 20,
            "infonce_K": [2, 3, 4, 5],
            "tolerance": 1e-10,
        },
    },
    "suff": {
        "seed": 0,
        "repetitions": 1,
        "options": {"joint": "data/joint_example.json", "f": "kl", "form": "all"},
    },
}


def deep_merge(base: Mapping, override: Mapping) -> dict:
    """Recursively overlay `override` on a copy of `base`"""
    merged = copy.deepcopy(dict(base))
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(merged.get(key), Mapping):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated settings for one experiment run"""

    experiment: str
    seed: int
    repetitions: int = 1
    scenario: Dict[str, Any] = field(default_factory=dict)
    training: Dict[str, Any] = field(default_factory=dict)
    downstream: Dict[str, Any] = field(default_factory=dict)
    options: Dict[str, Any] = field(default_factory=dict)
    output_dir: str = "results"

    def __post_init__(self):
        if self.experiment not in EXPERIMENT_TAGS:
            raise ConfigError(f"Unknown experiment tag '{self.experiment}' (expected one of {EXPERIMENT_TAGS})")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or not 0 <= self.seed < 2 ** 64:
            raise ConfigError(f"'seed' must be a 64-bit unsigned integer, got {self.seed!r}")
        if not isinstance(self.repetitions, int) or self.repetitions < 1:
            raise ConfigError(f"'repetitions' must be a positive integer, got {self.repetitions!r}")
        if self.scenario:
            variant = self.scenario.get("variant")
            if variant not in SCENARIO_VARIANTS:
                raise ConfigError(f"Unknown scenario variant '{variant}' (expected one of {SCENARIO_VARIANTS})")
        for section in (self.training, self.downstream, self.options):
            _check_sizes(section)

    @classmethod
    def from_dict(cls, tag: str, data: Mapping, output_dir: Optional[str] = None) -> "ExperimentConfig":
        if "seed" not in data:
            raise ConfigError(f"config for '{tag}' has no 'seed'")
        known = {"seed", "repetitions", "scenario", "training", "downstream", "options", "output_dir", "experiment"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys for '{tag}': {sorted(unknown)}")
        return cls(
            experiment=data.get("experiment", tag),
            seed=data["seed"],
            repetitions=data.get("repetitions", 1),
            scenario=dict(data.get("scenario", {})),
            training=dict(data.get("training", {})),
            downstream=dict(data.get("downstream", {})),
            options=dict(data.get("options", {})),
            output_dir=output_dir or data.get("output_dir", "results"),
        )

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "repetitions": self.repetitions,
            "scenario": self.scenario,
            "training": self.training,
            "downstream": self.downstream,
            "options": self.options,
            "output_dir": self.output_dir,
        }


_SIZE_KEYS = ("n", "K", "hidden", "epochs", "eval_size", "steps", "heldout_pairs", "instances", "minimizer_joints")
_GRID_KEYS = ("m_grid", "n_grid")


def _check_sizes(section: Mapping):
    for key in _SIZE_KEYS:
        if key in section and (not isinstance(section[key], int) or section[key] < 1):
            raise ConfigError(f"'{key}' must be a positive integer, got {section[key]!r}")
    for key in _GRID_KEYS:
        if key in section:
            grid = section[key]
            if not grid or not all(isinstance(v, int) and v >= 1 for v in grid):
                raise ConfigError(f"'{key}' must be a non-empty list of positive integers, got {grid!r}")


class ConfigManager:
    def __init__(self, presets_file=None):
        """Initialize the config manager"""
        if presets_file is None:
            # Default presets file path
            base_dir = Path(__file__).parent.parent
            presets_file = base_dir / "presets" / "experiments.json"

        self.presets_file = Path(presets_file)
        self.presets = self.load_presets()

    def load_presets(self):
        """Load presets from JSON file"""
        if not self.presets_file.exists():
            return self.create_default_presets()

        try:
            with open(self.presets_file, "r") as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error("Error loading presets from %s: %s", self.presets_file, e)
            raise ConfigError(f"cannot read presets file {self.presets_file}: {e}") from e

    def create_default_presets(self):
        """Create and save default presets"""
        presets = copy.deepcopy(DEFAULT_PRESETS)
        self.save_presets(presets)
        logger.info("Wrote default experiment presets to %s", self.presets_file)
        return presets

    def save_presets(self, presets=None):
        """Save presets to JSON file"""
        if presets is None:
            presets = self.presets

        os.makedirs(self.presets_file.parent, exist_ok=True)
        with open(self.presets_file, "w") as f:
            json.dump(presets, f, indent=2)
        return True

    def get_preset(self, tag):
        """Get the preset for an experiment tag"""
        return copy.deepcopy(self.presets.get(tag))

    def get_preset_list(self):
        """Get a list of preset names (experiment tags)"""
        return list(self.presets.keys())

    def update_preset(self, tag, data):
        """Replace the preset for a known tag and persist it"""
        if tag not in EXPERIMENT_TAGS:
            return False
        ExperimentConfig.from_dict(tag, data)
        self.presets[tag] = data
        return self.save_presets()

    @staticmethod
    def load_user_config(path) -> dict:
        """Read a user JSON config file"""
        try:
            with open(path, "r") as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.error("Error loading config %s: %s", path, e)
            raise ConfigError(f"cannot read config file {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        return data

    def build_config(self, tag: str, user_config: Optional[Mapping] = None, output_dir=None) -> ExperimentConfig:
        """Merge a user config over the preset for `tag` and validate it"""
        if tag not in EXPERIMENT_TAGS:
            raise ConfigError(f"Unknown experiment tag '{tag}' (expected one of {EXPERIMENT_TAGS})")
        preset = self.get_preset(tag) or DEFAULT_PRESETS[tag]
        merged = deep_merge(preset, user_config or {})
        if user_config:
            logger.debug("Merged user config keys %s over the '%s' preset", sorted(user_config), tag)
        return ExperimentConfig.from_dict(tag, merged, None if output_dir is None else str(output_dir))


def thread_limit() -> int:
    """Worker threads allowed by SUFFLAB_THREADS (default: CPU count)"""
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return os.cpu_count() or 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value
