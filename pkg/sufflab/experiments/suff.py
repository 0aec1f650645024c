"""
Sufficiency of a statistic on a joint read from a JSON file.

File format: {"p": [[...], ...], "statistic": [t index per row]}. Without a
statistic the identity map is used.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, Tuple

from sufflab.utils.discrete_prob import DiscreteJoint, Statistic, suff_cbs, suff_ils, suff_vfs
from sufflab.utils.errors import ArgumentError, ConfigError
from sufflab.utils.fdivergence import GENERATORS, FGenerator

logger = logging.getLogger(__name__)

FORMS = ("ils", "vfs", "cbs")
_FORM_FUNCTIONS = {"ils": suff_ils, "vfs": suff_vfs, "cbs": suff_cbs}


def load_joint(path) -> Tuple[DiscreteJoint, Statistic]:
    """Read a joint file; structural problems raise ConfigError"""
    path = Path(path)
    try:
        with open(path, "r") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error("Error loading joint %s: %s", path, e)
        raise ConfigError(f"cannot read joint file {path}: {e}") from e
    if not isinstance(data, dict) or "p" not in data:
        raise ConfigError(f"joint file {path} needs a 'p' matrix")
    try:
        joint = DiscreteJoint(data["p"])
        if data.get("statistic") is None:
            stat = Statistic.identity(joint.shape[0])
        else:
            stat = Statistic.from_labels(data["statistic"])
            stat.check_joint(joint)
    except ArgumentError as e:
        raise ConfigError(f"invalid joint file {path}: {e}") from e
    return joint, stat


def resolve(f: str = "kl", form: str = "all"):
    gens = list(GENERATORS) if f == "all" else [FGenerator.from_token(f)]
    if form != "all" and form not in FORMS:
        raise ArgumentError(f"Unknown sufficiency form '{form}' (expected one of {FORMS} or all)")
    return gens, list(FORMS) if form == "all" else [form]


def compute_sufficiency(
    joint: DiscreteJoint, stat: Statistic, f: str = "kl", form: str = "all"
) -> Dict[Tuple[str, str], float]:
    """{(generator token, form): value}"""
    gens, forms = resolve(f, form)
    return {(gen.token, name): _FORM_FUNCTIONS[name](joint, stat, gen) for gen in gens for name in forms}


def format_sufficiency(values: Dict[Tuple[str, str], float]) -> str:
    """One line per value with 12 significant digits"""
    return "\n".join(f"{token}\t{form}\t{value:.12g}" for (token, form), value in values.items())
