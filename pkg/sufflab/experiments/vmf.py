"""
Linear encoders on the vMF half-sphere scenario, trained with InfoNCE.

The excess-risk proxy is the held-out InfoNCE loss of an encoder's score minus
that of the oracle log density ratio, evaluated on the same batches so the
Monte-Carlo noise largely cancels. Each encoder also reports how far the held-out
views are from E[(I - W^+ W) z | W z] = 0.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional, Tuple

import numpy as np
import torch

from sufflab.experiments.results import ResultTable, run_cells
from sufflab.experiments.topic import batches_per_step
from sufflab.utils.augmentation import (
    VmfHalves,
    oracle_log_density_ratio,
    optimal_linear_encoder,
    sample_pairs,
    scenario_from_config,
)
from sufflab.utils.config_manager import ExperimentConfig
from sufflab.utils.contrastive_losses import (
    LinkFunction,
    PairBatchSet,
    batch_scores,
    infonce_from_scores,
)
from sufflab.utils.downstream import linear_condition_violation
from sufflab.utils.encoder_nn import DTYPE, LinearEncoder, save_checkpoint
from sufflab.utils.errors import ArgumentError
from sufflab.utils.seeding import make_rng, make_torch_generator
from sufflab.utils.trainer import train_encoder

logger = logging.getLogger(__name__)

OPTIMAL = "optimal"
RANDOM = "random"
TRAINED = "trained"


def oracle_scores(scenario: VmfHalves, batches: PairBatchSet) -> torch.Tensor:
    """S_star[i, j, k] = log ratio of (z1_ij, z2_ik), up to an additive constant"""
    shape = (batches.n1, batches.K, batches.K, batches.dim)
    z1 = np.broadcast_to(batches.z1[:, :, None, :], shape)
    z2 = np.broadcast_to(batches.z2[:, None, :, :], shape)
    return torch.as_tensor(oracle_log_density_ratio(scenario, z1, z2), dtype=DTYPE)


def heldout_excess(
    scenario: VmfHalves, encoder, link: LinkFunction, batches: PairBatchSet
) -> Tuple[float, float]:
    """Mean and standard error of the per-batch InfoNCE difference encoder minus oracle"""
    with torch.no_grad():
        learned = infonce_from_scores(batch_scores(batches, encoder, link))
        oracle = infonce_from_scores(oracle_scores(scenario, batches))
    diff = (learned - oracle).numpy()
    stderr = float(diff.std(ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else float("nan")
    return float(diff.mean()), stderr


def run_vmf(config: ExperimentConfig, progress: bool = False, callback=None,
            max_workers: Optional[int] = None) -> ResultTable:
    """Held-out excess proxy of the optimal, a random and the trained linear encoder"""
    if config.experiment != "vmf":
        raise ArgumentError(f"run_vmf needs a vmf config, got '{config.experiment}'")
    seed = config.seed
    scenario = scenario_from_config(config.scenario, make_rng(seed, "vmf", "scenario"))
    if not isinstance(scenario, VmfHalves):
        raise ArgumentError("run_vmf needs a vmf_halves scenario")
    t, d = config.training, config.downstream
    K = t["K"]
    bound = t.get("bound", 1.0)
    link = LinkFunction.scale(scenario.kappa)
    heldout_n1 = max(2, d["heldout_pairs"] // K)
    logger.info("vMF scenario d=%d p=%d sigma=%.3g kappa=%.6g", scenario.d, scenario.p, scenario.sigma, scenario.kappa)

    def heldout(*tags) -> PairBatchSet:
        return sample_pairs(scenario, heldout_n1, K, make_rng(seed, "vmf", "heldout", *tags))

    def cell(args):
        method, n, rep = args
        if method == OPTIMAL:
            encoder = optimal_linear_encoder(scenario, bound=bound)
        elif method == RANDOM:
            encoder = LinearEncoder(scenario.d, scenario.p, bound=bound,
                                    generator=make_torch_generator(seed, "vmf", "random", rep))
        else:
            n1 = max(1, int(round(n / K)))
            encoder = LinearEncoder(scenario.d, scenario.p, bound=bound,
                                    generator=make_torch_generator(seed, "vmf", "init", n, rep))
            train_encoder(
                encoder,
                sample_pairs(scenario, n1, K, make_rng(seed, "vmf", "pairs", n, rep)),
                "infonce",
                t["epochs"],
                make_rng(seed, "vmf", "shuffle", n, rep),
                link=link,
                lr=t["lr"],
                batches_per_step=batches_per_step(t.get("batches_per_step", 1), n1),
                progress=progress,
                callback=callback,
                checkpoint_path=Path(config.output_dir) / "checkpoints" / f"vmf_n{n}_rep{rep}_last.json",
            )
            if config.options.get("save_checkpoints"):
                save_checkpoint(Path(config.output_dir) / "checkpoints" / f"vmf_n{n}_rep{rep}.json", encoder)
        batches = heldout(n, rep)
        value, stderr = heldout_excess(scenario, encoder, link, batches)
        violation = linear_condition_violation(encoder, batches.z1.reshape(-1, batches.dim))
        return method, n, rep, value, stderr, violation

    cells = [(OPTIMAL, 0, rep) for rep in range(config.repetitions)]
    cells += [(RANDOM, 0, rep) for rep in range(config.repetitions)]
    cells += [(TRAINED, n, rep) for n in t["n_grid"] for rep in range(config.repetitions)]
    table = ResultTable("vmf")
    for method, n, rep, value, stderr, violation in run_cells(cell, cells, max_workers):
        table.add(method, n, rep, seed, "excess_proxy", value, stderr)
        table.add(method, n, rep, seed, "condition_violation", violation)
    return table
