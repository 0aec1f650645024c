"""
Downstream regression on contrastive MLP representations versus direct linear regression.

One MLP encoder is pretrained per loss (InfoNCE and chi-squared) on NoisySubspace
pairs. For every downstream size m and repetition an OLS head is fit on the KL
representation, the chi-squared representation and the raw inputs, and each head's
excess risk is estimated on fresh samples.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from sufflab.experiments.results import ResultTable, run_cells
from sufflab.utils.augmentation import sample_downstream, sample_pairs, scenario_from_config
from sufflab.utils.config_manager import ExperimentConfig
from sufflab.utils.contrastive_losses import LinkFunction
from sufflab.utils.downstream import fit_ols, regression_excess_risk, representation
from sufflab.utils.encoder_nn import MLPEncoder, save_checkpoint
from sufflab.utils.errors import ArgumentError
from sufflab.utils.seeding import make_rng, make_torch_generator
from sufflab.utils.trainer import train_encoder

logger = logging.getLogger(__name__)

METHOD_LABELS = {"infonce": "kl", "chisq": "chisq"}
DIRECT = "direct_lr"


def pretraining_batches(n: int, K: int) -> int:
    """Number of batches n1 = round(n / K), at least one"""
    return max(1, int(round(n / K)))


def pretrain_encoders(config: ExperimentConfig, scenario, progress: bool = False, callback=None):
    """Train one MLP encoder per loss kind on a shared pair pool"""
    t = config.training
    K = t["K"]
    n1 = pretraining_batches(t["n"], K)
    if n1 * K != t["n"]:
        logger.info("n=%d is not a multiple of K=%d; pretraining on %d batches (%d pairs)", t["n"], K, n1, n1 * K)
    pairs = sample_pairs(scenario, n1, K, make_rng(config.seed, "figure1", "pretrain"))
    link = LinkFunction.from_config(t.get("link"))
    out_dim = t.get("out_dim", scenario.s)
    encoders = {}
    for loss in t.get("losses", ["infonce", "chisq"]):
        if loss not in METHOD_LABELS:
            raise ArgumentError(f"Unknown loss kind '{loss}'")
        generator = make_torch_generator(config.seed, "figure1", "init", loss)
        encoder = MLPEncoder(scenario.d, t["hidden"], out_dim, generator=generator)
        train_encoder(
            encoder,
            pairs,
            loss,
            t["epochs"],
            make_rng(config.seed, "figure1", "shuffle", loss),
            link=link,
            lr=t["lr"],
            progress=progress,
            callback=callback,
            checkpoint_path=Path(config.output_dir) / "checkpoints" / f"figure1_{loss}_last.json",
        )
        encoders[METHOD_LABELS[loss]] = encoder
    return encoders


def run_figure1(config: ExperimentConfig, progress: bool = False, callback=None,
                max_workers: Optional[int] = None) -> ResultTable:
    """Excess risk per method, downstream size and repetition"""
    if config.experiment != "figure1":
        raise ArgumentError(f"run_figure1 needs a figure1 config, got '{config.experiment}'")
    scenario = scenario_from_config(config.scenario, make_rng(config.seed, "figure1", "scenario"))
    encoders = pretrain_encoders(config, scenario, progress, callback)
    if config.options.get("save_checkpoints"):
        for label, encoder in encoders.items():
            save_checkpoint(Path(config.output_dir) / "checkpoints" / f"figure1_{label}.json", encoder)
    methods = dict(encoders)
    methods[DIRECT] = None
    d = config.downstream
    truncation = d.get("truncation", 10.0)

    def cell(args):
        m, rep = args
        seed = config.seed
        x, y = sample_downstream(scenario, m, make_rng(seed, "figure1", "downstream", m, rep))
        rows = []
        for label, encoder in methods.items():
            head = fit_ols(representation(encoder, x), y, truncation)
            # every method is scored on the same evaluation sample
            value, stderr = regression_excess_risk(
                scenario, encoder, head, d["eval_size"], make_rng(seed, "figure1", "eval", m, rep), augment=False
            )
            rows.append((label, m, rep, value, stderr))
        return rows

    table = ResultTable("figure1")
    cells = [(m, rep) for m in d["m_grid"] for rep in range(config.repetitions)]
    for rows in run_cells(cell, cells, max_workers):
        for label, m, rep, value, stderr in rows:
            table.add(label, m, rep, config.seed, "excess_risk", value, stderr)
    return table
