"""
Topic-model classification pipeline with a chi-squared trained AugLinear encoder.

For every pretraining size n and repetition the encoder is trained on fresh
pairs. Its learned score is scored exactly against the enumerated view joint,
the statistic it induces on the S views is scored by the exact sufficiency
functionals, and softmax heads fit on m labeled samples are scored by the exact
KL risk. The gold encoder is reported alongside as the reference.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

import numpy as np

from sufflab.experiments.results import ResultTable, run_cells
from sufflab.utils.augmentation import (
    TopicModel,
    gold_encoder,
    sample_downstream,
    sample_pairs,
    scenario_from_config,
    topic_joint_exact,
)
from sufflab.utils.config_manager import ExperimentConfig
from sufflab.utils.contrastive_losses import LinkFunction
from sufflab.utils.discrete_prob import Statistic, score_sufficiency, suff_ils
from sufflab.utils.downstream import (
    FEATURE_QUANTUM,
    augmentation_error_classification,
    bayes_head,
    classification_risk_kl,
    fit_classifier,
    representation,
    view_features,
)
from sufflab.utils.encoder_nn import AugLinearEncoder, as_tensor, encode, save_checkpoint
from sufflab.utils.errors import ArgumentError
from sufflab.utils.fdivergence import CHISQ, KL
from sufflab.utils.seeding import make_rng, make_torch_generator
from sufflab.utils.trainer import train_encoder

logger = logging.getLogger(__name__)

GOLD = "gold"
TRAINED = "trained"


def score_table(encoder, scenario: TopicModel, link: Optional[LinkFunction] = None) -> np.ndarray:
    """S x S table link(<f(e_a), f(e_b)>) over the one-hot views"""
    link = link or LinkFunction.identity()
    features = encode(encoder, np.eye(scenario.S))
    return link(as_tensor(features @ features.T)).numpy()


def batches_per_step(setting, n1: int) -> int:
    """"all" means full-batch steps"""
    if setting == "all":
        return n1
    if not isinstance(setting, int) or setting < 1:
        raise ArgumentError(f"batches_per_step must be a positive integer or 'all', got {setting!r}")
    return setting


def encoder_metrics(scenario: TopicModel, encoder, link: LinkFunction, joint=None) -> dict:
    """Score-sufficiency proxy and exact sufficiency of the induced statistic"""
    joint = joint or topic_joint_exact(scenario)
    stat = Statistic.from_features(view_features(encoder, scenario), FEATURE_QUANTUM)
    return {
        "score_proxy": score_sufficiency(joint, score_table(encoder, scenario, link), CHISQ),
        "suff_kl": suff_ils(joint, stat, KL),
        "suff_chisq": suff_ils(joint, stat, CHISQ),
    }


def classifier_risk(scenario: TopicModel, encoder, m: int, downstream: dict, rng: np.random.Generator) -> float:
    """Fit a softmax head on m augmented labeled samples and return its exact KL risk"""
    words, topics = sample_downstream(scenario, m, rng)
    features = representation(encoder, scenario.transform(words, rng))
    head = fit_classifier(
        features,
        topics,
        bound=downstream.get("classifier_bound", 10.0),
        B=downstream.get("B", scenario.achieved_B),
        steps=downstream.get("steps", 2000),
        lr=downstream.get("lr", 0.05),
        n_classes=scenario.M,
    )
    return classification_risk_kl(scenario, encoder, head)


def run_topic(config: ExperimentConfig, progress: bool = False, callback=None,
              max_workers: Optional[int] = None) -> ResultTable:
    """Score proxy, sufficiency and downstream KL risk per n (trained) plus the gold reference"""
    if config.experiment != "topic":
        raise ArgumentError(f"run_topic needs a topic config, got '{config.experiment}'")
    seed = config.seed
    scenario = scenario_from_config(config.scenario, make_rng(seed, "topic", "scenario"))
    if not isinstance(scenario, TopicModel):
        raise ArgumentError("run_topic needs a topic_model scenario")
    joint = topic_joint_exact(scenario)
    t, d = config.training, config.downstream
    K = t["K"]
    bound = t.get("bound", float(scenario.M))
    link = LinkFunction.from_config(t.get("link"))
    eps_cls = augmentation_error_classification(scenario)
    logger.info("Topic model M=%d S=%d, achieved B=%.4f, eps_G_cls=%.6g", scenario.M, scenario.S,
                scenario.achieved_B, eps_cls)

    def cell(args):
        n, rep = args
        n1 = max(1, int(round(n / K)))
        pairs = sample_pairs(scenario, n1, K, make_rng(seed, "topic", "pairs", n, rep))
        encoder = AugLinearEncoder(scenario.S, scenario.M, bound=bound,
                                   generator=make_torch_generator(seed, "topic", "init", n, rep))
        train_encoder(
            encoder,
            pairs,
            "chisq",
            t["epochs"],
            make_rng(seed, "topic", "shuffle", n, rep),
            link=link,
            lr=t["lr"],
            batches_per_step=batches_per_step(t.get("batches_per_step", 1), n1),
            progress=progress,
            callback=callback,
            checkpoint_path=Path(config.output_dir) / "checkpoints" / f"topic_n{n}_rep{rep}_last.json",
        )
        if config.options.get("save_checkpoints"):
            save_checkpoint(Path(config.output_dir) / "checkpoints" / f"topic_n{n}_rep{rep}.json", encoder)
        metrics = encoder_metrics(scenario, encoder, link, joint)
        rows = [(TRAINED, n, rep, name, value) for name, value in metrics.items()]
        for m in d["m_grid"]:
            risk = classifier_risk(scenario, encoder, m, d, make_rng(seed, "topic", "downstream", n, m, rep))
            rows.append((TRAINED, n, rep, f"risk_kl_m{m}", risk))
        return rows

    table = ResultTable("topic")
    cells = [(n, rep) for n in t["n_grid"] for rep in range(config.repetitions)]
    for rows in run_cells(cell, cells, max_workers):
        for method, n, rep, metric, value in rows:
            table.add(method, n, rep, seed, metric, value)

    gold = gold_encoder(scenario)
    for name, value in encoder_metrics(scenario, gold, LinkFunction.identity(), joint).items():
        table.add(GOLD, 0, 0, seed, name, value)
    table.add(GOLD, 0, 0, seed, "bayes_risk_kl", classification_risk_kl(scenario, gold, bayes_head(scenario, gold)))
    table.add(GOLD, 0, 0, seed, "eps_G_cls", eps_cls)
    for m in d["m_grid"]:
        for rep in range(config.repetitions):
            risk = classifier_risk(scenario, gold, m, d, make_rng(seed, "topic", "gold", m, rep))
            table.add(GOLD, 0, rep, seed, f"risk_kl_m{m}", risk)
    return table
