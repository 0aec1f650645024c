"""
Contrastive pretraining loop: epoch reshuffling, Adam, projection after every step.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
import torch
import tqdm

from sufflab.utils.contrastive_losses import PairBatchSet, LinkFunction, empirical_loss
from sufflab.utils.encoder_nn import adam_step, make_adam, parameters, project_constraints, save_checkpoint
from sufflab.utils.errors import ArgumentError, TrainingError

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, str], None]


class ContrastiveTrainer:
    """Trains one encoder on a fixed pool of augmented pairs"""

    def __init__(
        self,
        encoder,
        loss_kind: str,
        link: Optional[LinkFunction] = None,
        lr: float = 1e-3,
        batches_per_step: int = 1,
        symmetrize: bool = True,
        checkpoint_path=None,
    ):
        if batches_per_step < 1:
            raise ArgumentError("batches_per_step must be >= 1")
        self.encoder = encoder
        self.loss_kind = loss_kind
        self.link = link or LinkFunction.identity()
        self.batches_per_step = batches_per_step
        self.symmetrize = symmetrize
        self.checkpoint_path = Path(checkpoint_path) if checkpoint_path else None
        self.state = make_adam(encoder, lr=lr)
        self.history: List[float] = []

    def _dump_and_raise(self, epoch: int, loss: float):
        message = f"non-finite {self.loss_kind} loss ({loss}) at epoch {epoch}, step {self.state.step}"
        if self.checkpoint_path is not None:
            save_checkpoint(self.checkpoint_path, self.encoder)
            message += f"; last parameters written to {self.checkpoint_path}"
        logger.error(message)
        raise TrainingError(message)

    def step(self, batches: PairBatchSet) -> float:
        """One Adam update on the given batches, followed by projection"""
        loss = empirical_loss(batches, self.encoder, self.link, self.loss_kind, self.symmetrize)
        value = float(loss.detach())
        if not np.isfinite(value):
            return value
        grads = torch.autograd.grad(loss, list(parameters(self.encoder).values()), allow_unused=True)
        grads = [g if g is not None else torch.zeros_like(p) for g, p in zip(grads, self.encoder.parameters())]
        adam_step(self.state, self.encoder, grads)
        project_constraints(self.encoder)
        return value

    def train(
        self,
        pairs: PairBatchSet,
        epochs: int,
        rng: np.random.Generator,
        progress: bool = False,
        callback: Optional[ProgressCallback] = None,
    ) -> List[float]:
        """
        Run `epochs` passes over the pair pool.

        Each epoch regroups the pairs into batches of K at random and takes one
        Adam step per `batches_per_step` batches. Returns the mean loss per epoch.

        Args:
            pairs: the pretraining pairs
            epochs: number of passes
            rng: generator for the reshuffling
            progress: show a tqdm bar
            callback: Progress callback function (percent, message)
        """
        project_constraints(self.encoder)
        bar = tqdm.tqdm(total=epochs, desc=f"{self.loss_kind} pretraining", disable=not progress, leave=False)
        try:
            for epoch in range(epochs):
                shuffled = pairs.reshuffled(rng)
                losses = []
                for start in range(0, shuffled.n1, self.batches_per_step):
                    group = shuffled.subset(range(start, min(start + self.batches_per_step, shuffled.n1)))
                    value = self.step(group)
                    if not np.isfinite(value):
                        self._dump_and_raise(epoch, value)
                    losses.append(value)
                epoch_loss = float(np.mean(losses))
                self.history.append(epoch_loss)
                bar.update(1)
                bar.set_postfix(loss=f"{epoch_loss:.5f}")
                if callback:
                    callback(int((epoch + 1) / epochs * 100), f"epoch {epoch + 1}/{epochs}: loss {epoch_loss:.6f}")
        finally:
            bar.close()
        logger.debug("Finished %d epochs of %s training, final loss %.6g", epochs, self.loss_kind,
                     self.history[-1] if self.history else float("nan"))
        return self.history


def train_encoder(
    encoder,
    pairs: PairBatchSet,
    loss_kind: str,
    epochs: int,
    rng: np.random.Generator,
    link: Optional[LinkFunction] = None,
    lr: float = 1e-3,
    batches_per_step: int = 1,
    symmetrize: bool = True,
    progress: bool = False,
    callback: Optional[ProgressCallback] = None,
    checkpoint_path=None,
):
    """Train `encoder` in place; returns (encoder, per-epoch losses)"""
    trainer = ContrastiveTrainer(
        encoder,
        loss_kind,
        link=link,
        lr=lr,
        batches_per_step=batches_per_step,
        symmetrize=symmetrize,
        checkpoint_path=checkpoint_path,
    )
    history = trainer.train(pairs, epochs, rng, progress=progress, callback=callback)
    return encoder, history
