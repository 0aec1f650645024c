import numpy as np
import pytest
import torch

from sufflab.utils.augmentation import NoisySubspace, sample_pairs
from sufflab.utils.contrastive_losses import LinkFunction
from sufflab.utils.encoder_nn import LinearEncoder, MLPEncoder, load_checkpoint
from sufflab.utils.errors import ArgumentError, TrainingError
from sufflab.utils.trainer import ContrastiveTrainer, train_encoder


@pytest.fixture
def pairs():
    return sample_pairs(NoisySubspace(d=5, s=2, sigma1=0.3), 6, 8, np.random.default_rng(0))


def test_history_and_callback(pairs):
    encoder = MLPEncoder(5, 8, 2, generator=torch.Generator().manual_seed(0))
    calls = []
    _, history = train_encoder(
        encoder, pairs, "infonce", 4, np.random.default_rng(1), lr=0.01,
        callback=lambda percent, message: calls.append((percent, message)),
    )
    assert len(history) == 4
    assert [percent for percent, _ in calls] == [25, 50, 75, 100]
    assert calls[-1][1].startswith("epoch 4/4")


def test_training_is_reproducible(pairs):
    def run():
        encoder = MLPEncoder(5, 8, 2, generator=torch.Generator().manual_seed(3))
        return train_encoder(encoder, pairs, "chisq", 3, np.random.default_rng(9), lr=0.01)[1]

    assert run() == run()


def test_full_batch_steps(pairs):
    trainer = ContrastiveTrainer(LinearEncoder(5, 2), "infonce", batches_per_step=pairs.n1)
    trainer.train(pairs, 5, np.random.default_rng(0))
    assert trainer.state.step == 5


def test_steps_per_epoch_cover_every_batch(pairs):
    trainer = ContrastiveTrainer(LinearEncoder(5, 2), "infonce", batches_per_step=4)
    trainer.train(pairs, 2, np.random.default_rng(0))
    # 6 batches in groups of 4: two steps per epoch
    assert trainer.state.step == 4


def test_projection_is_applied(pairs):
    encoder = LinearEncoder(5, 2, bound=0.1)
    train_encoder(encoder, pairs, "infonce", 3, np.random.default_rng(0), lr=0.5)
    assert float(torch.linalg.matrix_norm(encoder.W, ord=2)) <= 0.1 + 1e-12


def test_invalid_batches_per_step():
    with pytest.raises(ArgumentError):
        ContrastiveTrainer(LinearEncoder(5, 2), "infonce", batches_per_step=0)


def test_non_finite_loss_dumps_checkpoint(pairs, tmp_path):
    encoder = LinearEncoder(5, 2)
    with torch.no_grad():
        encoder.W.fill_(float("nan"))
    path = tmp_path / "last.json"
    with pytest.raises(TrainingError):
        train_encoder(encoder, pairs, "chisq", 2, np.random.default_rng(0), checkpoint_path=path)
    assert path.exists()
    restored, _ = load_checkpoint(path)
    assert torch.isnan(restored.W).all()


def test_exp_temperature_link_trains(pairs):
    encoder = LinearEncoder(5, 2, bound=1.0)
    _, history = train_encoder(
        encoder, pairs, "chisq", 2, np.random.default_rng(0), link=LinkFunction.exp_temperature(1.0)
    )
    assert all(np.isfinite(history))
