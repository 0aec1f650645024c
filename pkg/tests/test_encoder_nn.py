import numpy as np
import pytest
import torch

from sufflab.utils.contrastive_losses import LinkFunction, PairBatchSet, empirical_loss, loss_and_grad
from sufflab.utils.encoder_nn import (
    DTYPE,
    AugLinearEncoder,
    LinearEncoder,
    MLPEncoder,
    adam_step,
    backward,
    build_encoder,
    clone_encoder,
    encode,
    encoder_from_dict,
    encoder_to_dict,
    load_checkpoint,
    make_adam,
    project_constraints,
    save_checkpoint,
)
from sufflab.utils.errors import ArgumentError


def num_grad(func, param: torch.nn.Parameter, delta=1e-6) -> np.ndarray:
    """Central differences of a scalar function with respect to one parameter"""
    grad = np.zeros(tuple(param.shape))
    flat = param.data.view(-1)
    for i in range(flat.numel()):
        old = float(flat[i])
        flat[i] = old + delta
        up = func()
        flat[i] = old - delta
        down = func()
        flat[i] = old
        grad.flat[i] = (up - down) / (2 * delta)
    return grad


def make_encoder(kind, seed=0):
    gen = torch.Generator().manual_seed(seed)
    if kind == "mlp":
        return MLPEncoder(3, 5, 2, generator=gen)
    if kind == "linear":
        return LinearEncoder(3, 2, generator=gen)
    return AugLinearEncoder(6, 2, bound=1.0, generator=gen)


def make_batches(kind, rng, n1=2, K=4):
    if kind == "aug":
        eye = np.eye(6)
        return PairBatchSet(eye[rng.integers(0, 6, size=(n1, K))], eye[rng.integers(0, 6, size=(n1, K))])
    return PairBatchSet(rng.normal(size=(n1, K, 3)), rng.normal(size=(n1, K, 3)))


@pytest.mark.parametrize("kind", ["mlp", "linear", "aug"])
@pytest.mark.parametrize("loss", ["infonce", "chisq"])
def test_loss_gradient_matches_finite_differences(kind, loss, rng):
    encoder = make_encoder(kind)
    batches = make_batches(kind, rng)
    link = LinkFunction.scale(0.7)
    _, grads = loss_and_grad(batches, encoder, link, loss)

    def value():
        with torch.no_grad():
            return float(empirical_loss(batches, encoder, link, loss))

    for name, param in encoder.named_parameters():
        np.testing.assert_allclose(grads[name].numpy(), num_grad(value, param), rtol=1e-5, atol=1e-7)


@pytest.mark.parametrize("kind", ["mlp", "linear", "aug"])
def test_backward_is_vector_jacobian_product(kind, rng):
    encoder = make_encoder(kind)
    z = make_batches(kind, rng).z1[0]
    upstream = rng.normal(size=(len(z), encoder.out_dim))
    grads = backward(encoder, z, upstream)

    def value():
        return float(np.sum(encode(encoder, z) * upstream))

    for name, param in encoder.named_parameters():
        np.testing.assert_allclose(grads[name].numpy(), num_grad(value, param), rtol=1e-5, atol=1e-7)


def test_backward_rejects_wrong_cotangent(rng):
    encoder = make_encoder("linear")
    with pytest.raises(ArgumentError):
        backward(encoder, rng.normal(size=(4, 3)), np.zeros((4, 3)))


def test_input_dimension_is_checked(rng):
    with pytest.raises(ArgumentError):
        encode(make_encoder("mlp"), rng.normal(size=(2, 4)))


def test_aug_linear_representation_is_topic_block():
    encoder = make_encoder("aug")
    z = np.eye(6)[[1, 4]]
    full = encode(encoder, z)
    rep = encode(encoder, z, representation=True)
    assert full.shape == (2, 8) and rep.shape == (2, 2)
    np.testing.assert_allclose(full[:, :2], rep)
    np.testing.assert_allclose(full[:, 2:], float(encoder.w) * z)


def test_adam_first_step_moves_by_learning_rate():
    encoder = make_encoder("linear")
    before = encoder.W.detach().clone()
    grad = torch.tensor([[1.0, -2.0, 0.5], [3.0, -0.1, 4.0]], dtype=DTYPE)
    state = make_adam(encoder, lr=0.01)
    adam_step(state, encoder, {"W": grad})
    # bias-corrected moments are g and g^2 after one step
    expected = before - 0.01 * grad / (grad.abs() + state.eps)
    np.testing.assert_allclose(encoder.W.detach().numpy(), expected.numpy(), rtol=1e-12)
    assert state.step == 1
    first, second = state.moments(encoder.W)
    np.testing.assert_allclose(first.numpy(), 0.1 * grad.numpy())
    np.testing.assert_allclose(second.numpy(), 0.001 * grad.numpy() ** 2)


def test_adam_step_checks_gradients():
    encoder = make_encoder("mlp")
    state = make_adam(encoder)
    with pytest.raises(ArgumentError):
        adam_step(state, encoder, {"W1": torch.zeros_like(encoder.W1)})
    with pytest.raises(ArgumentError):
        adam_step(state, encoder, {"W1": torch.zeros(1), "b1": torch.zeros(5), "W2": torch.zeros(2, 5)})


def test_adam_reduces_loss(rng):
    encoder = make_encoder("mlp")
    z = rng.normal(size=(64, 3))
    batches = PairBatchSet.from_pairs(z, z + 0.1 * rng.normal(size=z.shape), 8)
    link = LinkFunction.identity()
    state = make_adam(encoder, lr=0.01)
    first, grads = loss_and_grad(batches, encoder, link, "infonce")
    for _ in range(50):
        adam_step(state, encoder, grads)
        last, grads = loss_and_grad(batches, encoder, link, "infonce")
    assert last < first


def test_linear_projection_clips_operator_norm():
    encoder = LinearEncoder(4, 3, bound=0.5)
    with torch.no_grad():
        encoder.W.mul_(10.0)
    project_constraints(encoder)
    assert float(torch.linalg.matrix_norm(encoder.W, ord=2)) <= 0.5 + 1e-12


def test_linear_projection_keeps_feasible_weights():
    encoder = LinearEncoder(4, 3, bound=100.0)
    before = encoder.W.detach().clone()
    project_constraints(encoder)
    np.testing.assert_array_equal(encoder.W.detach().numpy(), before.numpy())


def test_aug_linear_projection():
    encoder = AugLinearEncoder(9, 2, bound=0.2)
    with torch.no_grad():
        encoder.W.mul_(50.0)
        encoder.w.fill_(-10.0)
    project_constraints(encoder)
    assert float(encoder.W.norm(dim=0).max()) <= 0.2 + 1e-12
    assert float(encoder.w) == pytest.approx(-0.6)


def test_unbounded_encoder_is_not_projected():
    encoder = make_encoder("mlp")
    before = encoder.W1.detach().clone()
    project_constraints(encoder)
    np.testing.assert_array_equal(encoder.W1.detach().numpy(), before.numpy())


def test_clone_is_independent():
    encoder = make_encoder("mlp")
    copy = clone_encoder(encoder)
    with torch.no_grad():
        copy.W1.add_(1.0)
    assert not torch.equal(copy.W1, encoder.W1)
    assert torch.equal(copy.W2, encoder.W2)


def test_build_encoder_unknown_type():
    with pytest.raises(ArgumentError):
        build_encoder("ConvEncoder", {})


@pytest.mark.parametrize("kind", ["mlp", "linear", "aug"])
def test_encoder_dict_preserves_features(kind, rng):
    encoder = make_encoder(kind, seed=7)
    restored = encoder_from_dict(encoder_to_dict(encoder))
    z = make_batches(kind, rng).z1[0]
    np.testing.assert_array_equal(encode(restored, z), encode(encoder, z))
    assert restored.config() == encoder.config()


def test_checkpoint_file(tmp_path, rng):
    encoder = make_encoder("mlp", seed=2)
    heads = {"kl": {"type": "LinearHead", "note": "stored verbatim"}}
    path = save_checkpoint(tmp_path / "nested" / "encoder.json", encoder, heads)
    assert path.exists()
    loaded, loaded_heads = load_checkpoint(path)
    z = rng.normal(size=(5, 3))
    np.testing.assert_array_equal(encode(loaded, z), encode(encoder, z))
    assert loaded_heads == heads
