import numpy as np
import pytest
from scipy import stats

from sufflab.utils.augmentation import (
    NoisySubspace,
    TopicModel,
    VmfHalves,
    build_topic_model,
    gold_encoder,
    gold_representation,
    optimal_linear_encoder,
    oracle_log_density_ratio,
    sample_downstream,
    sample_pairs,
    scenario_from_config,
    topic_joint_exact,
    topic_ratio_formula,
)
from sufflab.utils.encoder_nn import encode
from sufflab.utils.errors import ArgumentError, ConstructionError


@pytest.fixture
def topic(rng):
    return build_topic_model(3, 14, np.log(3) + 1.5, rng)


# ---------------------------------------------------------------------------
# NoisySubspace
# ---------------------------------------------------------------------------


def test_noisy_subspace_validation():
    with pytest.raises(ArgumentError):
        NoisySubspace(d=4, s=4)
    with pytest.raises(ArgumentError):
        NoisySubspace(d=4, s=2, sigma1=-1.0)


def test_noisy_subspace_theta():
    scenario = NoisySubspace(d=6, s=4, signal_scale=2.0)
    theta = scenario.theta_star
    assert np.linalg.norm(theta) == pytest.approx(2.0)
    assert np.all(theta[4:] == 0)


def test_noisy_subspace_transform_keeps_signal_without_noise(rng):
    scenario = NoisySubspace(d=5, s=2, sigma1=0.0)
    x = scenario.sample_raw(10, rng)
    z = scenario.transform(x, rng)
    np.testing.assert_array_equal(z[:, :2], x[:, :2])
    assert not np.allclose(z[:, 2:], x[:, 2:])


def test_noisy_subspace_log_ratio_matches_gaussian_densities(rng):
    scenario = NoisySubspace(d=3, s=1, sigma1=0.8)
    z1, z2 = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    a = 1 + 0.8 ** 2
    pair = stats.multivariate_normal(mean=[0, 0], cov=[[a, 1], [1, a]])
    expected = pair.logpdf(np.stack([z1[:, 0], z2[:, 0]], axis=1)) - stats.norm(scale=np.sqrt(a)).logpdf(
        z1[:, 0]
    ) - stats.norm(scale=np.sqrt(a)).logpdf(z2[:, 0])
    np.testing.assert_allclose(oracle_log_density_ratio(scenario, z1, z2), expected, rtol=1e-10, atol=1e-12)


def test_noisy_subspace_ratio_needs_noise(rng):
    with pytest.raises(ArgumentError):
        oracle_log_density_ratio(NoisySubspace(d=3, s=1, sigma1=0.0), np.zeros(3), np.zeros(3))


# ---------------------------------------------------------------------------
# VmfHalves
# ---------------------------------------------------------------------------


def test_vmf_validation(rng):
    with pytest.raises(ArgumentError):
        VmfHalves.create(5, 1.0, rng)
    with pytest.raises(ArgumentError):
        VmfHalves.create(4, 0.0, rng)
    with pytest.raises(ArgumentError):
        VmfHalves(4, 1.0, np.ones((4, 4)))


def test_vmf_views_are_unit_halves(rng):
    scenario = VmfHalves.create(8, 0.5, rng)
    batches = sample_pairs(scenario, 3, 5, rng)
    for z in (batches.z1, batches.z2):
        np.testing.assert_allclose(np.linalg.norm(z @ scenario.U1, axis=-1), 1.0, rtol=1e-12)
        np.testing.assert_allclose(np.linalg.norm(z @ scenario.U2, axis=-1), 1.0, rtol=1e-12)


def test_vmf_kappa_and_coordinate_split(rng):
    scenario = VmfHalves.create(6, 0.5, rng, coordinate_split=True)
    np.testing.assert_array_equal(scenario.U, np.eye(6))
    assert scenario.kappa == pytest.approx(3 / (0.25 * 2.25))
    assert np.linalg.norm(scenario.theta_star) == pytest.approx(1.0)


def test_optimal_linear_encoder_reproduces_oracle(rng):
    scenario = VmfHalves.create(6, 0.7, rng)
    encoder = optimal_linear_encoder(scenario)
    batches = sample_pairs(scenario, 1, 10, rng)
    z1, z2 = batches.z1[0], batches.z2[0]
    score = scenario.kappa * np.sum(encode(encoder, z1) * encode(encoder, z2), axis=-1)
    np.testing.assert_allclose(score, oracle_log_density_ratio(scenario, z1, z2), rtol=1e-12)


# ---------------------------------------------------------------------------
# Topic model
# ---------------------------------------------------------------------------


def test_topic_model_marginals_and_floor(topic):
    table = topic.word_given_topic
    np.testing.assert_allclose(table.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(table.sum(axis=0), 3 / 14, atol=1e-12)
    assert topic.topic_given_word.min() >= np.exp(-(np.log(3) + 1.5)) - 1e-12
    assert topic.achieved_B <= np.log(3) + 1.5 + 1e-9
    assert not table.flags.writeable


def test_topic_model_construction_errors(rng):
    with pytest.raises(ArgumentError):
        build_topic_model(3, 11, 5.0, rng)
    with pytest.raises(ConstructionError):
        build_topic_model(3, 12, np.log(3) - 0.1, rng)


def test_topic_model_table_validation():
    with pytest.raises(ArgumentError):
        TopicModel(np.array([[0.5, 0.5, 0.0, 0.0], [0.5, 0.5, 0.0, 0.0]]))


def test_topic_floor_at_log_m_is_uniform(rng):
    scenario = build_topic_model(2, 8, np.log(2), rng)
    np.testing.assert_allclose(scenario.topic_given_word, 0.5, atol=1e-12)


def test_single_topic_ratio():
    scenario = TopicModel(np.full((1, 5), 0.2))
    expected = np.full((5, 5), 0.5) + 2.5 * np.eye(5)
    np.testing.assert_allclose(topic_ratio_formula(scenario), expected)


def test_topic_joint_matches_ratio(topic):
    joint = topic_joint_exact(topic)
    S = topic.S
    np.testing.assert_allclose(joint.px, 1 / S, atol=1e-14)
    np.testing.assert_allclose(joint.py, 1 / S, atol=1e-14)
    np.testing.assert_allclose(joint.p, joint.p.T, atol=1e-15)
    np.testing.assert_allclose(joint.ratio, topic_ratio_formula(topic), rtol=1e-10)


def test_gold_encoder_score_is_density_ratio(topic):
    features = encode(gold_encoder(topic), np.eye(topic.S))
    np.testing.assert_allclose(features @ features.T, topic_ratio_formula(topic), rtol=1e-10)
    rep = gold_representation(topic)
    assert rep.shape == (topic.M, topic.S)
    np.testing.assert_allclose(np.linalg.norm(rep, axis=0) ** 2, topic.M * np.sum(topic.topic_given_word ** 2, axis=1))


def test_topic_oracle_accepts_indices_and_one_hot(topic):
    words = np.array([0, 3, 5])
    other = np.array([3, 3, 1])
    from_index = oracle_log_density_ratio(topic, words, other)
    from_one_hot = oracle_log_density_ratio(topic, topic.one_hot(words), topic.one_hot(other))
    np.testing.assert_allclose(from_index, from_one_hot)
    with pytest.raises(ArgumentError):
        oracle_log_density_ratio(topic, np.array([topic.S]), np.array([0]))


def test_topic_samples_follow_the_table(topic):
    y, words = topic.sample_raw(200_000, np.random.default_rng(5))
    assert words.shape == (200_000, 2)
    freq = np.bincount(words[:, 0], minlength=topic.S) / len(words)
    np.testing.assert_allclose(freq, 1 / topic.S, atol=0.005)
    first_topic = words[y == 0, 1]
    np.testing.assert_allclose(
        np.bincount(first_topic, minlength=topic.S) / len(first_topic), topic.word_given_topic[0], atol=0.01
    )


def test_topic_pairs_are_one_hot(topic, rng):
    batches = sample_pairs(topic, 2, 3, rng)
    assert batches.z1.shape == (2, 3, topic.S)
    np.testing.assert_array_equal(batches.z1.sum(axis=-1), 1.0)


# ---------------------------------------------------------------------------
# Sampling and config
# ---------------------------------------------------------------------------


def test_downstream_shapes(topic, rng):
    x, y = sample_downstream(NoisySubspace(d=4, s=2), 7, rng)
    assert x.shape == (7, 4) and y.shape == (7,)
    words, labels = sample_downstream(topic, 5, rng)
    assert words.shape == (5, 2) and labels.shape == (5,)
    with pytest.raises(ArgumentError):
        sample_downstream(topic, 0, rng)


def test_sample_pairs_is_reproducible():
    scenario = NoisySubspace(d=4, s=2)
    first = sample_pairs(scenario, 2, 3, np.random.default_rng(1))
    second = sample_pairs(scenario, 2, 3, np.random.default_rng(1))
    np.testing.assert_array_equal(first.z1, second.z1)
    np.testing.assert_array_equal(first.z2, second.z2)


def test_scenario_from_config(rng):
    assert isinstance(scenario_from_config({"variant": "noisy_subspace", "d": 4, "s": 2}, rng), NoisySubspace)
    assert isinstance(scenario_from_config({"variant": "vmf_halves", "d": 4, "sigma": 1.0}, rng), VmfHalves)
    topic = scenario_from_config({"variant": "topic_model", "M": 2, "S": 8, "B": 2.0}, rng)
    assert (topic.M, topic.S) == (2, 8)
    with pytest.raises(ArgumentError):
        scenario_from_config({"variant": "mixture"}, rng)
    with pytest.raises(ArgumentError):
        scenario_from_config({"variant": "vmf_halves", "d": 4}, rng)
