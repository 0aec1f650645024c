"""
Generative scenarios for augmentation-based contrastive learning.

Each scenario samples raw data, applies a random transformation g to produce
augmented views, draws downstream labels and knows its own exact density ratio:

    NoisySubspace  Gaussian x; g perturbs the first s coordinates and redraws the rest
    VmfHalves      x ~ N(0, I/p); g keeps the U1 component, adds noise and
                   normalizes both halves to the unit sphere
    TopicModel     topic y, two words drawn given y; g keeps one word at random
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Tuple

import numpy as np
import torch

from sufflab.utils.contrastive_losses import PairBatchSet
from sufflab.utils.discrete_prob import DiscreteJoint
from sufflab.utils.encoder_nn import DTYPE, AugLinearEncoder, LinearEncoder
from sufflab.utils.errors import ArgumentError, ConstructionError

logger = logging.getLogger(__name__)

SINKHORN_TOL = 1e-12
SINKHORN_MAX_SWEEPS = 10_000
JOINT_AGREEMENT_TOL = 1e-12


@dataclass(frozen=True)
class NoisySubspace:
    """Signal in the first s of d coordinates; theta_star = signal_scale * (1_s / sqrt(s), 0)"""

    d: int
    s: int
    sigma1: float = 1.0
    sigma: float = 1.0
    signal_scale: float = 1.0
    variant: str = field(default="noisy_subspace", init=False)

    def __post_init__(self):
        if not 1 <= self.s < self.d:
            raise ArgumentError(f"NoisySubspace needs 1 <= s < d, got s={self.s}, d={self.d}")
        if self.sigma1 < 0 or self.sigma < 0:
            raise ArgumentError("noise levels must be non-negative")

    @property
    def view_dim(self) -> int:
        return self.d

    @property
    def theta_star(self) -> np.ndarray:
        theta = np.zeros(self.d)
        theta[: self.s] = self.signal_scale / np.sqrt(self.s)
        return theta

    @property
    def label_sigma(self) -> float:
        return self.sigma

    def sample_raw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.d))

    def transform(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        z = np.empty_like(x)
        z[:, : self.s] = x[:, : self.s] + self.sigma1 * rng.standard_normal((len(x), self.s))
        z[:, self.s :] = rng.standard_normal((len(x), self.d - self.s))
        return z


@dataclass(frozen=True)
class VmfHalves:
    """Views on S(U1) + S(U2); U is d x d orthogonal and U1 its first p = d/2 columns"""

    d: int
    sigma: float
    U: np.ndarray
    label_sigma: float = 1.0
    variant: str = field(default="vmf_halves", init=False)

    def __post_init__(self):
        if self.d < 2 or self.d % 2:
            raise ArgumentError(f"VmfHalves needs an even d >= 2, got d={self.d}")
        if self.sigma <= 0:
            raise ArgumentError(f"VmfHalves needs sigma > 0, got {self.sigma}")
        U = np.asarray(self.U, dtype=float)
        if U.shape != (self.d, self.d) or not np.allclose(U.T @ U, np.eye(self.d), atol=1e-10):
            raise ArgumentError("U must be a d x d orthogonal matrix")
        object.__setattr__(self, "U", U)

    @classmethod
    def create(cls, d: int, sigma: float, rng: np.random.Generator, coordinate_split: bool = False,
               label_sigma: float = 1.0) -> "VmfHalves":
        """Random orthogonal U from the QR factorization of a Gaussian matrix (or the identity)"""
        if coordinate_split:
            return cls(d, sigma, np.eye(d), label_sigma)
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        return cls(d, sigma, q * np.sign(np.diag(r)), label_sigma)

    @property
    def p(self) -> int:
        return self.d // 2

    @property
    def view_dim(self) -> int:
        return self.d

    @property
    def kappa(self) -> float:
        return self.p / (self.sigma ** 2 * (self.sigma ** 2 + 2.0))

    @property
    def U1(self) -> np.ndarray:
        return self.U[:, : self.p]

    @property
    def U2(self) -> np.ndarray:
        return self.U[:, self.p :]

    @property
    def theta_star(self) -> np.ndarray:
        return self.U1 @ np.full(self.p, 1.0 / np.sqrt(self.p))

    def sample_raw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.d)) / np.sqrt(self.p)

    def transform(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        noisy = x @ self.U1 @ self.U1.T + self.sigma * rng.standard_normal(x.shape) / np.sqrt(self.p)
        half1 = noisy @ self.U1
        half2 = noisy @ self.U2
        half1 /= np.linalg.norm(half1, axis=1, keepdims=True)
        half2 /= np.linalg.norm(half2, axis=1, keepdims=True)
        return half1 @ self.U1.T + half2 @ self.U2.T


@dataclass(frozen=True)
class TopicModel:
    """
    Topic model with word table P_c(s|y) of shape M x S.

    Both marginals are uniform, so P_c(y|s) = P_c(s|y) S / M.
    """

    word_given_topic: np.ndarray
    achieved_B: float = float("nan")
    variant: str = field(default="topic_model", init=False)

    def __post_init__(self):
        table = np.asarray(self.word_given_topic, dtype=float)
        if table.ndim != 2 or np.any(table < 0):
            raise ArgumentError("word table must be a non-negative M x S matrix")
        M, S = table.shape
        if not np.allclose(table.sum(axis=1), 1.0, atol=1e-10):
            raise ArgumentError("each topic's word distribution must sum to 1")
        if not np.allclose(table.sum(axis=0), M / S, atol=1e-10):
            raise ArgumentError("word marginal must be uniform over [S]")
        table = table.copy()
        table.flags.writeable = False
        object.__setattr__(self, "word_given_topic", table)
        if np.isnan(self.achieved_B):
            object.__setattr__(self, "achieved_B", _achieved_floor(table))

    @property
    def M(self) -> int:
        return self.word_given_topic.shape[0]

    @property
    def S(self) -> int:
        return self.word_given_topic.shape[1]

    @property
    def view_dim(self) -> int:
        return self.S

    @property
    def topic_prior(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M)

    @property
    def topic_given_word(self) -> np.ndarray:
        """P_c(y|s) as an S x M table"""
        return self.word_given_topic.T * (self.S / self.M)

    def one_hot(self, words) -> np.ndarray:
        return np.eye(self.S)[np.asarray(words, dtype=np.int64)]

    def sample_raw(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """(topics (n,), word pairs (n, 2))"""
        y = rng.integers(self.M, size=n)
        cdf = np.cumsum(self.word_given_topic, axis=1)
        u = rng.random((n, 2))
        words = np.stack([(u[:, k, None] > cdf[y]).sum(axis=1) for k in range(2)], axis=1)
        return y, np.minimum(words, self.S - 1)

    def transform(self, words: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Keep one of the two words with equal probability, as a one-hot vector"""
        keep = rng.integers(2, size=len(words))
        return self.one_hot(words[np.arange(len(words)), keep])


Scenario = (NoisySubspace, VmfHalves, TopicModel)


def _achieved_floor(word_given_topic: np.ndarray) -> float:
    M, S = word_given_topic.shape
    smallest = float((word_given_topic * (S / M)).min())
    return float("inf") if smallest <= 0 else -np.log(smallest)


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def sample_pairs(scenario, n1: int, K: int, rng: np.random.Generator) -> PairBatchSet:
    """n1 batches of K pairs of views, each pair from one raw sample and two independent transforms"""
    n = n1 * K
    if n < 1:
        raise ArgumentError(f"need n1 * K >= 1, got n1={n1}, K={K}")
    if isinstance(scenario, TopicModel):
        _, x = scenario.sample_raw(n, rng)
    else:
        x = scenario.sample_raw(n, rng)
    z1 = scenario.transform(x, rng)
    z2 = scenario.transform(x, rng)
    return PairBatchSet.from_pairs(z1, z2, K)


def sample_downstream(scenario, m: int, rng: np.random.Generator):
    """
    Labeled downstream samples.

    Regression scenarios: (x (m, d), y (m,)) with y = <x, theta_star> + N(0, sigma^2).
    TopicModel: (word pairs (m, 2), topics (m,)).
    """
    if m < 1:
        raise ArgumentError(f"need m >= 1, got {m}")
    if isinstance(scenario, TopicModel):
        y, words = scenario.sample_raw(m, rng)
        return words, y
    x = scenario.sample_raw(m, rng)
    y = x @ scenario.theta_star + scenario.label_sigma * rng.standard_normal(m)
    return x, y


# ---------------------------------------------------------------------------
# Exact joints and density ratios
# ---------------------------------------------------------------------------


def _require(scenario, kind, name):
    if not isinstance(scenario, kind):
        raise ArgumentError(f"{name} needs a {kind.__name__} scenario, got {type(scenario).__name__}")


def topic_ratio_formula(scenario: TopicModel) -> np.ndarray:
    """(1/2) sum_y P_c(y|a) P_c(y|b) / P(y) + (S/2) 1{a = b}"""
    _require(scenario, TopicModel, "topic_ratio_formula")
    post = scenario.topic_given_word
    return 0.5 * (post / scenario.topic_prior) @ post.T + 0.5 * scenario.S * np.eye(scenario.S)


def _topic_joint_enumerated(scenario: TopicModel) -> np.ndarray:
    M, S = scenario.M, scenario.S
    q = scenario.word_given_topic
    # mass[y, x1, x2] = P(y) P_c(x1|y) P_c(x2|y)
    mass = scenario.topic_prior[:, None, None] * q[:, :, None] * q[:, None, :]
    _, x1, x2 = np.indices((M, S, S))
    words = (x1.ravel(), x2.ravel())
    joint = np.zeros((S, S))
    for c1 in range(2):
        for c2 in range(2):
            np.add.at(joint, (words[c1], words[c2]), 0.25 * mass.ravel())
    return joint


def topic_joint_exact(scenario: TopicModel) -> DiscreteJoint:
    """Exact S x S joint of the two views, by enumeration, checked against the ratio formula"""
    _require(scenario, TopicModel, "topic_joint_exact")
    enumerated = _topic_joint_enumerated(scenario)
    from_ratio = topic_ratio_formula(scenario) / scenario.S ** 2
    gap = float(np.abs(enumerated - from_ratio).max())
    if gap > JOINT_AGREEMENT_TOL:
        raise ConstructionError(f"topic joint enumeration and ratio formula disagree by {gap:.3e}")
    return DiscreteJoint(enumerated / enumerated.sum())


def _word_index(scenario: TopicModel, z) -> np.ndarray:
    z = np.asarray(z)
    if z.ndim >= 1 and z.shape[-1] == scenario.S and z.dtype.kind == "f":
        return np.argmax(z, axis=-1)
    idx = np.asarray(z, dtype=np.int64)
    if np.any(idx < 0) or np.any(idx >= scenario.S):
        raise ArgumentError(f"word indices must lie in [0, {scenario.S})")
    return idx


def oracle_log_density_ratio(scenario, z1, z2):
    """
    log P(z1, z2) / (P(z1) P(z2)).

    VmfHalves returns kappa <z1, U1 U1^T z2> without its additive normalizer.
    TopicModel accepts word indices or one-hot rows. NoisySubspace is exact and
    needs sigma1 > 0.
    """
    if isinstance(scenario, TopicModel):
        ratio = topic_ratio_formula(scenario)
        return np.log(ratio[_word_index(scenario, z1), _word_index(scenario, z2)])
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape or z1.shape[-1] != scenario.view_dim:
        raise ArgumentError(f"views must both have dimension {scenario.view_dim}")
    if isinstance(scenario, VmfHalves):
        return scenario.kappa * np.sum((z1 @ scenario.U1) * (z2 @ scenario.U1), axis=-1)
    if isinstance(scenario, NoisySubspace):
        if scenario.sigma1 <= 0:
            raise ArgumentError("the NoisySubspace density ratio needs sigma1 > 0")
        # per signal coordinate the pair is N(0, [[a, 1], [1, a]]) with marginals N(0, a)
        a = 1.0 + scenario.sigma1 ** 2
        u, v = z1[..., : scenario.s], z2[..., : scenario.s]
        det = a * a - 1.0
        joint = -0.5 * np.log(det) - 0.5 * (a * (u ** 2 + v ** 2) - 2.0 * u * v) / det
        marginals = -np.log(a) - 0.5 * (u ** 2 + v ** 2) / a
        return np.sum(joint - marginals, axis=-1)
    raise ArgumentError(f"Unknown scenario type {type(scenario).__name__}")


# ---------------------------------------------------------------------------
# Topic-model construction and optimal encoders
# ---------------------------------------------------------------------------


def _sinkhorn(weights: np.ndarray, row_mass: float, col_mass: float) -> np.ndarray:
    """Scale a positive matrix to constant row sums row_mass and column sums col_mass"""
    row_scale = np.ones(weights.shape[0])
    col_scale = np.ones(weights.shape[1])
    for sweep in range(SINKHORN_MAX_SWEEPS):
        col_scale = col_mass / (weights.T @ row_scale)
        row_scale = row_mass / (weights @ col_scale)
        joint = row_scale[:, None] * weights * col_scale[None, :]
        err = max(np.abs(joint.sum(axis=1) - row_mass).max(), np.abs(joint.sum(axis=0) - col_mass).max())
        if err <= SINKHORN_TOL:
            logger.debug("Sinkhorn converged after %d sweeps", sweep + 1)
            return joint
    raise ConstructionError(f"Sinkhorn did not reach uniform marginals in {SINKHORN_MAX_SWEEPS} sweeps")


def build_topic_model(M: int, S: int, B: float, rng: np.random.Generator) -> TopicModel:
    """
    Random topic model with uniform marginals over [M] and [S] and P_c(y|s) >= exp(-B).

    The floor is enforced by mixing the joint with the uniform table, which keeps
    both marginals uniform.
    """
    if M < 1 or S < 4 * M:
        raise ArgumentError(f"topic model needs M >= 1 and S >= 4M, got M={M}, S={S}")
    floor = np.exp(-B)
    if floor > 1.0 / M + 1e-15:
        raise ConstructionError(f"floor exp(-B) = {floor:.4g} exceeds 1/M; need B >= log M")
    joint = _sinkhorn(rng.exponential(size=(M, S)), 1.0 / M, 1.0 / S)
    posterior = joint * S
    smallest = posterior.min()
    if smallest < floor:
        mix = min(1.0, (floor - smallest) / (1.0 / M - smallest))
        joint = (1.0 - mix) * joint + mix / (M * S)
        logger.debug("Mixed topic joint with uniform (weight %.4g) to reach the floor", mix)
    table = joint * M
    # renormalize the rows exactly
    table = table / table.sum(axis=1, keepdims=True)
    col_err = np.abs(table.sum(axis=0) - M / S).max()
    if col_err > SINKHORN_TOL * S:
        raise ConstructionError(f"topic table lost its uniform word marginal (error {col_err:.3e})")
    return TopicModel(table)


def gold_representation(scenario: TopicModel) -> np.ndarray:
    """E_star, the M x S table with columns sqrt(M) P_c(.|s)"""
    _require(scenario, TopicModel, "gold_representation")
    return np.sqrt(scenario.M) * scenario.topic_given_word.T


def gold_encoder(scenario: TopicModel, bound=None) -> AugLinearEncoder:
    """AugLinearEncoder with W = E_star / sqrt(2), w = sqrt(S / 2); its score is the exact density ratio"""
    encoder = AugLinearEncoder(scenario.S, scenario.M, bound=bound)
    with torch.no_grad():
        encoder.W.copy_(torch.as_tensor(gold_representation(scenario) / np.sqrt(2.0), dtype=DTYPE))
        encoder.w.fill_(np.sqrt(scenario.S / 2.0))
    return encoder


def optimal_linear_encoder(scenario: VmfHalves, bound=None) -> LinearEncoder:
    """W = U1^T, the encoder whose scaled inner product is the vMF log ratio"""
    _require(scenario, VmfHalves, "optimal_linear_encoder")
    encoder = LinearEncoder(scenario.d, scenario.p, bound=bound)
    with torch.no_grad():
        encoder.W.copy_(torch.as_tensor(scenario.U1.T, dtype=DTYPE))
    return encoder


def scenario_from_config(config: Mapping, rng: np.random.Generator):
    """Build a scenario from {"variant": ..., parameters}"""
    variant = config.get("variant")
    params = {k: v for k, v in config.items() if k != "variant"}
    try:
        if variant == "noisy_subspace":
            return NoisySubspace(**params)
        if variant == "vmf_halves":
            return VmfHalves.create(
                params["d"],
                params["sigma"],
                rng,
                coordinate_split=params.get("coordinate_split", False),
                label_sigma=params.get("label_sigma", 1.0),
            )
        if variant == "topic_model":
            return build_topic_model(params["M"], params["S"], params["B"], rng)
    except (KeyError, TypeError) as e:
        raise ArgumentError(f"invalid {variant} scenario parameters: {e}") from e
    raise ArgumentError(f"Unknown scenario variant '{variant}'")
