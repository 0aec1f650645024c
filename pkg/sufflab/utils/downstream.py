"""
Downstream heads on frozen encoder features and the risk functionals they are scored by.

Regression: truncated OLS head, Monte-Carlo excess risk, augmentation error.
Classification (TopicModel only): constrained softmax head, exact KL risk by
enumeration, the Bayes head given the features, and the symmetric 2-Renyi
augmentation error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
import torch
from scipy import linalg
from scipy.special import rel_entr

from sufflab.utils.augmentation import NoisySubspace, TopicModel, sample_downstream
from sufflab.utils.discrete_prob import Statistic
from sufflab.utils.encoder_nn import DTYPE, AugLinearEncoder, LinearEncoder, encode
from sufflab.utils.errors import ArgumentError, DomainError, TrainingError

logger = logging.getLogger(__name__)

FEATURE_QUANTUM = 1e-9


# ---------------------------------------------------------------------------
# Features
# ---------------------------------------------------------------------------


def representation(encoder, z) -> np.ndarray:
    """Downstream features of views z; encoder None means the raw views"""
    z = np.asarray(z, dtype=float)
    if encoder is None:
        return z
    return encode(encoder, z, representation=True)


def view_features(encoder, scenario: TopicModel) -> np.ndarray:
    """
    Feature table over the S one-hot views, shape (S, p).

    `encoder` may be an encoder, a precomputed (S, p) table, or None (one-hot features).
    """
    if isinstance(encoder, np.ndarray):
        if encoder.shape[0] != scenario.S:
            raise ArgumentError(f"feature table needs {scenario.S} rows, got {encoder.shape[0]}")
        return encoder
    return representation(encoder, np.eye(scenario.S))


# ---------------------------------------------------------------------------
# Regression
# ---------------------------------------------------------------------------


@dataclass
class LinearHead:
    """clamp(<features, eta>, -B, B)"""

    eta: np.ndarray
    B: float = 10.0

    def __post_init__(self):
        if not self.B > 0:
            raise ArgumentError(f"truncation level must be positive, got {self.B}")
        self.eta = np.asarray(self.eta, dtype=float)

    def predict(self, features, truncate: bool = True) -> np.ndarray:
        out = np.asarray(features, dtype=float) @ self.eta
        return np.clip(out, -self.B, self.B) if truncate else out

    def to_dict(self) -> dict:
        return {"type": "LinearHead", "eta": self.eta.tolist(), "B": self.B}

    @classmethod
    def from_dict(cls, payload) -> "LinearHead":
        return cls(np.asarray(payload["eta"], dtype=float), payload["B"])


def fit_ols(features, targets, B: float = 10.0) -> LinearHead:
    """Least squares through LAPACK gelsd (SVD based, minimum norm when rank deficient)"""
    X = np.asarray(features, dtype=float)
    y = np.asarray(targets, dtype=float)
    if X.ndim != 2 or len(X) < 1 or len(y) != len(X):
        raise ArgumentError(f"need an m x p design with m >= 1 matching targets, got {X.shape} and {y.shape}")
    eta, _, rank, _ = linalg.lstsq(X, y, lapack_driver="gelsd")
    if rank < X.shape[1]:
        logger.debug("OLS design is rank deficient (%d < %d); using the minimum-norm solution", rank, X.shape[1])
    return LinearHead(eta, B)


def _mean_and_stderr(values: np.ndarray) -> Tuple[float, float]:
    n = len(values)
    stderr = float(values.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return float(values.mean()), stderr


def regression_excess_risk(
    scenario,
    encoder,
    head: LinearHead,
    eval_size: int,
    rng: np.random.Generator,
    augment: bool = True,
    truncate: bool = True,
) -> Tuple[float, float]:
    """
    Monte-Carlo E[(y - h(f(g(x))))^2] - sigma^2 with its standard error.

    augment=False scores h(f(x)) on the raw samples instead.
    """
    if isinstance(scenario, TopicModel):
        raise ArgumentError("regression_excess_risk needs a regression scenario")
    x, y = sample_downstream(scenario, eval_size, rng)
    z = scenario.transform(x, rng) if augment else x
    residual = (y - head.predict(representation(encoder, z), truncate=truncate)) ** 2
    return _mean_and_stderr(residual - scenario.label_sigma ** 2)


def augmentation_error_regression(scenario, mc_size: int, rng: np.random.Generator) -> Tuple[float, float]:
    """Monte-Carlo E[<g(x) - x, theta_star>^2] with its standard error"""
    if isinstance(scenario, TopicModel):
        raise ArgumentError("augmentation_error_regression needs a regression scenario")
    x = scenario.sample_raw(mc_size, rng)
    z = scenario.transform(x, rng)
    return _mean_and_stderr(((z - x) @ scenario.theta_star) ** 2)


def augmentation_error_regression_closed_form(scenario: NoisySubspace) -> float:
    """sigma1^2 ||theta_{1:s}||^2 + 2 ||theta_{s+1:d}||^2 (the tail is redrawn independently)"""
    if not isinstance(scenario, NoisySubspace):
        raise ArgumentError("the closed form is only available for NoisySubspace")
    theta = scenario.theta_star
    head, tail = theta[: scenario.s], theta[scenario.s :]
    return float(scenario.sigma1 ** 2 * head @ head + 2.0 * tail @ tail)


def linear_condition_violation(encoder, z) -> float:
    """
    Size of E[(I - W^+ W) z | W z] for a linear encoder, estimated by regressing the
    residual (I - W^+ W) z on (1, W z). Returns the RMS norm of the fitted values
    relative to the RMS norm of the residual.
    """
    if isinstance(encoder, LinearEncoder):
        W = encoder.W.detach().numpy()
    else:
        W = np.asarray(encoder, dtype=float)
    z = np.asarray(z, dtype=float)
    residual = z - z @ (np.linalg.pinv(W) @ W).T
    design = np.hstack([np.ones((len(z), 1)), z @ W.T])
    coef, *_ = linalg.lstsq(design, residual, lapack_driver="gelsd")
    fitted = design @ coef
    scale = np.sqrt(np.mean(np.sum(residual ** 2, axis=1)))
    if scale == 0:
        return 0.0
    return float(np.sqrt(np.mean(np.sum(fitted ** 2, axis=1))) / scale)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def _project_classifier(gamma_w: torch.Tensor, gamma_b: torch.Tensor, bound: float):
    u, s, vh = torch.linalg.svd(gamma_w, full_matrices=False)
    if s.max() > bound:
        gamma_w.copy_(u @ torch.diag(s.clamp(max=bound)) @ vh)
    norm = gamma_b.norm()
    if norm > bound:
        gamma_b.mul_(bound / norm)


def _classifier_log_proba(features: torch.Tensor, gamma_w, gamma_b, B: float) -> torch.Tensor:
    truncated = torch.clamp(features @ gamma_w.T + gamma_b, min=float(np.exp(-B)), max=1.0)
    return torch.log_softmax(torch.log(truncated), dim=-1)


@dataclass
class ClassifierHead:
    """softmax(log trun(Gamma_w f + Gamma_b)) with trun(x) = clamp(x, exp(-B), 1)"""

    gamma_w: np.ndarray
    gamma_b: np.ndarray
    B: float
    bound: float
    history: list = field(default_factory=list, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.gamma_b)

    def predict_proba(self, features) -> np.ndarray:
        with torch.no_grad():
            f = torch.as_tensor(np.asarray(features, dtype=float), dtype=DTYPE)
            log_p = _classifier_log_proba(
                f, torch.as_tensor(self.gamma_w, dtype=DTYPE), torch.as_tensor(self.gamma_b, dtype=DTYPE), self.B
            )
        return log_p.exp().numpy()

    def to_dict(self) -> dict:
        return {
            "type": "ClassifierHead",
            "gamma_w": self.gamma_w.tolist(),
            "gamma_b": self.gamma_b.tolist(),
            "B": self.B,
            "bound": self.bound,
        }

    @classmethod
    def from_dict(cls, payload) -> "ClassifierHead":
        return cls(
            np.asarray(payload["gamma_w"], dtype=float),
            np.asarray(payload["gamma_b"], dtype=float),
            payload["B"],
            payload["bound"],
        )


def random_classifier(n_classes: int, dim: int, bound: float, B: float, rng: np.random.Generator) -> ClassifierHead:
    """A feasible head with Gaussian parameters, used as a baseline"""
    gamma_w = torch.as_tensor(rng.standard_normal((n_classes, dim)), dtype=DTYPE)
    gamma_b = torch.as_tensor(rng.standard_normal(n_classes), dtype=DTYPE)
    _project_classifier(gamma_w, gamma_b, bound)
    return ClassifierHead(gamma_w.numpy(), gamma_b.numpy(), B, bound)


def fit_classifier(
    features,
    labels,
    bound: float,
    B: float,
    steps: int = 2000,
    lr: float = 0.05,
    n_classes: Optional[int] = None,
) -> ClassifierHead:
    """
    Full-batch projected gradient descent on the empirical cross-entropy.

    Starts from Gamma_w = 0, Gamma_b = 1/M (the uniform predictor, inside the
    clamp range). After every step Gamma_w's singular values and Gamma_b's norm
    are clipped to `bound`.
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or len(X) < 1 or len(y) != len(X):
        raise ArgumentError(f"need an m x p feature matrix with m >= 1 labels, got {X.shape} and {y.shape}")
    M = n_classes or int(y.max()) + 1
    if np.any(y < 0) or np.any(y >= M):
        raise ArgumentError(f"labels must lie in [0, {M})")
    f = torch.as_tensor(X, dtype=DTYPE)
    target = torch.as_tensor(y)
    gamma_w = torch.zeros((M, X.shape[1]), dtype=DTYPE, requires_grad=True)
    gamma_b = torch.full((M,), 1.0 / M, dtype=DTYPE, requires_grad=True)
    with torch.no_grad():
        _project_classifier(gamma_w, gamma_b, bound)
    optimizer = torch.optim.SGD([gamma_w, gamma_b], lr=lr)
    history = []
    for step in range(steps):
        optimizer.zero_grad()
        loss = torch.nn.functional.nll_loss(_classifier_log_proba(f, gamma_w, gamma_b, B), target)
        value = float(loss.detach())
        if not np.isfinite(value):
            raise TrainingError(f"classifier loss became non-finite at step {step}")
        history.append(value)
        loss.backward()
        optimizer.step()
        with torch.no_grad():
            _project_classifier(gamma_w, gamma_b, bound)
    return ClassifierHead(gamma_w.detach().numpy(), gamma_b.detach().numpy(), B, bound, history)


@dataclass
class BayesHead:
    """Conditional class distribution given the (quantized) feature vector"""

    table: Dict[bytes, np.ndarray]
    quantum: float = FEATURE_QUANTUM

    def predict_proba(self, features) -> np.ndarray:
        keys = np.round(np.asarray(features, dtype=float) / self.quantum).astype(np.int64)
        keys = keys.reshape(len(keys), -1)
        try:
            return np.stack([self.table[row.tobytes()] for row in keys])
        except KeyError:
            raise ArgumentError("feature vector outside the view space the Bayes head was built on") from None


def _topic_posteriors(scenario: TopicModel):
    """(P(x1, x2) as S x S, P(y | x1, x2) as S x S x M)"""
    q = scenario.word_given_topic
    mass = scenario.topic_prior[:, None, None] * q[:, :, None] * q[:, None, :]
    pair = mass.sum(axis=0)
    post = np.divide(mass, pair[None], out=np.zeros_like(mass), where=pair[None] > 0)
    return pair, np.moveaxis(post, 0, -1)


def bayes_head(scenario: TopicModel, encoder) -> BayesHead:
    """Group the S views by feature vector and average P_c(y|z) within each group"""
    features = view_features(encoder, scenario)
    stat = Statistic.from_features(features, FEATURE_QUANTUM)
    # views are uniform, so the group conditional is the plain mean
    post = scenario.topic_given_word
    counts = np.bincount(stat.t, minlength=stat.n_cells)
    sums = np.zeros((stat.n_cells, scenario.M))
    np.add.at(sums, stat.t, post)
    cond = sums / counts[:, None]
    keys = np.round(np.asarray(features, dtype=float) / FEATURE_QUANTUM).astype(np.int64).reshape(scenario.S, -1)
    return BayesHead({keys[s].tobytes(): cond[stat.t[s]] for s in range(scenario.S)})


def classification_risk_kl(scenario: TopicModel, encoder, head) -> float:
    """E[KL(P(y|x) || h(f(g(x))))], enumerated over word pairs and the dropout choice"""
    if not isinstance(scenario, TopicModel):
        raise ArgumentError("classification_risk_kl needs a TopicModel scenario")
    pair, post = _topic_posteriors(scenario)
    predicted = head.predict_proba(view_features(encoder, scenario))
    with np.errstate(divide="ignore"):
        # kl[x1, x2, c]: keep word x1 (c = 0) or x2 (c = 1)
        keep_first = rel_entr(post, predicted[:, None, :]).sum(axis=-1)
        keep_second = rel_entr(post, predicted[None, :, :]).sum(axis=-1)
    return float(np.sum(pair * 0.5 * (keep_first + keep_second)))


def _renyi2(p: np.ndarray, q: np.ndarray, live: np.ndarray) -> np.ndarray:
    """log sum p^2 / q along the last axis, over cells with p > 0"""
    if np.any(live[..., None] & (p > 0) & (q <= 0)):
        raise DomainError("2-Renyi divergence needs q > 0 wherever p > 0")
    terms = np.divide(p ** 2, q, out=np.zeros_like(p), where=p > 0)
    return np.where(live, np.log(np.where(live, terms.sum(axis=-1), 1.0)), 0.0)


def augmentation_error_classification(scenario: TopicModel) -> float:
    """E over x and g of D2(P(y|x) || P(y|z)) + D2(P(y|z) || P(y|x))"""
    if not isinstance(scenario, TopicModel):
        raise ArgumentError("augmentation_error_classification needs a TopicModel scenario")
    pair, post = _topic_posteriors(scenario)
    view_post = scenario.topic_given_word
    live = pair > 0
    total = 0.0
    for view in (view_post[:, None, :], view_post[None, :, :]):
        view = np.broadcast_to(view, post.shape)
        total += 0.5 * np.sum(pair * (_renyi2(post, view, live) + _renyi2(view, post, live)))
    return float(total)


def head_from_dict(payload):
    kinds = {"LinearHead": LinearHead, "ClassifierHead": ClassifierHead}
    if payload.get("type") not in kinds:
        raise ArgumentError(f"Unknown head type '{payload.get('type')}'")
    return kinds[payload["type"]].from_dict(payload)
