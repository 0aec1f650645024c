"""
Empirical contrastive losses over batches of augmented pairs.

    InfoNCE   symmetrized softmax cross-entropy with in-batch negatives
    ChiSq     the unbiased batch estimate of the chi-squared contrastive risk

Scores are S_jk = link(<f(z1_j), f(z2_k)>) inside each batch of K pairs. Every
loss is computed in torch float64 so gradients come from autograd. The exact
evaluators at the bottom enumerate pair tuples of a discrete joint.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import minimize

from sufflab.utils.discrete_prob import DiscreteJoint, ScoreLike, _scores
from sufflab.utils.encoder_nn import DTYPE, as_tensor, parameters
from sufflab.utils.errors import ArgumentError, BudgetError

logger = logging.getLogger(__name__)

LOSS_KINDS = ("infonce", "chisq")
# above this batch size the chi-squared triple sum uses row sums and row sums of squares
CHISQ_NAIVE_MAX_K = 16
DEFAULT_BUDGET = 5_000_000


@dataclass(frozen=True)
class PairBatchSet:
    """n1 batches of K augmented pairs; z1 and z2 have shape (n1, K, dim)"""

    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self):
        z1 = np.asarray(self.z1, dtype=float)
        z2 = np.asarray(self.z2, dtype=float)
        if z1.ndim != 3 or z1.shape != z2.shape:
            raise ArgumentError(
                f"pair batches must be two arrays of shape (n1, K, dim), got {z1.shape} and {z2.shape}"
            )
        if z1.shape[0] < 1 or z1.shape[1] < 1:
            raise ArgumentError("pair batches need n1 >= 1 and K >= 1")
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)

    @classmethod
    def from_pairs(cls, z1, z2, K: int) -> "PairBatchSet":
        """Group n consecutive pairs into n / K batches"""
        z1 = np.asarray(z1, dtype=float)
        z2 = np.asarray(z2, dtype=float)
        if K < 1 or len(z1) % K:
            raise ArgumentError(f"{len(z1)} pairs cannot be split into batches of K={K}")
        return cls(z1.reshape(-1, K, z1.shape[-1]), z2.reshape(-1, K, z2.shape[-1]))

    @property
    def n1(self) -> int:
        return self.z1.shape[0]

    @property
    def K(self) -> int:
        return self.z1.shape[1]

    @property
    def n(self) -> int:
        return self.n1 * self.K

    @property
    def dim(self) -> int:
        return self.z1.shape[2]

    def swapped(self) -> "PairBatchSet":
        return PairBatchSet(self.z2, self.z1)

    def subset(self, batch_indices) -> "PairBatchSet":
        idx = np.asarray(batch_indices)
        return PairBatchSet(self.z1[idx], self.z2[idx])

    def reshuffled(self, rng: np.random.Generator) -> "PairBatchSet":
        """Redraw the grouping of pairs into batches"""
        perm = rng.permutation(self.n)
        flat1 = self.z1.reshape(self.n, -1)[perm]
        flat2 = self.z2.reshape(self.n, -1)[perm]
        return PairBatchSet.from_pairs(flat1, flat2, self.K)


@dataclass(frozen=True)
class LinkFunction:
    """
    Link tau applied to feature inner products

    identity         tau(x) = x
    scale            tau(x) = kappa x
    temperature      tau(x) = x / t
    exp_temperature  tau(x) = exp(x / t)
    """

    kind: str = "identity"
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "scale", "temperature", "exp_temperature"):
            raise ArgumentError(f"Unknown link function '{self.kind}'")
        if self.kind != "identity" and not self.param > 0:
            raise ArgumentError(f"link parameter must be positive, got {self.param}")

    @classmethod
    def identity(cls) -> "LinkFunction":
        return cls("identity")

    @classmethod
    def scale(cls, kappa: float) -> "LinkFunction":
        return cls("scale", float(kappa))

    @classmethod
    def temperature(cls, t: float) -> "LinkFunction":
        return cls("temperature", float(t))

    @classmethod
    def exp_temperature(cls, t: float) -> "LinkFunction":
        return cls("exp_temperature", float(t))

    @classmethod
    def from_config(cls, config) -> "LinkFunction":
        """Accepts "identity" or {"kind": ..., "param": ...}"""
        if config is None:
            return cls.identity()
        if isinstance(config, str):
            return cls(config)
        return cls(config.get("kind", "identity"), float(config.get("param", 1.0)))

    def __call__(self, x: torch.Tensor) -> torch.Tensor:
        if self.kind == "identity":
            return x
        if self.kind == "scale":
            return self.param * x
        if self.kind == "temperature":
            return x / self.param
        return torch.exp(x / self.param)


# ---------------------------------------------------------------------------
# Losses on score tensors of shape (n1, K, K)
# ---------------------------------------------------------------------------


def infonce_from_scores(scores: torch.Tensor) -> torch.Tensor:
    """Symmetrized InfoNCE per batch, shape (n1,)"""
    n1, K, _ = scores.shape
    if K < 2:
        raise ArgumentError(f"InfoNCE needs K >= 2 pairs per batch, got K={K}")
    labels = torch.arange(K).repeat(n1)
    rows = F.cross_entropy(scores.reshape(n1 * K, K), labels, reduction="none")
    cols = F.cross_entropy(scores.transpose(-1, -2).reshape(n1 * K, K), labels, reduction="none")
    return 0.5 * (rows + cols).reshape(n1, K).mean(dim=-1)


def _chisq_anchor_terms(scores: torch.Tensor, reduced: bool) -> torch.Tensor:
    """Chi-squared estimate per batch with z1_j as anchors, shape (n1,)"""
    n1, K, _ = scores.shape
    off = ~torch.eye(K, dtype=torch.bool)
    diag = torch.diagonal(scores, dim1=-2, dim2=-1)
    linear = (scores * off).sum(dim=-1) / (K - 1)
    if reduced:
        s1 = (scores * off).sum(dim=-1)
        s2 = (scores ** 2 * off).sum(dim=-1)
        squares = 2.0 * ((K - 1) * s2 - s1 ** 2)
    else:
        # diff[i, j, k, l] = S_jk - S_jl over pairwise distinct (j, k, l)
        diff = scores[:, :, :, None] - scores[:, :, None, :]
        j, k, l = torch.meshgrid(torch.arange(K), torch.arange(K), torch.arange(K), indexing="ij")
        distinct = (j != k) & (k != l) & (l != j)
        squares = (diff ** 2 * distinct).sum(dim=(-1, -2))
    quadratic = squares / (4.0 * (K - 1) * (K - 2))
    return (quadratic + linear - diag).mean(dim=-1)


def chisq_from_scores(
    scores: torch.Tensor, symmetrize: bool = True, reduced: Optional[bool] = None
) -> torch.Tensor:
    """
    Unbiased chi-squared contrastive estimate per batch, shape (n1,).

    With symmetrize the row-anchored and column-anchored estimates are averaged,
    which makes the loss invariant under swapping z1 and z2.
    """
    K = scores.shape[-1]
    if K < 3:
        raise ArgumentError(f"the chi-squared estimator needs K >= 3 pairs per batch, got K={K}")
    if reduced is None:
        reduced = K > CHISQ_NAIVE_MAX_K
    rows = _chisq_anchor_terms(scores, reduced)
    if not symmetrize:
        return rows
    return 0.5 * (rows + _chisq_anchor_terms(scores.transpose(-1, -2), reduced))


def batch_scores(batches: PairBatchSet, encoder, link: LinkFunction) -> torch.Tensor:
    """S[i, j, k] = link(<f(z1_ij), f(z2_ik)>)"""
    f1 = encoder(as_tensor(batches.z1))
    f2 = encoder(as_tensor(batches.z2))
    return link(f1 @ f2.transpose(-1, -2))


def losses_from_scores(scores: torch.Tensor, loss_kind: str, symmetrize: bool = True) -> torch.Tensor:
    if loss_kind == "infonce":
        return infonce_from_scores(scores)
    if loss_kind == "chisq":
        return chisq_from_scores(scores, symmetrize=symmetrize)
    raise ArgumentError(f"Unknown loss kind '{loss_kind}' (expected one of {LOSS_KINDS})")


def empirical_loss(
    batches: PairBatchSet, encoder, link: LinkFunction, loss_kind: str, symmetrize: bool = True
) -> torch.Tensor:
    """Average loss over all batches as a scalar tensor with its graph"""
    # the per-batch vector is reduced in batch-index order
    return losses_from_scores(batch_scores(batches, encoder, link), loss_kind, symmetrize).mean()


def infonce_empirical(batches: PairBatchSet, encoder, link: LinkFunction) -> float:
    with torch.no_grad():
        return float(empirical_loss(batches, encoder, link, "infonce"))


def chisq_empirical(
    batches: PairBatchSet, encoder, link: LinkFunction, symmetrize: bool = True
) -> float:
    with torch.no_grad():
        return float(empirical_loss(batches, encoder, link, "chisq", symmetrize))


def loss_and_grad(
    batches: PairBatchSet, encoder, link: LinkFunction, loss_kind: str, symmetrize: bool = True
) -> Tuple[float, Dict[str, torch.Tensor]]:
    """Loss value and its gradient with respect to every encoder parameter"""
    params = parameters(encoder)
    loss = empirical_loss(batches, encoder, link, loss_kind, symmetrize)
    grads = torch.autograd.grad(loss, list(params.values()), allow_unused=True)
    return float(loss.detach()), {
        name: (g if g is not None else torch.zeros_like(p))
        for (name, p), g in zip(params.items(), grads)
    }


# ---------------------------------------------------------------------------
# Exact expectations on discrete joints
# ---------------------------------------------------------------------------


def _check_budget(count: int, budget: int, what: str):
    if count > budget:
        raise BudgetError(f"{what} needs {count} terms, above the budget of {budget}")


def chisq_exact_expectation(
    joint: DiscreteJoint,
    score: ScoreLike,
    K: int,
    symmetrize: bool = True,
    budget: int = DEFAULT_BUDGET,
) -> float:
    """
    E[chisq_empirical] over one batch of K i.i.d. pairs from the joint, by
    enumerating every tuple of K cells with positive mass.
    """
    if K < 3:
        raise ArgumentError(f"the chi-squared estimator needs K >= 3, got K={K}")
    s = _scores(score, joint)
    xs, ys = np.nonzero(joint.p > 0)
    weights = joint.p[xs, ys]
    _check_budget(len(xs) ** K, budget, "chi-squared enumeration")
    tuples = np.array(list(itertools.product(range(len(xs)), repeat=K)))
    tuple_weights = np.prod(weights[tuples], axis=1)
    a, b = xs[tuples], ys[tuples]
    scores = torch.as_tensor(s[a[:, :, None], b[:, None, :]], dtype=DTYPE)
    losses = chisq_from_scores(scores, symmetrize=symmetrize).numpy()
    return float(np.dot(tuple_weights, losses))


def _infonce_half(
    p: torch.Tensor, s: torch.Tensor, neg_marginal: np.ndarray, K: int
) -> torch.Tensor:
    """
    E over the positive (a, b) ~ p and K-1 negatives b_j ~ neg_marginal of
    log(exp S(a,b) + sum_j exp S(a,b_j)) - S(a,b)
    """
    support = np.flatnonzero(neg_marginal > 0)
    negs = np.array(list(itertools.product(support, repeat=K - 1)), dtype=np.int64)
    neg_w = torch.as_tensor(np.prod(neg_marginal[negs], axis=1), dtype=DTYPE)
    n_x, n_y = s.shape
    pos = s[:, :, None, None].expand(n_x, n_y, len(negs), 1)
    neg = s[:, torch.as_tensor(negs)][:, None, :, :].expand(n_x, n_y, len(negs), K - 1)
    log_z = torch.logsumexp(torch.cat([pos, neg], dim=-1), dim=-1)
    inner = (log_z - s[:, :, None]) @ neg_w
    return (p * inner).sum()


def infonce_population_tensor(
    joint: DiscreteJoint, score: torch.Tensor, K: int, budget: int = DEFAULT_BUDGET
) -> torch.Tensor:
    """Differentiable exact symmetrized InfoNCE risk for a torch score table"""
    if K < 2:
        raise ArgumentError(f"InfoNCE needs K >= 2, got K={K}")
    n_x, n_y = joint.shape
    if tuple(score.shape) != (n_x, n_y):
        raise ArgumentError(f"score shape {tuple(score.shape)} does not match joint shape {joint.shape}")
    py, px = joint.py, joint.px
    count = n_x * n_y * max(int(np.sum(py > 0)), int(np.sum(px > 0))) ** (K - 1)
    _check_budget(count, budget, "InfoNCE enumeration")
    p = torch.as_tensor(joint.p, dtype=DTYPE)
    s = score.to(DTYPE)
    rows = _infonce_half(p, s, py, K)
    cols = _infonce_half(p.T, s.T, px, K)
    return 0.5 * (rows + cols)


def infonce_population_exact(
    joint: DiscreteJoint, score: ScoreLike, K: int, budget: int = DEFAULT_BUDGET
) -> float:
    """
    Exact symmetrized InfoNCE risk with K pairs per batch: the expectation over a
    positive pair and K-1 independent negatives of the log-partition, by nested
    enumeration.
    """
    s = torch.as_tensor(_scores(score, joint), dtype=DTYPE)
    with torch.no_grad():
        return float(infonce_population_tensor(joint, s, K, budget))


def minimize_infonce_population(
    joint: DiscreteJoint, K: int, gtol: float = 1e-10, max_iter: int = 5000, budget: int = DEFAULT_BUDGET
) -> np.ndarray:
    """Score table minimizing the exact InfoNCE risk (L-BFGS with autograd gradients)"""
    shape = joint.shape

    def objective(flat):
        s = torch.as_tensor(flat.reshape(shape), dtype=DTYPE).requires_grad_(True)
        loss = infonce_population_tensor(joint, s, K, budget)
        (grad,) = torch.autograd.grad(loss, s)
        return float(loss.detach()), grad.numpy().ravel()

    result = minimize(
        objective,
        np.zeros(int(np.prod(shape))),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-16},
    )
    logger.debug("InfoNCE population minimizer: risk %.12g after %d iterations", result.fun, result.nit)
    return result.x.reshape(shape)
