"""
Finite discrete joints and the exact sufficiency oracles.

Everything here works on a joint table p(x, y) with |X| rows and |Y| columns:
f-mutual information, pushforwards through a statistic T, the three forms of
sufficiency (ILS, VFS, CBS), the f-contrastive population risk R_f(S) with its
inner infimum solved per row, score sufficiency and the induced conditional.
Cells with zero marginal mass are skipped in every sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.optimize import brentq, minimize
from scipy.special import logsumexp, rel_entr

from sufflab.utils.errors import ArgumentError, ConvergenceError, DomainError, SolverError
from sufflab.utils.fdivergence import FGenerator, FKind, as_generator

logger = logging.getLogger(__name__)

SUM_TOL = 1e-12
# replaces exact zeros of the density ratio before taking f'(ratio)
RATIO_FLOOR = 1e-300
HELLINGER_CONSTRAINT_TOL = 1e-12


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class DiscreteJoint:
    """Joint probability table p(x, y)"""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.ndim != 2 or p.size == 0:
            raise ArgumentError(f"joint must be a non-empty matrix, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0):
            raise ArgumentError("joint entries must be finite and non-negative")
        total = p.sum()
        if abs(total - 1.0) > SUM_TOL:
            raise ArgumentError(f"joint must sum to 1 (got {total:.15g})")
        object.__setattr__(self, "p", _readonly(p))

    @classmethod
    def from_weights(cls, weights) -> "DiscreteJoint":
        """Normalize a non-negative weight matrix into a joint"""
        w = np.asarray(weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ArgumentError("weights must be non-negative with positive total")
        return cls(w / w.sum())

    @property
    def shape(self):
        return self.p.shape

    @property
    def px(self) -> np.ndarray:
        return self.p.sum(axis=1)

    @property
    def py(self) -> np.ndarray:
        return self.p.sum(axis=0)

    @property
    def product(self) -> np.ndarray:
        return np.outer(self.px, self.py)

    @property
    def conditional(self) -> np.ndarray:
        """p(y|x); rows with px(x) = 0 are all zeros"""
        px = self.px
        out = np.zeros_like(self.p)
        rows = px > 0
        out[rows] = self.p[rows] / px[rows, None]
        return out

    @property
    def ratio(self) -> np.ndarray:
        """p(x,y) / (px(x) py(y)); zero outside the product support"""
        prod = self.product
        out = np.zeros_like(self.p)
        mask = prod > 0
        out[mask] = self.p[mask] / prod[mask]
        return out

    @property
    def support(self) -> np.ndarray:
        """Cells of the product support px(x) py(y) > 0"""
        return self.product > 0


@dataclass(frozen=True)
class Statistic:
    """Index map T: X -> {0, ..., n_cells - 1}"""

    t: np.ndarray
    n_cells: int

    def __post_init__(self):
        t = np.asarray(self.t)
        if t.ndim != 1 or not np.issubdtype(t.dtype, np.integer):
            raise ArgumentError("statistic must be a 1-d integer index map")
        if self.n_cells < 1 or np.any(t < 0) or np.any(t >= self.n_cells):
            raise ArgumentError(f"statistic indices must lie in [0, {self.n_cells})")
        t = t.astype(np.int64, copy=True)
        t.flags.writeable = False
        object.__setattr__(self, "t", t)

    @classmethod
    def from_labels(cls, labels) -> "Statistic":
        labels = np.asarray(labels, dtype=np.int64)
        return cls(labels, int(labels.max()) + 1 if labels.size else 1)

    @classmethod
    def identity(cls, n: int) -> "Statistic":
        return cls(np.arange(n), n)

    @classmethod
    def constant(cls, n: int) -> "Statistic":
        return cls(np.zeros(n, dtype=np.int64), 1)

    @classmethod
    def from_features(cls, features, quantum: float = 1e-9) -> "Statistic":
        """
        Group rows of a feature matrix that agree after rounding to `quantum`.

        Cells are numbered in order of first appearance.
        """
        keys = np.round(np.asarray(features, dtype=float) / quantum).astype(np.int64)
        keys = keys.reshape(len(keys), -1)
        seen = {}
        labels = np.empty(len(keys), dtype=np.int64)
        for i, row in enumerate(keys):
            labels[i] = seen.setdefault(row.tobytes(), len(seen))
        return cls(labels, len(seen))

    def compose(self, outer: "Statistic") -> "Statistic":
        """outer ∘ self"""
        if outer.t.shape[0] != self.n_cells:
            raise ArgumentError("outer statistic must be defined on this statistic's cells")
        return Statistic(outer.t[self.t], outer.n_cells)

    def check_joint(self, joint: DiscreteJoint):
        if self.t.shape[0] != joint.shape[0]:
            raise ArgumentError(
                f"statistic has {self.t.shape[0]} entries but the joint has {joint.shape[0]} rows"
            )


@dataclass(frozen=True)
class ScoreTable:
    """Similarity score S(x, y) on a finite grid"""

    s: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s, dtype=float)
        if s.ndim != 2 or not np.all(np.isfinite(s)):
            raise ArgumentError("score table must be a finite matrix")
        object.__setattr__(self, "s", _readonly(s))


ScoreLike = Union[ScoreTable, np.ndarray]


def _scores(score: ScoreLike, joint: DiscreteJoint) -> np.ndarray:
    s = score.s if isinstance(score, ScoreTable) else np.asarray(score, dtype=float)
    if s.shape != joint.shape:
        raise ArgumentError(f"score shape {s.shape} does not match joint shape {joint.shape}")
    if not np.all(np.isfinite(s)):
        raise ArgumentError("score table must be finite")
    return s


def _as_distribution(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ArgumentError(f"{name} must be a finite non-negative vector")
    if abs(v.sum() - 1.0) > 1e-10:
        raise ArgumentError(f"{name} must sum to 1 (got {v.sum():.15g})")
    return v


# ---------------------------------------------------------------------------
# Information and sufficiency
# ---------------------------------------------------------------------------


def mutual_information_f(joint: DiscreteJoint, gen) -> float:
    """I_f(X, Y) = sum over the product support of f(ratio) px py"""
    gen = as_generator(gen)
    prod = joint.product
    mask = prod > 0
    ratio = joint.p[mask] / prod[mask]
    return float(np.sum(gen.f(ratio) * prod[mask]))


def pushforward(joint: DiscreteJoint, stat: Statistic) -> DiscreteJoint:
    """Joint of (T(X), Y)"""
    stat.check_joint(joint)
    out = np.zeros((stat.n_cells, joint.shape[1]))
    np.add.at(out, stat.t, joint.p)
    return DiscreteJoint(out)


def suff_ils(joint: DiscreteJoint, stat: Statistic, gen) -> float:
    """Information loss sufficiency I_f(X, Y) - I_f(T(X), Y)"""
    return mutual_information_f(joint, gen) - mutual_information_f(pushforward(joint, stat), gen)


def _lifted_conditional(joint: DiscreteJoint, stat: Statistic) -> np.ndarray:
    """p(y | T(x)) laid out on the rows of X"""
    return pushforward(joint, stat).conditional[stat.t]


def suff_cbs(joint: DiscreteJoint, stat: Statistic, gen, sign: float = 1.0) -> float:
    """
    Conditional Bregman sufficiency
    E_{px x py}[ B_f( p(y|x)/py, p(y|T(x))/py ) ]

    `sign` multiplies every Bregman term; anything other than 1 is only used by
    the equivalence harness self-test.
    """
    gen = as_generator(gen)
    stat.check_joint(joint)
    px, py = joint.px, joint.py
    cond_t = _lifted_conditional(joint, stat)
    mask = joint.support & (cond_t > 0)
    a = (joint.conditional / np.where(py > 0, py, 1.0))[mask]
    b = (cond_t / np.where(py > 0, py, 1.0))[mask]
    weights = joint.product[mask]
    return float(np.sum(weights * sign * gen.bregman(a, b)))


def optimal_score(joint: DiscreteJoint, gen) -> np.ndarray:
    """S_star(x, y) = f'(ratio); structural zeros use RATIO_FLOOR, cells off the support get 0"""
    gen = as_generator(gen)
    ratio = joint.ratio
    support = joint.support
    s = np.zeros(joint.shape)
    s[support] = gen.derivative(np.maximum(ratio[support], RATIO_FLOOR))
    return s


def suff_vfs(joint: DiscreteJoint, stat: Statistic, gen, mode: str = "closed_form") -> float:
    """
    Variational form sufficiency inf_{S∘T} R_f - inf_S R_f

    closed_form evaluates R_f at the optimal scores of the pushforward (lifted
    through T) and of the original joint; numeric minimizes R_f over tables
    that factor through T (KL and chi-squared only).
    """
    gen = as_generator(gen)
    stat.check_joint(joint)
    if mode == "closed_form":
        lifted = optimal_score(pushforward(joint, stat), gen)[stat.t]
        return population_risk_f(joint, lifted, gen) - population_risk_f(
            joint, optimal_score(joint, gen), gen
        )
    if mode == "numeric":
        if gen.kind is FKind.HELLINGER:
            raise ArgumentError("numeric VFS supports only the kl and chisq generators")
        best = minimize_population_risk(joint, gen, stat)
        return population_risk_f(joint, best, gen) + mutual_information_f(joint, gen)
    raise ArgumentError(f"Unknown VFS mode '{mode}' (expected closed_form or numeric)")


# ---------------------------------------------------------------------------
# f-contrastive population risk
# ---------------------------------------------------------------------------


def _hellinger_row_offset(row: np.ndarray, weights: np.ndarray) -> float:
    """
    Solve E_py[1 / (4 (S - c)^2)] = 1 with S - c < 0 on the row.

    With u = c - max(S) the root lies in [sqrt(w_top) / 2, 1/2], where w_top is the
    mass on the row maximum. Cells far below the maximum (structural zeros) only
    add terms near 0, so the bracket stays tight whatever their scores.
    """
    top = float(row.max())
    gap = top - row

    def constraint(u):
        return float(np.sum(weights * 0.25 / (gap + u) ** 2)) - 1.0

    lo = 0.5 * np.sqrt(float(weights[gap == 0].sum()))
    hi = 0.5
    if constraint(lo) <= 0:
        return top + lo
    if constraint(hi) >= 0:
        return top + hi
    try:
        u = brentq(constraint, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    except (RuntimeError, ValueError) as e:
        raise SolverError(f"Hellinger inner solver failed: {e}") from e
    residual = abs(constraint(u))
    if residual > HELLINGER_CONSTRAINT_TOL:
        logger.debug("Hellinger row offset residual %.3e above tolerance", residual)
    return top + u


def _chisq_row_offsets(s: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Solve E_py[max(S - c + 1, 0)] = 1 per row. The active set is a prefix of the
    row sorted in decreasing order, as in a weighted simplex projection.
    """
    order = np.argsort(-s, axis=1)
    s_sorted = np.take_along_axis(s, order, axis=1)
    w_sorted = weights[order]
    candidates = (np.cumsum(w_sorted * (s_sorted + 1.0), axis=1) - 1.0) / np.cumsum(w_sorted, axis=1)
    active = np.count_nonzero(s_sorted + 1.0 - candidates > 0, axis=1)
    return candidates[np.arange(len(s)), np.maximum(active, 1) - 1]


def inner_offsets(joint: DiscreteJoint, score: ScoreLike, gen) -> np.ndarray:
    """
    Row offsets S_x(x) attaining the inner infimum of R_f:
    E_py[(f*)'(S(x, .) - S_x(x))] = 1 for every x
    """
    gen = as_generator(gen)
    s = _scores(score, joint)
    py = joint.py
    cols = py > 0
    s_c, w = s[:, cols], py[cols]
    if gen.kind is FKind.KL:
        return logsumexp(s_c, b=w, axis=1) - 1.0
    if gen.kind is FKind.CHISQ:
        return _chisq_row_offsets(s_c, w)
    return np.array([_hellinger_row_offset(row, w) for row in s_c])


def population_risk_f(joint: DiscreteJoint, score: ScoreLike, gen) -> float:
    """
    f-contrastive loss
    R_f(S) = E_p[-S] + sum_x px(x) min_c E_py[f*(S(x, .) - c) + c]
    """
    gen = as_generator(gen)
    s = _scores(score, joint)
    px, py = joint.px, joint.py
    cols = py > 0
    rows = px > 0
    pos = joint.p > 0
    paired = -float(np.sum(joint.p[pos] * s[pos]))
    c = inner_offsets(joint, s, gen)
    inner = gen.conjugate(s[:, cols] - c[:, None]) @ py[cols] + c
    return paired + float(np.sum(px[rows] * inner[rows]))


def induced_conditional(joint: DiscreteJoint, score: ScoreLike, gen) -> np.ndarray:
    """P_S(y|x) = py(y) (f*)'(S(x, y) - S_x(x)); rows are distributions for every score"""
    gen = as_generator(gen)
    s = _scores(score, joint)
    py = joint.py
    c = inner_offsets(joint, s, gen)
    with np.errstate(invalid="ignore"):
        cond = py[None, :] * gen.conjugate_derivative(s - c[:, None])
    return np.where(py[None, :] > 0, cond, 0.0)


def score_sufficiency(joint: DiscreteJoint, score: ScoreLike, gen, form: str = "vfs") -> float:
    """
    Sufficiency of a score: R_f(S) - inf R_f (vfs), or
    E_{px x py}[ B_f( p(y|x)/py, P_S(y|x)/py ) ] (cbs)
    """
    gen = as_generator(gen)
    if form == "vfs":
        return population_risk_f(joint, score, gen) + mutual_information_f(joint, gen)
    if form == "cbs":
        py = joint.py
        mask = joint.support
        scale = np.where(py > 0, py, 1.0)
        a = (joint.conditional / scale)[mask]
        b = (induced_conditional(joint, score, gen) / scale)[mask]
        return float(np.sum(joint.product[mask] * gen.bregman(a, b)))
    raise ArgumentError(f"Unknown score sufficiency form '{form}' (expected vfs or cbs)")


def chisq_score_lower_bound(joint: DiscreteJoint, score: ScoreLike) -> float:
    """inf ratio * E_x[chi2(P(y|x) || P_S(y|x))] / 2, a lower bound on Suff_chi2(S)"""
    p_s = induced_conditional(joint, score, FGenerator(FKind.CHISQ))
    cond = joint.conditional
    px = joint.px
    total = 0.0
    for x in np.flatnonzero(px > 0):
        keep = cond[x] > 0
        total += px[x] * float(np.sum((cond[x][keep] - p_s[x][keep]) ** 2 / cond[x][keep]))
    floor = joint.ratio[joint.support & (joint.p > 0)].min()
    return float(0.5 * floor * total)


def minimize_population_risk(
    joint: DiscreteJoint,
    gen,
    stat: Optional[Statistic] = None,
    gtol: float = 1e-9,
    max_iter: int = 5000,
    restarts: int = 5,
) -> np.ndarray:
    """
    Numerically minimize R_f over score tables that factor through `stat`
    (all tables when stat is None). Returns the minimizer lifted to X x Y.

    The inner offsets are solved exactly inside every evaluation, so the
    gradient in S is -p + px py (f')^{-1}(S - S_x) by the envelope theorem.
    """
    gen = as_generator(gen)
    if gen.kind is FKind.HELLINGER:
        raise ArgumentError("numeric minimization supports only the kl and chisq generators")
    stat = stat or Statistic.identity(joint.shape[0])
    stat.check_joint(joint)
    n_cells, n_y = stat.n_cells, joint.shape[1]
    weight = joint.product

    def objective(flat):
        table = flat.reshape(n_cells, n_y)
        s = table[stat.t]
        c = inner_offsets(joint, s, gen)
        grad_s = -joint.p + weight * gen.conjugate_derivative(s - c[:, None])
        grad = np.zeros((n_cells, n_y))
        np.add.at(grad, stat.t, grad_s)
        return population_risk_f(joint, s, gen), grad.ravel()

    x = np.zeros(n_cells * n_y)
    grad_norm = np.inf
    for attempt in range(restarts):
        result = minimize(
            objective,
            x,
            jac=True,
            method="L-BFGS-B",
            options={"maxiter": max_iter, "gtol": gtol * 1e-3, "ftol": 1e-16},
        )
        x = result.x
        grad_norm = float(np.linalg.norm(objective(x)[1]))
        if grad_norm <= gtol:
            return x.reshape(n_cells, n_y)[stat.t]
        logger.debug("L-BFGS restart %d: gradient norm %.3e", attempt + 1, grad_norm)
    raise ConvergenceError(
        f"numeric VFS did not reach gradient norm {gtol:g} (last {grad_norm:.3e})"
    )


# ---------------------------------------------------------------------------
# Divergences between distributions
# ---------------------------------------------------------------------------


def _require_abs_continuity(p, q, kind):
    if np.any((p > 0) & (q <= 0)):
        raise DomainError(f"{kind} divergence needs q > 0 wherever p > 0")


def divergence(p, q, kind: str = "kl", alpha: Optional[float] = None) -> float:
    """
    Divergence between two distributions on the same finite set.

    kind: tv | kl | chisq | hellinger2 | renyi (with alpha > 0; alpha = 1 is KL)
    hellinger2 is the f-divergence of f(t) = 1 - sqrt(t), i.e. 1 - sum sqrt(p q).
    """
    p = _as_distribution(p, "p")
    q = _as_distribution(q, "q")
    if p.shape != q.shape:
        raise ArgumentError("p and q must have the same length")
    if kind == "tv":
        return 0.5 * float(np.abs(p - q).sum())
    if kind == "kl":
        _require_abs_continuity(p, q, kind)
        return max(float(np.sum(rel_entr(p, q))), 0.0)
    if kind == "chisq":
        _require_abs_continuity(p, q, kind)
        keep = q > 0
        return float(np.sum((p[keep] - q[keep]) ** 2 / q[keep]))
    if kind == "hellinger2":
        return max(1.0 - float(np.sum(np.sqrt(p * q))), 0.0)
    if kind == "renyi":
        if alpha is None or alpha <= 0:
            raise DomainError(f"renyi divergence needs alpha > 0, got {alpha}")
        if alpha == 1:
            return divergence(p, q, "kl")
        if alpha > 1:
            _require_abs_continuity(p, q, kind)
        keep = (p > 0) & (q > 0)
        total = float(np.sum(p[keep] ** alpha * q[keep] ** (1.0 - alpha)))
        return max(np.log(total) / (alpha - 1.0), 0.0)
    raise ArgumentError(f"Unknown divergence kind '{kind}'")


def expected_divergence_gap(
    joint: DiscreteJoint, stat: Statistic, kind: str = "tv", alpha: Optional[float] = None
) -> float:
    """E_x[ D( p(y|x) || p(y|T(x)) ) ]"""
    stat.check_joint(joint)
    px = joint.px
    cond = joint.conditional
    cond_t = _lifted_conditional(joint, stat)
    return float(
        sum(px[x] * divergence(cond[x], cond_t[x], kind, alpha) for x in np.flatnonzero(px > 0))
    )


def c2_constant(joint: DiscreteJoint, gen) -> float:
    """c2 = (2 inf_{supp} f''(p(y|x)/py))^{-1/2}, the constant of the Pinsker-type bound"""
    gen = as_generator(gen)
    ratio = joint.ratio[joint.support]
    curvature = float(np.min(gen.second_derivative(ratio)))
    return (2.0 * curvature) ** -0.5


def expected_tv_gap(joint: DiscreteJoint, stat: Statistic) -> float:
    """E_x[ TV( p(y|x), p(y|T(x)) ) ], the left side of the Pinsker-type bound"""
    return expected_divergence_gap(joint, stat, "tv")


def expected_chisq_gap(joint: DiscreteJoint, stat: Statistic) -> float:
    """E_x[ chi2( p(y|x) || p(y|T(x)) ) ]"""
    return expected_divergence_gap(joint, stat, "chisq")
