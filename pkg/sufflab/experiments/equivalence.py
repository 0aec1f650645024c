"""
Property suite over random discrete joints.

Each property is checked on seeded random instances and reported with the
largest deviation observed and the tolerance it is held to:

    equivalence         ILS = CBS = VFS (closed form and numeric)
    pinsker             E_x TV <= c2 sqrt(Suff_f), and the chi-squared gap bound
    renyi_triangle      triangle-like inequality for Renyi divergences
    minimizer           numeric R_f minimizers recover p(y|x); row offsets leave R_f unchanged
    chisq_unbiased      exact expectation of the batch chi-squared estimate equals R_chi2
    infonce_limit       R_K - log K decreases towards R_kl at rate K/(K+1)
    topic_bound         Bayes-head KL risk <= 8 (B sqrt(Suff_kl) + eps_G_cls)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from sufflab.experiments.results import ResultTable
from sufflab.utils.augmentation import build_topic_model, topic_joint_exact
from sufflab.utils.config_manager import ExperimentConfig
from sufflab.utils.contrastive_losses import chisq_exact_expectation, infonce_population_exact
from sufflab.utils.discrete_prob import (
    DiscreteJoint,
    Statistic,
    c2_constant,
    divergence,
    expected_chisq_gap,
    expected_tv_gap,
    induced_conditional,
    minimize_population_risk,
    mutual_information_f,
    optimal_score,
    population_risk_f,
    pushforward,
    suff_cbs,
    suff_ils,
    suff_vfs,
)
from sufflab.utils.downstream import augmentation_error_classification, bayes_head, classification_risk_kl
from sufflab.utils.errors import ArgumentError, SuffLabError
from sufflab.utils.fdivergence import CHISQ, GENERATORS, KL
from sufflab.utils.seeding import make_rng

logger = logging.getLogger(__name__)

NUMERIC_TOL = 1e-6
GAP_RATIO_TOL = 0.1
TOPIC_BOUND_CONSTANT = 8.0


@dataclass
class PropertyResult:
    name: str
    tolerance: float
    checked: int = 0
    max_deviation: float = float("-inf")
    failures: List[str] = field(default_factory=list)

    def record(self, deviation: float, detail: str = ""):
        """Add one observation; deviation above tolerance (or NaN) is a failure"""
        self.checked += 1
        self.max_deviation = float("inf") if np.isnan(deviation) else max(self.max_deviation, deviation)
        if not deviation <= self.tolerance:
            self.failures.append(detail or f"deviation {deviation:.3e}")

    def fail(self, detail: str):
        self.checked += 1
        self.max_deviation = float("inf")
        self.failures.append(detail)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.failures


@dataclass
class EquivalenceReport:
    seed: int
    results: Dict[str, PropertyResult] = field(default_factory=dict)

    def result_for(self, name: str, tolerance: float) -> PropertyResult:
        return self.results.setdefault(name, PropertyResult(name, tolerance))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def format_table(self) -> str:
        lines = [f"{'property':<28}{'status':<8}{'checked':>8}  {'max deviation':>14}  {'tolerance':>10}"]
        for r in self.results.values():
            lines.append(
                f"{r.name:<28}{'PASS' if r.passed else 'FAIL':<8}{r.checked:>8}  "
                f"{r.max_deviation:>14.3e}  {r.tolerance:>10.1e}"
            )
        return "\n".join(lines)

    def to_result_table(self) -> ResultTable:
        table = ResultTable("equivalence")
        for r in self.results.values():
            table.add(r.name, 0, 0, self.seed, "passed", float(r.passed))
            table.add(r.name, 0, 0, self.seed, "checked", float(r.checked))
            if np.isfinite(r.max_deviation):
                table.add(r.name, 0, 0, self.seed, "max_deviation", r.max_deviation)
        return table


def random_joint(rng: np.random.Generator, max_rows: int, max_cols: int) -> DiscreteJoint:
    rows = int(rng.integers(2, max_rows + 1))
    cols = int(rng.integers(2, max_cols + 1))
    return DiscreteJoint.from_weights(rng.dirichlet(np.ones(rows * cols)).reshape(rows, cols))


def random_statistic(rng: np.random.Generator, n: int) -> Statistic:
    labels = rng.integers(int(rng.integers(1, n + 1)), size=n)
    return Statistic.from_labels(np.unique(labels, return_inverse=True)[1])


def three_state_joint(dependence: float = 0.1) -> DiscreteJoint:
    """Symmetric 3 x 3 joint: (1 - eps) uniform product + eps uniform diagonal"""
    return DiscreteJoint((1.0 - dependence) * np.full((3, 3), 1.0 / 9.0) + dependence * np.eye(3) / 3.0)


def check_equivalence(report: EquivalenceReport, rng, opts, inject_fault: bool = False):
    tol = opts.get("tolerance", 1e-10)
    cbs = report.result_for("equivalence_ils_cbs", tol)
    vfs = report.result_for("equivalence_ils_vfs", tol)
    numeric = report.result_for("equivalence_ils_vfs_numeric", NUMERIC_TOL)
    sign = -1.0 if inject_fault else 1.0
    for i in range(opts.get("instances", 100)):
        joint = random_joint(rng, opts.get("max_rows", 6), opts.get("max_cols", 5))
        stat = random_statistic(rng, joint.shape[0])
        for gen in GENERATORS:
            ils = suff_ils(joint, stat, gen)
            tag = f"instance {i}, {gen.token}"
            cbs.record(abs(ils - suff_cbs(joint, stat, gen, sign=sign)), tag)
            vfs.record(abs(ils - suff_vfs(joint, stat, gen)), tag)
            if gen in (KL, CHISQ):
                try:
                    numeric.record(abs(ils - suff_vfs(joint, stat, gen, mode="numeric")), tag)
                except SuffLabError as e:
                    numeric.fail(f"{tag}: {e}")


def check_bounds(report: EquivalenceReport, rng, opts):
    tol = opts.get("tolerance", 1e-10)
    pinsker = report.result_for("pinsker", tol)
    chisq_gap = report.result_for("chisq_gap_bound", tol)
    for i in range(opts.get("bound_instances", 200)):
        joint = random_joint(rng, opts.get("max_rows", 6), opts.get("max_cols", 5))
        stat = random_statistic(rng, joint.shape[0])
        tv = expected_tv_gap(joint, stat)
        for gen in GENERATORS:
            bound = c2_constant(joint, gen) * np.sqrt(max(suff_ils(joint, stat, gen), 0.0))
            pinsker.record(tv - bound, f"instance {i}, {gen.token}")
        # chi2(p(y|x) || p(y|T(x))) <= 2 Suff_chi2 / inf ratio of the pushforward
        pushed = pushforward(joint, stat)
        floor = pushed.ratio[pushed.p > 0].min()
        bound = 2.0 * suff_ils(joint, stat, CHISQ) / floor
        chisq_gap.record(expected_chisq_gap(joint, stat) - bound, f"instance {i}")

    renyi = report.result_for("renyi_triangle", tol)
    for i in range(opts.get("bound_instances", 200)):
        n = int(rng.integers(2, 7))
        P, T, Q = (rng.dirichlet(np.ones(n)) for _ in range(3))
        if i % 3 == 0:
            k, alpha = 1.5, 4.0 / 3.0
        elif i % 3 == 1:
            k, alpha = 4.0 / 3.0, 1.0
        else:
            k, alpha = rng.uniform(1.25, 3.0), rng.uniform(1.05, 2.5)
        with np.errstate(over="ignore"):
            lhs = divergence(P, Q, "renyi", alpha)
            rhs = (k * alpha / (k * alpha - 1.0)) * divergence(P, T, "renyi", (k * alpha - 1.0) / (k - 1.0)) \
                + divergence(T, Q, "renyi", k * alpha)
        renyi.record(lhs - rhs if np.isfinite(rhs) else float("-inf"), f"instance {i}, k={k:.3f}, alpha={alpha:.3f}")


def check_minimizers(report: EquivalenceReport, rng, opts):
    conditional = report.result_for("minimizer_conditional", NUMERIC_TOL)
    offsets = report.result_for("minimizer_offset_invariance", opts.get("tolerance", 1e-10))
    for i in range(opts.get("minimizer_joints", 20)):
        joint = random_joint(rng, opts.get("max_rows", 6), opts.get("max_cols", 5))
        for gen in (KL, CHISQ):
            tag = f"joint {i}, {gen.token}"
            try:
                best = minimize_population_risk(joint, gen)
            except SuffLabError as e:
                conditional.fail(f"{tag}: {e}")
                continue
            conditional.record(float(np.abs(induced_conditional(joint, best, gen) - joint.conditional).max()), tag)
            s_star = optimal_score(joint, gen)
            shift = rng.normal(scale=2.0, size=joint.shape[0])
            base = population_risk_f(joint, s_star, gen)
            offsets.record(abs(population_risk_f(joint, s_star + shift[:, None], gen) - base), tag)


def check_chisq_unbiased(report: EquivalenceReport, rng, opts):
    """Both estimator forms: literal with any score, symmetrized on a symmetric joint and score"""
    prop = report.result_for("chisq_unbiased", 1e-12)
    joint = three_state_joint(0.3)
    for trial in range(3):
        # keeps every score within 1 of its row mean, where R_chi2 is the quadratic form
        a = rng.uniform(-0.2, 0.2, size=(3, 3))
        exact = population_risk_f(joint, a, CHISQ)
        prop.record(abs(chisq_exact_expectation(joint, a, 3, symmetrize=False) - exact), f"literal, trial {trial}")
        sym = a + a.T
        exact = population_risk_f(joint, sym, CHISQ)
        prop.record(abs(chisq_exact_expectation(joint, sym, 3, symmetrize=True) - exact), f"symmetrized, trial {trial}")


def check_infonce_limit(report: EquivalenceReport, opts):
    monotone = report.result_for("infonce_monotone", opts.get("tolerance", 1e-10))
    ratio = report.result_for("infonce_gap_ratio", GAP_RATIO_TOL)
    lower = report.result_for("infonce_lower_bound", opts.get("tolerance", 1e-10))
    joint = three_state_joint()
    score = np.log(joint.ratio)
    limit = population_risk_f(joint, score, KL)
    info = mutual_information_f(joint, KL)
    Ks = list(opts.get("infonce_K", [2, 3, 4, 5]))
    shifted = {K: infonce_population_exact(joint, score, K) - np.log(K) for K in Ks}
    for K in Ks:
        lower.record(-info - shifted[K], f"K={K}")
    for K, K_next in zip(Ks, Ks[1:]):
        monotone.record(shifted[K_next] - shifted[K], f"K={K}->{K_next}")
        observed = (shifted[K_next] - limit) / (shifted[K] - limit)
        ratio.record(abs(observed - K / K_next), f"K={K}->{K_next}: ratio {observed:.4f}")


def check_topic_bound(report: EquivalenceReport, rng, opts):
    """Bayes-head risk on random view partitions of random topic models"""
    prop = report.result_for("topic_bound", opts.get("tolerance", 1e-10))
    for i in range(opts.get("topic_models", 20)):
        M = int(rng.integers(2, 4))
        S = int(rng.integers(4 * M, 4 * M + 5))
        scenario = build_topic_model(M, S, np.log(M) + rng.uniform(0.5, 3.0), rng)
        joint = topic_joint_exact(scenario)
        stat = random_statistic(rng, S)
        features = np.eye(stat.n_cells)[stat.t]
        risk = classification_risk_kl(scenario, features, bayes_head(scenario, features))
        bound = TOPIC_BOUND_CONSTANT * (
            scenario.achieved_B * np.sqrt(max(suff_ils(joint, stat, KL), 0.0))
            + augmentation_error_classification(scenario)
        )
        prop.record(risk - bound, f"model {i} (M={M}, S={S})")


def run_equivalence(config: ExperimentConfig, inject_fault: bool = False) -> EquivalenceReport:
    """Run every property on the config's seed; inject_fault flips the CBS Bregman sign"""
    if config.experiment != "equivalence":
        raise ArgumentError(f"run_equivalence needs an equivalence config, got '{config.experiment}'")
    opts = config.options
    report = EquivalenceReport(config.seed)
    check_equivalence(report, make_rng(config.seed, "equivalence", "forms"), opts, inject_fault)
    check_bounds(report, make_rng(config.seed, "equivalence", "bounds"), opts)
    check_minimizers(report, make_rng(config.seed, "equivalence", "minimizers"), opts)
    check_chisq_unbiased(report, make_rng(config.seed, "equivalence", "chisq"), opts)
    check_infonce_limit(report, opts)
    check_topic_bound(report, make_rng(config.seed, "equivalence", "topic"), opts)
    for r in report.results.values():
        if not r.passed:
            logger.warning("Property %s failed on %d of %d checks (first: %s)", r.name, len(r.failures),
                           r.checked, r.failures[0] if r.failures else "no checks")
    return report
