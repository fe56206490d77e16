"""Exact post-deployment outcome distributions for discrete tables.

Given a pre-deployment joint P(a, x, d, y) and a proposed decision rule
pi(d | a, x), the post-deployment outcome distribution is

    P_post(y | a) = sum over (x, d) with P(x|a) pi(d|a,x) > 0 of
                    P_pre(y | a, x, d) * P_pre(x | a) * pi(d | a, x)

which is valid when covariates do not react to deployment and every
decision the rule makes at (a, x) was already made there before. The
arithmetic is written against numpy arrays without forcing a dtype, so
object arrays of ``fractions.Fraction`` are evaluated exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ARM_NAMES, Population

MASS_TOL = 1e-12
MAX_CELLS = 10_000


class IdentificationError(ValueError):
    def __init__(self, violations: list[tuple]):
        shown = ", ".join(map(str, violations[:10]))
        more = f" (+{len(violations) - 10} more)" if len(violations) > 10 else ""
        super().__init__(f"decision rule makes unprecedented decisions at (a, x, d): {shown}{more}")
        self.violations = violations


class ConditioningError(ValueError):
    pass


def _labels(values, n: int) -> tuple[str, ...]:
    return tuple(str(v) for v in values) if values is not None else tuple(str(i) for i in range(n))


def _is_zero(v) -> bool:
    return not v > 0


@dataclass
class DiscreteJoint:
    """Probability table indexed [a, x, d, y]."""

    table: np.ndarray
    a_labels: tuple[str, ...] = None
    x_labels: tuple[str, ...] = None
    d_labels: tuple[str, ...] = None
    y_labels: tuple[str, ...] = None

    def __post_init__(self) -> None:
        t = np.asarray(self.table)
        if t.ndim != 4:
            raise ValueError("joint table must have axes (a, x, d, y)")
        if t.shape[1] > MAX_CELLS:
            raise ValueError(f"at most {MAX_CELLS} covariate cells are supported")
        if np.any(t < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(float(t.sum()) - 1.0) > MASS_TOL:
            raise ValueError(f"total mass {float(t.sum())!r} differs from 1")
        self.table = t
        A, X, D, Y = t.shape
        self.a_labels = _labels(self.a_labels, A)
        self.x_labels = _labels(self.x_labels, X)
        self.d_labels = _labels(self.d_labels, D)
        self.y_labels = _labels(self.y_labels, Y)

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.table.shape

    def p_a(self) -> np.ndarray:
        return self.table.sum(axis=(1, 2, 3))

    def p_ax(self) -> np.ndarray:
        return self.table.sum(axis=(2, 3))

    def p_axd(self) -> np.ndarray:
        return self.table.sum(axis=3)

    def outcome_given_a(self) -> np.ndarray:
        """P_pre(y | a); rows with P(a) = 0 raise."""
        pa = self.p_a()
        _require_mass(pa, self.a_labels)
        return self.table.sum(axis=(1, 2)) / pa[:, None]

    def propensities(self) -> "DecisionRule":
        """The observed P_pre(d | a, x); cells with P(a, x) = 0 get a uniform row."""
        pax = self.p_ax()
        pd = self.p_axd()
        out = np.empty_like(pd)
        D = pd.shape[2]
        for a, x in np.ndindex(pax.shape):
            if _is_zero(pax[a, x]):
                out[a, x] = [Fraction(1, D) if pd.dtype == object else 1.0 / D] * D
            else:
                out[a, x] = pd[a, x] / pax[a, x]
        return DecisionRule(out, self.a_labels, self.x_labels, self.d_labels)


@dataclass
class DecisionRule:
    """pi(d | a, x), indexed [a, x, d]."""

    table: np.ndarray
    a_labels: tuple[str, ...] = None
    x_labels: tuple[str, ...] = None
    d_labels: tuple[str, ...] = None

    def __post_init__(self) -> None:
        t = np.asarray(self.table)
        if t.ndim != 3:
            raise ValueError("decision rule must have axes (a, x, d)")
        if np.any(t < 0):
            raise ValueError("rule entries must be non-negative")
        rows = t.sum(axis=2).astype(float)
        if np.any(np.abs(rows - 1.0) > MASS_TOL):
            raise ValueError("every rule row must sum to 1")
        self.table = t
        A, X, D = t.shape
        self.a_labels = _labels(self.a_labels, A)
        self.x_labels = _labels(self.x_labels, X)
        self.d_labels = _labels(self.d_labels, D)

    @classmethod
    def deterministic(cls, choice: np.ndarray, n_decisions: int, **labels) -> "DecisionRule":
        choice = np.asarray(choice, dtype=np.int64)
        t = np.zeros((*choice.shape, n_decisions))
        np.put_along_axis(t, choice[..., None], 1.0, axis=2)
        return cls(t, **labels)

    @classmethod
    def band(cls, risk: np.ndarray, low: float, high: float, inside: int, outside: int, n_decisions: int, **labels) -> "DecisionRule":
        """Assign ``inside`` when low < risk(a, x) < high and ``outside`` otherwise."""
        risk = np.asarray(risk, dtype=float)
        return cls.deterministic(np.where((risk > low) & (risk < high), inside, outside), n_decisions, **labels)


@dataclass
class SupportSet:
    pairs: dict[int, frozenset[tuple[int, int]]]

    def __getitem__(self, a: int) -> frozenset[tuple[int, int]]:
        return self.pairs[a]


def _require_mass(pa: np.ndarray, labels: Sequence[str], which: Sequence[int] | None = None) -> None:
    for a in range(len(pa)) if which is None else which:
        if _is_zero(pa[a]):
            raise ConditioningError(f"P(A={labels[a]}) = 0; cannot condition on it")


def _post_weights(joint: DiscreteJoint, rule: DecisionRule | None) -> np.ndarray:
    """P(x, d | a) before (rule None) or after deployment, indexed [a, x, d]."""
    pa = joint.p_a()
    if rule is None:
        return joint.p_axd() / pa[:, None, None]
    if rule.table.shape != joint.shape[:3]:
        raise ValueError("rule shape does not match the joint's (a, x, d) axes")
    return (joint.p_ax() / pa[:, None])[:, :, None] * rule.table


def support_set(joint: DiscreteJoint, rule: DecisionRule | None = None) -> SupportSet:
    _require_mass(joint.p_a(), joint.a_labels)
    w = _post_weights(joint, rule)
    return SupportSet({a: frozenset((int(x), int(d)) for x, d in zip(*np.nonzero(w[a] > 0))) for a in range(w.shape[0])})


def check_no_unprecedented(joint: DiscreteJoint, rule: DecisionRule) -> list[tuple[str, str, str]]:
    """Every (a, x, d) reachable under ``rule`` that never occurred before deployment."""
    pax, paxd = joint.p_ax(), joint.p_axd()
    bad = (pax[:, :, None] > 0) & (rule.table > 0) & ~(paxd > 0)
    return [(joint.a_labels[a], joint.x_labels[x], joint.d_labels[d]) for a, x, d in zip(*np.nonzero(bad))]


@dataclass
class PostDistribution:
    table: np.ndarray  # P(y | a), indexed [a, y]
    p_a: np.ndarray
    measures: dict[str, float]
    a_labels: tuple[str, ...]
    y_labels: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "outcome_given_group": {
                a: {y: float(self.table[i, j]) for j, y in enumerate(self.y_labels)} for i, a in enumerate(self.a_labels)
            },
            "measures": self.measures,
        }


def post_outcome_distribution(joint: DiscreteJoint, rule: DecisionRule, groups: Sequence[int] | None = None) -> PostDistribution:
    violations = check_no_unprecedented(joint, rule)
    if violations:
        raise IdentificationError(violations)
    pa = joint.p_a()
    _require_mass(pa, joint.a_labels, groups)
    A, X, D, Y = joint.shape
    paxd = joint.p_axd()
    weights = _post_weights(joint, rule)
    out = np.zeros((A, Y), dtype=joint.table.dtype)
    for a in range(A) if groups is None else groups:
        for x, d in zip(*np.nonzero(weights[a] > 0)):
            # no-unprecedented guarantees paxd > 0 on the post support
            out[a] += joint.table[a, x, d] / paxd[a, x, d] * weights[a, x, d]
    pre = joint.outcome_given_a()
    return PostDistribution(out, pa, inequality_measures(out, pa, pre), joint.a_labels, joint.y_labels)


def oracle_post_distribution(potential: np.ndarray, p_ax: np.ndarray, rule: DecisionRule) -> np.ndarray:
    """Forward computation on the post-deployment graph.

    ``potential[a, x, d]`` is P(Y^d = 1 | a, x) and ``p_ax`` the covariate
    distribution; returns P_post(Y = 1 | a) for every a.
    """
    potential, p_ax = np.asarray(potential), np.asarray(p_ax)
    pa = p_ax.sum(axis=1)
    for a in range(len(pa)):
        if _is_zero(pa[a]):
            raise ConditioningError(f"P(A={a}) = 0")
    px_given_a = p_ax / pa[:, None]
    return (px_given_a * (rule.table * potential).sum(axis=2)).sum(axis=1)


def inequality_measures(dist: np.ndarray, p_a: np.ndarray, pre_dist: np.ndarray | None = None, positive: int = 1) -> dict[str, float]:
    """Overall positive rate and the group-1 minus group-0 gap (binary groups)."""
    dist = np.asarray(dist)
    overall = float(sum(p_a[a] * dist[a, positive] for a in range(len(p_a))) / sum(p_a))
    out = {"overall": overall}
    if dist.shape[0] == 2:
        out["gap"] = float(dist[1, positive]) - float(dist[0, positive])
    if pre_dist is not None:
        pre = inequality_measures(pre_dist, p_a, None, positive)
        out["overall_pre"] = pre["overall"]
        out["overall_delta"] = overall - pre["overall"]
        if "gap" in out:
            out["gap_pre"] = pre["gap"]
            out["gap_delta"] = out["gap"] - pre["gap"]
    return out


@dataclass
class RandomInstance:
    joint: DiscreteJoint
    potential: np.ndarray  # P(Y^d = 1 | a, x), [a, x, d]
    p_ax: np.ndarray
    propensity: np.ndarray  # P_pre(d | a, x)
    rule: DecisionRule


def random_instance(rng: np.random.Generator, max_x: int = 4, max_d: int = 3, n_a: int = 2, sparse_rule: bool = True, zero_propensity: float = 0.0) -> RandomInstance:
    """An SCM-generated pre-deployment joint and a random post rule.

    With ``zero_propensity > 0`` each pre-deployment propensity is zeroed with
    that probability (keeping one arm per cell), which can create
    unprecedented decisions for the rule.
    """
    X, D = int(rng.integers(1, max_x + 1)), int(rng.integers(1, max_d + 1))
    p_ax = rng.dirichlet(np.ones(n_a * X)).reshape(n_a, X)
    prop = rng.dirichlet(np.ones(D), size=(n_a, X))
    if zero_propensity > 0:
        keep = rng.random(prop.shape) >= zero_propensity
        keep[np.arange(n_a)[:, None], np.arange(X)[None, :], rng.integers(0, D, (n_a, X))] = True
        prop = np.where(keep, prop, 0.0)
        prop /= prop.sum(axis=2, keepdims=True)
    potential = rng.random((n_a, X, D))
    cell = p_ax[:, :, None] * prop
    table = np.stack([cell * (1.0 - potential), cell * potential], axis=3)
    rule_t = rng.dirichlet(np.ones(D), size=(n_a, X))
    if sparse_rule:
        mask = rng.random(rule_t.shape) < 0.3
        mask[np.arange(n_a)[:, None], np.arange(X)[None, :], rng.integers(0, D, (n_a, X))] = False
        rule_t = np.where(mask, 0.0, rule_t)
        rule_t /= rule_t.sum(axis=2, keepdims=True)
    return RandomInstance(DiscreteJoint(table), potential, p_ax, prop, DecisionRule(rule_t))


def _bin_codes(values: np.ndarray, bins: int) -> np.ndarray:
    edges = np.unique(np.quantile(values, np.linspace(0, 1, bins + 1)[1:-1]))
    return np.searchsorted(edges, values, side="right")


def joint_from_population(
    pop: Population,
    covariates: Sequence[str],
    bins: int = 4,
    attribute: str = "female",
    outcomes: np.ndarray | None = None,
) -> DiscreteJoint:
    """Empirical joint over (attribute, binned covariates, decision, outcome).

    Binary covariates keep their two values; others are cut into ``bins``
    equal-frequency bins. ``outcomes`` may be probabilities, in which case
    each row contributes fractional mass to both outcome values.
    """
    if pop.decisions is None:
        raise ValueError("decisions are required")
    y = np.asarray(pop.outcomes if outcomes is None else outcomes, dtype=float)
    codes, sizes = [], []
    for name in covariates:
        v = np.asarray(pop.columns[name], dtype=float)
        c = v.astype(np.int64) if np.all(np.isin(v, (0.0, 1.0))) else _bin_codes(v, bins)
        codes.append(c)
        sizes.append(int(c.max()) + 1)
    x = np.ravel_multi_index(codes, sizes) if codes else np.zeros(len(pop), dtype=np.int64)
    n_x = int(np.prod(sizes)) if sizes else 1
    a = np.asarray(pop.columns[attribute], dtype=np.int64)
    table = np.zeros((2, n_x, len(ARM_NAMES), 2))
    np.add.at(table, (a, x, pop.decisions, 1), y)
    np.add.at(table, (a, x, pop.decisions, 0), 1.0 - y)
    table /= table.sum()
    return DiscreteJoint(table, ("0", "1"), None, ARM_NAMES, ("0", "1"))


# structured-text I/O: nested maps keyed by category labels


def joint_to_dict(joint: DiscreteJoint) -> dict:
    t = joint.table
    return {
        "A": list(joint.a_labels),
        "X": list(joint.x_labels),
        "D": list(joint.d_labels),
        "Y": list(joint.y_labels),
        "P": {
            a: {x: {d: {y: float(t[i, j, k, l]) for l, y in enumerate(joint.y_labels)} for k, d in enumerate(joint.d_labels)} for j, x in enumerate(joint.x_labels)}
            for i, a in enumerate(joint.a_labels)
        },
    }


def joint_from_dict(doc: dict) -> DiscreteJoint:
    A, X, D, Y = (tuple(map(str, doc[k])) for k in "AXDY")
    P = doc["P"]
    t = np.zeros((len(A), len(X), len(D), len(Y)))
    for i, a in enumerate(A):
        for j, x in enumerate(X):
            for k, d in enumerate(D):
                for l, y in enumerate(Y):
                    t[i, j, k, l] = float(P.get(a, {}).get(x, {}).get(d, {}).get(y, 0.0))
    return DiscreteJoint(t, A, X, D, Y)


def rule_to_dict(rule: DecisionRule) -> dict:
    t = rule.table
    return {
        "A": list(rule.a_labels),
        "X": list(rule.x_labels),
        "D": list(rule.d_labels),
        "pi": {a: {x: {d: float(t[i, j, k]) for k, d in enumerate(rule.d_labels)} for j, x in enumerate(rule.x_labels)} for i, a in enumerate(rule.a_labels)},
    }


def rule_from_dict(doc: dict) -> DecisionRule:
    A, X, D = (tuple(map(str, doc[k])) for k in "AXD")
    pi = doc["pi"]
    t = np.zeros((len(A), len(X), len(D)))
    for i, a in enumerate(A):
        for j, x in enumerate(X):
            for k, d in enumerate(D):
                t[i, j, k] = float(pi.get(a, {}).get(x, {}).get(d, 0.0))
    return DecisionRule(t, A, X, D)


def identify_files(joint_path: str | Path, rule_path: str | Path) -> dict:
    """Run the audit on JSON inputs and return the output document."""
    joint = joint_from_dict(json.loads(Path(joint_path).read_text()))
    rule = rule_from_dict(json.loads(Path(rule_path).read_text()))
    if (rule.a_labels, rule.x_labels, rule.d_labels) != (joint.a_labels, joint.x_labels, joint.d_labels):
        raise ValueError("rule and joint use different category labels")
    violations = check_no_unprecedented(joint, rule)
    doc: dict = {"violations": [list(v) for v in violations]}
    if not violations:
        doc.update(post_outcome_distribution(joint, rule).to_dict())
    return doc
