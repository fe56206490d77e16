"""Priority lists, capacity-constrained program assignment and policy evaluation.

Assignment walks the priority list once. Instead of a per-person Python loop
it proceeds in phases: with the current set of open arms every remaining
person's choice is computed at once, the longest prefix that fits into the
remaining seats is committed, ending where some arm takes its last seat.
Each phase closes at least one arm, so there are at most seven phases.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .causal import IapoTable
from .core import ARM_NAMES, N_ARMS, Population
from .synth import GroundTruth

SCHEMES = ("belgian", "austrian")
ASSIGNMENT_KINDS = ("optimal", "random")
MULTIPLIERS = (1, 2, 3, 4, 5)
SCORE_KINDS = ("none", "stat_parity", "equal_opportunity")
DEFAULT_REPETITIONS = 10
BAND = (30.0, 70.0)


def nearest_rank(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct*n/100)-th smallest value (1-based)."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("percentile of an empty vector")
    k = max(math.ceil(pct * v.size / 100.0), 1)
    return float(v[min(k, v.size) - 1])


def cell_seed(master: int, label: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([master, zlib.crc32(label.encode())])


@dataclass(frozen=True)
class PriorityList:
    ordering: np.ndarray
    scheme: str
    band: tuple[float, float] = BAND
    band_size: int | None = None

    def __post_init__(self) -> None:
        o = np.asarray(self.ordering)
        if not np.array_equal(np.sort(o), np.arange(o.size)):
            raise ValueError("ordering is not a permutation")

    def __len__(self) -> int:
        return len(self.ordering)


def _descending(ids: np.ndarray, scores: np.ndarray) -> np.ndarray:
    # lexsort keys are last-major: score descending, then id ascending
    return ids[np.lexsort((ids, -scores[ids]))]


def prioritize(scores, scheme: str = "belgian", seed: int | np.random.SeedSequence = 0, band: tuple[float, float] = BAND) -> PriorityList:
    s = np.asarray(scores, dtype=float)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    ids = np.arange(s.size)
    if scheme == "belgian":
        return PriorityList(_descending(ids, s), scheme, band)
    if scheme != "austrian":
        raise ValueError(f"unknown scheme {scheme!r}")
    lo, hi = nearest_rank(s, band[0]), nearest_rank(s, band[1])
    inside = (s >= lo) & (s < hi)
    head = _descending(ids[inside], s)
    tail = np.random.default_rng(seed).permutation(ids[~inside])
    return PriorityList(np.concatenate([head, tail]), scheme, band, int(inside.sum()))


@dataclass(frozen=True)
class CapacityPlan:
    seats: np.ndarray  # length 7; entry 0 (no_program) is ignored and unbounded
    multiplier: int = 1

    def __post_init__(self) -> None:
        seats = np.asarray(self.seats, dtype=np.int64)
        if seats.shape != (N_ARMS,) or np.any(seats[1:] < 0):
            raise ValueError("capacities must be 7 non-negative counts")

    @classmethod
    def from_decisions(cls, decisions: np.ndarray, multiplier: int = 1) -> "CapacityPlan":
        base = np.bincount(np.asarray(decisions, dtype=np.int64), minlength=N_ARMS)
        seats = base * int(multiplier)
        seats[0] = 0
        return cls(seats, int(multiplier))

    def remaining(self) -> np.ndarray:
        r = np.asarray(self.seats, dtype=float).copy()
        r[0] = np.inf
        return r


@dataclass
class Assignment:
    arms: np.ndarray  # per individual (row of the outcome table)
    plan: CapacityPlan
    kind: str = "optimal"

    @property
    def occupancy(self) -> np.ndarray:
        return np.bincount(self.arms, minlength=N_ARMS)


def _run_phases(order: np.ndarray, values: np.ndarray, remaining: np.ndarray, draws: np.ndarray | None) -> np.ndarray:
    n = order.size
    V = values[order]
    arms_in_order = np.empty(n, dtype=np.int64)
    start = 0
    while start < n:
        open_arms = remaining > 0
        if draws is None:
            choice = np.argmin(np.where(open_arms, V[start:], np.inf), axis=1)
        else:
            open_idx = np.flatnonzero(open_arms)
            pick = np.minimum((draws[start:] * open_idx.size).astype(np.int64), open_idx.size - 1)
            choice = open_idx[pick]
        stop = n - start
        for arm in np.flatnonzero(np.isfinite(remaining) & open_arms):
            takers = np.flatnonzero(choice == arm)
            seats = int(remaining[arm])
            if takers.size >= seats:
                # the arm closes after its last seat; later random draws see fewer options
                stop = min(stop, int(takers[seats - 1]) + 1)
        committed = choice[:stop]
        arms_in_order[start : start + stop] = committed
        remaining -= np.bincount(committed, minlength=N_ARMS)
        start += stop
    out = np.empty(n, dtype=np.int64)
    out[order] = arms_in_order
    return out


def assign(
    plist: PriorityList,
    iapo: IapoTable,
    plan: CapacityPlan,
    kind: str = "optimal",
    seed: int | np.random.SeedSequence = 0,
    repetitions: int = DEFAULT_REPETITIONS,
) -> Assignment | list[Assignment]:
    """Greedy walk down the priority list.

    ``optimal`` gives each person the open arm with the lowest estimated
    outcome (ties to the lower arm index). ``random`` draws uniformly among
    the open arms and returns one assignment per repetition.
    """
    values = np.asarray(iapo.values, dtype=float)
    if values.shape != (len(plist), N_ARMS):
        raise ValueError("IAPO table must cover every individual on the list")
    order = np.asarray(plist.ordering, dtype=np.int64)
    if kind == "optimal":
        return Assignment(_run_phases(order, values, plan.remaining(), None), plan, kind)
    if kind != "random":
        raise ValueError(f"unknown assignment kind {kind!r}")
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    # copy so that spawning never mutates a caller's SeedSequence
    root = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key) if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    out = []
    for child in root.spawn(repetitions):
        draws = np.random.default_rng(child).random(order.size)
        out.append(Assignment(_run_phases(order, values, plan.remaining(), draws), plan, kind))
    return out


@dataclass
class PolicyResult:
    overall: float
    women: float
    men: float
    gender_gap: float
    noncitizen: float
    citizen: float
    citizen_gap: float
    occupancy: np.ndarray
    score_kind: str = "status_quo"
    scheme: str = ""
    assignment: str = ""
    multiplier: int = 0
    source: str = "estimated"
    repetitions: list["PolicyResult"] = field(default_factory=list)

    LTU_COLUMNS = ("overall", "women", "men", "gender_gap", "noncitizen", "citizen", "citizen_gap")

    def ltu_row(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in self.LTU_COLUMNS)

    @property
    def label(self) -> str:
        if self.score_kind == "status_quo":
            return "status_quo"
        return f"{self.score_kind}/{self.scheme}/{self.assignment}/x{self.multiplier}"


def _outcome_values(table: IapoTable | GroundTruth | np.ndarray) -> tuple[np.ndarray, str]:
    if isinstance(table, GroundTruth):
        return np.asarray(table.po_table, dtype=float), "ground_truth"
    if isinstance(table, IapoTable):
        return np.asarray(table.values, dtype=float), "estimated"
    return np.asarray(table, dtype=float), "estimated"


def summarize(risk: np.ndarray, female: np.ndarray, non_citizen: np.ndarray) -> dict[str, float]:
    female, non_citizen = np.asarray(female) == 1, np.asarray(non_citizen) == 1
    women, men = float(risk[female].mean()), float(risk[~female].mean())
    nc, cit = float(risk[non_citizen].mean()), float(risk[~non_citizen].mean())
    return {
        "overall": float(risk.mean()),
        "women": women,
        "men": men,
        "gender_gap": women - men,
        "noncitizen": nc,
        "citizen": cit,
        "citizen_gap": nc - cit,
    }


def evaluate(
    assigned: Assignment | Sequence[Assignment],
    table: IapoTable | GroundTruth | np.ndarray,
    pop: Population,
    source: str | None = None,
    **labels,
) -> PolicyResult:
    """Individual post-deployment risk is the table entry at the assigned arm.

    A list of assignments (random repetitions) is evaluated one by one and
    the summaries are averaged; the per-repetition results are kept.
    """
    values, inferred = _outcome_values(table)
    source = source or inferred
    female, nc = pop.columns["female"], pop.columns["non_citizen"]
    if isinstance(assigned, Assignment):
        risk = values[np.arange(len(values)), assigned.arms]
        return PolicyResult(**summarize(risk, female, nc), occupancy=assigned.occupancy.astype(float), source=source, **labels)
    reps = [evaluate(a, values, pop, source, **labels) for a in assigned]
    if not reps:
        raise ValueError("no assignments to evaluate")
    mean = {c: float(np.mean([getattr(r, c) for r in reps])) for c in PolicyResult.LTU_COLUMNS}
    occupancy = np.mean([r.occupancy for r in reps], axis=0)
    return PolicyResult(**mean, occupancy=occupancy, source=source, repetitions=reps, **labels)


def status_quo(pop: Population, table: IapoTable | GroundTruth | np.ndarray | None = None) -> PolicyResult:
    """Observed decisions; evaluated on ``table`` if given, else on observed outcomes."""
    if pop.decisions is None:
        raise ValueError("status quo needs observed decisions")
    occupancy = np.bincount(pop.decisions, minlength=N_ARMS).astype(float)
    if table is None:
        risk, source = np.asarray(pop.outcomes, dtype=float), "observed"
    else:
        values, source = _outcome_values(table)
        risk = values[np.arange(len(values)), pop.decisions]
    return PolicyResult(**summarize(risk, pop.columns["female"], pop.columns["non_citizen"]), occupancy=occupancy, source=source)


def run_grid(
    pop: Population,
    scores: dict[str, np.ndarray],
    iapo: IapoTable,
    multipliers: Iterable[int] = MULTIPLIERS,
    schemes: Iterable[str] = SCHEMES,
    kinds: Iterable[str] = ASSIGNMENT_KINDS,
    repetitions: int = DEFAULT_REPETITIONS,
    seed: int = 0,
    outcome_table: IapoTable | GroundTruth | None = None,
) -> list[PolicyResult]:
    """One PolicyResult per (score kind, scheme, assignment kind, multiplier).

    Every random draw comes from a seed derived from the master seed and the
    cell label, so any single cell can be recomputed on its own.
    """
    if pop.decisions is None:
        raise ValueError("capacities are derived from observed decisions")
    table = iapo if outcome_table is None else outcome_table
    multipliers, schemes, kinds = list(multipliers), list(schemes), list(kinds)
    results = []
    for score_kind, s in scores.items():
        if len(s) != len(pop):
            raise ValueError(f"score vector '{score_kind}' does not match the population")
        for scheme in schemes:
            plist = prioritize(s, scheme, cell_seed(seed, f"{score_kind}/{scheme}"))
            for kind in kinds:
                for m in multipliers:
                    plan = CapacityPlan.from_decisions(pop.decisions, m)
                    labels = dict(score_kind=score_kind, scheme=scheme, assignment=kind, multiplier=int(m))
                    a = assign(plist, iapo, plan, kind, cell_seed(seed, f"{score_kind}/{scheme}/{kind}/x{m}"), repetitions)
                    results.append(evaluate(a, table, pop, **labels))
    return results


def occupancy_rows(results: Sequence[PolicyResult]) -> list[dict]:
    rows = []
    for r in results:
        row = {"cell": r.label}
        row.update({ARM_NAMES[d]: float(r.occupancy[d]) for d in range(N_ARMS)})
        rows.append(row)
    return rows

