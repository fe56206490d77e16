"""Shared data model: records, populations, splits, and the CSV dataset format."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np


class Program(IntEnum):
    NO_PROGRAM = 0
    VOCATIONAL = 1
    COMPUTER = 2
    LANGUAGE = 3
    JOB_SEARCH = 4
    EMPLOYMENT = 5
    PERSONALITY = 6

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: str | int) -> "Program":
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        text = str(value).strip()
        if text.lstrip("-").isdigit():
            return cls(int(text))
        return cls[text.upper()]


ARMS: tuple[Program, ...] = tuple(Program)
ARM_NAMES: tuple[str, ...] = tuple(p.label for p in Program)
ACTIVE_ARMS: tuple[Program, ...] = ARMS[1:]
N_ARMS = len(ARMS)

CORE_COLUMNS: tuple[str, ...] = (
    "female",
    "non_citizen",
    "age",
    "married",
    "past_income",
    "employability",
    "emp_frac_2y",
    "ue_spells_2y",
)
BINARY_COLUMNS = ("female", "non_citizen", "married")
AGE_BOUNDS = (24.0, 55.0)


class SchemaError(ValueError):
    """A required column is missing from a dataset."""


class ParseError(ValueError):
    """A cell could not be parsed as a number."""


class ValidationError(ValueError):
    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        first = violations[0]
        more = f" (+{len(violations) - 1} more)" if len(violations) > 1 else ""
        super().__init__(f"row {first.row}, field {first.field}: {first.reason}{more}")


class SizeError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    row: int
    field: str
    reason: str


@dataclass(frozen=True)
class IndividualRecord:
    id: int
    female: int
    non_citizen: int
    age: float
    married: int
    past_income: float
    employability: int
    emp_frac_2y: float
    ue_spells_2y: int
    extra: Mapping[str, float] = field(default_factory=dict)


@dataclass
class Population:
    """Columnar table of individuals.

    ``columns`` holds the core covariates (and any extra numeric covariates)
    as 1-d arrays of equal length. ``decisions`` holds observed program codes
    and ``outcomes`` the observed long-term unemployment indicator; either may
    be ``None`` when unobserved.
    """

    columns: dict[str, np.ndarray]
    decisions: np.ndarray | None = None
    outcomes: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.columns = {k: np.asarray(v) for k, v in self.columns.items()}
        lengths = {len(v) for v in self.columns.values()}
        if self.decisions is not None:
            self.decisions = np.asarray(self.decisions, dtype=np.int64)
            lengths.add(len(self.decisions))
        if self.outcomes is not None:
            self.outcomes = np.asarray(self.outcomes)
            lengths.add(len(self.outcomes))
        if len(lengths) > 1:
            raise SizeError(f"parallel sequences differ in length: {sorted(lengths)}")

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    @property
    def ids(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def extra_columns(self) -> list[str]:
        return [c for c in self.columns if c not in CORE_COLUMNS]

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def subset(self, ids: Sequence[int] | np.ndarray) -> "Population":
        idx = np.asarray(ids, dtype=np.int64)
        return Population(
            {k: v[idx] for k, v in self.columns.items()},
            None if self.decisions is None else self.decisions[idx],
            None if self.outcomes is None else self.outcomes[idx],
        )

    def records(self) -> Iterator[IndividualRecord]:
        extras = self.extra_columns
        for i in range(len(self)):
            yield IndividualRecord(
                id=i,
                female=int(self.columns["female"][i]),
                non_citizen=int(self.columns["non_citizen"][i]),
                age=float(self.columns["age"][i]),
                married=int(self.columns["married"][i]),
                past_income=float(self.columns["past_income"][i]),
                employability=int(self.columns["employability"][i]),
                emp_frac_2y=float(self.columns["emp_frac_2y"][i]),
                ue_spells_2y=int(self.columns["ue_spells_2y"][i]),
                extra={c: float(self.columns[c][i]) for c in extras},
            )

    @classmethod
    def from_records(
        cls,
        records: Sequence[IndividualRecord],
        decisions: Sequence[int] | None = None,
        outcomes: Sequence[int] | None = None,
    ) -> "Population":
        columns = {c: np.array([getattr(r, c) for r in records]) for c in CORE_COLUMNS}
        extra_names = sorted({k for r in records for k in r.extra})
        for name in extra_names:
            columns[name] = np.array([r.extra.get(name, np.nan) for r in records], dtype=float)
        return cls(columns, decisions, outcomes)


@dataclass(frozen=True)
class SplitSpec:
    train_ids: np.ndarray
    test_ids: np.ndarray

    def folds(self) -> list[np.ndarray]:
        return [self.train_ids, self.test_ids]


def validate_population(pop: Population) -> list[Violation]:
    """Return every invariant violation as (row, field, reason); never raises."""
    out: list[Violation] = []
    n = len(pop)

    def flag(mask: np.ndarray, name: str, reason: str) -> None:
        for row in np.flatnonzero(mask):
            out.append(Violation(int(row), name, reason))

    def numeric(name: str) -> np.ndarray | None:
        try:
            arr = np.asarray(pop.columns[name], dtype=float)
        except (KeyError, TypeError, ValueError):
            out.append(Violation(-1, name, "missing or non-numeric column"))
            return None
        if arr.shape != (n,):
            out.append(Violation(-1, name, "wrong shape"))
            return None
        flag(~np.isfinite(arr), name, "not finite")
        return arr

    for name in CORE_COLUMNS:
        arr = numeric(name)
        if arr is None:
            continue
        finite = np.isfinite(arr)
        with np.errstate(invalid="ignore"):
            if name in BINARY_COLUMNS:
                flag(finite & ~np.isin(arr, (0.0, 1.0)), name, "not binary")
            elif name == "age":
                flag(finite & ((arr < AGE_BOUNDS[0]) | (arr > AGE_BOUNDS[1])), name, "outside [24,55]")
            elif name == "past_income":
                flag(finite & (arr < 0), name, "negative")
            elif name == "employability":
                flag(finite & ~np.isin(arr, (1.0, 2.0, 3.0)), name, "not in {1,2,3}")
            elif name == "emp_frac_2y":
                flag(finite & ((arr < 0) | (arr > 1)), name, "outside [0,1]")
            elif name == "ue_spells_2y":
                flag(finite & ((arr < 0) | (arr != np.floor(arr))), name, "not a count")
    for name in pop.extra_columns:
        numeric(name)

    if pop.decisions is not None:
        d = np.asarray(pop.decisions)
        flag((d < 0) | (d >= len(Program)), "decision", "unknown program")
    if pop.outcomes is not None:
        try:
            y = np.asarray(pop.outcomes, dtype=float)
            flag(~np.isin(y, (0.0, 1.0)), "outcome", "not binary")
        except (TypeError, ValueError):
            out.append(Violation(-1, "outcome", "non-numeric"))
    out.sort(key=lambda v: (v.row, v.field))
    return out


def load_population(path: str | Path, schema: Mapping[str, str] | None = None) -> Population:
    """Read a dataset CSV.

    ``schema`` maps canonical column names to the names used in the file
    header; unmapped names are looked up verbatim. Columns other than the
    core covariates, ``id``, ``decision`` and ``outcome`` become extra
    covariates. Row order is preserved and ids are reassigned ``0..n-1``.
    """
    schema = dict(schema or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        rows = list(reader)

    position = {name: i for i, name in enumerate(header)}
    file_name = {c: schema.get(c, c) for c in (*CORE_COLUMNS, "id", "decision", "outcome")}
    for col in CORE_COLUMNS:
        if file_name[col] not in position:
            raise SchemaError(f"missing required column '{col}'")
    reserved = set(file_name.values())
    extras = [h for h in header if h not in reserved]

    def parse_float(row_idx: int, col: str, text: str) -> float:
        try:
            return float(text)
        except ValueError:
            raise ParseError(f"row {row_idx}: column '{col}' has non-numeric value {text!r}") from None

    n = len(rows)
    columns: dict[str, np.ndarray] = {}
    for col in (*CORE_COLUMNS, *extras):
        src = position[file_name.get(col, col)]
        values = np.empty(n, dtype=float)
        for r, row in enumerate(rows):
            if src >= len(row):
                raise ParseError(f"row {r}: too few fields")
            values[r] = parse_float(r, col, row[src])
        columns[col] = values

    decisions = None
    if file_name["decision"] in position:
        src = position[file_name["decision"]]
        decisions = np.empty(n, dtype=np.int64)
        for r, row in enumerate(rows):
            try:
                decisions[r] = Program.parse(row[src])
            except (KeyError, ValueError):
                raise ParseError(f"row {r}: unknown decision {row[src]!r}") from None
    outcomes = None
    if file_name["outcome"] in position:
        src = position[file_name["outcome"]]
        outcomes = np.array([parse_float(r, "outcome", row[src]) for r, row in enumerate(rows)])

    for col in ("female", "non_citizen", "married", "employability", "ue_spells_2y"):
        vals = columns[col]
        if np.all(vals == np.round(vals)):
            columns[col] = vals.astype(np.int64)
    if outcomes is not None and np.all(np.isin(outcomes, (0.0, 1.0))):
        outcomes = outcomes.astype(np.int64)

    pop = Population(columns, decisions, outcomes)
    violations = validate_population(pop)
    if violations:
        raise ValidationError(violations)
    return pop


def _fmt(value) -> str:
    if isinstance(value, (np.integer, int)):
        return str(int(value))
    return repr(float(value))


def write_population(pop: Population, path: str | Path) -> Path:
    """Write ``pop`` in the dataset CSV format (round-trips through load_population)."""
    path = Path(path)
    extras = pop.extra_columns
    header = ["id", *CORE_COLUMNS, *extras]
    if pop.decisions is not None:
        header.append("decision")
    if pop.outcomes is not None:
        header.append("outcome")
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(pop)):
            row = [str(i)]
            row += [_fmt(pop.columns[c][i]) for c in (*CORE_COLUMNS, *extras)]
            if pop.decisions is not None:
                row.append(Program(int(pop.decisions[i])).label)
            if pop.outcomes is not None:
                row.append(_fmt(pop.outcomes[i]))
            writer.writerow(row)
    return path


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def train_test_split(pop: Population, fraction: float = 0.5, seed: int = 0) -> SplitSpec:
    """Seeded split with ``round(fraction * n)`` training ids.

    When decisions are observed the split is stratified by (female, decision)
    and every stratum with at least two members lands in both halves.
    """
    n = len(pop)
    if n < 2:
        raise SizeError(f"need at least 2 individuals to split, got {n}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0,1), got {fraction}")
    rng = np.random.default_rng(seed)
    target = min(max(_round_half_up(fraction * n), 1), n - 1)

    if pop.decisions is None:
        perm = rng.permutation(n)
        return SplitSpec(np.sort(perm[:target]), np.sort(perm[target:]))

    keys = np.asarray(pop.columns["female"], dtype=np.int64) * len(Program) + pop.decisions
    strata = [np.flatnonzero(keys == k) for k in np.unique(keys)]
    sizes = np.array([len(s) for s in strata])
    raw = fraction * sizes
    quota = np.floor(raw).astype(np.int64)
    lo = np.where(sizes >= 2, 1, 0)
    hi = np.where(sizes >= 2, sizes - 1, sizes)
    quota = np.clip(quota, lo, hi)
    remainder = raw - quota
    # hand out (or take back) seats by largest (smallest) remainder, stable by stratum order
    while quota.sum() < target:
        room = np.flatnonzero(quota < hi)
        if room.size == 0:
            hi = sizes
            continue
        pick = room[np.argmax(remainder[room])]
        quota[pick] += 1
        remainder[pick] -= 1
    while quota.sum() > target:
        room = np.flatnonzero(quota > lo)
        if room.size == 0:
            lo = np.zeros_like(lo)
            continue
        pick = room[np.argmin(remainder[room])]
        quota[pick] -= 1
        remainder[pick] += 1

    train = []
    for members, q in zip(strata, quota):
        train.append(rng.permutation(members)[:q])
    train_ids = np.sort(np.concatenate(train))
    test_ids = np.setdiff1d(np.arange(n), train_ids)
    return SplitSpec(train_ids, test_ids)
