"""End-to-end orchestration: data, causal stage, risk scores, policy grid, report."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, TypeVar

import numpy as np

from .causal import CausalFit, IapoTable, ate_summary, estimate_iapos
from .core import ARM_NAMES, N_ARMS, Population, SplitSpec, load_population, train_test_split
from .metrics import UndefinedMetricError, classification_metrics, independence_gap, spearman
from .policy import ASSIGNMENT_KINDS, MULTIPLIERS, SCHEMES, PolicyResult, run_grid, status_quo
from .report import ReportInputs, emit_report
from .risk import DEFAULT_EPS, DEFAULT_LAMBDA_GRID, KINDS, RiskModel, classify, fit_all, predict_risk
from .synth import GroundTruth, ScmConfig, default_config, generate_population

T = TypeVar("T")

DEFAULT_N = 64_296  # two halves of 32,148
SCORE_COLUMNS = {"none": "score_none", "stat_parity": "score_sp", "equal_opportunity": "score_eo"}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class PipelineConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    seed: int = 2003
    n: int = DEFAULT_N
    dataset: str | None = None
    scm: dict = field(default_factory=dict)  # overrides on the calibrated generator config
    split_fraction: float = 0.5
    lambda_grid: list[float] = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    eps: float = DEFAULT_EPS
    constraints: list[str] = field(default_factory=lambda: list(KINDS))
    multipliers: list[int] = field(default_factory=lambda: list(MULTIPLIERS))
    schemes: list[str] = field(default_factory=lambda: list(SCHEMES))
    assignment_kinds: list[str] = field(default_factory=lambda: list(ASSIGNMENT_KINDS))
    repetitions: int = 10
    ground_truth: bool = True
    out: str = "out"
    format: str = "csv"
    threads: int | None = None

    def validate(self) -> None:
        problems = []
        if self.dataset is None and self.n < 4:
            problems.append("n must be at least 4")
        if not 0 < self.split_fraction < 1:
            problems.append("split_fraction must lie in (0, 1)")
        if not 0 < self.eps <= 1:
            problems.append("eps must lie in (0, 1]")
        if not self.lambda_grid or min(self.lambda_grid) < 0:
            problems.append("lambda_grid must be non-empty and non-negative")
        if not self.constraints or set(self.constraints) - set(KINDS):
            problems.append(f"constraints must be a non-empty subset of {KINDS}")
        if not self.multipliers or min(self.multipliers) < 0:
            problems.append("multipliers must be non-negative integers")
        if not self.schemes or set(self.schemes) - set(SCHEMES):
            problems.append(f"schemes must be a non-empty subset of {SCHEMES}")
        if not self.assignment_kinds or set(self.assignment_kinds) - set(ASSIGNMENT_KINDS):
            problems.append(f"assignment_kinds must be a non-empty subset of {ASSIGNMENT_KINDS}")
        if self.repetitions < 1:
            problems.append("repetitions must be positive")
        if self.format not in ("csv", "structured-text"):
            problems.append("format must be csv or structured-text")
        if problems:
            raise PipelineConfigError("; ".join(problems))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise PipelineConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def scm_config(self) -> ScmConfig:
        base = default_config().to_dict()
        base.update(self.scm)
        base["n"], base["seed"] = self.n, self.seed
        return ScmConfig(**base)


@dataclass
class PipelineRun:
    config: PipelineConfig
    population: Population
    truth: GroundTruth | None
    split: SplitSpec
    causal: CausalFit
    models: dict[str, RiskModel]
    test: Population
    test_iapo: IapoTable
    test_scores: dict[str, np.ndarray]
    grid: list[PolicyResult]
    status_quo: PolicyResult
    ground_truth_grid: list[PolicyResult]
    manifest: dict


def _stage(name: str, fn: Callable[[], T]) -> T:
    try:
        return fn()
    except StageError:
        raise
    except Exception as exc:  # every failure is re-raised tagged with its stage
        raise StageError(name, exc) from exc


def _optional_spearman(x: np.ndarray, y: np.ndarray) -> float | None:
    try:
        return spearman(x, y)
    except UndefinedMetricError:
        # tiny samples can leave a sparse arm with a single-leaf forest whose constant is everyone's minimum
        return None


def run_pipeline(config: PipelineConfig) -> PipelineRun:
    """Data -> IAPOs -> risk scores -> policy grid -> report files."""
    _stage("config", config.validate)

    def data():
        if config.dataset:
            return load_population(config.dataset), None
        return generate_population(config.scm_config())

    pop, truth = _stage("data", data)
    split = _stage("split", lambda: train_test_split(pop, config.split_fraction, config.seed))
    causal = _stage("causal", lambda: estimate_iapos(pop, split, seed=config.seed, n_jobs=config.threads))
    train, test = pop.subset(split.train_ids), pop.subset(split.test_ids)
    models = _stage("risk", lambda: fit_all(train, config.eps, config.lambda_grid, config.constraints, config.seed))
    test_scores = {k: predict_risk(m, test) for k, m in models.items()}
    test_iapo = causal.iapo.subset(split.test_ids)

    def simulate():
        kw = dict(
            multipliers=config.multipliers,
            schemes=config.schemes,
            kinds=config.assignment_kinds,
            repetitions=config.repetitions,
            seed=config.seed,
        )
        grid = run_grid(test, test_scores, test_iapo, **kw)
        gt_grid = []
        if config.ground_truth and truth is not None:
            gt_grid = run_grid(test, test_scores, test_iapo, outcome_table=truth.subset(split.test_ids), **kw)
        return grid, gt_grid

    grid, gt_grid = _stage("simulate", simulate)
    sq = status_quo(test, test_iapo)

    def report():
        metrics = {k: classification_metrics(classify(s), test.outcomes, test.columns["female"], s) for k, s in test_scores.items()}
        best_arm = np.argmin(test_iapo.values, axis=1)
        best_po = test_iapo.values[np.arange(len(test)), best_arm]
        risk = test_scores[config.constraints[0]]
        female = test.columns["female"]
        summary = {
            "config": {k: v for k, v in config.to_dict().items() if k not in ("out", "threads")},
            "ate": ate_summary(causal.scores),
            "risk_models": {k: m.summary() for k, m in models.items()},
            "spearman_risk_vs_optimal_po": _optional_spearman(risk, best_po),
            "status_quo_observed": dict(zip(PolicyResult.LTU_COLUMNS, status_quo(test).ltu_row())),
            "sufficiency_gap_pre": {k: independence_gap(s, test.outcomes, female).value for k, s in test_scores.items()},
            "separation_gap_pre": {k: independence_gap(s, test.outcomes, female, "separation").value for k, s in test_scores.items()},
        }
        inputs = ReportInputs(
            grid=grid,
            status_quo=sq,
            metrics=metrics,
            risk_vs_po={"ids": split.test_ids, "risk": risk, "best_po": best_po, "best_arm": best_arm},
            ground_truth_grid=gt_grid,
            ground_truth_status_quo=status_quo(test, truth.subset(split.test_ids)) if gt_grid else None,
            summary=summary,
        )
        return emit_report(inputs, config.out, config.format)

    manifest = _stage("report", report)
    return PipelineRun(config, pop, truth, split, causal, models, test, test_iapo, test_scores, grid, sq, gt_grid, manifest)


# CSV helpers used by the CLI subcommands


def write_iapo(iapo: IapoTable, ids: np.ndarray, path: str | Path) -> Path:
    path = Path(path)
    header = ["id", *(f"iapo_{a}" for a in ARM_NAMES), *(f"iate_{a}" for a in ARM_NAMES[1:])]
    v = iapo.values
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, row in zip(ids, v):
            w.writerow([int(i), *(repr(float(x)) for x in row), *(repr(float(row[d] - row[0])) for d in range(1, N_ARMS))])
    return path


def read_iapo(path: str | Path) -> tuple[np.ndarray, IapoTable]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    ids = data[:, 0].astype(np.int64)
    return ids, IapoTable(data[:, 1 : 1 + N_ARMS], ids)


def write_scores(ids: np.ndarray, scores: dict[str, np.ndarray], path: str | Path) -> Path:
    path = Path(path)
    kinds = [k for k in KINDS if k in scores]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *(SCORE_COLUMNS[k] for k in kinds)])
        for j, i in enumerate(ids):
            w.writerow([int(i), *(repr(float(scores[k][j])) for k in kinds)])
    return path


def read_scores(path: str | Path) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = np.array([int(r["id"]) for r in rows], dtype=np.int64)
    inverse = {v: k for k, v in SCORE_COLUMNS.items()}
    cols = [c for c in (rows[0].keys() if rows else []) if c in inverse]
    return ids, {inverse[c]: np.array([float(r[c]) for r in rows]) for c in cols}
