"""Writes the report files: LTU tables, curves, metrics, occupancy, scatter data.

All writers are deterministic: fixed row order, fixed float formatting
(4 decimals in the human-facing LTU tables, ``repr`` elsewhere) and LF line
endings, so re-emitting the same results gives byte-identical files.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ARM_NAMES, N_ARMS
from .metrics import MetricTable
from .policy import PolicyResult

LTU_HEADER = ("Policy", "LTU", "Women", "Men", "Gender gap", "Non-Citizens", "Citizen", "Citizen Gap")
GRID_HEADER = ("score_kind", "scheme", "assignment", "multiplier", "overall", "women", "men", "gender_gap", "noncitizen", "citizen", "citizen_gap")
CURVE_HEADER = ("score_kind", "scheme", "assignment", "multiplier", "gender_gap", "citizen_gap", "overall")
METRIC_ROWS = (
    ("Accuracy", "accuracy"),
    ("Precision", "precision"),
    ("Recall", "recall"),
    ("Statistical parity", "statistical_parity"),
    ("Equal opportunity", "equal_opportunity"),
    ("False positive parity", "false_positive_parity"),
    ("Positive predictive parity", "positive_predictive_parity"),
    ("Negative predictive parity", "negative_predictive_parity"),
)
FORMATS = ("csv", "structured-text")


class ReportError(OSError):
    pass


@dataclass
class ReportInputs:
    grid: list[PolicyResult]
    status_quo: PolicyResult
    metrics: dict[str, MetricTable] = field(default_factory=dict)
    risk_vs_po: dict[str, np.ndarray] | None = None  # ids, risk, best_po, best_arm
    ground_truth_grid: list[PolicyResult] = field(default_factory=list)
    ground_truth_status_quo: PolicyResult | None = None
    summary: dict = field(default_factory=dict)


def _full(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _four(v: float) -> str:
    out = f"{float(v):.4f}"
    return "0.0000" if out == "-0.0000" else out


def _policy_label(r: PolicyResult) -> str:
    return "Status quo" if r.score_kind == "status_quo" else f"{r.score_kind} / {r.scheme} / {r.assignment}"


class TableWriter:
    def __init__(self, out: Path, fmt: str):
        if fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        self.out, self.fmt = out, fmt
        self.files: list[dict] = []

    def table(self, stem: str, header: Sequence[str], rows: list[Sequence[str]]) -> None:
        if self.fmt == "csv":
            path = self.out / f"{stem}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                w.writerows(rows)
        else:
            path = self.out / f"{stem}.json"
            path.write_text(json.dumps([dict(zip(header, r)) for r in rows], indent=2) + "\n", encoding="utf-8")
        self.files.append({"path": path.name, "rows": len(rows)})

    def document(self, stem: str, doc: dict) -> None:
        path = self.out / f"{stem}.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
        self.files.append({"path": path.name, "rows": 1})


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def ltu_tables(grid: Sequence[PolicyResult], status_quo: PolicyResult) -> dict[int, list[list[str]]]:
    """One table per capacity multiplier, status quo first, 4 decimals."""
    tables: dict[int, list[list[str]]] = {}
    for m in sorted({r.multiplier for r in grid}):
        rows = [[_policy_label(status_quo), *map(_four, status_quo.ltu_row())]]
        rows += [[_policy_label(r), *map(_four, r.ltu_row())] for r in grid if r.multiplier == m]
        tables[m] = rows
    return tables


def grid_rows(grid: Sequence[PolicyResult]) -> list[list[str]]:
    return [[r.score_kind, r.scheme, r.assignment, str(r.multiplier), *map(_full, r.ltu_row())] for r in grid]


def emit_report(inputs: ReportInputs, out_dir: str | Path, fmt: str = "csv") -> dict:
    """Write every report file into ``out_dir`` and return the manifest."""
    if not inputs.grid:
        raise ValueError("no results to report")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ReportError(f"output directory {out} is not writable: {exc}") from exc

    w = TableWriter(out, fmt)
    for m, rows in ltu_tables(inputs.grid, inputs.status_quo).items():
        w.table(f"ltu_table_x{m}", LTU_HEADER, rows)
    w.table("grid", GRID_HEADER, grid_rows(inputs.grid))
    w.table(
        "curve",
        CURVE_HEADER,
        [[r.score_kind, r.scheme, r.assignment, str(r.multiplier), _full(r.gender_gap), _full(r.citizen_gap), _full(r.overall)] for r in inputs.grid],
    )
    occ = [["status_quo", "", "", "0", *(_full(float(v)) for v in inputs.status_quo.occupancy)]]
    occ += [[r.score_kind, r.scheme, r.assignment, str(r.multiplier), *(_full(float(v)) for v in r.occupancy)] for r in inputs.grid]
    w.table("occupancy", ("score_kind", "scheme", "assignment", "multiplier", *ARM_NAMES), occ)

    reps = [
        [r.score_kind, r.scheme, r.assignment, str(r.multiplier), str(k), *map(_full, rep.ltu_row())]
        for r in inputs.grid
        for k, rep in enumerate(r.repetitions)
    ]
    if reps:
        w.table("random_repetitions", (*GRID_HEADER[:4], "repetition", *GRID_HEADER[4:]), reps)

    if inputs.ground_truth_grid:
        sq = inputs.ground_truth_status_quo or inputs.status_quo
        for m, rows in ltu_tables(inputs.ground_truth_grid, sq).items():
            w.table(f"ltu_table_x{m}_ground_truth", LTU_HEADER, rows)
        w.table("grid_ground_truth", GRID_HEADER, grid_rows(inputs.ground_truth_grid))

    if inputs.metrics:
        kinds = list(inputs.metrics)
        w.table(
            "metrics",
            ("Metric", *kinds),
            [[label, *(_full(getattr(inputs.metrics[k], attr)) for k in kinds)] for label, attr in METRIC_ROWS],
        )
        w.table(
            "confusion",
            ("score_kind", "tp", "fp", "tn", "fn"),
            [[k, *(str(getattr(inputs.metrics[k], c)) for c in ("tp", "fp", "tn", "fn"))] for k in kinds],
        )
        cal = []
        for k in kinds:
            for group, rates in (("women", inputs.metrics[k].women), ("men", inputs.metrics[k].men)):
                cal.append([k, group, _full(rates.mean_score), _full(rates.base_rate)])
        w.table("calibration", ("score_kind", "group", "mean_score", "base_rate"), cal)

    if inputs.risk_vs_po is not None:
        d = inputs.risk_vs_po
        rows = [[str(int(i)), _full(float(r)), _full(float(p)), ARM_NAMES[int(a)]] for i, r, p, a in zip(d["ids"], d["risk"], d["best_po"], d["best_arm"])]
        w.table("risk_vs_optimal_po", ("id", "risk_score", "optimal_po", "optimal_arm"), rows)

    summary = dict(inputs.summary)
    summary["status_quo"] = dict(zip(PolicyResult.LTU_COLUMNS, inputs.status_quo.ltu_row()))
    summary["status_quo_source"] = inputs.status_quo.source
    summary["cells"] = len(inputs.grid)
    w.document("summary", summary)

    manifest = {"format": fmt, "files": w.files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest


def read_grid(path: str | Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def occupancy_capacity_check(grid: Sequence[PolicyResult], base_counts: np.ndarray) -> bool:
    """True iff every cell respects its seats on every active arm."""
    base = np.asarray(base_counts)
    return all(np.all(r.occupancy[1:N_ARMS] <= base[1:N_ARMS] * r.multiplier + 1e-9) for r in grid)
