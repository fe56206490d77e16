"""Command-line interface: ``prospective <subcommand> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import identification, pipeline
from .causal import ate_summary, estimate_iapos
from .core import ARM_NAMES, Population, load_population, train_test_split, write_population
from .metrics import classification_metrics
from .policy import ASSIGNMENT_KINDS, SCHEMES, run_grid, status_quo
from .report import GRID_HEADER, ReportInputs, TableWriter, emit_report, grid_rows
from .risk import DEFAULT_EPS, KINDS, classify, fit_all, predict_risk
from .synth import ScmConfig, default_config, generate_population, read_ground_truth, write_ground_truth


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=d(None), help="master seed (default: 2003)")
    parser.add_argument("--config", default=d(None), help="JSON config document")
    parser.add_argument("--out", default=d("out"), help="output directory")
    parser.add_argument("--threads", type=int, default=d(None), help="worker threads for forest fitting")


def _multipliers(text: str) -> list[int]:
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(t) for t in text.split(",") if t]


def _csv_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prospective", description="Forecast outcome distributions under algorithmic allocation policies.")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    p = command("synth", "generate a synthetic population with ground truth")
    p.add_argument("--n", type=int, default=None, help="population size (default 32148)")

    for name, text in (("fit-causal", "estimate IAPOs, IATEs and ATEs"), ("fit-risk", "fit risk scores")):
        p = command(name, text)
        p.add_argument("--data", required=True, help="population CSV")
        p.add_argument("--split-fraction", type=float, default=0.5)
        if name == "fit-risk":
            p.add_argument("--eps", type=float, default=DEFAULT_EPS)
            p.add_argument("--constraints", type=_csv_list, default=list(KINDS))

    for name, text in (("simulate", "run the policy grid"), ("report", "run the policy grid and write the full report")):
        p = command(name, text)
        p.add_argument("--data", required=True, help="population CSV")
        p.add_argument("--iapo", required=True, help="IAPO CSV from fit-causal")
        p.add_argument("--scores", required=True, help="score CSV from fit-risk")
        p.add_argument("--split-fraction", type=float, default=0.5)
        p.add_argument("--capacity-multipliers", type=_multipliers, default=[1, 2, 3, 4, 5])
        p.add_argument("--schemes", type=_csv_list, default=list(SCHEMES))
        p.add_argument("--assignment", type=_csv_list, default=list(ASSIGNMENT_KINDS))
        p.add_argument("--repetitions", type=int, default=10)
        p.add_argument("--ground-truth", default=None, help="ground-truth CSV; evaluate against the true potential outcomes")
        if name == "report":
            p.add_argument("--format", choices=("csv", "structured-text"), default="csv")

    p = command("identify", "post-deployment outcome distribution of a discrete table")
    p.add_argument("--joint", required=True, help="JSON joint table")
    p.add_argument("--rule", required=True, help="JSON decision rule")

    command("pipeline", "run every stage and write the report")
    return parser


def _seed(args, default: int = 2003) -> int:
    return default if args.seed is None else args.seed


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args) -> None:
    cfg = ScmConfig.load(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n is not None:
        cfg.n = args.n
    pop, gt = generate_population(cfg)
    out = _out(args)
    write_population(pop, out / "population.csv")
    write_ground_truth(gt, out / "ground_truth.csv")
    cfg.dump(out / "scm_config.json")


def _split(pop: Population, args):
    return train_test_split(pop, args.split_fraction, _seed(args))


def cmd_fit_causal(args) -> None:
    pop = load_population(args.data)
    split = _split(pop, args)
    fit = estimate_iapos(pop, split, seed=_seed(args), n_jobs=args.threads)
    out = _out(args)
    pipeline.write_iapo(fit.iapo, pop.ids, out / "iapo.csv")
    w = TableWriter(out, "csv")
    w.table("ate", ("arm", "ate", "se", "ci_low", "ci_high"), [[r["arm"], *(repr(r[k]) for k in ("ate", "se", "ci_low", "ci_high"))] for r in ate_summary(fit.scores)])
    (out / "split.json").write_text(json.dumps({"train_ids": split.train_ids.tolist(), "test_ids": split.test_ids.tolist()}) + "\n")


def cmd_fit_risk(args) -> None:
    pop = load_population(args.data)
    split = _split(pop, args)
    models = fit_all(pop.subset(split.train_ids), args.eps, kinds=args.constraints, seed=_seed(args))
    out = _out(args)
    pipeline.write_scores(pop.ids, {k: predict_risk(m, pop) for k, m in models.items()}, out / "scores.csv")
    doc = {k: m.summary() for k, m in models.items()}
    (out / "risk_models.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _simulation(args):
    pop = load_population(args.data)
    split = _split(pop, args)
    test = pop.subset(split.test_ids)
    iapo_ids, iapo = pipeline.read_iapo(args.iapo)
    score_ids, scores = pipeline.read_scores(args.scores)
    index_iapo = {int(i): r for r, i in enumerate(iapo_ids)}
    index_score = {int(i): r for r, i in enumerate(score_ids)}
    missing = [int(i) for i in split.test_ids if int(i) not in index_iapo or int(i) not in index_score]
    if missing:
        raise ValueError(f"IAPO or score file lacks {len(missing)} test ids (first {missing[0]})")
    test_iapo = iapo.subset([index_iapo[int(i)] for i in split.test_ids])
    rows = np.array([index_score[int(i)] for i in split.test_ids])
    test_scores = {k: v[rows] for k, v in scores.items()}
    kw = dict(multipliers=args.capacity_multipliers, schemes=args.schemes, kinds=args.assignment, repetitions=args.repetitions, seed=_seed(args))
    grid = run_grid(test, test_scores, test_iapo, **kw)
    truth = None
    gt_grid = []
    if args.ground_truth:
        truth = read_ground_truth(args.ground_truth).subset(split.test_ids)
        gt_grid = run_grid(test, test_scores, test_iapo, outcome_table=truth, **kw)
    return test, test_iapo, test_scores, grid, truth, gt_grid


def cmd_simulate(args) -> None:
    test, test_iapo, _, grid, _, gt_grid = _simulation(args)
    w = TableWriter(_out(args), "csv")
    w.table("grid", GRID_HEADER, grid_rows(grid))
    if gt_grid:
        w.table("grid_ground_truth", GRID_HEADER, grid_rows(gt_grid))
    occ = [[r.score_kind, r.scheme, r.assignment, str(r.multiplier), *(repr(float(v)) for v in r.occupancy)] for r in grid]
    w.table("occupancy", ("score_kind", "scheme", "assignment", "multiplier", *ARM_NAMES), occ)


def cmd_report(args) -> None:
    test, test_iapo, test_scores, grid, truth, gt_grid = _simulation(args)
    metrics = {k: classification_metrics(classify(s), test.outcomes, test.columns["female"], s) for k, s in test_scores.items()}
    best_arm = np.argmin(test_iapo.values, axis=1)
    risk = next(iter(test_scores.values()))
    inputs = ReportInputs(
        grid=grid,
        status_quo=status_quo(test, test_iapo),
        metrics=metrics,
        risk_vs_po={"ids": test_iapo.ids, "risk": risk, "best_po": test_iapo.values[np.arange(len(test)), best_arm], "best_arm": best_arm},
        ground_truth_grid=gt_grid,
        ground_truth_status_quo=status_quo(test, truth) if truth is not None else None,
    )
    emit_report(inputs, _out(args), args.format)


def cmd_identify(args) -> None:
    doc = identification.identify_files(args.joint, args.rule)
    (_out(args) / "identification.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_pipeline(args) -> None:
    cfg = pipeline.PipelineConfig.load(args.config) if args.config else pipeline.PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out != "out" or not args.config:
        cfg.out = args.out
    if args.threads is not None:
        cfg.threads = args.threads
    pipeline.run_pipeline(cfg)


COMMANDS = {
    "synth": cmd_synth,
    "fit-causal": cmd_fit_causal,
    "fit-risk": cmd_fit_risk,
    "simulate": cmd_simulate,
    "report": cmd_report,
    "identify": cmd_identify,
    "pipeline": cmd_pipeline,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except pipeline.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # report any failure with the subcommand as its stage tag
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
