"""Command line entry point: ``coevgan run|bootstrap|compare|heatmap|budget``.

Exit codes: 0 on success, 1 on a configuration error, 2 on a runtime failure.
"""
from __future__ import annotations

import argparse
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from .analysis import emit_heatmap, format_summary, improvement_delta, summarize_runs, wilcoxon_rank_sum
from .coev import Mode
from .dataset import plan_budget
from .errors import ConfigError, ScoringError, TrainingError
from .experiment import RunConfig, load_config, read_results, read_scores, run_bootstrap, run_experiment
from .grid import GridConfig

log = logging.getLogger("coevgan")

TABLE_PORTIONS = (1.0, 0.75, 0.5, 0.25)


class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="flat 'section.key = value' config file")
    p.add_argument("--portion", type=float, help="fraction of the dataset each cell samples")
    p.add_argument("--grid", help="grid size as KxK (or RxC)")
    p.add_argument("--seed", type=int, help="per-run seed")
    p.add_argument("--mode", choices=[m.value for m in Mode], help="scheduling of the grid cells")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coevgan", description="Spatial coevolutionary GAN training on Gaussian mixtures.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="train a grid, evolve mixtures, write results")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="results directory")

    p = sub.add_parser("bootstrap", help="train independent single GANs and score random ensembles of them")
    _common(p)
    p.add_argument("--out", type=Path, required=True, help="results directory")
    p.add_argument("--pool", type=int, help="number of single GANs to train")
    p.add_argument("--repeats", type=int, help="number of bootstrap ensembles")

    p = sub.add_parser("compare", help="summary table, improvement and rank-sum tests over score files")
    p.add_argument("inputs", nargs="+", type=Path, help="scores.csv files or results directories")
    p.add_argument("--metric", choices=["best", "mean"], default="best",
                   help="aggregate cells of a grid run by their best or mean score")
    p.add_argument("--out", type=Path, help="also write the report to this file")

    p = sub.add_parser("heatmap", help="CSV + PPM of per-cell scores of a results directory")
    p.add_argument("results", type=Path)
    p.add_argument("--column", choices=["best_score", "uniform_ensemble_score", "evolved_ensemble_score"],
                   default="best_score")
    p.add_argument("--out", type=Path, help="output path without suffix (default: next to the results)")

    p = sub.add_parser("budget", help="batches per generation and generation counts per portion")
    p.add_argument("--config", type=Path)
    p.add_argument("--portion", type=float, action="append", help="portion(s) to tabulate")
    p.add_argument("--dataset-size", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--budget", type=int, help="total batch budget")
    return parser


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.portion is not None:
        cfg = cfg.override(train={"portion": args.portion})
    if args.grid:
        cfg = cfg.override(grid=GridConfig.parse(args.grid))
    if args.seed is not None:
        cfg = cfg.override(seeds={"run": args.seed})
    if args.mode:
        cfg = cfg.override(run={"mode": Mode(args.mode)})
    return cfg


# --------------------------------------------------------------------------- commands


def cmd_run(args) -> str:
    result = run_experiment(config_from_args(args), args.out)
    best = result.best_cell()
    return (f"{result.variant} portion {result.portion:g}: grid best {result.grid_best_score:.6g}, "
            f"grid mean {result.grid_mean_score:.6g}, best ensemble {best.evolved_score:.6g} "
            f"at cell ({best.row},{best.col}) -> {args.out}")


def cmd_bootstrap(args) -> str:
    cfg = config_from_args(args)
    changes = {k: v for k, v in (("pool_size", args.pool), ("repeats", args.repeats)) if v is not None}
    if changes:
        cfg = cfg.override(bootstrap=changes)
    pool, draws = run_bootstrap(cfg, args.out)
    lines = [f"single GANs: {len(pool.results)}, median score {np.median(pool.scores):.6g}"]
    if draws:
        lines.append(f"ensembles: {len(draws)}, median uniform {np.median([d.uniform_score for d in draws]):.6g}, "
                     f"median evolved {np.median([d.evolved_score for d in draws]):.6g}")
    return "\n".join(lines)


def collect_groups(rows, metric: str = "best") -> dict[tuple[str, float], list[float]]:
    """One value per (variant, portion, repeat).

    Multi-cell runs contribute their best (or mean) cell score under the
    variant name and their best evolved ensemble under ``<variant>-Ensemble``.
    Rows already labelled ``*-Ensemble`` contribute their evolved score.
    """
    runs: dict[tuple[str, float, int], list[dict]] = {}
    for r in rows:
        runs.setdefault((r["variant"], r["portion"], r["repeat"]), []).append(r)
    groups: dict[tuple[str, float], list[float]] = {}
    for (variant, portion, _), cells in sorted(runs.items()):
        if variant.endswith("-Ensemble"):
            groups.setdefault((variant, portion), []).append(min(c["evolved_ensemble_score"] for c in cells))
            continue
        scores = [c["best_score"] for c in cells]
        groups.setdefault((variant, portion), []).append(min(scores) if metric == "best" else float(np.mean(scores)))
        if len(cells) > 1:
            groups.setdefault((f"{variant}-Ensemble", portion), []).append(
                min(c["evolved_ensemble_score"] for c in cells))
    return groups


def compare_report(groups: dict[tuple[str, float], list[float]]) -> str:
    lines = [format_summary(summarize_runs(groups)), ""]
    for (variant, portion), values in sorted(groups.items()):
        ens = groups.get((f"{variant}-Ensemble", portion))
        if ens:
            lines.append(f"delta {variant} @ {portion:g}: {improvement_delta(values, ens):.1f}%")
    for (ka, a), (kb, b) in itertools.combinations(sorted(groups.items()), 2):
        if len(a) >= 3 and len(b) >= 3:
            res = wilcoxon_rank_sum(a, b)
            lines.append(f"rank-sum {ka[0]}@{ka[1]:g} vs {kb[0]}@{kb[1]:g}: U={res.statistic:g} "
                         f"p={res.p_value:.4g} ({res.method})")
    return "\n".join(lines).rstrip() + "\n"


def cmd_compare(args) -> str:
    rows = []
    for path in args.inputs:
        rows.extend(read_scores(path / "scores.csv" if path.is_dir() else path))
    if not rows:
        raise ConfigError("no score rows found")
    report = compare_report(collect_groups(rows, args.metric))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(report)
    return report.rstrip()


def cmd_heatmap(args) -> str:
    result = read_results(args.results)
    base = args.out or args.results / f"heatmap_{args.column.replace('_score', '')}"
    csv_path, ppm_path = emit_heatmap(result.score_grid(args.column), base)
    return f"wrote {csv_path} and {ppm_path}"


def cmd_budget(args) -> str:
    cfg = load_config(args.config) if args.config else RunConfig()
    n = args.dataset_size or cfg.target.total_samples
    b = args.batch_size or cfg.coev.batch_size
    budget = args.budget or cfg.train.budget
    lines = [f"dataset {n}, batch {b}, budget {budget}", f"{'portion':>8} {'batches/gen':>12} {'generations':>12}"]
    for p in args.portion or TABLE_PORTIONS:
        plan = plan_budget(n, b, p, budget)
        lines.append(f"{p:>8.2f} {plan.batches_per_generation:>12d} {plan.generations:>12d}")
    return "\n".join(lines)


COMMANDS = {"run": cmd_run, "bootstrap": cmd_bootstrap, "compare": cmd_compare,
            "heatmap": cmd_heatmap, "budget": cmd_budget}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        print(COMMANDS[args.command](args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (TrainingError, ScoringError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
