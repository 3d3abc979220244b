#!/usr/bin/env python3
"""
Pareto re-ranking engine - command-line interface
Synthetic data, preparation, the evolutionary knowledge-transfer run,
baselines, the transfer ablation, standalone evaluation and parameter sweeps.
"""

import argparse
import signal
import sys
import time
import traceback
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from config import RerankConfig, create_default_config_file
from data_pipeline import (
    PreparedData, generate_synthetic, load_prepared, prepare_dataset, save_prepared, write_synthetic,
)
from domain_model import ObjectiveEvaluator
from error_handling import ConfigurationError, DataError, RerankException, StageError, setup_global_logging
from evaluation import MetricsReport, compute_report, fbeta_key, paired_comparison
from reranker_base import RerankResult, create_reranker
from writers import ReportWriter, RunWriter, read_final_lists
from writers.report_writer import AblationSummary

EXIT_OK = 0
EXIT_USAGE = 1

SWEEP_DEFAULTS = {
    "transfer.interval": ["2", "3", "4", "none"],
    "builder.n_clusters": ["2", "5", "10"],
    "evolution.crossover_prob": ["0.6", "0.7", "0.8", "0.9"],
    "evolution.mutation_prob": ["0.1", "0.2", "0.3"],
    "evolution.pop_size": ["30", "50", "70"],
}


class RerankArgumentParser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def create_argument_parser():
    """Create and configure the argument parser"""
    parser = RerankArgumentParser(
        description="Pareto re-ranking engine with knowledge transfer",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s synth
  %(prog)s prepare
  %(prog)s run --seed 7 --out runs/seed7
  %(prog)s baseline --method mmr
  %(prog)s ablate --out runs/ablation
  %(prog)s eval --lists runs/seed7/final_lists.tsv
  %(prog)s sweep --param transfer.interval --values 2 3 4 none
        """
    )

    # Configuration options
    parser.add_argument(
        '--config',
        type=Path,
        default=Path('rerank_config.json'),
        metavar='PATH',
        help='Configuration file path (default: rerank_config.json)'
    )

    parser.add_argument(
        '--create-config',
        action='store_true',
        help='Create default configuration file and exit'
    )

    # Run overrides
    parser.add_argument('--seed', type=int, metavar='N', help='Run seed (default: from config)')
    parser.add_argument('--threads', type=int, metavar='N',
                        help='Worker threads (default: available parallelism)')
    parser.add_argument('--out', type=Path, metavar='DIR', help='Output directory (default: from config)')
    parser.add_argument('--prepared', type=Path, metavar='DIR',
                        help='Prepared data directory (default: from config)')
    parser.add_argument('--uniform-fallback', action='store_true',
                        help='Use rank-reciprocal base scores instead of the scores file')

    # Logging and debug options
    parser.add_argument(
        '--log-level',
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        help='Logging level (default: from config)'
    )
    parser.add_argument('--no-file-logging', action='store_true', help='Disable file logging')
    parser.add_argument('--debug', action='store_true', help='Enable debug mode with detailed logging')

    commands = parser.add_subparsers(dest='command', metavar='COMMAND')
    commands.add_parser('synth', help='Write the synthetic dataset to the configured data paths')
    commands.add_parser('prepare', help='Split, sample candidates, attach scores and features')
    commands.add_parser('run', help='Evolutionary re-ranking with knowledge transfer')

    baseline = commands.add_parser('baseline', help='Top-K or MMR baseline')
    baseline.add_argument('--method', choices=['topk', 'mmr'], default='topk')
    baseline.add_argument('--mmr-lambda', type=float, metavar='L', help='MMR trade-off (default: from config)')

    commands.add_parser('ablate', help='Paired run with and without knowledge transfer')

    evaluate = commands.add_parser('eval', help='Evaluate an existing final_lists.tsv')
    evaluate.add_argument('--lists', type=Path, required=True, metavar='PATH')

    sweep = commands.add_parser('sweep', help='Sensitivity sweep over one parameter')
    sweep.add_argument('--param', choices=sorted(SWEEP_DEFAULTS), required=True)
    sweep.add_argument('--values', nargs='+', metavar='V', help='Values to try (default: a standard grid)')

    return parser


def validate_arguments(args) -> List[str]:
    """Validate command line arguments"""
    errors = []
    if not args.command and not args.create_config:
        errors.append("A command is required")
    if args.threads is not None and args.threads < 1:
        errors.append("--threads must be positive")
    if getattr(args, 'mmr_lambda', None) is not None and not (0.0 <= args.mmr_lambda <= 1.0):
        errors.append("--mmr-lambda must be between 0 and 1")
    if args.command == 'eval' and not args.lists.exists():
        errors.append(f"Lists file not found: {args.lists}")
    return errors


def apply_overrides(config: RerankConfig, args) -> RerankConfig:
    """Command-line flags take precedence over the config file"""
    if args.seed is not None:
        config.run.seed = args.seed
    if args.threads is not None:
        config.run.threads = args.threads
    if args.out is not None:
        config.run.output_dir = str(args.out)
    if args.prepared is not None:
        config.data.prepared_dir = str(args.prepared)
    if args.uniform_fallback:
        config.data.uniform_fallback = True
    if args.log_level:
        config.log_level = args.log_level
    if args.no_file_logging:
        config.log_to_file = False
    if args.debug:
        config.log_level = 'DEBUG'
    if getattr(args, 'mmr_lambda', None) is not None:
        config.evaluation.mmr_lambda = args.mmr_lambda
    return config


def require_valid(config: RerankConfig) -> None:
    is_valid, errors = config.validate()
    if not is_valid:
        raise ConfigurationError("Invalid configuration: " + "; ".join(errors))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(config: RerankConfig) -> Tuple[Path, Path]:
    data = config.data
    if data.scores_path is None:
        raise ConfigurationError("data.scores_path is required for synth", key="data.scores_path")
    dataset = generate_synthetic(data.synthetic_users, data.synthetic_items, data.synthetic_categories,
                                 data.synthetic_seed, data.n_negatives)
    return write_synthetic(dataset, data.interactions_path, data.scores_path, data.delimiter)


def cmd_prepare(config: RerankConfig) -> Path:
    if not Path(config.data.interactions_path).exists():
        raise DataError(f"Interactions file not found: {config.data.interactions_path}",
                        path=config.data.interactions_path)
    prepared = prepare_dataset(config.data, config.run.seed)
    return save_prepared(prepared, config.data.prepared_dir)


def evaluate_lists(config: RerankConfig, prepared: PreparedData, lists, method: str) -> MetricsReport:
    split = config.run.target_split
    positives = prepared.positives(split)
    unknown = sorted(set(lists) - set(positives))
    if unknown:
        raise DataError(f"{len(unknown)} users are not in the {split} split", offenders=unknown[:20])
    evaluator = ObjectiveEvaluator(prepared.meta, prepared.total_categories, config.evolution.novelty_mode)
    ev = config.evaluation
    return compute_report(lists, positives, prepared.meta, prepared.total_categories,
                          ev.cutoffs, ev.betas, config.evolution.novelty_mode, evaluator.max_pop,
                          ev.per_user_fbeta, config.run.seed, config.config_hash(), method)


def execute(config: RerankConfig, prepared: PreparedData, method: str = "pareto",
            out_dir: Optional[Path] = None) -> Tuple[RerankResult, MetricsReport]:
    """Re-rank the target split, evaluate, and write every artifact"""
    require_valid(config)
    out_dir = Path(out_dir or config.run.output_dir)
    candidates = prepared.target(config.run.target_split)
    evaluator = ObjectiveEvaluator(prepared.meta, prepared.total_categories, config.evolution.novelty_mode)

    with create_reranker(config, method) as reranker:
        result = reranker.rerank(candidates, prepared.meta, prepared.total_categories)
        with reranker.monitor.stage("evaluate"):
            report = evaluate_lists(config, prepared, result.lists, method)
        with reranker.monitor.stage("write"):
            RunWriter(config, out_dir).write_all(result, candidates, evaluator)
            writer = ReportWriter(out_dir)
            writer.write_report(report)
            writer.write_per_user(report)
    return result, report


def cmd_run(config: RerankConfig) -> Tuple[RerankResult, MetricsReport]:
    return execute(config, load_prepared(config.data.prepared_dir), "pareto")


def cmd_baseline(config: RerankConfig, method: str) -> Tuple[RerankResult, MetricsReport]:
    return execute(config, load_prepared(config.data.prepared_dir), method)


def cmd_ablate(config: RerankConfig) -> AblationSummary:
    """Identical seeds with the configured transfer interval and with transfer disabled"""
    prepared = load_prepared(config.data.prepared_dir)
    out_dir = Path(config.run.output_dir)
    transfer_config = config.copy()
    plain_config = config.copy()
    plain_config.transfer.interval = None

    result_t, report_t = execute(transfer_config, prepared, "pareto", out_dir / "transfer")
    result_p, report_p = execute(plain_config, prepared, "pareto", out_dir / "plain")

    hv_t, hv_p = result_t.front_hypervolumes(), result_p.front_hypervolumes()
    fbeta = {}
    for k in config.evaluation.cutoffs:
        for beta in config.evaluation.betas:
            key = f"{fbeta_key(beta)}@{k}"
            per_t = {int(row["user"]): row[key] for row in report_t.per_user}
            per_p = {int(row["user"]): row[key] for row in report_p.per_user}
            fbeta[key] = paired_comparison(per_t, per_p)

    summary = AblationSummary(
        hypervolume=paired_comparison(hv_t, hv_p),
        fbeta=fbeta,
        per_user_hv={u: (hv_t[u], hv_p[u]) for u in sorted(set(hv_t) & set(hv_p))},
        config_hash_transfer=transfer_config.config_hash(),
        config_hash_plain=plain_config.config_hash(),
        report_transfer=report_t,
        report_plain=report_p,
    )
    ReportWriter(out_dir).write_ablation(summary)
    return summary


def cmd_eval(config: RerankConfig, lists_path: Path) -> MetricsReport:
    prepared = load_prepared(config.data.prepared_dir)
    report = evaluate_lists(config, prepared, read_final_lists(lists_path), "eval")
    writer = ReportWriter(config.run.output_dir)
    writer.write_report(report)
    writer.write_per_user(report)
    return report


def parse_sweep_value(param: str, text: str):
    if param == "transfer.interval":
        return None if text.lower() in ("none", "inf", "null") else int(text)
    if param in ("builder.n_clusters", "evolution.pop_size"):
        return int(text)
    return float(text)


def cmd_sweep(config: RerankConfig, param: str, values: Optional[Sequence[str]] = None) -> List[Dict]:
    """One full run per value of a single parameter"""
    prepared = load_prepared(config.data.prepared_dir)
    out_dir = Path(config.run.output_dir)
    section, key = param.split(".")
    rows = []
    for text in values or SWEEP_DEFAULTS[param]:
        try:
            value = parse_sweep_value(param, text)
        except ValueError:
            raise ConfigurationError(f"Bad value '{text}' for {param}", key=param) from None
        run_config = config.copy()
        setattr(getattr(run_config, section), key, value)
        started = time.perf_counter()
        result, report = execute(run_config, prepared, "pareto", out_dir / f"{key}_{text}")
        row = {"parameter": param, "value": text,
               "mean_hypervolume": result.mean_hypervolume(),
               "training_seconds": result.training_seconds,
               "run_seconds": time.perf_counter() - started}
        for k in (5, 10):
            for beta in (1.0, 2.0):
                name = fbeta_key(beta)
                if k in report.values and name in report.values[k]:
                    row[f"{name}@{k}"] = report.values[k][name]
        rows.append(row)
    ReportWriter(out_dir).write_sweep(rows)
    return rows


def setup_signal_handlers():
    """Setup signal handlers for graceful shutdown"""
    def signal_handler(signum, frame):
        print(f"\nReceived signal {signum}. Shutting down...")
        sys.exit(EXIT_USAGE)

    signal.signal(signal.SIGINT, signal_handler)
    if hasattr(signal, 'SIGTERM'):
        signal.signal(signal.SIGTERM, signal_handler)


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code"""
    parser = create_argument_parser()
    args = parser.parse_args(argv)

    errors = validate_arguments(args)
    if errors:
        print("Error: Invalid arguments:")
        for error in errors:
            print(f"  {error}")
        print(f"\nUse '{parser.prog} --help' for usage information.")
        return EXIT_USAGE

    if args.create_config:
        create_default_config_file(str(args.config))
        return EXIT_OK

    if not args.config.exists():
        print(f"Warning: Configuration file not found: {args.config}; using defaults")
    config = apply_overrides(RerankConfig.load_from_file(str(args.config)), args)

    logger = setup_global_logging(config).get_logger("Main")
    logger.info(f"Command: {args.command}")

    try:
        require_valid(config)
        if args.command == 'synth':
            cmd_synth(config)
        elif args.command == 'prepare':
            cmd_prepare(config)
        elif args.command == 'run':
            cmd_run(config)
        elif args.command == 'baseline':
            cmd_baseline(config, args.method)
        elif args.command == 'ablate':
            cmd_ablate(config)
        elif args.command == 'eval':
            cmd_eval(config, args.lists)
        elif args.command == 'sweep':
            cmd_sweep(config, args.param, args.values)

    except StageError as e:
        logger.error(f"{e}")
        if args.debug:
            logger.debug(traceback.format_exc())
        return e.exit_code
    except RerankException as e:
        logger.error(f"{e.error_code}: {e}")
        if args.debug:
            logger.debug(traceback.format_exc())
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("Operation cancelled by user")
        return EXIT_USAGE
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        if args.debug:
            traceback.print_exc()
        return EXIT_USAGE

    logger.info(f"{args.command} complete")
    return EXIT_OK


if __name__ == "__main__":
    setup_signal_handlers()
    sys.exit(main())
