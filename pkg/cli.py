#!/usr/bin/env python3
"""
Command-line entry point for the replanning toolkit.

Subcommands: plan, simulate, gen-dataset, train, evaluate, importance, repro.
All randomness comes from explicit seeds; progress is logged to standard error.
"""

import argparse
import logging
import os
import sys

import config
from dataset import (DatasetError, GenerationConfig, failures_path, generate_dataset, read_dataset,
                     split_dataset, to_arrays, write_dataset, write_failures)
from executor import (ObstacleSamplingError, ScenarioConfig, ScenarioFailure, format_trace,
                      overhead_adjusted_soc, run_scenario, sample_obstacle)
from mapf_core import (InstanceGenerationError, MapfError, MapfInstance, MapParseError, StructuralError,
                       cost_summary, generate_instance, load_map, read_solution, validate_solution,
                       write_instance, write_solution)
from ml_replan_predictor.evaluation import (random_trigger_report, savings_report, threshold_sweep,
                                            write_figures, write_importance, write_report)
from ml_replan_predictor.model import (ModelFormatError, TrainConfig, TrainingError, kfold_cv,
                                       load_model, permutation_importance, save_model, train,
                                       write_history)
from planner import PlannerConfig, PlannerError, solve_1robust

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_PLANNER = 3
EXIT_SCENARIO = 4
EXIT_TRAINING = 5

EXIT_CODES_HELP = """exit codes:
  0  success
  1  usage or configuration error
  2  missing file, unreadable or malformed input
  3  planner failure (timeout, node limit, unsolvable instance)
  4  scenario failure (obstacle sampling, replanning, deadlock)
  5  training failure"""

SWEEP_TAUS = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0]


class ToolkitArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _planner_config(args) -> PlannerConfig:
    return PlannerConfig(args.bound, args.timeout, args.node_limit)


def _instance_from_solution(grid, sol) -> MapfInstance:
    return MapfInstance(grid, tuple((path[0], path[-1]) for path in sol.paths))


def _write_text(path: str, text: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        f.write(text)


def _load_values(path):
    return config.load_config(path) if path else dict(config.CONFIG_DEFAULTS)


def cmd_plan(args) -> int:
    grid = load_map(args.map)
    logger.info(f"Seeds: instance={args.seed}")
    instance = generate_instance(grid, args.agents, args.seed)
    sol = solve_1robust(instance, _planner_config(args))
    conflicts = validate_solution(instance, sol)
    if conflicts:
        raise PlannerError(f"planner returned a solution with {len(conflicts)} conflicts")
    _write_text(args.out, write_solution(sol))
    if args.instance_out:
        _write_text(args.instance_out, write_instance(instance))
    costs = cost_summary(sol)
    print(f"soc: {costs.soc:g}")
    print(f"makespan: {costs.makespan:g}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    grid = load_map(args.map)
    with open(args.sol, 'r') as f:
        sol = read_solution(f.read())
    instance = _instance_from_solution(grid, sol)
    logger.info(f"Seeds: obstacle={args.obstacle_seed}")
    obstacle = sample_obstacle(sol, args.obstacle_seed) if args.obstacle_seed is not None else None
    result = run_scenario(ScenarioConfig(
        solution=sol, instance=instance, obstacle=obstacle, replan_time=args.replan_t,
        planner_cfg=_planner_config(args), runtime_clock=args.runtime_clock))
    trace = format_trace(result.trace)
    if args.trace:
        _write_text(args.trace, trace)
    else:
        sys.stdout.write(trace)
    if obstacle is not None:
        print(f"obstacle: {obstacle.vertex[0]},{obstacle.vertex[1]} "
              f"{obstacle.appear:g} {obstacle.disappear:g}")
    print(f"planned_soc: {cost_summary(sol).soc:g}")
    print(f"executed_soc: {result.executed_soc:g}")
    print(f"makespan: {result.makespan:g}")
    if result.replanned:
        print(f"replan_runtime: {result.replan_runtime:g}")
        print(f"unfinished_at_replan: {result.unfinished_at_replan}")
        print(f"overhead_adjusted_soc: {overhead_adjusted_soc(result):g}")
    print(f"violations: {len(result.violations)}")
    return EXIT_OK


def _generation_config(values, args) -> GenerationConfig:
    if getattr(args, 'jobs', None):
        values['jobs'] = args.jobs
    if getattr(args, 'output', None):
        values['output'] = args.output
    gen_cfg = GenerationConfig.from_values(values)
    logger.info(f"Seeds: instances from {gen_cfg.first_instance_seed}, "
                f"obstacle 0..{gen_cfg.obstacle_seeds - 1}, replan 0..{gen_cfg.replan_seeds - 1}")
    return gen_cfg


def _generate(gen_cfg: GenerationConfig):
    records, failures = generate_dataset(gen_cfg)
    write_dataset(records, gen_cfg.output)
    write_failures(failures, failures_path(gen_cfg.output))
    return records


def cmd_gen_dataset(args) -> int:
    values = config.load_config(args.config)
    _generate(_generation_config(values, args))
    return EXIT_OK


def _train_config(values, args) -> TrainConfig:
    if getattr(args, 'seed', None) is not None:
        values['train_seed'] = args.seed
    train_cfg = TrainConfig.from_values(values)
    logger.info(f"Seeds: train={train_cfg.seed}")
    return train_cfg


def _train_and_save(records, train_cfg: TrainConfig, model_path: str, cv_folds: int = 0):
    X, y = to_arrays(records)
    if cv_folds:
        result = kfold_cv(X, y, cv_folds, train_cfg)
        logger.info(f"CV MAE per fold: {', '.join(f'{v:.4f}' for v in result.fold_mae)}")
    model, history = train(X, y, train_cfg)
    save_model(model, model_path)
    write_history(history, os.path.splitext(model_path)[0] + '.history.csv')
    return model


def cmd_train(args) -> int:
    values = _load_values(args.config)
    _train_and_save(read_dataset(args.data), _train_config(values, args), args.out,
                    values['cv_folds'] if args.cv else 0)
    return EXIT_OK


def _evaluate(model, records, out_dir, values, importance: bool):
    tau = values['threshold']
    report = savings_report(records, model, tau)
    baseline = random_trigger_report(records, report.replan_count, values['split_seed'], tau)
    predictions = [row.predicted for row in report.rows]
    sweep = threshold_sweep(records, predictions, SWEEP_TAUS, tau)
    importances = None
    if importance and records:
        X, y = to_arrays(records)
        importances = permutation_importance(model, X, y, values['importance_repeats'],
                                             values['importance_seed'])
    write_report(os.path.join(out_dir, 'report.txt'), report, baseline, sweep)
    write_figures(out_dir, records, report, importances, values['histogram_bins'])
    logger.info(f"Recovery rate {report.recovery_rate}, random trigger {baseline.recovery_rate}")
    return report


def cmd_evaluate(args) -> int:
    values = _load_values(args.config)
    if args.tau is not None:
        values['threshold'] = args.tau
    logger.info(f"Seeds: random_trigger={values['split_seed']}")
    _evaluate(load_model(args.model), read_dataset(args.data), args.out_dir, values, importance=False)
    return EXIT_OK


def cmd_importance(args) -> int:
    values = _load_values(args.config)
    values['importance_repeats'] = args.repeats or values['importance_repeats']
    if args.seed is not None:
        values['importance_seed'] = args.seed
    logger.info(f"Seeds: importance={values['importance_seed']}")
    model = load_model(args.model)
    X, y = to_arrays(read_dataset(args.data))
    write_importance(args.out, permutation_importance(model, X, y, values['importance_repeats'],
                                                      values['importance_seed']))
    return EXIT_OK


def cmd_repro(args) -> int:
    values = config.load_config(args.config)
    if 'runtime_clock' not in config.explicit_keys(args.config):
        values['runtime_clock'] = 'work'
    out_dir = args.out_dir
    config.ensure_directories(out_dir)
    values['output'] = os.path.join(out_dir, 'dataset.csv')
    if args.jobs:
        values['jobs'] = args.jobs

    logger.info("=" * 60)
    logger.info(f"REPRO: {args.config} -> {out_dir}")
    logger.info("=" * 60)
    gen_cfg = _generation_config(values, argparse.Namespace())
    records = _generate(gen_cfg)

    logger.info(f"Seeds: split={values['split_seed']}")
    train_records, test_records = split_dataset(records, values['train_fraction'], values['split_seed'])
    write_dataset(train_records, os.path.join(out_dir, 'train.csv'))
    write_dataset(test_records, os.path.join(out_dir, 'test.csv'))
    positives = sum(1 for r in records if r.y >= values['threshold'])
    logger.info(f"Split {len(train_records)}/{len(test_records)}; "
                f"{positives} of {len(records)} records benefit from replanning")

    model = _train_and_save(train_records, _train_config(values, argparse.Namespace()),
                            os.path.join(out_dir, 'model.txt'), values['cv_folds'] if args.cv else 0)
    _evaluate(model, test_records, out_dir, values, importance=True)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = ToolkitArgumentParser(
        prog='cli.py', description=__doc__.strip().splitlines()[0], epilog=EXIT_CODES_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument('--log-level', default=config.LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'], help='Logging verbosity')
    parser.add_argument('--log-file', default=None, help='Also write the log to this file')
    sub = parser.add_subparsers(dest='command', required=True, metavar='COMMAND')

    def planner_flags(p):
        p.add_argument('--timeout', type=float, default=config.PLANNER_TIMEOUT,
                       help='Planner time limit in seconds (default: %(default)s)')
        p.add_argument('--node-limit', type=int, default=config.PLANNER_NODE_LIMIT,
                       help='Planner high-level node budget, count (default: %(default)s)')
        p.add_argument('--bound', type=float, default=config.SUBOPTIMALITY_BOUND,
                       help='Suboptimality bound, ratio >= 1.0 (default: %(default)s)')

    p = sub.add_parser('plan', help='Generate an instance and solve it', epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--map', required=True, help='MovingAI .map file')
    p.add_argument('--agents', type=int, required=True, help='Number of agents')
    p.add_argument('--seed', type=int, required=True, help='Instance seed (integer)')
    p.add_argument('--out', required=True, help='Solution output file')
    p.add_argument('--instance-out', default=None, help='Optional instance output file')
    planner_flags(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser('simulate', help='Execute a solution with an obstacle and optional replan',
                       epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--map', required=True, help='MovingAI .map file the solution was planned on')
    p.add_argument('--sol', required=True, help='Solution file')
    p.add_argument('--obstacle-seed', type=int, default=None, help='Obstacle seed (omit for no obstacle)')
    p.add_argument('--replan-t', type=float, default=None, help='Replan time in seconds (omit for no replan)')
    p.add_argument('--trace', default=None, help='Trace output file (default: standard output)')
    p.add_argument('--runtime-clock', choices=['wall', 'work'], default=config.RUNTIME_CLOCK,
                   help='Replan overhead clock: measured seconds or expansion-count seconds')
    planner_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser('gen-dataset', help='Generate the labeled dataset CSV', epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--config', required=True, help='key=value generation config')
    p.add_argument('--output', default=None, help='Dataset CSV path (overrides config)')
    p.add_argument('--jobs', type=int, default=None, help='Worker processes, count (output is identical for any N)')
    p.set_defaults(func=cmd_gen_dataset)

    p = sub.add_parser('train', help='Train and save the regressor', epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--data', required=True, help='Training dataset CSV')
    p.add_argument('--out', required=True, help='Model output file')
    p.add_argument('--config', default=None, help='key=value config with training settings')
    p.add_argument('--seed', type=int, default=None, help='Training seed (integer)')
    p.add_argument('--cv', action='store_true', help='Also run k-fold cross-validation (cv_folds)')
    p.set_defaults(func=cmd_train)

    p = sub.add_parser('evaluate', help='Write the decision report and figure CSVs', epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--model', required=True, help='Model file')
    p.add_argument('--data', required=True, help='Test dataset CSV')
    p.add_argument('--out-dir', required=True, help='Directory for report.txt and figure CSVs')
    p.add_argument('--tau', type=float, default=None, help='Decision threshold in seconds (default: 1.0)')
    p.add_argument('--config', default=None, help='key=value config with evaluation settings')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('importance', help='Permutation feature importance', epilog=EXIT_CODES_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--model', required=True, help='Model file')
    p.add_argument('--data', required=True, help='Test dataset CSV')
    p.add_argument('--out', required=True, help='Importance CSV (MAE increase in seconds)')
    p.add_argument('--repeats', type=int, default=None, help='Shuffles per feature, count')
    p.add_argument('--seed', type=int, default=None, help='Shuffle seed (integer)')
    p.add_argument('--config', default=None, help='key=value config with evaluation settings')
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser('repro', help='gen-dataset, split, train and evaluate from one config',
                       epilog=EXIT_CODES_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument('--config', required=True, help='key=value config (see configs/)')
    p.add_argument('--out-dir', default=config.OUTPUT_DIRECTORY, help='Output directory (default: %(default)s)')
    p.add_argument('--jobs', type=int, default=None, help='Worker processes for generation, count')
    p.add_argument('--cv', action='store_true', help='Also run k-fold cross-validation before training')
    p.set_defaults(func=cmd_repro)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config.setup_logging(args.log_level, args.log_file)
    try:
        return args.func(args)
    except config.ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_USAGE
    except (MapParseError, DatasetError, ModelFormatError, StructuralError, OSError) as e:
        logger.error(f"Input/output error: {e}")
        return EXIT_IO
    except (PlannerError, InstanceGenerationError) as e:
        logger.error(f"Planner error: {e}")
        return EXIT_PLANNER
    except (ScenarioFailure, ObstacleSamplingError) as e:
        logger.error(f"Scenario error: {e}")
        return EXIT_SCENARIO
    except TrainingError as e:
        logger.error(f"Training error: {e}")
        return EXIT_TRAINING
    except MapfError as e:
        logger.error(f"Scenario error: {e}")
        return EXIT_SCENARIO
    except ValueError as e:
        logger.error(f"Invalid argument: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
