"""
Dataset generation for the replanning predictor.

For every admitted instance and obstacle seed the plan is executed three ways:
undisturbed (SOC^e), with the obstacle (SOC^ei) and, per replan seed, with the
obstacle plus one replan at a sampled time t (SOC^eir_t). Each replanned run
yields one labeled record: the features at t and y = SOC^ei - SOC^eir_t.
"""

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.model_selection import train_test_split

import config
from executor import (ObstacleEvent, ObstacleSamplingError, ScenarioConfig, ScenarioFailure,
                      overhead_adjusted_soc, run_scenario, sample_obstacle)
from features import FEATURE_COUNT, FEATURE_NAMES, extract_features
from mapf_core import (InstanceGenerationError, MapfError, MapfInstance, Solution, cost_summary,
                       generate_instance, load_map)
from planner import InfeasibleInstance, PlannerConfig, PlannerTimeout, solve_1robust

logger = logging.getLogger(__name__)

METADATA_COLUMNS = ['y', 'soc_e', 'soc_ei', 'soc_eir', 'soc_eirp', 'map', 'agents',
                    'inst_seed', 'obs_seed', 'replan_seed', 'replan_t']
CSV_HEADER = FEATURE_NAMES + METADATA_COLUMNS
FAILURE_HEADER = ['map', 'agents', 'inst_seed', 'obs_seed', 'replan_seed', 'reason', 'detail']

# Obstacle seeds tried per instance before the instance is skipped
OBSTACLE_ATTEMPTS_FACTOR = 10


class DatasetError(MapfError):
    """Malformed dataset file or inconsistent record."""


@dataclass
class LabeledRecord:
    features: np.ndarray
    y: float
    soc_e: float
    soc_ei: float
    soc_eir: float
    soc_eirp: float
    map_name: str
    agents: int
    instance_seed: int
    obstacle_seed: int
    replan_seed: int
    replan_time: float

    def __post_init__(self):
        if len(self.features) != FEATURE_COUNT:
            raise DatasetError(f"expected {FEATURE_COUNT} features, got {len(self.features)}")
        if self.y != self.soc_ei - self.soc_eir:
            raise DatasetError(f"y={self.y} does not match soc_ei - soc_eir for {self.key}")
        if self.soc_eirp < self.soc_eir:
            raise DatasetError(f"overhead-adjusted SOC below executed SOC for {self.key}")

    @property
    def key(self) -> Tuple[str, int, int, int, int]:
        return (self.map_name, self.agents, self.instance_seed, self.obstacle_seed, self.replan_seed)


@dataclass(frozen=True)
class Failure:
    map_name: str
    agents: int
    instance_seed: int
    obstacle_seed: Optional[int]
    replan_seed: Optional[int]
    reason: str
    detail: str = ''

    def row(self) -> List[str]:
        opt = lambda value: '-' if value is None else str(value)
        return [self.map_name, str(self.agents), str(self.instance_seed), opt(self.obstacle_seed),
                opt(self.replan_seed), self.reason, self.detail]


@dataclass
class GenerationConfig:
    maps: List[str]
    agent_counts: Dict[str, List[int]]
    instances: int = 1
    obstacle_seeds: int = 1
    replan_seeds: int = 1
    first_instance_seed: int = 0
    planner_cfg: PlannerConfig = field(default_factory=PlannerConfig)
    output: str = os.path.join(config.OUTPUT_DIRECTORY, 'dataset.csv')
    maps_dir: str = config.MAPS_DIRECTORY
    jobs: int = 1
    runtime_clock: str = config.RUNTIME_CLOCK
    seconds_per_expansion: float = config.SECONDS_PER_EXPANSION

    def __post_init__(self):
        if not self.maps:
            raise config.ConfigError("no maps configured")
        for name in self.maps:
            counts = self.agent_counts.get(name)
            if not counts or any(count < 1 for count in counts):
                raise config.ConfigError(f"map '{name}' needs a list of positive agent counts")
        for name in ('instances', 'obstacle_seeds', 'replan_seeds', 'jobs'):
            if getattr(self, name) < 1:
                raise config.ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")

    @classmethod
    def from_values(cls, values: dict) -> 'GenerationConfig':
        """Build from the dict returned by ``config.parse_config``."""
        agent_counts = {name: values.get(f'agents.{name}', values['agents']) for name in values['maps']}
        planner_cfg = PlannerConfig(values['suboptimality_bound'], values['planner_timeout'],
                                    values['planner_node_limit'])
        return cls(
            maps=list(values['maps']),
            agent_counts=agent_counts,
            instances=values['instances'],
            obstacle_seeds=values['obstacle_seeds'],
            replan_seeds=values['replan_seeds'],
            first_instance_seed=values['first_instance_seed'],
            planner_cfg=planner_cfg,
            output=values['output'],
            maps_dir=values['maps_dir'],
            jobs=values['jobs'],
            runtime_clock=values['runtime_clock'],
            seconds_per_expansion=values['seconds_per_expansion'],
        )

    @property
    def experiment_count(self) -> int:
        pairs = sum(len(self.agent_counts[name]) for name in self.maps)
        return pairs * self.instances * self.obstacle_seeds * self.replan_seeds


@dataclass
class _ObstacleTask:
    map_name: str
    agents: int
    instance_seed: int
    obstacle_seed: int
    instance: MapfInstance
    solution: Solution
    obstacle: ObstacleEvent


def sample_replan_time(obstacle: ObstacleEvent, disturbed_makespan: float, replan_seed: int,
                       rng: np.random.Generator,
                       resolution: float = config.REPLAN_TIME_RESOLUTION) -> float:
    """
    Replan time for one replan seed.

    Seed 0 draws a time before the obstacle appears, all other seeds draw from
    [appear, min(disappear + buffer, disturbed makespan)].
    """
    appear = obstacle.appear
    if replan_seed == 0:
        if appear <= 0:
            raise ValueError(f"no replan time fits before an obstacle appearing at {appear:g}s")
        low = 1.0 if appear > 1.0 else appear / 2
        # floor keeps t strictly before the appearance
        t = np.floor(float(rng.uniform(low, appear)) / resolution) * resolution
        return round(max(low, min(t, appear - resolution)), 1)
    high = max(appear, min(obstacle.disappear + config.OBSTACLE_BUFFER, disturbed_makespan))
    t = round(float(rng.uniform(appear, high)) / resolution) * resolution
    return round(min(max(t, appear), high), 1)


def admit_instances(grid, map_name: str, agents: int, cfg: GenerationConfig
                    ) -> Tuple[List[_ObstacleTask], List[Failure]]:
    """
    Walk instance seeds from ``first_instance_seed`` until ``cfg.instances`` are admitted.

    An instance is admitted when the planner solves it within its limits and
    ``cfg.obstacle_seeds`` obstacle placements can be sampled for its plan.
    """
    tasks, failures = [], []
    admitted = 0
    seed = cfg.first_instance_seed
    max_seed = cfg.first_instance_seed + 100 * cfg.instances
    while admitted < cfg.instances:
        if seed >= max_seed:
            raise InstanceGenerationError(f"{map_name}/{agents}: only {admitted} of {cfg.instances} "
                                          f"instances admitted before seed {max_seed}")
        try:
            instance = generate_instance(grid, agents, seed)
            solution = solve_1robust(instance, cfg.planner_cfg)
        except PlannerTimeout as e:
            failures.append(Failure(map_name, agents, seed, None, None, 'planner_timeout', str(e)))
            seed += 1
            continue
        except (InfeasibleInstance, InstanceGenerationError) as e:
            failures.append(Failure(map_name, agents, seed, None, None, 'unsolvable', str(e)))
            seed += 1
            continue

        obstacles = []
        obstacle_seed = 0
        while len(obstacles) < cfg.obstacle_seeds and obstacle_seed < OBSTACLE_ATTEMPTS_FACTOR * cfg.obstacle_seeds:
            try:
                obstacles.append((obstacle_seed, sample_obstacle(solution, obstacle_seed)))
            except ObstacleSamplingError as e:
                failures.append(Failure(map_name, agents, seed, obstacle_seed, None, 'obstacle_sampling', str(e)))
            obstacle_seed += 1
        if len(obstacles) < cfg.obstacle_seeds:
            failures.append(Failure(map_name, agents, seed, None, None, 'no_obstacle',
                                    f"makespan {cost_summary(solution).makespan:g}s"))
            seed += 1
            continue

        for obstacle_seed, obstacle in obstacles:
            tasks.append(_ObstacleTask(map_name, agents, seed, obstacle_seed, instance, solution, obstacle))
        admitted += 1
        seed += 1
    logger.info(f"{map_name} with {agents} agents: admitted {admitted} instances "
                f"(seeds {cfg.first_instance_seed}..{seed - 1})")
    return tasks, failures


def _admit_job(args):
    map_name, agents, cfg = args
    grid = load_map(os.path.join(cfg.maps_dir, f"{map_name}.map"))
    return admit_instances(grid, map_name, agents, cfg)


def run_obstacle_task(task: _ObstacleTask, cfg: GenerationConfig
                      ) -> Tuple[List[LabeledRecord], List[Failure]]:
    """Baseline, disturbed and replanned runs for one (instance, obstacle seed)."""
    records, failures = [], []

    def scenario(obstacle=None, replan_time=None):
        return run_scenario(ScenarioConfig(
            solution=task.solution, instance=task.instance, obstacle=obstacle, replan_time=replan_time,
            planner_cfg=cfg.planner_cfg, runtime_clock=cfg.runtime_clock,
            seconds_per_expansion=cfg.seconds_per_expansion))

    def fail(replan_seed, e):
        reason = e.reason if isinstance(e, ScenarioFailure) else 'error'
        failures.append(Failure(task.map_name, task.agents, task.instance_seed, task.obstacle_seed,
                                replan_seed, reason, str(e)))

    try:
        baseline = scenario()
        disturbed = scenario(obstacle=task.obstacle)
    except MapfError as e:
        for replan_seed in range(cfg.replan_seeds):
            fail(replan_seed, e)
        return records, failures

    for replan_seed in range(cfg.replan_seeds):
        rng = np.random.default_rng([task.instance_seed, task.obstacle_seed, replan_seed])
        t = sample_replan_time(task.obstacle, disturbed.makespan, replan_seed, rng)
        try:
            replanned = scenario(obstacle=task.obstacle, replan_time=t)
        except MapfError as e:
            fail(replan_seed, e)
            continue
        features = extract_features(replanned.snapshot, task.instance, task.solution, t)
        soc_eir = replanned.executed_soc
        records.append(LabeledRecord(
            features=features,
            y=disturbed.executed_soc - soc_eir,
            soc_e=baseline.executed_soc,
            soc_ei=disturbed.executed_soc,
            soc_eir=soc_eir,
            soc_eirp=overhead_adjusted_soc(replanned),
            map_name=task.map_name,
            agents=task.agents,
            instance_seed=task.instance_seed,
            obstacle_seed=task.obstacle_seed,
            replan_seed=replan_seed,
            replan_time=t,
        ))
    return records, failures


def _obstacle_job(args):
    task, cfg = args
    return run_obstacle_task(task, cfg)


def _run_jobs(function, jobs: List, workers: int, label: str):
    """Run ``function`` over ``jobs``, in a process pool when ``workers`` > 1."""
    results = []
    if workers <= 1:
        for i, job in enumerate(jobs, 1):
            results.append(function(job))
            if i % 10 == 0 or i == len(jobs):
                logger.info(f"  {label}: {i}/{len(jobs)}")
        return results

    with ProcessPoolExecutor(max_workers=workers) as executor:
        future_to_job = {executor.submit(function, job): i for i, job in enumerate(jobs)}
        ordered = [None] * len(jobs)
        for done, future in enumerate(as_completed(future_to_job), 1):
            ordered[future_to_job[future]] = future.result()
            if done % 10 == 0 or done == len(jobs):
                logger.info(f"  {label}: {done}/{len(jobs)}")
    return ordered


def generate_dataset(cfg: GenerationConfig) -> Tuple[List[LabeledRecord], List[Failure]]:
    """
    Generate every record described by ``cfg``.

    Returns:
        (records sorted by key, failures in generation order)
    """
    logger.info("=" * 60)
    logger.info(f"Generating up to {cfg.experiment_count} experiments on {len(cfg.maps)} maps")
    logger.info("=" * 60)

    pairs = [(name, agents, cfg) for name in cfg.maps for agents in cfg.agent_counts[name]]
    admitted = _run_jobs(_admit_job, pairs, cfg.jobs, 'instances')
    tasks, failures = [], []
    for pair_tasks, pair_failures in admitted:
        tasks.extend(pair_tasks)
        failures.extend(pair_failures)

    outcomes = _run_jobs(_obstacle_job, [(task, cfg) for task in tasks], cfg.jobs, 'scenarios')
    records = []
    for task_records, task_failures in outcomes:
        records.extend(task_records)
        failures.extend(task_failures)

    records.sort(key=lambda record: record.key)
    excluded = sum(1 for failure in failures if failure.replan_seed is not None)
    logger.info(f"Generated {len(records)} records; {excluded} scenarios excluded, "
                f"{len(failures) - excluded} instance/obstacle skips")
    return records, failures


def split_dataset(records: Sequence[LabeledRecord], train_fraction: float = config.TRAIN_FRACTION,
                  seed: int = config.SPLIT_SEED) -> Tuple[List[LabeledRecord], List[LabeledRecord]]:
    """Deterministic shuffled split; the train side gets floor(fraction * n) records."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train fraction must be in (0, 1), got {train_fraction}")
    train_size = int(np.floor(train_fraction * len(records)))
    if train_size == 0 or train_size == len(records):
        raise ValueError(f"cannot split {len(records)} records with fraction {train_fraction}")
    train, test = train_test_split(list(records), train_size=train_size, random_state=seed, shuffle=True)
    return train, test


def _format_float(value: float) -> str:
    return repr(float(value))


def _write_atomic(path: str, header: List[str], rows: List[List[str]]):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = path + '.tmp'
    with open(tmp_path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp_path, path)


def record_row(record: LabeledRecord) -> List[str]:
    return [_format_float(value) for value in record.features] + [
        _format_float(record.y), _format_float(record.soc_e), _format_float(record.soc_ei),
        _format_float(record.soc_eir), _format_float(record.soc_eirp), record.map_name,
        str(record.agents), str(record.instance_seed), str(record.obstacle_seed),
        str(record.replan_seed), _format_float(record.replan_time),
    ]


def write_dataset(records: Sequence[LabeledRecord], path: str):
    """Write records (sorted by key) as CSV through an atomic rename."""
    rows = [record_row(record) for record in sorted(records, key=lambda r: r.key)]
    _write_atomic(path, CSV_HEADER, rows)
    logger.info(f"Wrote {len(rows)} records to {path}")


def failures_path(path: str) -> str:
    root, _ = os.path.splitext(path)
    return root + '.failures.csv'


def write_failures(failures: Sequence[Failure], path: str):
    _write_atomic(path, FAILURE_HEADER, [failure.row() for failure in failures])
    if failures:
        logger.warning(f"{len(failures)} skipped or failed combinations logged to {path}")


def read_dataset(path: str) -> List[LabeledRecord]:
    """Load a dataset CSV; the header must match the canonical column order."""
    with open(path, 'r', newline='') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise DatasetError(f"{path}: unexpected header")
        records = []
        for line_no, row in enumerate(reader, 2):
            if len(row) != len(CSV_HEADER):
                raise DatasetError(f"{path}:{line_no}: expected {len(CSV_HEADER)} columns, got {len(row)}")
            try:
                features = np.array([float(value) for value in row[:FEATURE_COUNT]], dtype=np.float64)
                meta = dict(zip(METADATA_COLUMNS, row[FEATURE_COUNT:]))
                records.append(LabeledRecord(
                    features=features,
                    y=float(meta['y']),
                    soc_e=float(meta['soc_e']),
                    soc_ei=float(meta['soc_ei']),
                    soc_eir=float(meta['soc_eir']),
                    soc_eirp=float(meta['soc_eirp']),
                    map_name=meta['map'],
                    agents=int(meta['agents']),
                    instance_seed=int(meta['inst_seed']),
                    obstacle_seed=int(meta['obs_seed']),
                    replan_seed=int(meta['replan_seed']),
                    replan_time=float(meta['replan_t']),
                ))
            except ValueError as e:
                raise DatasetError(f"{path}:{line_no}: {e}")
    return records


def to_arrays(records: Sequence[LabeledRecord]) -> Tuple[np.ndarray, np.ndarray]:
    """Feature matrix and target vector."""
    if not records:
        return np.zeros((0, FEATURE_COUNT)), np.zeros(0)
    return np.vstack([record.features for record in records]), np.array([record.y for record in records])
