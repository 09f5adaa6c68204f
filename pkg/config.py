"""
Configuration file for the MAPF replanning-prediction toolkit.
Contains all system parameters and settings.

Values here are defaults. Flat ``key=value`` files (see ``configs/``) override
them through ``load_config``.
"""

import logging
import os
import sys

# Execution Configuration
ACTION_DURATION = 1.0  # Seconds per action, planned and executed
OBSTACLE_BUFFER = 3.0  # Seconds between obstacle appearance and the blocked visit
PROPAGATION_TICK = 0.1  # Epsilon added to overdue running-action estimates

# Planner Configuration
SUBOPTIMALITY_BOUND = 1.0  # 1.0 means optimal
PLANNER_TIMEOUT = 60.0  # Seconds; instances not solved in time are skipped
PLANNER_NODE_LIMIT = 20000  # High-level CBS nodes before giving up

# Replanning overhead clock: 'wall' measures the solver, 'work' counts expansions
RUNTIME_CLOCK = 'wall'
SECONDS_PER_EXPANSION = 2e-5

# Feature Configuration
# Window sizes n for the parameterized action-delay features
FEATURE_WINDOWS = [1, 3, 5, 7, 10, 15, 20]

# Dataset Configuration
MAPS_DIRECTORY = 'maps'
OUTPUT_DIRECTORY = 'output'
REPLAN_TIME_RESOLUTION = 0.1  # Sampled replan times are rounded to this
TRAIN_FRACTION = 0.7
SPLIT_SEED = 0

# Training Configuration
BATCH_SIZE = 64
MAX_EPOCHS = 500
EARLY_STOP_PATIENCE = 100
VALIDATION_SPLIT = 0.2
INITIAL_LEARNING_RATE = 0.001
DECAY_RATE = 0.96
DECAY_STEPS = 100
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
HIDDEN_LAYERS = [64, 32, 16]
TRAIN_SEED = 0
CV_FOLDS = 5

# Evaluation Configuration
DECISION_THRESHOLD = 1.0  # tau in seconds; also the truth threshold by default
HISTOGRAM_BINS = 20
IMPORTANCE_REPEATS = 5
IMPORTANCE_SEED = 0

def get_learning_rate(step, initial=INITIAL_LEARNING_RATE, decay_rate=DECAY_RATE,
                      decay_steps=DECAY_STEPS):
    """
    Step-decay learning rate for optimizer step ``step``.
    eta(s) = eta0 * gamma ** floor(s / s_decay)
    """
    return initial * decay_rate ** (step // decay_steps)

# Benchmark map download (MovingAI)
MOVINGAI_SERVERS = [
    'https://movingai.com/benchmarks/mapf',
    'https://www.movingai.com/benchmarks/mapf',
]
MOVINGAI_MAPS = ['random-32-32-20', 'room-32-32-4']
MAP_DOWNLOAD_DELAY = 0.5  # Seconds between downloads
MAX_DOWNLOAD_THREADS = 2

# Logging Configuration
LOG_LEVEL = 'INFO'  # DEBUG, INFO, WARNING, ERROR
LOG_FILE = None  # Set to a path to also log to a file
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

class ConfigError(Exception):
    """Raised for malformed or unknown configuration entries."""

# Keys accepted in key=value files, with the default used for type coercion
CONFIG_DEFAULTS = {
    'maps': [],
    'agents': [],
    'instances': 1,
    'obstacle_seeds': 1,
    'replan_seeds': 1,
    'first_instance_seed': 0,
    'output': os.path.join(OUTPUT_DIRECTORY, 'dataset.csv'),
    'maps_dir': MAPS_DIRECTORY,
    'jobs': 1,
    'planner_timeout': PLANNER_TIMEOUT,
    'planner_node_limit': PLANNER_NODE_LIMIT,
    'suboptimality_bound': SUBOPTIMALITY_BOUND,
    'runtime_clock': RUNTIME_CLOCK,
    'seconds_per_expansion': SECONDS_PER_EXPANSION,
    'train_fraction': TRAIN_FRACTION,
    'split_seed': SPLIT_SEED,
    'batch_size': BATCH_SIZE,
    'max_epochs': MAX_EPOCHS,
    'patience': EARLY_STOP_PATIENCE,
    'validation_split': VALIDATION_SPLIT,
    'learning_rate': INITIAL_LEARNING_RATE,
    'decay_rate': DECAY_RATE,
    'decay_steps': DECAY_STEPS,
    'train_seed': TRAIN_SEED,
    'cv_folds': CV_FOLDS,
    'threshold': DECISION_THRESHOLD,
    'histogram_bins': HISTOGRAM_BINS,
    'importance_repeats': IMPORTANCE_REPEATS,
    'importance_seed': IMPORTANCE_SEED,
}

def _coerce(key, raw, default, line_no):
    """Convert a raw string to the type of ``default``."""
    try:
        if isinstance(default, bool):
            lowered = raw.lower()
            if lowered not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(raw)
            return lowered in ('true', '1', 'yes')
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            items = [item.strip() for item in raw.split(',') if item.strip()]
            if key == 'agents':
                return [int(item) for item in items]
            return items
        return raw
    except ValueError:
        raise ConfigError(f"line {line_no}: bad value for '{key}': {raw!r}")

def parse_config(text):
    """
    Parse flat key=value text into a dict of typed values.

    Args:
        text: Config file contents

    Returns:
        Dictionary with every key of CONFIG_DEFAULTS, overridden where given
    """
    values = dict(CONFIG_DEFAULTS)
    for line_no, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"line {line_no}: expected key=value, got {line!r}")
        key, raw = (part.strip() for part in line.split('=', 1))
        if key.startswith('agents.') and len(key) > len('agents.'):
            # per-map override, e.g. agents.arena = 15,20,25
            values[key] = _coerce('agents', raw, [], line_no)
            continue
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"line {line_no}: unknown key '{key}'")
        values[key] = _coerce(key, raw, CONFIG_DEFAULTS[key], line_no)
    return values

def load_config(path):
    """Load a key=value config file."""
    with open(path, 'r') as f:
        return parse_config(f.read())

def explicit_keys(path):
    """Keys set in a config file, so callers can tell overrides from defaults."""
    keys = set()
    with open(path, 'r') as f:
        for line in f:
            line = line.split('#', 1)[0].strip()
            if '=' in line:
                keys.add(line.split('=', 1)[0].strip())
    return keys

def setup_logging(level=None, log_file=None):
    """Configure root logging; progress goes to standard error."""
    handlers = [logging.StreamHandler(sys.stderr)]
    log_file = log_file or LOG_FILE
    if log_file:
        handlers.append(logging.FileHandler(log_file))
    logging.basicConfig(
        level=getattr(logging, level or LOG_LEVEL),
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )

def ensure_directories(*paths):
    """Ensure all required directories exist."""
    for directory in paths or (MAPS_DIRECTORY, OUTPUT_DIRECTORY):
        if directory:
            os.makedirs(directory, exist_ok=True)
