import logging
import os

import pytest

import config
from dataset import GenerationConfig
from ml_replan_predictor.model import TrainConfig

CONFIGS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')


def test_values_take_the_type_of_their_default():
    values = config.parse_config('instances = 7\nlearning_rate = 0.01\nmaps = lab, arena\n'
                                 'agents = 5,10\nruntime_clock = work\n')
    assert values['instances'] == 7
    assert values['learning_rate'] == 0.01
    assert values['maps'] == ['lab', 'arena']
    assert values['agents'] == [5, 10]
    assert values['runtime_clock'] == 'work'
    assert values['batch_size'] == config.BATCH_SIZE


def test_unknown_key_names_the_line():
    with pytest.raises(config.ConfigError, match="line 2: unknown key 'colour'"):
        config.parse_config('instances = 1\ncolour = blue\n')


def test_bad_value_names_the_line():
    with pytest.raises(config.ConfigError, match='line 1: bad value'):
        config.parse_config('instances = many\n')
    with pytest.raises(config.ConfigError, match='line 3'):
        config.parse_config('\n# header\nagents = 5, x\n')
    with pytest.raises(config.ConfigError, match='expected key=value'):
        config.parse_config('instances 4\n')


def test_comments_and_blank_lines():
    values = config.parse_config('# comment\n\ninstances = 3  # trailing\n')
    assert values['instances'] == 3


def test_per_map_agent_override():
    values = config.parse_config('maps = lab, arena\nagents = 5\nagents.arena = 15, 20\n')
    assert values['agents.arena'] == [15, 20]
    assert GenerationConfig.from_values(values).agent_counts == {'lab': [5], 'arena': [15, 20]}


def test_explicit_keys(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('# runtime_clock = wall\ninstances = 2\nthreshold=2.0\n')
    assert config.explicit_keys(str(path)) == {'instances', 'threshold'}


@pytest.mark.parametrize('name, experiments', [('desk.cfg', 600), ('full.cfg', 12000)])
def test_shipped_configs(name, experiments):
    values = config.load_config(os.path.join(CONFIGS_DIR, name))
    generation = GenerationConfig.from_values(values)
    assert generation.experiment_count == experiments
    assert generation.runtime_clock == 'work'
    TrainConfig.from_values(values)


def test_learning_rate_steps_down_every_decay_period():
    assert config.get_learning_rate(0, 0.1, 0.5, 10) == 0.1
    assert config.get_learning_rate(9, 0.1, 0.5, 10) == 0.1
    assert config.get_learning_rate(10, 0.1, 0.5, 10) == 0.05
    assert config.get_learning_rate(35, 0.1, 0.5, 10) == pytest.approx(0.0125)


def test_setup_logging_writes_file(tmp_path):
    log_path = tmp_path / 'run.log'
    config.setup_logging('DEBUG', str(log_path))
    logging.getLogger('test_config').debug('hello from the test')
    for handler in logging.getLogger().handlers:
        handler.flush()
    assert 'DEBUG - hello from the test' in log_path.read_text()
    config.setup_logging('WARNING')
    assert logging.getLogger().level == logging.WARNING


def test_ensure_directories(tmp_path):
    first, second = tmp_path / 'a' / 'b', tmp_path / 'c'
    config.ensure_directories(str(first), str(second))
    config.ensure_directories(str(first))
    assert first.is_dir() and second.is_dir()
