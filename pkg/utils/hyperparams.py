#coding=utf8
""" Layered configuration: built-in defaults < flat JSON config file < command-line flags.
Every key belongs to exactly one section dataclass; unknown keys and wrong types are rejected.
"""
import json, os, sys
from dataclasses import dataclass, fields
from typing import Dict, Optional
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import ConfigError, InputError
from prosr.rewards import RewardConfig
from eval.diagnostics import DiagnosticsConfig
from preprocess.cot_filter import FilterConfig
from simulator.policy import EnvConfig
from simulator.search import SearchConfig


CONFIG_ENV = 'PROSR_CONFIG'
SECTIONS = {'reward': RewardConfig, 'diagnostics': DiagnosticsConfig, 'filter': FilterConfig, 'env': EnvConfig, 'search': SearchConfig}

CONFIG_HELP = {
    'lambda_fmt': 'weight of the format reward',
    'lambda_cf': 'weight of the counterfactual invariance penalty',
    'lambda_drift': 'weight of the late-stage drift penalty',
    'tau_cf': 'similarity tolerated before the invariance penalty starts, in [0, 1)',
    'margin_m': 'late-minus-middle entropy margin ignored by the drift penalty, nats',
    'T': 'resampled trajectory length',
    'eps': 'stabilizer of the l1 normalization',
    'segment_ratios': 'early:middle:late length ratios',
    'min_span_len': 'shortest think span (tokens) counted as valid',
    'std_floor': 'lower bound of the group std in advantage normalization',
    'nts_cut': 'similarity above which a same-answer pair is a spurious-grounding failure',
    'lrr_tau': 'tail delta above which a rollout is a tail-instability failure',
    'lrr_taus': 'thresholds reported for the late rise rate',
    'tau_grid': 'similarity cutoffs of the threshold scan',
    'margin_grid': 'margins of the threshold scan',
    'min_len': 'minimum chain-of-thought length, words',
    'max_len': 'maximum chain-of-thought length, words',
    'max_reconsider': 'maximum number of reconsideration markers',
    'max_repeated_sentences': 'maximum number of repeated sentences',
    'min_anchor_ratio': 'minimum spatial-anchor ratio',
    'reconsider_markers_file': 'reconsideration marker list, one phrase per line',
    'spatial_lexicon_file': 'spatial lexicon, one phrase or re: pattern per line',
    'reconsider_markers': 'reconsideration markers given inline, replaces the file',
    'spatial_lexicon': 'spatial lexicon entries given inline, replaces the file',
    'p_prior': 'accuracy of the language-prior shortcut',
    'a_max': 'highest accuracy grounded reasoning can reach',
    'span_len': 'think span length of simulated rollouts',
    'template_start': 'entropy at the start of the simulated span, nats',
    'template_end': 'entropy at the end of the simulated span, nats',
    'noise_sigma': 'std of the per-token entropy noise',
    'spike_rate': 'spike probability of ungrounded blank trajectories',
    'spike_height': 'spike entropy of ungrounded blank trajectories, nats',
    'floor_sigma': 'std of the entropy floor of ungrounded blank trajectories',
    'd_max': 'upper bound of the tail bump d',
    'episodes_per_eval': 'episodes per search evaluation',
    'block_size': 'episodes per random stream block',
    'final_episodes': 'episodes of the final evaluation of each arm',
    'emit_episodes': 'episodes written to the rollout log of each arm',
    'seed': 'random seed',
    'iterations': 'hill-climb iterations',
    'population': 'candidates proposed per iteration',
    'sigma_g': 'perturbation std of g',
    'sigma_d': 'perturbation std of d',
    'sigma_a': 'perturbation std of a',
    'init_g': 'initial shortcut strength',
    'init_d': 'initial tail bump',
    'init_a': 'initial grounded accuracy',
    'min_gain': 'a coordinate move gaining less reward than this is undone before acceptance',
}


@dataclass
class ResolvedConfig:
    reward: RewardConfig
    diagnostics: DiagnosticsConfig
    filter: FilterConfig
    env: EnvConfig
    search: SearchConfig


    def to_dict(self) -> dict:
        """ The flat key -> value view echoed into every report. """
        flat = {}
        for section in SECTIONS:
            for f in fields(getattr(self, section)):
                if not f.init: continue
                value = getattr(getattr(self, section), f.name)
                flat[f.name] = list(value) if isinstance(value, tuple) else value
        return flat


def section_fields(section: str):
    return [f for f in fields(SECTIONS[section]) if f.init]


def config_keys() -> Dict[str, str]:
    """ key -> section """
    keys = {}
    for section in SECTIONS:
        for f in section_fields(section):
            assert f.name not in keys, f'duplicate config key {f.name}'
            keys[f.name] = section
    return keys


def default_value(key: str):
    section = config_keys()[key]
    return getattr(SECTIONS[section](), key)


def coerce_value(key: str, value, default):
    """ Type-check a config value against the type of its default. """
    def is_number(v): return isinstance(v, (int, float)) and not isinstance(v, bool)
    if isinstance(default, bool):
        if not isinstance(value, bool): raise ConfigError(key, f'expected a boolean, got {value!r}')
        return value
    if isinstance(default, int):
        if isinstance(value, float) and value.is_integer(): value = int(value)
        if not isinstance(value, int) or isinstance(value, bool): raise ConfigError(key, f'expected an integer, got {value!r}')
        return value
    if isinstance(default, float):
        if not is_number(value): raise ConfigError(key, f'expected a number, got {value!r}')
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(is_number(v) for v in value):
            raise ConfigError(key, f'expected a list of numbers, got {value!r}')
        return tuple(float(v) for v in value)
    if isinstance(default, str):
        if not isinstance(value, str): raise ConfigError(key, f'expected a string, got {value!r}')
        return value
    # inline word lists default to None
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise ConfigError(key, f'expected a list of strings, got {value!r}')
    return list(value)


def read_config_file(path: str) -> dict:
    try:
        with open(path, 'r', encoding='utf-8') as inf:
            text = inf.read()
    except OSError as e:
        raise InputError(f'cannot read config file {path}: {e}', field='--config')
    if not text.strip(): return {}
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise InputError(f'malformed config file {path} ({e.msg})', line_no=e.lineno, field='--config')
    if not isinstance(obj, dict):
        raise InputError(f'config file {path} must hold a JSON object', field='--config')
    return obj


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> ResolvedConfig:
    """ Resolve the configuration.
    @args:
        path: flat JSON object of key -> value, None for built-in defaults only
        overrides: key -> value from the command line, None values are ignored
    """
    keys = config_keys()
    defaults = {section: SECTIONS[section]() for section in SECTIONS}
    values = {section: {} for section in SECTIONS}
    layers = [read_config_file(path) if path else {}, {k: v for k, v in (overrides or {}).items() if v is not None}]
    for layer in layers:
        for key, value in layer.items():
            if key not in keys:
                raise ConfigError(key, 'unknown configuration key')
            values[keys[key]][key] = coerce_value(key, value, getattr(defaults[keys[key]], key))
    return ResolvedConfig(**{section: SECTIONS[section](**values[section]) for section in SECTIONS})
