#coding=utf8
""" Process-aware shaped reward: outcome reward (accuracy + format), the counterfactual
invariance penalty gated on identical answers, the late-stage drift penalty and GRPO
group-normalized advantages.
"""
import sys, os, logging
import torch
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import ConfigError, InputError
from utils.example import BLANK, ORIGINAL, Rollout, RolloutPair, match_template
from prosr.trajectory import DEFAULT_EPS, DEFAULT_MIN_SPAN_LEN, DEFAULT_RATIOS, DEFAULT_T
from eval.diagnostics import rollout_tail_delta, trajectory_similarity


logger = logging.getLogger('prosr')

NO_BLANK_FOUND = 'no_blank_probe'
ORIGINAL_SPAN_INVALID = 'original_span_invalid'
BLANK_SPAN_INVALID = 'blank_span_invalid'


@dataclass
class RewardConfig:
    lambda_fmt: float = 0.2
    lambda_cf: float = 0.1
    lambda_drift: float = 0.1
    tau_cf: float = 0.4
    margin_m: float = 0.1
    T: int = DEFAULT_T
    eps: float = DEFAULT_EPS
    segment_ratios: Tuple[float, float, float] = DEFAULT_RATIOS
    min_span_len: int = DEFAULT_MIN_SPAN_LEN
    std_floor: float = 1e-6

    def __post_init__(self):
        for key in ['lambda_fmt', 'lambda_cf', 'lambda_drift', 'margin_m']:
            if getattr(self, key) < 0:
                raise ConfigError(key, f'must be >= 0, got {getattr(self, key)!r}')
        if not 0. <= self.tau_cf < 1.:
            raise ConfigError('tau_cf', f'must lie in [0, 1) so that 1 - tau_cf > 0, got {self.tau_cf!r}')
        if self.T < 1:
            raise ConfigError('T', f'must be a positive integer, got {self.T!r}')
        if self.eps <= 0:
            raise ConfigError('eps', f'must be > 0, got {self.eps!r}')
        if len(self.segment_ratios) != 3 or any(r <= 0 for r in self.segment_ratios):
            raise ConfigError('segment_ratios', f'must be three positive reals, got {list(self.segment_ratios)!r}')
        self.segment_ratios = tuple(float(r) for r in self.segment_ratios)
        if self.min_span_len < 1:
            raise ConfigError('min_span_len', f'must be a positive integer, got {self.min_span_len!r}')
        if self.std_floor <= 0:
            raise ConfigError('std_floor', f'must be > 0, got {self.std_floor!r}')


@dataclass
class ShapedReward:
    r_acc: float
    r_fmt: float
    r_cf: float
    r_drift: float
    total: float
    flags: List[str] = field(default_factory=list)
    s_cf: Optional[float] = None
    delta_tail: Optional[float] = None


@dataclass
class GroupAdvantages:
    rewards: List[float]
    advantages: List[float]


def _add_flag(flags: List[str], flag: str):
    if flag not in flags: flags.append(flag)


def r_acc(rollout: Rollout, reference: str) -> float:
    return 1. if rollout.answer is not None and rollout.answer == reference else 0.


def r_fmt(raw_text: str) -> float:
    return 1. if match_template(raw_text) else 0.


def cf_penalty(s: float, tau: float) -> float:
    """ -clip((s - tau) / (1 - tau), 0, 1) """
    return -min(1., max(0., (s - tau) / (1. - tau))) + 0.


def drift_penalty(delta: float) -> float:
    """ -clip(delta, 0, 1) for delta = [H_L - H_M - m]_+ """
    return -min(1., max(0., delta)) + 0.


def counterfactual_similarity(pair: RolloutPair, cfg: RewardConfig) -> float:
    return trajectory_similarity(pair.original, pair.blank, cfg.T, cfg.eps)


def _cf_term(pair: RolloutPair, cfg: RewardConfig, flags: List[str]) -> Tuple[float, Optional[float]]:
    """ Counterfactual invariance penalty, only charged when both conditions give the same answer.
    @return:
        (r_cf, s_cf or None when not computed)
    """
    if pair.blank is None:
        _add_flag(flags, NO_BLANK_FOUND)
        return 0., None
    if not pair.same_answer: return 0., None
    if not pair.original.valid:
        _add_flag(flags, ORIGINAL_SPAN_INVALID)
        return 0., None
    if not pair.blank.valid:
        _add_flag(flags, BLANK_SPAN_INVALID)
        return 0., None
    s = counterfactual_similarity(pair, cfg)
    return cf_penalty(s, cfg.tau_cf), s


def _drift_term(rollout: Rollout, cfg: RewardConfig, flags: List[str]) -> Tuple[float, Optional[float]]:
    delta = rollout_tail_delta(rollout, cfg.margin_m, cfg.segment_ratios)
    if delta is None:
        _add_flag(flags, ORIGINAL_SPAN_INVALID)
        return 0., None
    return drift_penalty(delta), delta


def r_cf(pair: RolloutPair, cfg: RewardConfig) -> float:
    return _cf_term(pair, cfg, [])[0]


def r_drift(rollout: Rollout, cfg: RewardConfig) -> float:
    return _drift_term(rollout, cfg, [])[0]


def total_reward(pair: RolloutPair, reference: str, cfg: RewardConfig) -> ShapedReward:
    """ The shaped reward of the original-condition rollout; the blank rollout only enters through s_cf. """
    flags = []
    acc, fmt = r_acc(pair.original, reference), r_fmt(pair.original.raw_text)
    cf, s = _cf_term(pair, cfg, flags)
    drift, delta = _drift_term(pair.original, cfg, flags)
    total = acc + cfg.lambda_fmt * fmt + cfg.lambda_cf * cf + cfg.lambda_drift * drift
    return ShapedReward(r_acc=acc, r_fmt=fmt, r_cf=cf, r_drift=drift, total=total, flags=flags, s_cf=s, delta_tail=delta)


def group_advantages(rewards: Sequence[float], std_floor: float = 1e-6) -> GroupAdvantages:
    """ (r_i - mean) / max(std, std_floor) with the population standard deviation. """
    if len(rewards) < 2:
        raise InputError(f'group advantages need at least 2 rewards, got {len(rewards):d}')
    r = torch.tensor([float(x) for x in rewards], dtype=torch.float64)
    centered = r - r.mean()
    std = centered.pow(2).mean().sqrt()
    advantages = centered / torch.clamp(std, min=std_floor)
    return GroupAdvantages(rewards=r.tolist(), advantages=(advantages + 0.).tolist())


def match_blanks(rollouts: Sequence[Rollout]) -> List[Tuple[Rollout, Optional[Rollout]]]:
    """ Attach a blank rollout to every original one: the blank with the same sample_id if
    there is exactly one, else the only blank of its group_id, else None.
    """
    by_sample, by_group = defaultdict(list), defaultdict(list)
    for r in rollouts:
        if r.condition == BLANK:
            by_sample[r.sample_id].append(r)
            if r.group_id is not None: by_group[r.group_id].append(r)
    matched = []
    for r in rollouts:
        if r.condition != ORIGINAL: continue
        blank = None
        if len(by_sample[r.sample_id]) == 1:
            blank = by_sample[r.sample_id][0]
        elif len(by_sample[r.sample_id]) == 0 and r.group_id is not None and len(by_group[r.group_id]) == 1:
            blank = by_group[r.group_id][0]
        matched.append((r, blank))
    return matched


def batch_rewards(rollouts: Sequence[Rollout], references: Dict[str, str], cfg: RewardConfig) -> List[dict]:
    """ One reward record per original rollout, in input order, with group advantages
    for every group_id holding at least two original rollouts.
    """
    records = []
    for orig, blank in match_blanks(rollouts):
        if orig.sample_id not in references:
            raise InputError(f'no reference_answer for sample {orig.sample_id}', line_no=orig.line_no, field='reference_answer')
        pair = RolloutPair(orig.sample_id, orig, blank, references[orig.sample_id])
        reward = total_reward(pair, pair.reference_answer, cfg)
        records.append({
            'sample_id': orig.sample_id, 'group_id': orig.group_id,
            'r_acc': reward.r_acc, 'r_fmt': reward.r_fmt, 'r_cf': reward.r_cf, 'r_drift': reward.r_drift,
            'total': reward.total, 'flags': list(orig.flags) + reward.flags,
            's_cf': reward.s_cf, 'delta_tail': reward.delta_tail, 'advantage': None
        })

    groups = defaultdict(list)
    for idx, record in enumerate(records):
        if record['group_id'] is not None: groups[record['group_id']].append(idx)
    for group_id, members in groups.items():
        if len(members) < 2:
            logger.info(f'Group {group_id} has a single original rollout, advantage left null')
            continue
        adv = group_advantages([records[i]['total'] for i in members], cfg.std_floor)
        for i, a in zip(members, adv.advantages):
            records[i]['advantage'] = a
    n_missing = sum(1 for r in records if NO_BLANK_FOUND in r['flags'])
    logger.info(f'Computed {len(records):d} shaped rewards over {len(groups):d} groups ({n_missing:d} without a blank rollout)')
    return records
