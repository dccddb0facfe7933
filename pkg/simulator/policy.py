#coding=utf8
""" Synthetic rollout generator. A policy is reduced to three knobs: how often it answers from the
language prior and ignores the image (g), how much entropy it re-injects at the end of its
reasoning (d), and how accurate genuinely grounded reasoning is (a).
"""
import sys, os
import numpy as np
from dataclasses import dataclass
from typing import List, Sequence, Tuple
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import ConfigError
from utils.example import ANSWER_LETTERS, BLANK, ORIGINAL, RolloutPair
from prosr.trajectory import DEFAULT_RATIOS, THINK_CLOSE, THINK_OPEN, segment_bounds
from preprocess.rollout_reader import RolloutRecord, record_to_rollout


@dataclass(frozen=True)
class PolicyParams:
    g: float # probability of taking the language-prior shortcut
    d: float # tail bump added to late-segment entropies, nats
    a: float # answer accuracy under genuine grounding

    def __post_init__(self):
        if not 0. <= self.g <= 1.: raise ConfigError('g', f'must lie in [0, 1], got {self.g!r}')
        if self.d < 0: raise ConfigError('d', f'must be >= 0, got {self.d!r}')
        if not 0. <= self.a <= 1.: raise ConfigError('a', f'must lie in [0, 1], got {self.a!r}')


    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.g, self.d, self.a)


@dataclass
class EnvConfig:
    p_prior: float = 0.8
    a_max: float = 0.75
    span_len: int = 64
    template_start: float = 1.5
    template_end: float = 0.3
    noise_sigma: float = 0.05
    spike_rate: float = 0.1
    spike_height: float = 2.0
    floor_sigma: float = 0.02
    d_max: float = 2.0
    episodes_per_eval: int = 200
    block_size: int = 50
    final_episodes: int = 1000
    emit_episodes: int = 200
    seed: int = 999

    def __post_init__(self):
        if not 0.25 < self.p_prior <= 1.:
            raise ConfigError('p_prior', f'must lie in (0.25, 1] so the shortcut beats chance, got {self.p_prior!r}')
        if not 0. <= self.a_max <= 1.:
            raise ConfigError('a_max', f'must lie in [0, 1], got {self.a_max!r}')
        if self.span_len < 3:
            raise ConfigError('span_len', f'must be >= 3 for three segments, got {self.span_len!r}')
        for key in ['template_start', 'template_end', 'noise_sigma', 'spike_height', 'floor_sigma', 'd_max']:
            if getattr(self, key) < 0:
                raise ConfigError(key, f'must be >= 0, got {getattr(self, key)!r}')
        if not 0. < self.spike_rate <= 1.:
            raise ConfigError('spike_rate', f'must lie in (0, 1], got {self.spike_rate!r}')
        if self.episodes_per_eval < 100:
            raise ConfigError('episodes_per_eval', f'must be >= 100, got {self.episodes_per_eval!r}')
        for key in ['block_size', 'final_episodes', 'emit_episodes']:
            if getattr(self, key) < 1:
                raise ConfigError(key, f'must be a positive integer, got {getattr(self, key)!r}')


    def template(self) -> np.ndarray:
        return np.linspace(self.template_start, self.template_end, self.span_len)


    def clip(self, g: float, d: float, a: float) -> PolicyParams:
        return PolicyParams(g=float(min(max(g, 0.), 1.)), d=float(min(max(d, 0.), self.d_max)), a=float(min(max(a, 0.), self.a_max)))


@dataclass
class EpisodeBlock:
    reference: np.ndarray # [B] answer indices
    answer_original: np.ndarray # [B]
    answer_blank: np.ndarray # [B]
    shortcut: np.ndarray # [B] bool
    traj_original: np.ndarray # [B, L]
    traj_blank: np.ndarray # [B, L]

    def __len__(self) -> int:
        return self.reference.size


def block_rng(seed: int, block: int) -> np.random.Generator:
    """ Counter-based stream of one episode block. """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def _wrong_answer(reference: np.ndarray, offset: np.ndarray) -> np.ndarray:
    return (reference + 1 + offset) % len(ANSWER_LETTERS)


def generate_block(params: PolicyParams, env: EnvConfig, rng: np.random.Generator, n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> EpisodeBlock:
    """ n episodes. The draws happen in a fixed order and never depend on params, so two policies
    evaluated on the same stream see the same random numbers. The tail bump covers the late
    segment of `ratios`, the segmentation the drift penalty is scored with.
    """
    L = env.span_len
    u_shortcut, u_original, u_blank = rng.random(n), rng.random(n), rng.random(n)
    k_original, k_blank = rng.integers(0, 3, n), rng.integers(0, 3, n)
    reference = rng.integers(0, len(ANSWER_LETTERS), n)
    noise_original = rng.normal(0., env.noise_sigma, (n, L))
    noise_copy = rng.normal(0., env.noise_sigma, (n, L))
    spikes = rng.random((n, L)) < env.spike_rate
    floor = np.abs(rng.normal(0., env.floor_sigma, (n, L)))

    shortcut = u_shortcut < params.g
    correct_original = u_original < np.where(shortcut, env.p_prior, params.a)
    answer_original = np.where(correct_original, reference, _wrong_answer(reference, k_original))
    correct_blank = u_blank < env.p_prior
    answer_blank = np.where(shortcut, answer_original, np.where(correct_blank, reference, _wrong_answer(reference, k_blank)))

    shape = env.template().copy()
    _, b2 = segment_bounds(L, ratios)
    shape[b2:] += params.d
    traj_original = np.maximum(shape[None, :] + noise_original, 0.)
    traj_copy = np.maximum(shape[None, :] + noise_copy, 0.)
    traj_fresh = np.where(spikes, env.spike_height, floor)
    traj_blank = np.where(shortcut[:, None], traj_copy, traj_fresh)
    return EpisodeBlock(reference, answer_original, answer_blank, shortcut, traj_original, traj_blank)


def generate_episodes(params: PolicyParams, env: EnvConfig, seed: int, n: int, ratios: Sequence[float] = DEFAULT_RATIOS) -> EpisodeBlock:
    """ n episodes over fixed-size blocks, block b drawn from stream (seed, b). The first k
    episodes do not depend on n.
    """
    blocks, remaining, b = [], n, 0
    while remaining > 0:
        block = generate_block(params, env, block_rng(seed, b), env.block_size, ratios)
        blocks.append(block if remaining >= env.block_size else slice_block(block, remaining))
        remaining -= env.block_size
        b += 1
    return concat_blocks(blocks)


def slice_block(block: EpisodeBlock, n: int) -> EpisodeBlock:
    return EpisodeBlock(*[getattr(block, k)[:n] for k in EpisodeBlock.__dataclass_fields__])


def concat_blocks(blocks: List[EpisodeBlock]) -> EpisodeBlock:
    return EpisodeBlock(*[np.concatenate([getattr(b, k) for b in blocks], axis=0) for k in EpisodeBlock.__dataclass_fields__])


def render_output(trajectory: np.ndarray, answer: str) -> Tuple[str, List[float], List[Tuple[int, int]]]:
    """ <think>s0 s1 ...</think><answer>X</answer> with one token per step; tag tokens carry entropy 0. """
    tokens = [(THINK_OPEN, 0.)] + [(f's{i:d}' if i == 0 else f' s{i:d}', float(h)) for i, h in enumerate(trajectory)] + \
        [(THINK_CLOSE, 0.), ('<answer>', 0.), (answer, 0.), ('</answer>', 0.)]
    text, entropies, offsets = '', [], []
    for token, h in tokens:
        offsets.append((len(text), len(text) + len(token)))
        text += token
        entropies.append(h)
    return text, entropies, offsets


def block_to_records(block: EpisodeBlock, prefix: str = 'sim') -> List[RolloutRecord]:
    """ Two records (original, blank) per episode in the rollout log schema. """
    records, width = [], max(1, len(str(len(block) - 1)))
    for i in range(len(block)):
        sample_id = f'{prefix}-{i:0{width}d}'
        reference = ANSWER_LETTERS[int(block.reference[i])]
        for condition, traj, answer in [(ORIGINAL, block.traj_original[i], block.answer_original[i]), (BLANK, block.traj_blank[i], block.answer_blank[i])]:
            text, entropies, offsets = render_output(traj, ANSWER_LETTERS[int(answer)])
            records.append(RolloutRecord(sample_id=sample_id, condition=condition, output_text=text, reference_answer=reference,
                token_entropies=entropies, token_offsets=offsets, entropies=entropies))
    return records


def generate_pair(params: PolicyParams, env: EnvConfig, rng: np.random.Generator, sample_id: str = 'sim-0', min_span_len: int = 10) -> RolloutPair:
    records = block_to_records(generate_block(params, env, rng, 1))
    original, blank = [record_to_rollout(r, min_span_len) for r in records]
    original.sample_id = blank.sample_id = sample_id
    return RolloutPair(sample_id, original, blank, records[0].reference_answer)
