#coding=utf8
""" Monte-Carlo evaluation of a synthetic policy under the outcome-only or the shaped reward, and a
seeded (1+lambda) hill-climb over (g, d, a) to see where each reward drives the policy.
"""
import math, sys, os, logging, time
import numpy as np
import pandas as pd
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Callable, Dict, List, Sequence
from tqdm import tqdm
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.errors import ConfigError
from prosr.rewards import RewardConfig
from prosr.trajectory import DEFAULT_RATIOS, l1_normalize_batch, resample_batch, segment_means_batch, similarity_batch
from eval.scan import threshold_scan
from simulator.policy import EnvConfig, EpisodeBlock, PolicyParams, block_rng, generate_block, generate_episodes, slice_block


logger = logging.getLogger('prosr')

FINAL_EVAL_KEY = 1_000_003
ARMS = ('base', 'shaped')
ABLATION_ARMS = ('base', 'cf_only', 'drift_only', 'shaped')
METRICS = ('mean_reward', 'a_img', 'a_blank', 'sar', 'nts', 'lrr', 'mean_r_cf', 'mean_r_drift')


@dataclass
class SearchConfig:
    iterations: int = 200
    population: int = 4
    sigma_g: float = 0.05
    sigma_d: float = 0.05
    sigma_a: float = 0.05
    init_g: float = 0.3
    init_d: float = 0.8
    init_a: float = 0.6
    min_gain: float = 1e-4

    def __post_init__(self):
        if self.iterations < 0: raise ConfigError('iterations', f'must be >= 0, got {self.iterations!r}')
        if self.population < 1: raise ConfigError('population', f'must be >= 1, got {self.population!r}')
        for key in ['sigma_g', 'sigma_d', 'sigma_a', 'min_gain']:
            if getattr(self, key) < 0: raise ConfigError(key, f'must be >= 0, got {getattr(self, key)!r}')


    def params0(self) -> PolicyParams:
        return PolicyParams(self.init_g, self.init_d, self.init_a)


@dataclass
class Evaluation:
    mean_reward: float
    a_img: float
    a_blank: float
    sar: float
    nts: float
    lrr: float
    mean_r_cf: float
    mean_r_drift: float
    episodes: int


def arm_reward_config(cfg: RewardConfig, arm: str) -> RewardConfig:
    """ base drops both process terms, cf_only / drift_only keep one of them. """
    if arm == 'base': return replace(cfg, lambda_cf=0., lambda_drift=0.)
    if arm == 'cf_only': return replace(cfg, lambda_drift=0.)
    if arm == 'drift_only': return replace(cfg, lambda_cf=0.)
    if arm == 'shaped': return cfg
    raise ConfigError('arm', f'unknown arm {arm!r}')


def _fmean(values: np.ndarray) -> float:
    return math.fsum(values.tolist()) / values.size


def score_block(block: EpisodeBlock, cfg: RewardConfig, lrr_tau: float = 0.1) -> Dict[str, np.ndarray]:
    """ Per-episode reward components and diagnostics of a block, vectorized. Spans shorter than
    min_span_len are invalid, so both process terms are zero as in total_reward.
    """
    za = l1_normalize_batch(resample_batch(block.traj_original, cfg.T), cfg.eps)
    zb = l1_normalize_batch(resample_batch(block.traj_blank, cfg.T), cfg.eps)
    sims = similarity_batch(za, zb)
    same = block.answer_original == block.answer_blank
    _, h_mid, h_late = segment_means_batch(block.traj_original, cfg.segment_ratios)
    delta = np.maximum(h_late - h_mid - cfg.margin_m, 0.)
    if block.traj_original.shape[1] >= cfg.min_span_len:
        r_cf = np.where(same, -np.clip((sims - cfg.tau_cf) / (1. - cfg.tau_cf), 0., 1.), 0.)
        r_drift = -np.minimum(delta, 1.)
    else: r_cf, r_drift = np.zeros_like(sims), np.zeros_like(sims)
    r_acc = (block.answer_original == block.reference).astype(np.float64)
    r_fmt = np.ones_like(r_acc) # rendered outputs always follow the template
    total = r_acc + cfg.lambda_fmt * r_fmt + cfg.lambda_cf * r_cf + cfg.lambda_drift * r_drift
    return {
        'total': total, 'r_acc': r_acc, 'r_cf': r_cf, 'r_drift': r_drift, 'similarity': sims, 'same': same.astype(np.float64),
        'correct_blank': (block.answer_blank == block.reference).astype(np.float64), 'delta_tail': delta,
        'late_minus_mid': h_late - h_mid, 'tail_rise': (delta > lrr_tau).astype(np.float64)
    }


def _block_scores(params: PolicyParams, env: EnvConfig, cfg: RewardConfig, seed: int, b: int, n: int, lrr_tau: float):
    block = generate_block(params, env, block_rng(seed, b), env.block_size, cfg.segment_ratios)
    if n < env.block_size: block = slice_block(block, n)
    return score_block(block, cfg, lrr_tau)


def episode_scores(params: PolicyParams, env: EnvConfig, cfg: RewardConfig, seed: int, episodes: int, workers: int = 1, lrr_tau: float = 0.1) -> Dict[str, np.ndarray]:
    sizes = [min(env.block_size, episodes - start) for start in range(0, episodes, env.block_size)]
    jobs = list(enumerate(sizes))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda job: _block_scores(params, env, cfg, seed, job[0], job[1], lrr_tau), jobs))
    else: scores = [_block_scores(params, env, cfg, seed, b, n, lrr_tau) for b, n in jobs]
    return {k: np.concatenate([s[k] for s in scores]) for k in scores[0]}


def evaluate(params: PolicyParams, env: EnvConfig, cfg: RewardConfig, use_shaping: bool, seed: int = None, episodes: int = None,
        workers: int = 1, lrr_tau: float = 0.1) -> Evaluation:
    """ Mean reward (process terms zeroed without shaping) and diagnostic means over the episodes
    of stream `seed`; the same seed gives the same numbers.
    """
    seed = env.seed if seed is None else seed
    episodes = env.episodes_per_eval if episodes is None else episodes
    cfg = cfg if use_shaping else arm_reward_config(cfg, 'base')
    s = episode_scores(params, env, cfg, seed, episodes, workers, lrr_tau)
    return Evaluation(
        mean_reward=_fmean(s['total']), a_img=_fmean(s['r_acc']), a_blank=_fmean(s['correct_blank']), sar=_fmean(s['same']),
        nts=_fmean(s['similarity']), lrr=_fmean(s['tail_rise']), mean_r_cf=_fmean(s['r_cf']), mean_r_drift=_fmean(s['r_drift']),
        episodes=episodes
    )


def iteration_seeds(seed: int, iteration: int):
    """ (evaluation seed shared by all candidates of the iteration, proposal generator) """
    eval_ss, proposal_ss = np.random.SeedSequence([int(seed), int(iteration)]).spawn(2)
    return int(eval_ss.generate_state(1, dtype=np.uint64)[0]), np.random.Generator(np.random.Philox(proposal_ss))


def drop_idle_moves(incumbent: PolicyParams, candidate: PolicyParams, reward: float, objective: Callable[[PolicyParams, int], float],
        eval_seed: int, min_gain: float):
    """ Put back to the incumbent value every coordinate whose move gains less than min_gain on
    stream `eval_seed`, so knobs the reward ignores stay where they are.
    @return:
        (candidate, reward) after the resets
    """
    values, start = list(candidate.as_tuple()), incumbent.as_tuple()
    for i in range(len(values)):
        if values[i] == start[i]: continue
        trial = values[:i] + [start[i]] + values[i + 1:]
        trial_reward = objective(PolicyParams(*trial), eval_seed)
        if trial_reward > reward - min_gain:
            values, reward = trial, trial_reward
    return PolicyParams(*values), reward


def optimize(params0: PolicyParams, env: EnvConfig, cfg: RewardConfig, use_shaping: bool, search_cfg: SearchConfig, seed: int,
        objective: Callable[[PolicyParams, int], float] = None, workers: int = 1, desc: str = None) -> List[dict]:
    """ (1+lambda) hill-climb: every iteration perturbs the incumbent `population` times with clipped
    Gaussian noise, all candidates and the incumbent are scored on one common stream, and the best
    candidate replaces the incumbent only if it scores strictly higher, after its idle coordinate
    moves are undone (see drop_idle_moves).
    @return:
        trace rows (iteration, g, d, a, reward, accepted), row 0 holding params0
    """
    if objective is None:
        objective = lambda p, s: evaluate(p, env, cfg, use_shaping, seed=s, workers=workers).mean_reward
    sigma = np.array([search_cfg.sigma_g, search_cfg.sigma_d, search_cfg.sigma_a])
    incumbent = env.clip(*params0.as_tuple())
    trace = [{'iteration': 0, 'g': incumbent.g, 'd': incumbent.d, 'a': incumbent.a, 'reward': None, 'accepted': False}]
    iterator = tqdm(range(1, search_cfg.iterations + 1), desc=desc, file=sys.stderr, disable=(desc is None or not sys.stderr.isatty()))
    for t in iterator:
        eval_seed, rng = iteration_seeds(seed, t)
        incumbent_reward = objective(incumbent, eval_seed)
        best, best_reward = None, None
        for _ in range(search_cfg.population):
            step = rng.normal(0., 1., 3) * sigma
            candidate = env.clip(*(np.array(incumbent.as_tuple()) + step).tolist())
            reward = objective(candidate, eval_seed)
            if best_reward is None or reward > best_reward:
                best, best_reward = candidate, reward
        if best_reward > incumbent_reward:
            best, best_reward = drop_idle_moves(incumbent, best, best_reward, objective, eval_seed, search_cfg.min_gain)
        accepted = best_reward > incumbent_reward
        if accepted:
            logger.debug(f'Iteration {t:d}: accept g={best.g:.4f} d={best.d:.4f} a={best.a:.4f} ({incumbent_reward:.4f} -> {best_reward:.4f})')
            incumbent, incumbent_reward = best, best_reward
        trace.append({'iteration': t, 'g': incumbent.g, 'd': incumbent.d, 'a': incumbent.a, 'reward': incumbent_reward, 'accepted': accepted})
    return trace


def final_stream_seed(seed: int) -> int:
    return int(np.random.SeedSequence([int(seed), FINAL_EVAL_KEY]).generate_state(1, dtype=np.uint64)[0])


def final_evaluation(params: PolicyParams, env: EnvConfig, cfg: RewardConfig, use_shaping: bool, seed: int, workers: int = 1, lrr_tau: float = 0.1) -> Evaluation:
    """ Scored on a stream no search iteration ever uses. """
    return evaluate(params, env, cfg, use_shaping, seed=final_stream_seed(seed), episodes=env.final_episodes, workers=workers, lrr_tau=lrr_tau)


def run_arm(arm: str, env: EnvConfig, cfg: RewardConfig, search_cfg: SearchConfig, seeds: Sequence[int], workers: int = 1, lrr_tau: float = 0.1):
    """ @return: (per-seed result dicts, trace rows tagged with arm and seed) """
    arm_cfg = arm_reward_config(cfg, arm)
    results, traces = [], []
    for seed in seeds:
        start_time = time.time()
        trace = optimize(search_cfg.params0(), env, arm_cfg, True, search_cfg, seed, workers=workers, desc=f'{arm} seed {seed}')
        final = PolicyParams(trace[-1]['g'], trace[-1]['d'], trace[-1]['a'])
        evaluation = final_evaluation(final, env, arm_cfg, True, seed, workers, lrr_tau)
        results.append({'seed': int(seed), 'g': final.g, 'd': final.d, 'a': final.a,
            'accepted': sum(1 for row in trace if row['accepted']), **asdict(evaluation)})
        traces.extend({'arm': arm, 'seed': int(seed), **row} for row in trace)
        logger.info(f'Arm {arm} seed {seed}: g={final.g:.4f} d={final.d:.4f} a={final.a:.4f} SAR={evaluation.sar:.4f} NTS={evaluation.nts:.4f} LRR={evaluation.lrr:.4f}, cost {time.time() - start_time:.2f}s')
    return results, traces


def summarize_arm(results: List[dict]) -> Dict[str, float]:
    keys = ('g', 'd', 'a') + METRICS
    return {k: math.fsum(r[k] for r in results) / len(results) for k in keys}


def run_experiment(env: EnvConfig, cfg: RewardConfig, search_cfg: SearchConfig, seeds: Sequence[int], arms: Sequence[str] = ARMS,
        workers: int = 1, lrr_tau: float = 0.1):
    """ Optimize every arm from identical initial params on each seed.
    @return:
        report: {'seeds', 'arms': {arm: {'per_seed': [...], 'mean': {...}}}}
        traces: pd.DataFrame of all trace rows
    """
    if len(seeds) < 1:
        raise ConfigError('num_seeds', 'at least one seed is required')
    report, all_traces = {'seeds': [int(s) for s in seeds], 'arms': {}}, []
    for arm in arms:
        results, traces = run_arm(arm, env, cfg, search_cfg, seeds, workers, lrr_tau)
        report['arms'][arm] = {'reward_config': asdict(arm_reward_config(cfg, arm)), 'per_seed': results, 'mean': summarize_arm(results)}
        all_traces.extend(traces)
    return report, pd.DataFrame(all_traces, columns=['arm', 'seed', 'iteration', 'g', 'd', 'a', 'reward', 'accepted'])


def run_ablation(env: EnvConfig, cfg: RewardConfig, search_cfg: SearchConfig, seeds: Sequence[int], workers: int = 1, lrr_tau: float = 0.1):
    return run_experiment(env, cfg, search_cfg, seeds, ABLATION_ARMS, workers, lrr_tau)


def weight_sweep(env: EnvConfig, cfg: RewardConfig, search_cfg: SearchConfig, seeds: Sequence[int], grid: Sequence[float] = (0.05, 0.1, 0.2),
        workers: int = 1, lrr_tau: float = 0.1) -> pd.DataFrame:
    """ Change one process weight at a time over the grid, the other one at its configured value. """
    rows = []
    for weight in ['lambda_cf', 'lambda_drift']:
        for value in grid:
            arm_cfg = replace(cfg, **{weight: float(value)})
            results, _ = run_arm('shaped', env, arm_cfg, search_cfg, seeds, workers, lrr_tau)
            rows.append({'weight': weight, 'value': float(value), 'lambda_cf': arm_cfg.lambda_cf, 'lambda_drift': arm_cfg.lambda_drift,
                **summarize_arm(results)})
    return pd.DataFrame(rows)


def policy_scan(env: EnvConfig, cfg: RewardConfig, search_cfg: SearchConfig, tau_grid: Sequence[float], margin_grid: Sequence[float],
        g_values: Sequence[float] = (0.2, 0.9), seed: int = None, workers: int = 1) -> pd.DataFrame:
    """ Exceedance curves of fixed policies differing only in shortcut strength. """
    seed = env.seed if seed is None else seed
    frames = []
    for g in g_values:
        params = env.clip(g, search_cfg.init_d, search_cfg.init_a)
        s = episode_scores(params, env, cfg, seed, env.final_episodes, workers)
        per_sample = pd.DataFrame({'similarity': s['similarity'], 'late_minus_mid': s['late_minus_mid']})
        scan = threshold_scan(per_sample, tau_grid, margin_grid)
        scan.insert(0, 'g', float(g))
        frames.append(scan)
    return pd.concat(frames, ignore_index=True)


def emit_episodes(params: PolicyParams, env: EnvConfig, seed: int, episodes: int = None, ratios: Sequence[float] = DEFAULT_RATIOS) -> EpisodeBlock:
    """ Episodes for the rollout log of an arm, drawn from the final-evaluation stream. """
    return generate_episodes(params, env, final_stream_seed(seed), env.emit_episodes if episodes is None else episodes, ratios)
