#coding=utf8
import numpy as np
import pytest
from dataclasses import replace
from prosr.rewards import ORIGINAL_SPAN_INVALID, RewardConfig, total_reward
from prosr.trajectory import segment_bounds
from eval.diagnostics import same_answer_rate, trajectory_similarity
from preprocess.rollout_reader import pair_rollouts
from simulator.policy import EnvConfig, PolicyParams, block_rng, block_to_records, generate_block, generate_episodes, \
    generate_pair, render_output
from simulator.search import SearchConfig, arm_reward_config, drop_idle_moves, emit_episodes, evaluate, optimize, policy_scan, \
    run_ablation, run_arm, score_block, weight_sweep
from utils.errors import ConfigError


@pytest.fixture(scope='module')
def env():
    return EnvConfig()


@pytest.fixture(scope='module')
def cfg():
    return RewardConfig()


def test_policy_params_validation(env):
    with pytest.raises(ConfigError):
        PolicyParams(1.2, 0., 0.5)
    with pytest.raises(ConfigError):
        PolicyParams(0.5, -0.1, 0.5)
    assert env.clip(1.3, 5., 0.9) == PolicyParams(1., env.d_max, env.a_max)
    with pytest.raises(ConfigError):
        EnvConfig(p_prior=0.2)
    with pytest.raises(ConfigError):
        EnvConfig(episodes_per_eval=50)


def test_render_output_offsets():
    text, entropies, offsets = render_output(np.array([0.5, 0.25, 1.0]), 'C')
    assert text == '<think>s0 s1 s2</think><answer>C</answer>'
    assert [text[s:e] for s, e in offsets] == ['<think>', 's0', ' s1', ' s2', '</think>', '<answer>', 'C', '</answer>']
    assert entropies == [0., 0.5, 0.25, 1.0, 0., 0., 0., 0.]


def test_block_stream_is_deterministic(env):
    params = PolicyParams(0.5, 0.3, 0.6)
    a = generate_block(params, env, block_rng(7, 3), 20)
    b = generate_block(params, env, block_rng(7, 3), 20)
    c = generate_block(params, env, block_rng(7, 4), 20)
    assert np.array_equal(a.traj_original, b.traj_original) and np.array_equal(a.answer_blank, b.answer_blank)
    assert not np.array_equal(a.traj_original, c.traj_original)
    assert a.traj_original.shape == (20, env.span_len)
    assert np.all(a.traj_original >= 0.) and np.all(a.traj_blank >= 0.)


def test_generate_episodes_prefix_stable(env):
    params = PolicyParams(0.5, 0.3, 0.6)
    short, long = generate_episodes(params, env, 5, 30), generate_episodes(params, env, 5, 130)
    assert len(short) == 30 and len(long) == 130
    assert np.array_equal(short.traj_blank, long.traj_blank[:30])
    assert np.array_equal(short.reference, long.reference[:30])


def test_same_stream_across_policies(env):
    low, high = generate_block(PolicyParams(0., 0., 0.6), env, block_rng(1, 0), 50), generate_block(PolicyParams(0., 1., 0.6), env, block_rng(1, 0), 50)
    assert np.array_equal(low.reference, high.reference) and np.array_equal(low.answer_original, high.answer_original)
    assert not np.array_equal(low.traj_original, high.traj_original)


def test_full_shortcut_copies_blank(env):
    rng = block_rng(2, 0)
    pairs = [generate_pair(PolicyParams(1., 0., 0.6), env, rng, f'sim-{i:d}') for i in range(200)]
    sims = [trajectory_similarity(p.original, p.blank) for p in pairs]
    assert np.mean(sims) > 0.9
    assert same_answer_rate(pairs) == 1.


def test_no_shortcut_agreement_rate(env):
    a = 0.6
    block = generate_episodes(PolicyParams(0., 0., a), env, 3, 5000)
    sar = float(np.mean(block.answer_original == block.answer_blank))
    p = env.p_prior
    assert sar == pytest.approx(a * p + (1 - a) * (1 - p) / 3, abs=0.03)


def test_no_bump_no_late_rise(env, cfg):
    ev = evaluate(PolicyParams(0.5, 0., 0.6), env, cfg, True, seed=4, episodes=1000)
    assert ev.lrr == pytest.approx(0., abs=0.01)


@pytest.mark.parametrize('span_len, flags', [(64, []), (8, [ORIGINAL_SPAN_INVALID])])
def test_score_block_matches_scalar_reward(cfg, span_len, flags):
    env = EnvConfig(span_len=span_len)
    block = generate_block(PolicyParams(0.6, 0.9, 0.6), env, block_rng(9, 0), 20)
    scores = score_block(block, cfg)
    pairs, orphans = pair_rollouts(block_to_records(block), cfg.min_span_len)
    assert orphans == [] and len(pairs) == 20
    for i, pair in enumerate(pairs):
        reward = total_reward(pair, pair.reference_answer, cfg)
        assert reward.flags == flags
        assert reward.total == pytest.approx(scores['total'][i], abs=1e-12)
        assert reward.r_cf == pytest.approx(scores['r_cf'][i], abs=1e-12)
        assert reward.r_drift == pytest.approx(scores['r_drift'][i], abs=1e-12)


def test_reward_flat_in_d_without_shaping(env, cfg):
    rewards = [evaluate(PolicyParams(0.4, d, 0.6), env, cfg, False, seed=11).mean_reward for d in [0., 0.5, 1.]]
    assert rewards[0] == rewards[1] == rewards[2]
    shaped = [evaluate(PolicyParams(0.4, d, 0.6), env, cfg, True, seed=11).mean_reward for d in [0., 0.5, 1.]]
    assert shaped[0] >= shaped[1] > shaped[2]


def test_full_shortcut_is_penalized(env, cfg):
    ev = evaluate(PolicyParams(1., 0., 0.6), env, cfg, True, seed=12)
    assert ev.mean_r_cf < 0.


def test_grounded_policy_reward(env, cfg):
    ev = evaluate(PolicyParams(0., 0., 1.), env, cfg, True, seed=13, episodes=1000)
    assert ev.mean_reward == pytest.approx(1.2, abs=0.02)


def test_evaluate_independent_of_workers(env, cfg):
    params = PolicyParams(0.4, 0.7, 0.6)
    assert evaluate(params, env, cfg, True, seed=21, episodes=230, workers=1) == evaluate(params, env, cfg, True, seed=21, episodes=230, workers=4)


def test_constant_objective_never_moves(env, cfg):
    search_cfg = SearchConfig(iterations=20)
    trace = optimize(search_cfg.params0(), env, cfg, True, search_cfg, seed=1, objective=lambda p, s: 0.)
    assert len(trace) == 21
    assert all((row['g'], row['d'], row['a']) == (0.3, 0.8, 0.6) for row in trace)
    assert not any(row['accepted'] for row in trace)


def test_optimize_is_reproducible(env, cfg):
    search_cfg = SearchConfig(iterations=10)
    first = optimize(search_cfg.params0(), env, cfg, True, search_cfg, seed=5)
    assert first == optimize(search_cfg.params0(), env, cfg, True, search_cfg, seed=5, workers=3)


def test_arm_reward_config(cfg):
    assert arm_reward_config(cfg, 'base').lambda_cf == 0. and arm_reward_config(cfg, 'base').lambda_drift == 0.
    assert arm_reward_config(cfg, 'cf_only').lambda_cf == cfg.lambda_cf and arm_reward_config(cfg, 'cf_only').lambda_drift == 0.
    assert arm_reward_config(cfg, 'drift_only').lambda_cf == 0.
    with pytest.raises(ConfigError):
        arm_reward_config(cfg, 'unknown')


def test_zero_weights_reduce_to_base(env, cfg):
    search_cfg = SearchConfig(iterations=8)
    base, _ = run_arm('base', env, cfg, search_cfg, [3])
    unweighted, _ = run_arm('shaped', env, replace(cfg, lambda_cf=0., lambda_drift=0.), search_cfg, [3])
    assert base == unweighted


def test_tail_bump_follows_segment_ratios():
    env = EnvConfig(noise_sigma=0.)
    for ratios in [(3., 4., 3.), (1., 1., 1.), (2., 5., 3.)]:
        block = generate_block(PolicyParams(0., 0.5, 0.6), env, block_rng(4, 0), 5, ratios)
        _, b2 = segment_bounds(env.span_len, ratios)
        bump = block.traj_original[0] - env.template()
        assert bump[:b2] == pytest.approx(np.zeros(b2), abs=1e-12)
        assert bump[b2:] == pytest.approx(np.full(env.span_len - b2, 0.5), abs=1e-12)


def test_drop_idle_moves():
    incumbent, candidate = PolicyParams(0.3, 0.8, 0.6), PolicyParams(0.4, 0.5, 0.7)
    kept, reward = drop_idle_moves(incumbent, candidate, 0.4, lambda p, s: p.g, eval_seed=0, min_gain=1e-4)
    assert kept == PolicyParams(0.4, 0.8, 0.6)
    assert reward == pytest.approx(0.4)
    # a move that gains less than min_gain is undone too
    kept, _ = drop_idle_moves(incumbent, candidate, 0.4, lambda p, s: p.g + 1e-5 * p.a, eval_seed=0, min_gain=1e-4)
    assert kept == PolicyParams(0.4, 0.8, 0.6)


def test_ignored_knob_stays_put(env, cfg):
    _, traces = run_arm('base', env, cfg, SearchConfig(iterations=30), [2])
    assert len(traces) == 31
    assert all(row['d'] == 0.8 for row in traces)
    assert any(row['accepted'] for row in traces)


@pytest.fixture(scope='module')
def ablation(env, cfg):
    return run_ablation(env, cfg, SearchConfig(), [1, 2, 3, 4, 5])


def test_experiment_direction(ablation):
    report, traces = ablation
    base, shaped = report['arms']['base']['mean'], report['arms']['shaped']['mean']
    assert base['g'] > 0.6
    assert shaped['g'] < base['g']
    assert shaped['sar'] <= 0.8 * base['sar']
    assert shaped['nts'] <= 0.8 * base['nts']
    assert shaped['lrr'] <= 0.02
    assert shaped['d'] < 0.8
    assert report['seeds'] == [1, 2, 3, 4, 5]
    assert len(traces) == 4 * 5 * 201
    assert list(traces.columns) == ['arm', 'seed', 'iteration', 'g', 'd', 'a', 'reward', 'accepted']


def test_ablation_direction(ablation):
    report, _ = ablation
    arms = {arm: report['arms'][arm]['mean'] for arm in ['base', 'cf_only', 'drift_only', 'shaped']}
    base, cf, drift, shaped = arms['base'], arms['cf_only'], arms['drift_only'], arms['shaped']
    # each term moves only its own metrics
    assert cf['sar'] < base['sar'] and cf['nts'] < base['nts']
    assert cf['lrr'] >= base['lrr'] - 0.05
    assert drift['lrr'] < base['lrr']
    assert drift['sar'] >= base['sar'] - 0.05 and drift['nts'] >= base['nts'] - 0.05
    for single in [cf, drift]:
        for metric in ['sar', 'nts', 'lrr']:
            assert shaped[metric] <= single[metric] + 0.02


def test_weight_sweep(env, cfg):
    sweep = weight_sweep(env, cfg, SearchConfig(iterations=2), [1], grid=[0.05, 0.2])
    assert list(zip(sweep['weight'], sweep['value'])) == [('lambda_cf', 0.05), ('lambda_cf', 0.2), ('lambda_drift', 0.05), ('lambda_drift', 0.2)]
    assert sweep.loc[0, 'lambda_drift'] == cfg.lambda_drift and sweep.loc[3, 'lambda_cf'] == cfg.lambda_cf
    assert {'g', 'sar', 'nts', 'lrr', 'mean_reward'} <= set(sweep.columns)


def test_policy_scan(env, cfg):
    taus = np.linspace(0.2, 0.7, 11).tolist()
    scan = policy_scan(env, cfg, SearchConfig(), taus, [0.1], g_values=[0.2, 0.9], seed=3)
    assert len(scan) == 2 * (11 + 1)
    tau = scan[scan['metric'] == 'tau_cf'].pivot(index='cutoff', columns='g', values='exceedance')
    assert len(tau) == 11
    gap = tau[0.9] - tau[0.2]
    assert (gap > 0.2).all()


def test_emit_episodes(env):
    block = emit_episodes(PolicyParams(0.5, 0.2, 0.6), env, seed=1, episodes=25)
    records = block_to_records(block, prefix='base')
    assert len(records) == 50
    assert records[0].sample_id == 'base-00' and records[1].condition == 'blank'
    pairs, orphans = pair_rollouts(records)
    assert len(pairs) == 25 and orphans == []
