#coding=utf8
""" Command-line entry point: diagnose, reward, filter, simulate and scan subcommands.
Exit codes: 0 success, 1 failed --check-monotone, 2 input or config error, 3 empty result.
"""
import sys, os, time
import pandas as pd
from tabulate import tabulate
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.args import init_args, config_overrides
from utils.errors import EmptyResultError, InputError, ProsrError
from utils.hyperparams import ResolvedConfig, load_config
from utils.initialization import close_logger, initialization_wrapper
from utils.serialization import write_csv, write_json, write_jsonl
from prosr.rewards import batch_rewards
from eval.diagnostics import compute_report, failure_group_breakdown, per_sample_frame, report_to_dict
from eval.scan import check_monotone, read_per_sample, threshold_scan, trajectory_curves
from preprocess.rollout_reader import collect_references, pair_rollouts, read_records, record_to_rollout, serialize_record
from preprocess.cot_filter import corpus_stats, filter_corpus, read_cot_samples, verdict_to_dict
from simulator.policy import PolicyParams, block_to_records
from simulator.search import ABLATION_ARMS, ARMS, emit_episodes, policy_scan, run_experiment, weight_sweep


RESOLVED_CONFIG = 'resolved_config.json'


def output_names(args) -> list:
    if args.subcommand == 'diagnose': names = ['report.json', 'per_sample.csv', 'curves.csv', 'orphans.json']
    elif args.subcommand == 'reward': names = ['rewards.jsonl']
    elif args.subcommand == 'filter': names = ['verdicts.jsonl', 'summary.csv']
    elif args.subcommand == 'scan': names = ['exceedance.csv']
    else:
        arms = ABLATION_ARMS if args.ablation else ARMS
        names = ['comparison.json', 'traces.csv'] + [f'rollouts_{arm}.jsonl' for arm in arms] + [f'per_sample_{arm}.csv' for arm in arms]
        if args.sweep: names.append('sweep.csv')
        if args.policy_scan: names.append('policy_scan.csv')
    return names + [RESOLVED_CONFIG]


def read_baseline(path: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={'sample_id': str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise InputError(f'cannot read baseline table {path}: {e}', field='--baseline')
    for column in ['sample_id', 'group', 'correct_original']:
        if column not in df.columns:
            raise InputError(f'baseline table lacks column {column}', field='--baseline')
    return df


def diagnose(args, cfg: ResolvedConfig, logger) -> int:
    records = read_records(args.rollouts, args.workers)
    pairs, orphans = pair_rollouts(records, cfg.reward.min_span_len)
    if not pairs:
        raise EmptyResultError(f'no valid original/blank pair in {args.rollouts} ({len(records):d} records, {len(orphans):d} orphans)')
    report = compute_report(pairs, cfg.reward, cfg.diagnostics, args.workers)
    baseline = read_baseline(args.baseline) if args.baseline else None
    breakdown = failure_group_breakdown(report, baseline)

    write_json(report_to_dict(report, cfg.to_dict(), orphans, breakdown), os.path.join(args.out, 'report.json'))
    write_csv(per_sample_frame(report), os.path.join(args.out, 'per_sample.csv'))
    write_csv(trajectory_curves(pairs, cfg.reward), os.path.join(args.out, 'curves.csv'))
    write_json(orphans, os.path.join(args.out, 'orphans.json'))
    if args.summary:
        rows = [['A_img', report.a_img], ['A_blank', report.a_blank], ['SAR', report.sar], ['NTS', report.nts]] + \
            [[f'LRR@{tau!r}', value] for tau, value in report.lrr.items()]
        print(tabulate(rows, headers=['metric', 'value'], floatfmt='.4f'))
        print(tabulate(breakdown.values.tolist(), headers=list(breakdown.columns), floatfmt='.4f'))
    return 0


def reward(args, cfg: ResolvedConfig, logger) -> int:
    records = read_records(args.rollouts, args.workers)
    references = collect_references(records)
    rollouts = [record_to_rollout(r, cfg.reward.min_span_len) for r in records]
    rewards = batch_rewards(rollouts, references, cfg.reward)
    if not rewards:
        raise EmptyResultError(f'no original-condition rollout in {args.rollouts}')
    write_jsonl(rewards, os.path.join(args.out, 'rewards.jsonl'))
    if args.summary:
        keys = ['r_acc', 'r_fmt', 'r_cf', 'r_drift', 'total']
        means = [[k, sum(r[k] for r in rewards) / len(rewards)] for k in keys]
        print(tabulate(means, headers=['component', 'mean'], floatfmt='.4f'))
    return 0


def cot_filter(args, cfg: ResolvedConfig, logger) -> int:
    samples = read_cot_samples(args.cot)
    if not samples:
        raise EmptyResultError(f'no chain-of-thought sample in {args.cot}')
    verdicts = filter_corpus(samples, cfg.filter, args.workers)
    summary = corpus_stats(verdicts)
    write_jsonl([verdict_to_dict(v) for v in verdicts], os.path.join(args.out, 'verdicts.jsonl'))
    write_csv(summary, os.path.join(args.out, 'summary.csv'))
    if args.summary:
        columns = ['source', 'ordering', 'n_before', 'n_kept', 'keep_rate', 'length_before', 'length_after', 'anchor_ratio_before', 'anchor_ratio_after']
        print(tabulate(summary[columns].values.tolist(), headers=columns, floatfmt='.4f'))
    return 0


def simulate(args, cfg: ResolvedConfig, logger) -> int:
    seeds = [cfg.env.seed + i for i in range(args.num_seeds)]
    arms = ABLATION_ARMS if args.ablation else ARMS
    start_time = time.time()
    report, traces = run_experiment(cfg.env, cfg.reward, cfg.search, seeds, arms, args.workers, cfg.diagnostics.lrr_tau)
    report['diagnostics'] = {}
    for arm in arms:
        final = report['arms'][arm]['per_seed'][0]
        block = emit_episodes(PolicyParams(final['g'], final['d'], final['a']), cfg.env, seeds[0], ratios=cfg.reward.segment_ratios)
        records = block_to_records(block, prefix=arm)
        with open(os.path.join(args.out, f'rollouts_{arm}.jsonl'), 'w', encoding='utf-8', newline='\n') as of:
            for record in records:
                of.write(serialize_record(record) + '\n')
        pairs, _ = pair_rollouts(records, cfg.reward.min_span_len)
        arm_report = compute_report(pairs, cfg.reward, cfg.diagnostics, args.workers)
        write_csv(per_sample_frame(arm_report), os.path.join(args.out, f'per_sample_{arm}.csv'))
        report['diagnostics'][arm] = report_to_dict(arm_report)
    if args.sweep:
        write_csv(weight_sweep(cfg.env, cfg.reward, cfg.search, seeds, args.sweep_grid, args.workers, cfg.diagnostics.lrr_tau), os.path.join(args.out, 'sweep.csv'))
    if args.policy_scan:
        scan = policy_scan(cfg.env, cfg.reward, cfg.search, cfg.diagnostics.tau_grid, cfg.diagnostics.margin_grid, args.scan_g, seeds[0], args.workers)
        write_csv(scan, os.path.join(args.out, 'policy_scan.csv'))
    report['config'] = cfg.to_dict()
    write_json(report, os.path.join(args.out, 'comparison.json'))
    write_csv(traces, os.path.join(args.out, 'traces.csv'))
    logger.info(f'Simulation over seeds {seeds} finished, cost {time.time() - start_time:.2f}s')
    if args.summary:
        columns = ['g', 'd', 'a', 'mean_reward', 'a_img', 'a_blank', 'sar', 'nts', 'lrr']
        rows = [[arm] + [report['arms'][arm]['mean'][c] for c in columns] for arm in arms]
        print(tabulate(rows, headers=['arm'] + columns, floatfmt='.4f'))
    return 0


def scan(args, cfg: ResolvedConfig, logger) -> int:
    per_sample = read_per_sample(args.per_sample)
    exceedance = threshold_scan(per_sample, cfg.diagnostics.tau_grid, cfg.diagnostics.margin_grid)
    write_csv(exceedance, os.path.join(args.out, 'exceedance.csv'))
    if args.summary:
        print(tabulate(exceedance.values.tolist(), headers=list(exceedance.columns), floatfmt='.4f'))
    if args.check_monotone:
        violations = check_monotone(exceedance)
        for message in violations:
            logger.info(f'[WARNING]: {message}')
        if violations: return 1
    return 0


COMMANDS = {'diagnose': diagnose, 'reward': reward, 'filter': cot_filter, 'simulate': simulate, 'scan': scan}


def main(argv=None) -> int:
    args = init_args(sys.argv[1:] if argv is None else argv)
    try:
        cfg = load_config(args.config, config_overrides(args))
        out_dir, logger = initialization_wrapper(args, output_names(args))
        write_json(cfg.to_dict(), os.path.join(out_dir, RESOLVED_CONFIG))
        return COMMANDS[args.subcommand](args, cfg, logger)
    except ProsrError as e:
        print(f'[ERROR]: {e}', file=sys.stderr)
        return e.exit_code
    finally:
        close_logger()


if __name__ == '__main__':

    sys.exit(main())
