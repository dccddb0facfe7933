#coding=utf-8
import argparse
import sys, os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from utils.hyperparams import CONFIG_ENV, CONFIG_HELP, default_value, section_fields


SUBCOMMANDS = {
    'diagnose': ('reward', 'diagnostics'),
    'reward': ('reward',),
    'filter': ('filter',),
    'simulate': ('reward', 'diagnostics', 'env', 'search'),
    'scan': ('diagnostics',),
}


def init_args(params=sys.argv[1:]):
    arg_parser = argparse.ArgumentParser(prog='prosr', description='Process-level diagnostics and shaped rewards for multimodal reasoning rollouts')
    subparsers = arg_parser.add_subparsers(dest='subcommand', metavar='{' + ','.join(SUBCOMMANDS) + '}')
    subparsers.required = True
    for name, sections in SUBCOMMANDS.items():
        parser = subparsers.add_parser(name, help=SUBCOMMAND_HELP[name])
        parser = add_argument_base(parser)
        parser = ADD_ARGUMENT_IO[name](parser)
        for section in sections:
            parser = add_argument_config(parser, section)
    return arg_parser.parse_args(params)


def add_argument_base(arg_parser):
    #### General configuration ####
    arg_parser.add_argument('--config', type=str, default=os.environ.get(CONFIG_ENV), help=f'flat JSON config file, defaults to ${CONFIG_ENV}')
    arg_parser.add_argument('--out', type=str, required=True, help='output directory, created if absent')
    arg_parser.add_argument('--seed', type=int, default=None, help='random seed, the only source of randomness')
    arg_parser.add_argument('--force', action='store_true', help='overwrite existing output files')
    arg_parser.add_argument('--summary', action='store_true', help='print the headline metrics table on stdout')
    arg_parser.add_argument('--workers', type=int, default=1, help='threads for per-sample work, outputs do not depend on it')
    arg_parser.add_argument('--verbose', action='store_true', help='debug-level logging')
    return arg_parser


def add_argument_diagnose(arg_parser):
    arg_parser.add_argument('rollouts', type=str, help='rollout log, one JSON object per line')
    arg_parser.add_argument('--baseline', type=str, help='per_sample.csv of a baseline run, regroups the failure breakdown')
    return arg_parser


def add_argument_reward(arg_parser):
    arg_parser.add_argument('rollouts', type=str, help='rollout log, one JSON object per line')
    return arg_parser


def add_argument_filter(arg_parser):
    arg_parser.add_argument('cot', type=str, help='chain-of-thought samples, one JSON object per line')
    return arg_parser


def add_argument_simulate(arg_parser):
    arg_parser.add_argument('--num-seeds', dest='num_seeds', type=int, default=3, help='number of seeds, seed, seed+1, ...')
    arg_parser.add_argument('--ablation', action='store_true', help='also run the cf_only and drift_only arms')
    arg_parser.add_argument('--sweep', action='store_true', help='single-weight sweep of lambda_cf and lambda_drift')
    arg_parser.add_argument('--sweep-grid', dest='sweep_grid', type=float, nargs='+', default=[0.05, 0.1, 0.2], help='weights of the sweep')
    arg_parser.add_argument('--policy-scan', dest='policy_scan', action='store_true', help='threshold scan of two fixed policies')
    arg_parser.add_argument('--scan-g', dest='scan_g', type=float, nargs='+', default=[0.2, 0.9], help='shortcut strengths of the policy scan')
    return arg_parser


def add_argument_scan(arg_parser):
    arg_parser.add_argument('per_sample', type=str, help='per_sample.csv written by diagnose')
    arg_parser.add_argument('--check-monotone', dest='check_monotone', action='store_true', help='exit 1 if an exceedance curve rises')
    return arg_parser


def add_argument_config(arg_parser, section):
    """ One override flag per config key: --lambda-cf sets lambda_cf. Unset flags stay None. """
    group = arg_parser.add_argument_group(f'{section} overrides')
    for f in section_fields(section):
        if f.name == 'seed': continue
        default = default_value(f.name)
        flag = '--' + f.name.replace('_', '-')
        kwargs = {'dest': f.name, 'default': None, 'help': CONFIG_HELP.get(f.name, '')}
        if isinstance(default, (tuple, list)):
            kwargs.update(nargs='+', type=float if isinstance(default, tuple) else str)
        elif isinstance(default, bool): kwargs['type'] = lambda s: s.lower() in ['1', 'true', 'yes']
        elif isinstance(default, (int, float, str)): kwargs['type'] = type(default)
        group.add_argument(flag, **kwargs)
    return arg_parser


def config_overrides(args) -> dict:
    """ Non-None override flags of the parsed subcommand, keyed by config key. """
    overrides = {}
    for section in SUBCOMMANDS[args.subcommand]:
        for f in section_fields(section):
            if f.name == 'seed': overrides['seed'] = args.seed
            else: overrides[f.name] = getattr(args, f.name)
    return {k: v for k, v in overrides.items() if v is not None}


SUBCOMMAND_HELP = {
    'diagnose': 'A_img, A_blank, SAR, NTS, LRR and the failure groups of paired rollouts',
    'reward': 'shaped reward and group advantages of every original rollout',
    'filter': 'rule-based chain-of-thought quality filter',
    'simulate': 'synthetic comparison of the outcome-only and the shaped reward',
    'scan': 'threshold sensitivity curves from a per-sample table',
}

ADD_ARGUMENT_IO = {
    'diagnose': add_argument_diagnose,
    'reward': add_argument_reward,
    'filter': add_argument_filter,
    'simulate': add_argument_simulate,
    'scan': add_argument_scan,
}
