import argparse
import logging
from pathlib import Path
import sys
import warnings

from carmiss import run_analysis, run_randomization, run_simulation
from carmiss.config import (
    AnalyzeConfig, DataConfig, OutputFormat, RandomizeConfig, RunConfig, SimulationConfig, Subcommand,
    load_config_file, parse_bool, set_config, split_list,
)
from carmiss.dataio import (
    estimates_frame, sidecar_path, simulation_frame,
    to_json, write_frame, write_text,
)
from carmiss.dgp import SnrDefinition
from carmiss.errors import CarmissAdvisory, CarmissError, ConfigError
from carmiss.randomization import SchemeKind
from carmiss.variance import DfAdjust, VarianceMethod


logger = logging.getLogger('carmiss')


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f'{self.prog}: {message}')


def _common_arguments() -> argparse.ArgumentParser:
    parent = _ArgumentParser(add_help=False)
    parent.add_argument('-c', '--config', type=Path, help='Configuration file; flags override its values')
    parent.add_argument('--pi', type=float, help='Target treated proportion (default 0.5)')
    parent.add_argument('--level', type=float, help='Confidence level (default 0.95)')
    parent.add_argument('--df-adjust', choices=[m.value for m in DfAdjust],
                        help='Degrees-of-freedom adjustment of the plug-in variance (default auto)')
    parent.add_argument('--seed', type=int, help='Random seed (default 20240601)')
    parent.add_argument('--threads', type=int, help='Worker processes (default 1)')
    parent.add_argument('-o', '--out', type=Path, help='Output file (default stdout)')
    parent.add_argument('--format', choices=[f.value for f in OutputFormat], help='Output format (default csv)')
    parent.add_argument('-v', '--verbose', action='count', default=0, help='More logging')
    parent.add_argument('-q', '--quiet', action='count', default=0, help='Less logging')
    return parent


def _data_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--data', type=Path, help='Trial CSV')
    parser.add_argument('--stratum-col', help='Stratum column (default stratum)')
    parser.add_argument('--treat-col', help='Treatment column (default treatment)')


def _scheme_arguments(parser: argparse.ArgumentParser):
    parser.add_argument('--scheme', choices=[s.value for s in SchemeKind],
                        help='Randomization scheme (default stratified-block)')
    parser.add_argument('--block-size', type=int, help='Permuted block size (default twice the denominator of pi)')
    parser.add_argument('--biased-coin-prob', type=float,
                        help='Minimization: probability of the balancing arm (default 0.75)')


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = _ArgumentParser(
        prog='carmiss',
        description='Treatment effects under covariate-adaptive randomization with missing covariates',
    )
    commands = parser.add_subparsers(dest='subcommand', required=True, parser_class=_ArgumentParser)
    parent = _common_arguments()

    analyze = commands.add_parser('analyze', parents=[parent], help='Estimate the treatment effect of a trial')
    _data_arguments(analyze)
    analyze.add_argument('--outcome-col', help='Outcome column (default y)')
    analyze.add_argument('--covariate-cols', nargs='+', help='Covariate columns (default: all others)')
    analyze.add_argument('--method', nargs='+', choices=['fisher', 'lin', 'tom', 'auto'],
                         help='Regression adjustments (default auto)')
    analyze.add_argument('--missing', nargs='+', choices=['ccov', 'imp', 'mim', 'cc', 'none', 'mpm'],
                         help='Missing-covariate handling (default mim)')
    analyze.add_argument('--scope', nargs='+', choices=['common', 'ss'],
                         help='Stratum-common or stratum-specific adjustment (default common)')
    analyze.add_argument('--variance', choices=[m.value for m in VarianceMethod],
                         help='Variance estimator (default auto)')

    simulate = commands.add_parser('simulate', parents=[parent], help='Run a Monte Carlo study')
    simulate.add_argument('--model', type=int, choices=[1, 2, 3], help='Outcome model (default 2)')
    simulate.add_argument('--n', type=int, help='Units per replication (default 200)')
    _scheme_arguments(simulate)
    simulate.add_argument('--p', type=int, choices=[5, 7], help='Covariates per unit (default 5)')
    simulate.add_argument('--reps', type=int, help='Replications (default 1000)')
    simulate.add_argument('--include-cc', action='store_true', default=None,
                          help='Add the complete-case rows')
    simulate.add_argument('--snr-def', choices=[d.value for d in SnrDefinition],
                          help='Whether the SNR is a ratio of standard deviations or of variances')
    simulate.add_argument('--snr1', type=float, help='Treated-arm signal-to-noise ratio (default 3)')
    simulate.add_argument('--snr0', type=float, help='Control-arm signal-to-noise ratio (default 1)')
    simulate.add_argument('--calibration-draws', type=int, help='Pre-sample size for the noise calibration')
    simulate.add_argument('--oracle-draws', type=int, help='Sample size of the true-effect oracle')

    randomize = commands.add_parser('randomize', parents=[parent], help='Allocate the units of a CSV')
    _data_arguments(randomize)
    randomize.add_argument('--factor-cols', nargs='+', help='Stratification variables for minimization')
    _scheme_arguments(randomize)

    return parser, {'analyze': analyze, 'simulate': simulate, 'randomize': randomize}


def _apply_file_values(parser: argparse.ArgumentParser, entries: dict[str, str], source: str):
    '''Turns config-file entries into parser defaults, converted and checked like flags.'''
    actions = {action.dest: action for action in parser._actions}
    defaults = {}
    for key, raw in entries.items():
        action = actions.get(key)
        if action is None or key in ('help', 'config'):
            raise ConfigError(f'{source}: unknown key {key!r}')
        if action.nargs == 0:
            defaults[key] = parse_bool(raw) if action.const is True else int(raw)
            continue
        many = action.nargs in ('+', '*')
        items = split_list(raw) if many else [raw]
        convert = action.type or str
        try:
            values = [convert(item) for item in items]
        except ValueError:
            raise ConfigError(f'{source}: invalid value {raw!r} for {key!r}') from None
        if action.choices is not None:
            for value in values:
                if value not in action.choices:
                    raise ConfigError(f'{source}: {key!r} must be one of {list(action.choices)}, got {value!r}')
        defaults[key] = values if many else values[0]
    parser.set_defaults(**defaults)


def parse_arguments(argv: list[str] | None = None) -> argparse.Namespace:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        sections = load_config_file(args.config)
        command = subparsers[args.subcommand]
        for section in (args.subcommand, 'output'):
            _apply_file_values(command, sections.get(section, {}), f'{args.config} [{section}]')
        args = parser.parse_args(argv)
    return args


def _given(**kwargs):
    return {key: value for key, value in kwargs.items() if value is not None}


def build_config(args: argparse.Namespace) -> RunConfig:
    def get(name: str):
        return getattr(args, name, None)

    return RunConfig(
        subcommand=Subcommand(args.subcommand),
        data=DataConfig(**_given(
            path=get('data'),
            outcome_col=get('outcome_col'),
            treat_col=get('treat_col'),
            stratum_col=get('stratum_col'),
            covariate_cols=get('covariate_cols'),
        )),
        analyze=AnalyzeConfig(**_given(
            methods=get('method'),
            missing=get('missing'),
            scopes=get('scope'),
            variance=VarianceMethod(get('variance')) if get('variance') else None,
        )),
        simulation=SimulationConfig(**_given(
            model=get('model'),
            n=get('n'),
            scheme=get('scheme') if args.subcommand == 'simulate' else None,
            p=get('p'),
            reps=get('reps'),
            include_cc=get('include_cc'),
            block_size=get('block_size') if args.subcommand == 'simulate' else None,
            biased_coin_prob=get('biased_coin_prob') if args.subcommand == 'simulate' else None,
            snr_def=get('snr_def'),
            snr1=get('snr1'),
            snr0=get('snr0'),
            calibration_draws=get('calibration_draws'),
            oracle_draws=get('oracle_draws'),
        )),
        randomize=RandomizeConfig(**_given(
            factor_cols=get('factor_cols'),
            scheme=get('scheme') if args.subcommand == 'randomize' else None,
            block_size=get('block_size') if args.subcommand == 'randomize' else None,
            biased_coin_prob=get('biased_coin_prob') if args.subcommand == 'randomize' else None,
            treatment_col=get('treat_col') if args.subcommand == 'randomize' else None,
        )),
        **_given(
            pi=get('pi'),
            level=get('level'),
            df_adjust=get('df_adjust'),
            seed=get('seed'),
            threads=get('threads'),
            out=get('out'),
            format=get('format'),
        ),
    )


def _analyze(config: RunConfig):
    report = run_analysis(config)
    if config.format == OutputFormat.JSON:
        write_text(to_json(report), config.out)
        return
    write_frame(estimates_frame(report.estimates), config.out)
    if config.out is not None:
        write_text(to_json(report), sidecar_path(config.out))


def _simulate(config: RunConfig):
    report = run_simulation(config)
    payload = {'config': config, 'report': report}
    if config.format == OutputFormat.JSON:
        write_text(to_json(payload), config.out)
        return
    write_frame(simulation_frame(report), config.out)
    if config.out is not None:
        write_text(to_json(payload), sidecar_path(config.out))
    print(f'simulation finished in {report.wall_time:.1f}s', file=sys.stderr)


def _randomize(config: RunConfig):
    result = run_randomization(config)
    write_frame(result.frame, config.out)
    for label, n_k, n_k1, d_k in zip(result.stratum_labels, result.n_k, result.n_k1, result.imbalance.d_k):
        print(f'stratum {label}: {n_k} units, {n_k1} treated, D = {d_k:+g}', file=sys.stderr)
    print(f'max |D|/sqrt(n) = {result.imbalance.max_scaled:.4g}', file=sys.stderr)


def _configure_logging(verbosity: int):
    level = logging.WARNING - 10 * verbosity
    logging.basicConfig(
        level=min(max(level, logging.DEBUG), logging.CRITICAL),
        format='%(levelname)s %(name)s: %(message)s',
        stream=sys.stderr,
        force=True,
    )


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_arguments(argv)
        _configure_logging(args.verbose - args.quiet)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter('always', CarmissAdvisory)
            try:
                config = build_config(args)
                set_config(config)
                match config.subcommand:
                    case Subcommand.ANALYZE:
                        _analyze(config)
                    case Subcommand.SIMULATE:
                        _simulate(config)
                    case Subcommand.RANDOMIZE:
                        _randomize(config)
            finally:
                for message in dict.fromkeys(str(w.message) for w in caught):
                    logger.warning('%s', message)
    except CarmissError as e:
        print(f'error: {e}', file=sys.stderr)
        return e.exit_code
    return 0


def entry_point():
    sys.exit(main())


if __name__ == '__main__':
    entry_point()
