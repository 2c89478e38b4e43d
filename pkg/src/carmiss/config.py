'''Run configuration and the configuration-file reader.

A configuration file holds `key = value` lines under `[analyze]`, `[simulate]`, `[randomize]`
and `[output]` headers. Keys are the long CLI flags without their leading dashes (`pi`,
`covariate-cols`, `df-adjust`, ...); dashes and underscores are interchangeable. List values are
separated by commas or whitespace. Lines starting with `#` or `;` are comments.'''

import dataclasses
import enum
import logging
from pathlib import Path

from pyparsing import (
    Group, ParseBaseException, Regex, Suppress, Word, ZeroOrMore,
    alphanums, alphas,
)

from carmiss.errors import ConfigError
from carmiss.randomization import SchemeKind
from carmiss.utils import require_not_none
from carmiss.variance import DfAdjust, VarianceMethod


logger = logging.getLogger(__name__)


class Subcommand(enum.StrEnum):
    ANALYZE = 'analyze'
    SIMULATE = 'simulate'
    RANDOMIZE = 'randomize'


class OutputFormat(enum.StrEnum):
    CSV = 'csv'
    JSON = 'json'


SECTIONS = ('analyze', 'simulate', 'randomize', 'output')


@dataclasses.dataclass
class DataConfig:
    '''Where a trial comes from and how its columns are named.'''

    path: Path | None = None
    '''UTF-8 CSV with a header row.'''

    outcome_col: str = 'y'
    treat_col: str = 'treatment'
    stratum_col: str = 'stratum'

    covariate_cols: list[str] = dataclasses.field(default_factory=list)
    '''Covariate columns in design order; empty takes every remaining column.'''


@dataclasses.dataclass
class AnalyzeConfig:
    methods: list[str] = dataclasses.field(default_factory=lambda: ['auto'])
    '''Regressions (`fisher`, `lin`, `tom`), or `auto` for the recommended estimator.'''

    missing: list[str] = dataclasses.field(default_factory=lambda: ['mim'])
    '''Missingness processors: `ccov`, `imp`, `mim`, `cc` or `none` (the benchmark).'''

    scopes: list[str] = dataclasses.field(default_factory=lambda: ['common'])
    '''`common` and/or `ss` (stratum-specific).'''

    variance: VarianceMethod = VarianceMethod.AUTO
    '''`auto` uses the OLS variance for Fisher and the plug-in variance for Lin and ToM.'''


@dataclasses.dataclass
class SimulationConfig:
    model: int = 2
    n: int = 200
    scheme: SchemeKind = SchemeKind.STRATIFIED_BLOCK

    p: int = 5
    '''Covariates generated per unit: 5, or 7 with two outcome-independent extras.'''

    reps: int = 1000
    include_cc: bool = False
    '''Append the complete-case Lin and ToM rows to the table.'''

    block_size: int | None = None
    biased_coin_prob: float = 0.75
    snr_def: str = 'sd'
    snr1: float = 3.0
    snr0: float = 1.0
    calibration_draws: int = 1_000_000
    oracle_draws: int = 10_000_000


@dataclasses.dataclass
class RandomizeConfig:
    factor_cols: list[str] = dataclasses.field(default_factory=list)
    '''Stratification variables balanced by minimization; empty balances the stratum column.'''

    scheme: SchemeKind = SchemeKind.STRATIFIED_BLOCK
    block_size: int | None = None
    biased_coin_prob: float = 0.75

    treatment_col: str = 'treatment'
    '''Name of the column the assignment is written to.'''


@dataclasses.dataclass
class RunConfig:
    '''Everything one CLI invocation needs; embedded in every JSON report.'''

    subcommand: Subcommand

    pi: float = 0.5
    '''Target treated proportion.'''

    level: float = 0.95
    '''Confidence level of the reported intervals.'''

    df_adjust: DfAdjust = DfAdjust.AUTO
    '''Degrees-of-freedom adjustment of the plug-in variance; `auto` turns it on for
    many covariates (q >= 5) or small samples (n < 400).'''

    seed: int = 20240601
    threads: int = 1
    '''Worker processes for `simulate`; results do not depend on it.'''

    out: Path | None = None
    '''Output file; `None` writes to stdout.'''

    format: OutputFormat = OutputFormat.CSV

    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    analyze: AnalyzeConfig = dataclasses.field(default_factory=AnalyzeConfig)
    simulation: SimulationConfig = dataclasses.field(default_factory=SimulationConfig)
    randomize: RandomizeConfig = dataclasses.field(default_factory=RandomizeConfig)

    def __post_init__(self):
        self.subcommand = Subcommand(self.subcommand)
        self.format = OutputFormat(self.format)
        self.df_adjust = DfAdjust(self.df_adjust)
        if not 0.0 < self.pi < 1.0:
            raise ConfigError(f'target pi {self.pi} is not in (0, 1)')
        if not 0.0 < self.level < 1.0:
            raise ConfigError(f'confidence level {self.level} is not in (0, 1)')
        if self.threads < 1:
            raise ConfigError(f'threads must be at least 1, got {self.threads}')
        if self.subcommand != Subcommand.SIMULATE and self.data.path is None:
            raise ConfigError(f'{self.subcommand} needs a dataset (--data)')


_config: RunConfig | None = None


def get_config() -> RunConfig:
    return require_not_none(_config)

def set_config(config: RunConfig):
    '''Set the config of the current run.

    Should be called by the CLI once the flags and the config file are merged.'''
    global _config
    _config = config


def normalize_key(key: str) -> str:
    return key.strip().lstrip('-').replace('-', '_')


_NAME = Word(alphas, alphanums + '_-')
_VALUE = Regex(r'[^#;\n]*').leave_whitespace()
_ENTRY = Group(_NAME('key') + Suppress('=') + _VALUE('value'))
_SECTION = Group(
    Suppress('[') + _NAME('name') + Suppress(']')
    + Group(ZeroOrMore(_ENTRY))('entries')
)
CONFIG_FILE = ZeroOrMore(_SECTION)
CONFIG_FILE.ignore(Regex(r'[#;].*'))


def parse_config_text(text: str, source: str = '<config>') -> dict[str, dict[str, str]]:
    '''Raw `{section: {key: value}}`; keys normalized, values stripped but not converted.'''
    try:
        parsed = CONFIG_FILE.parse_string(text, parse_all=True)
    except ParseBaseException as e:
        raise ConfigError(f'{source}:{e.lineno}:{e.col}: malformed configuration ({e.msg})') from None
    sections: dict[str, dict[str, str]] = {}
    for section in parsed:
        name = normalize_key(section['name'])
        if name not in SECTIONS:
            raise ConfigError(f'{source}: unknown section [{section["name"]}] (known: {", ".join(SECTIONS)})')
        entries = sections.setdefault(name, {})
        for entry in section['entries']:
            entries[normalize_key(entry['key'])] = entry['value'].strip()
    return sections


def load_config_file(path: Path | str) -> dict[str, dict[str, str]]:
    with open(path, encoding='utf-8') as f:
        text = f.read()
    sections = parse_config_text(text, str(path))
    logger.debug('config %s: %s', path, {k: sorted(v) for k, v in sections.items()})
    return sections


def split_list(value: str) -> list[str]:
    return [item for item in value.replace(',', ' ').split() if item]


def parse_bool(value: str) -> bool:
    match value.strip().lower():
        case 'true' | 'yes' | 'on' | '1':
            return True
        case 'false' | 'no' | 'off' | '0':
            return False
    raise ConfigError(f'expected a boolean, got {value!r}')
