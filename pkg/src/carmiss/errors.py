'''Exception hierarchy.

Every user-facing failure derives from `CarmissError` and carries the process exit code
the CLI uses for it. Programming errors stay `AssertionError`s raised by `utils.require_*`.'''

import dataclasses
import typing


class CarmissError(Exception):
    exit_code: int = 1


class CarmissAdvisory(UserWarning):
    '''Statistical advice attached to a result (not an error).'''


class MixedMissingTokens(CarmissAdvisory):
    '''A CSV marks missing covariates with both an empty cell and `NA`.'''


##############
### Config ###
##############

class ConfigError(CarmissError):
    exit_code = 1


class UnknownColumn(ConfigError):
    def __init__(self, column: str, available: typing.Sequence[str]):
        super().__init__(f'unknown column {column!r} (available: {", ".join(available)})')
        self.column = column


class BlockPiIncompatible(ConfigError):
    def __init__(self, block_size: int, pi: float):
        super().__init__(
            f'block size {block_size} times pi={pi} is not an integer; '
            'blocks cannot be exactly balanced'
        )
        self.block_size = block_size
        self.pi = pi


class MethodNotSupported(ConfigError):
    def __init__(self, method: str, reason: str = ''):
        super().__init__(f'method {method!r} is not supported' + (f': {reason}' if reason else ''))
        self.method = method


class VarianceNotValid(ConfigError):
    pass


############
### Data ###
############

class DataError(CarmissError):
    exit_code = 2


ViolationKind = typing.Literal[
    'EmptyStratum',
    'NonBinaryTreatment',
    'MaskedValueRead',
    'PiOutOfRange',
    'LengthMismatch',
    'MissingOutcome',
    'NonBinaryMask',
]


@dataclasses.dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    message: str
    row: int | None = None
    column: int | None = None

    def __str__(self):
        where = []
        if self.row is not None:
            where.append(f'row {self.row}')
        if self.column is not None:
            where.append(f'column {self.column}')
        return f'{self.kind}: {self.message}' + (f' ({", ".join(where)})' if where else '')


class ValidationError(DataError):
    def __init__(self, violations: list[Violation]):
        shown = '\n  '.join(str(v) for v in violations[:20])
        more = f'\n  ... and {len(violations) - 20} more' if len(violations) > 20 else ''
        super().__init__(f'{len(violations)} data violation(s):\n  {shown}{more}')
        self.violations = violations


class UnreadableFile(DataError):
    def __init__(self, path, reason: str):
        super().__init__(f'cannot read {path}: {reason}')
        self.path = path


class ParseError(DataError):
    def __init__(self, row: int, column: str, value: str, reason: str = 'not a number'):
        super().__init__(f'cannot parse {value!r} at row {row}, column {column!r}: {reason}')
        self.row = row
        self.column = column


class AllMissingColumn(DataError):
    def __init__(self, column: int):
        super().__init__(f'covariate column {column} has no observed entries; cannot impute its mean')
        self.column = column


class NoCompleteRows(DataError):
    def __init__(self, detail: str):
        super().__init__(f'complete-case analysis impossible: {detail}')


class ArmEmptyInStratum(DataError):
    def __init__(self, stratum: int, arm: int):
        super().__init__(f'stratum {stratum} has no units in arm {arm}')
        self.stratum = stratum
        self.arm = arm


##################
### Estimation ###
##################

class EstimationError(CarmissError):
    exit_code = 3


class DesignDegenerate(EstimationError):
    pass


class InsufficientRows(EstimationError):
    def __init__(self, rows: int, rank: int):
        super().__init__(f'{rows} rows cannot support a regression of rank {rank}')
        self.rows = rows
        self.rank = rank


class InsufficientArmRows(EstimationError):
    def __init__(self, stratum: int | None, arm: int, needed: int, have: int):
        where = f'stratum {stratum}, ' if stratum is not None else ''
        super().__init__(f'{where}arm {arm}: {have} rows, at least {needed} needed')
        self.stratum = stratum
        self.arm = arm


class StratumTooSmall(EstimationError):
    def __init__(self, stratum: int, arm: int, needed: int, have: int):
        super().__init__(
            f'stratum {stratum}, arm {arm}: {have} rows, at least {needed} needed for a '
            'stratum-specific fit; use stratum-common scope instead '
            '(stratum-specific adjustment needs large strata)'
        )
        self.stratum = stratum
        self.arm = arm
        self.needed = needed
        self.have = have


class DfNonPositive(EstimationError):
    def __init__(self, stratum: int, arm: int, rows: int, params: int):
        super().__init__(
            f'degrees-of-freedom adjustment leaves no residual degrees of freedom in stratum '
            f'{stratum}, arm {arm} ({rows} rows, {params} parameters)'
        )
        self.stratum = stratum
        self.arm = arm


class DegenerateSignal(EstimationError):
    pass
