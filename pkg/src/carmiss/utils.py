import dataclasses
import enum
import json
import math
from pathlib import Path
import typing

import numpy as np

T = typing.TypeVar('T')


def require_not_none(l: T | None) -> T:
    assert l is not None, l
    return l


def format_float(value: float) -> str:
    '''Shortest round-trip representation; `NA` for NaN.'''
    value = float(value)
    if math.isnan(value):
        return 'NA'
    return repr(value)


def _to_jsonable(o):
    if isinstance(o, Path):
        return o.name
    if isinstance(o, enum.Enum):
        return o.value
    if isinstance(o, np.ndarray):
        return [_to_jsonable(v) for v in o.tolist()] if o.dtype.kind == 'f' else o.tolist()
    if isinstance(o, np.generic):
        return _to_jsonable(o.item())
    if isinstance(o, float) and not math.isfinite(o):
        return None
    if dataclasses.is_dataclass(o) and not isinstance(o, type):
        d = {
            field.name: getattr(o, field.name)
            for field in dataclasses.fields(o)
            if field.repr
        }
        d['$type'] = type(o).__name__
        return d
    return o


class _Encoder(json.JSONEncoder):
    def iterencode(self, o, _one_shot=False):
        return super().iterencode(_sanitize(o), _one_shot)

    def default(self, o):
        converted = _to_jsonable(o)
        if converted is o:
            raise TypeError(f'Object of type {type(o)} is not JSON serializable')
        return _sanitize(converted)


def _sanitize(o):
    # json would otherwise write NaN literals for plain floats
    if isinstance(o, float):
        return o if math.isfinite(o) else None
    if isinstance(o, dict):
        return {str(_to_jsonable(k)): _sanitize(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_sanitize(v) for v in o]
    converted = _to_jsonable(o)
    if converted is not o:
        return _sanitize(converted)
    return o


def dataclass_deep_to_json(obj: typing.Any):
    return json.dumps(obj, cls=_Encoder, indent=2)
