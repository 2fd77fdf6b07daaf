"""Checkpoint files: model weights, normaliser statistics and the model spec.

Container layout is described in :mod:`hopnet.formats` (magic ``HOPNCKP``).
Array names:

* ``param/<mlp>.l<i>.w`` and ``param/<mlp>.l<i>.b`` - dense layers
  (weights stored ``(fan_in, fan_out)``), ``param/<mlp>.ln.g|b`` - output norm
* ``norm/<input|target>.<rank>/count|mean|m2`` - running statistics

``meta`` carries ``{"spec": {...}, "extra": {...}}``.
"""

from . import formats
from .errors import FormatError
from .features import Normalizer, NormalizerSet
from .model import ModelParams, ModelSpec

MAGIC = b"HOPNCKP\0"
VERSION = 1


def to_bytes(params, extra=None):
    arrays = {f"param/{k}": v for k, v in params.arrays.items()}
    for key, norm in params.normalizers.named().items():
        for field, value in norm.state().items():
            arrays[f"norm/{key}/{field}"] = value
    meta = {"spec": params.spec.to_dict(), "extra": extra or {}}
    return formats.encode(MAGIC, VERSION, meta, arrays)


def from_bytes(blob):
    _, meta, arrays = formats.decode(blob, MAGIC, VERSION)
    try:
        spec = ModelSpec(**meta["spec"])
    except TypeError as exc:
        raise FormatError(f"bad model spec in checkpoint: {exc}") from None
    params = {}
    states = {}
    for name, arr in arrays.items():
        kind, rest = name.split("/", 1)
        if kind == "param":
            params[rest] = arr
        elif kind == "norm":
            key, field = rest.rsplit("/", 1)
            states.setdefault(key, {})[field] = arr
        else:
            raise FormatError(f"unexpected array {name}")
    normalizers = NormalizerSet.from_named({k: Normalizer.from_state(v) for k, v in states.items()})
    return ModelParams(spec, params, normalizers), meta.get("extra", {})


def save(path, params, extra=None):
    return formats.write_file(path, to_bytes(params, extra))


def load(path):
    return from_bytes(formats.read_file(path))
