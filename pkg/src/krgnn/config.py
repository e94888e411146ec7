"""Plain-text run configuration.

One ``key = value`` pair per line; ``#`` starts a comment and blank lines are
ignored. Keys are the :class:`~krgnn.training.TrainConfig` fields plus the
kernel keys ``sigma``, ``p``, ``eps_rank`` and ``lambda_ridge``. Example::

    # GIRL run
    layer = sage
    depth = 3
    lr = 0.003
    sigma = median
    split = 0.6, 0.2, 0.2
"""

import dataclasses

from .errors import InvalidArgumentError, ParseError
from .kernel import SIGMA_RULES, KernelConfig
from .training import TrainConfig

KERNEL_KEYS = ("sigma", "p", "eps_rank", "lambda_ridge")
TRAIN_KEYS = tuple(f.name for f in dataclasses.fields(TrainConfig) if f.name != "kr")
VALID_KEYS = TRAIN_KEYS + KERNEL_KEYS

_TRUE = ("1", "true", "yes", "on")
_FALSE = ("0", "false", "no", "off")


def _default(key):
    if key in KERNEL_KEYS:
        return getattr(KernelConfig(), key)
    return getattr(TrainConfig(), key)


def parse_value(key, text):
    """Convert ``text`` to the type of ``key``'s default; errors name the key."""
    if key not in VALID_KEYS:
        raise InvalidArgumentError(f"unknown key {key!r}; valid keys: {', '.join(VALID_KEYS)}")
    if not isinstance(text, str):
        return tuple(float(v) for v in text) if key == "split" else text
    text = text.strip()
    default = _default(key)
    try:
        if key == "sigma":
            return text if text in SIGMA_RULES else float(text)
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
        return text
    except ValueError:
        kind = "boolean" if isinstance(default, bool) else type(default).__name__
        if key == "sigma":
            kind = f"one of {SIGMA_RULES} or a number"
        raise InvalidArgumentError(f"key {key!r} expects {kind}, got {text!r}") from None


def read_config_file(path):
    """Return the ``{key: value}`` pairs of a config file, values already typed."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
            key, text = (part.strip() for part in line.split("=", 1))
            if not key or not text:
                raise ParseError(f"expected 'key = value', got {raw.strip()!r}", path, lineno)
            try:
                values[key] = parse_value(key, text)
            except InvalidArgumentError as exc:
                raise ParseError(str(exc), path, lineno) from None
    return values


def build_config(values=None):
    """TrainConfig from a flat mapping of (already typed or string) values."""
    values = {k: parse_value(k, v) for k, v in (values or {}).items()}
    kernel = KernelConfig(**{k: v for k, v in values.items() if k in KERNEL_KEYS})
    return TrainConfig(kr=kernel, **{k: v for k, v in values.items() if k in TRAIN_KEYS})


def load_config(path=None, overrides=None):
    """Defaults, then the file at ``path`` (if any), then ``overrides``."""
    values = read_config_file(path) if path is not None else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(values)


def flatten_config(cfg):
    """Flat ``{key: value}`` view of a TrainConfig (inverse of :func:`build_config`)."""
    flat = {k: getattr(cfg, k) for k in TRAIN_KEYS}
    flat["split"] = list(cfg.split)
    flat.update({k: getattr(cfg.kr, k) for k in KERNEL_KEYS})
    return flat
