# -*- coding: utf-8 -*-
"""
Helpers shared across modules: random stream derivation, configuration
(de)serialization and small parsing utilities.
"""

import dataclasses
import hashlib
import json
from typing import Any, Dict, List, Sequence, Union

import numpy as np

from .errors import ConfigError

__all__ = ["STREAM_CHANNEL", "STREAM_NOISE", "STREAM_BITS", "STREAM_UL_CHANNEL",
           "STREAM_UL_NOISE", "STREAM_BATCH", "STREAM_INIT", "STREAM_SNR",
           "derive_rng", "derive_seed", "parse_grid", "ConfigMixin", "config_hash",
           "db_to_linear", "linear_to_db"]


##
### Random streams
##

# Every random draw is taken from a generator seeded with
# SeedSequence([root, stream, *counters]). Streams never share state, so a
# trial can be regenerated from (root, stream, trial index) alone.
STREAM_CHANNEL = 1
STREAM_NOISE = 2
STREAM_BITS = 3
STREAM_UL_CHANNEL = 4
STREAM_UL_NOISE = 5
STREAM_BATCH = 6
STREAM_INIT = 7
STREAM_SNR = 8

SeedLike = Union[None, int, Sequence[int], np.random.SeedSequence, np.random.Generator]


def derive_seed(root: int, stream: int, *counters: int) -> np.random.SeedSequence:
    """ Return the seed sequence for one (root, stream, counters) cell. """
    return np.random.SeedSequence([int(root), int(stream)] + [int(c) for c in counters])


def derive_rng(seed: SeedLike, *counters: int) -> np.random.Generator:
    """ Turn anything seed-like into a :class:`numpy.random.Generator`.

        :param seed: ``None``, an integer, an integer sequence, a seed
            sequence or an existing generator. Generators are returned as-is
            and cannot be combined with counters.
        :param counters: Extra integers appended to the entropy.
    """
    if isinstance(seed, np.random.Generator):
        if counters:
            raise ConfigError("Cannot derive counter streams from a Generator")
        return seed
    if isinstance(seed, np.random.SeedSequence):
        if counters:
            seed = np.random.SeedSequence(list(np.atleast_1d(seed.entropy)) + list(counters))
        return np.random.default_rng(seed)
    if seed is None:
        if counters:
            raise ConfigError("A root seed is required to derive counter streams")
        return np.random.default_rng()
    entropy = [int(s) for s in np.atleast_1d(seed)] + [int(c) for c in counters]
    return np.random.default_rng(np.random.SeedSequence(entropy))


##
### Units and parsing
##


def db_to_linear(value):
    return np.power(10.0, np.asarray(value, dtype=float) / 10.0)


def linear_to_db(value):
    return 10.0 * np.log10(np.asarray(value, dtype=float))


def parse_grid(text: str) -> List[float]:
    """ Parse a grid description into a list of floats.

        Accepted forms are ``lo:step:hi`` (inclusive of ``hi`` when it lies on
        the grid), a comma separated list, or a single number.

        >>> parse_grid("-4:2:4")
        [-4.0, -2.0, 0.0, 2.0, 4.0]
    """
    text = str(text).strip()
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ConfigError(f"Grid must be lo:step:hi, got {text!r}")
            lo, step, hi = parts
            if step <= 0 or hi < lo:
                raise ConfigError(f"Invalid grid {text!r}: need step > 0 and lo <= hi")
            count = int(np.floor((hi - lo) / step + 1e-9)) + 1
            return [float(lo + i * step) for i in range(count)]
        return [float(p) for p in text.split(",") if p.strip()]
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"Invalid grid {text!r}") from e


##
### Configuration
##


class ConfigMixin:
    """ Dictionary and JSON (de)serialization for configuration dataclasses.

        Unknown keys are rejected, nested dataclass fields are converted
        recursively and ``__post_init__`` validation runs on load.
    """

    def to_dict(self) -> Dict[str, Any]:
        out = {}
        for field in dataclasses.fields(self):
            value = getattr(self, field.name)
            if isinstance(value, ConfigMixin):
                value = value.to_dict()
            elif isinstance(value, tuple):
                value = list(value)
            out[field.name] = value
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        if not isinstance(data, dict):
            raise ConfigError(f"{cls.__name__} expects a mapping, got {type(data).__name__}")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise ConfigError(f"Unknown {cls.__name__} keys: {', '.join(unknown)}")
        kwargs = {}
        for name, value in data.items():
            nested = _nested_type(cls, name)
            if nested is not None and isinstance(value, dict):
                value = nested.from_dict(value)
            elif isinstance(value, list) and isinstance(getattr(cls, name, None), tuple):
                value = tuple(value)
            kwargs[name] = value
        try:
            return cls(**kwargs)
        except TypeError as e:
            raise ConfigError(f"Invalid {cls.__name__}: {e}") from e

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def save(self, path):
        with open(path, "w", encoding="utf8") as fp:
            json.dump(self.to_dict(), fp, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf8") as fp:
                data = json.load(fp)
        except OSError as e:
            raise ConfigError(f"Cannot read {cls.__name__} file {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON in {path}: {e}") from e
        return cls.from_dict(data)


def _nested_type(cls, name):
    hint = getattr(cls, "_nested", {}).get(name)
    return hint


def config_hash(config) -> str:
    """ Short stable hash of a configuration (dataclass or mapping). """
    data = config.to_dict() if isinstance(config, ConfigMixin) else config
    blob = json.dumps(data, sort_keys=True, default=str).encode("utf8")
    return hashlib.sha256(blob).hexdigest()[:16]
