"""Pipeline configuration and its key=value file format.

Files are INI-style: one ``[section]`` per sub-config, one ``key = value``
per field. Unknown sections or keys are rejected. Floats are written with
``repr`` so a write/read cycle is lossless.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
import typing

from .errors import DataError
from .mapping import MapUpdatePolicy
from .preprocess import PreprocessConfig
from .registration import GicpParams

SUBMAP_MODES = ("union", "radius", "knn")
COVARIANCE_MODES = ("cached", "recompute")
ALIGNMENTS = ("rigid", "origin", "none")


@dataclasses.dataclass
class SubmapConfig:
    """Scan-to-map target selection around the predicted pose.

    ``union`` takes every map point within ``radius`` plus the ``knn``
    nearest map points of each predicted current point.
    """

    mode: str = "union"
    radius: float = 60.0
    knn: int = 5

    def __post_init__(self):
        if self.mode not in SUBMAP_MODES:
            raise ValueError(f"submap mode must be one of {SUBMAP_MODES}")
        if not self.radius > 0:
            raise ValueError("submap radius must be positive")
        if self.knn < 1:
            raise ValueError("submap knn must be at least 1")


@dataclasses.dataclass
class MapConfig:
    """``covariances``: ``cached`` keeps map-neighborhood covariances updated on
    insertion; ``recompute`` re-estimates them over the submap every frame."""

    leaf_resolution: float = 0.1
    covariances: str = "cached"

    def __post_init__(self):
        if not self.leaf_resolution > 0:
            raise ValueError("leaf_resolution must be positive")
        if self.covariances not in COVARIANCE_MODES:
            raise ValueError(f"map covariances must be one of {COVARIANCE_MODES}")


@dataclasses.dataclass
class EvalConfig:
    alignment: str = "rigid"
    max_dt: float = 0.05

    def __post_init__(self):
        if self.alignment not in ALIGNMENTS:
            raise ValueError(f"alignment must be one of {ALIGNMENTS}")
        if not self.max_dt > 0:
            raise ValueError("max_dt must be positive")


def _scan_to_scan():
    return GicpParams()


def _scan_to_map():
    return GicpParams()


@dataclasses.dataclass
class PipelineConfig:
    preprocess: PreprocessConfig = dataclasses.field(default_factory=PreprocessConfig)
    scan_to_scan: GicpParams = dataclasses.field(default_factory=_scan_to_scan)
    scan_to_map: GicpParams = dataclasses.field(default_factory=_scan_to_map)
    policy: MapUpdatePolicy = dataclasses.field(default_factory=MapUpdatePolicy)
    submap: SubmapConfig = dataclasses.field(default_factory=SubmapConfig)
    map: MapConfig = dataclasses.field(default_factory=MapConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)

    def replace(self, **sections) -> PipelineConfig:
        """Copy with fields overridden per section, e.g. ``replace(policy={"max_rotation": 3.0})``."""
        kw = {}
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            kw[f.name] = dataclasses.replace(sub, **sections.pop(f.name, {}))
        if sections:
            raise ValueError(f"unknown config sections: {sorted(sections)}")
        return PipelineConfig(**kw)


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text, kind, where):
    text = text.strip()
    args = typing.get_args(kind)
    if args:
        if text.lower() == "none":
            return None
        kind = next(a for a in args if a is not type(None))
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise DataError(f"bad value {text!r} for {where}") from None
    return text


def dumps(cfg: PipelineConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    for f in dataclasses.fields(cfg):
        sub = getattr(cfg, f.name)
        cp[f.name] = {g.name: _format(getattr(sub, g.name)) for g in dataclasses.fields(sub)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def loads(text: str) -> PipelineConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise DataError(f"malformed config: {e}") from None
    known = {f.name: f for f in dataclasses.fields(PipelineConfig)}
    extra = set(cp.sections()) - set(known)
    if extra:
        raise DataError(f"unknown config section(s): {', '.join(sorted(extra))}")
    sections = {}
    default = PipelineConfig()
    for name in cp.sections():
        sub_cls = type(getattr(default, name))
        hints = typing.get_type_hints(sub_cls)
        fields = {g.name for g in dataclasses.fields(sub_cls)}
        values = {}
        for key, raw in cp[name].items():
            if key not in fields:
                raise DataError(f"unknown config key {name}.{key}")
            values[key] = _parse(raw, hints[key], f"{name}.{key}")
        sections[name] = values
    try:
        return default.replace(**sections)
    except ValueError as e:
        raise DataError(f"invalid config: {e}") from None


def load(path) -> PipelineConfig:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())


def save(cfg: PipelineConfig, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(cfg))
