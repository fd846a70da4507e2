"""Sectioned ``key = value`` experiment configuration.

Files are read with :mod:`configparser`. A line ``include = other.cfg``
(outside any section, or anywhere before the first section) pulls another
file in first, relative to the including file; later values win. Any
value can be overridden with ``section.key=value`` strings.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .features import FeatureConfig, FeatureKind
from .nn import TrainConfig
from .synthdata import CorpusConfig


class ConfigError(ValueError):
    pass


def _corpus_defaults() -> CorpusConfig:
    return CorpusConfig(n_classes=10, n_utterances=60, segment_len_ms=(20.0, 60.0))


def _feature_defaults() -> FeatureConfig:
    return FeatureConfig(feature_kind=FeatureKind.FBANK, delta_order=0)


@dataclass(frozen=True)
class AcousticsSection:
    t60_sweep: tuple[float, ...] = (0.0, 0.78)
    ir_kind: str = "exp"
    n_irs: int = 3
    tail_gain: float = 0.05
    snr_db: float | None = None
    room: tuple[float, float, float] = (6.0, 5.0, 3.0)

    def __post_init__(self):
        object.__setattr__(self, "t60_sweep", tuple(float(t) for t in self.t60_sweep))
        if any(t < 0 for t in self.t60_sweep):
            raise ConfigError("t60_sweep values must be non-negative")
        if len(set(self.t60_sweep)) != len(self.t60_sweep):
            raise ConfigError("t60_sweep values must be distinct")
        if self.ir_kind not in ("exp", "image"):
            raise ConfigError(f"unknown ir_kind {self.ir_kind!r}")


@dataclass(frozen=True)
class NetSection:
    hidden_dims: tuple[int, ...] = (128, 128)


@dataclass(frozen=True)
class SearchSection:
    cw_min: int = 3
    cw_max: int = 11
    grid_min: int | None = None
    grid_max: int | None = None
    max_side: int | None = None
    probe_batch_size: int = 128
    probe_epochs: int = 1
    probe_mode: str = "batch"
    baseline: bool = True
    run_grid: bool = False

    def __post_init__(self):
        lo, hi = self.grid_range
        if self.cw_min < 1 or self.cw_max < self.cw_min or self.cw_max % 2 == 0:
            raise ConfigError("need 1 <= cw_min <= cw_max with cw_max odd")
        if lo < 1 or hi < lo or hi % 2 == 0:
            raise ConfigError("need 1 <= grid_min <= grid_max with grid_max odd")
        if self.probe_epochs < 1:
            raise ConfigError("probe_epochs must be >= 1")
        if self.probe_mode not in ("batch", "example"):
            raise ConfigError(f"unknown probe_mode {self.probe_mode!r}")

    @property
    def grid_range(self) -> tuple[int, int]:
        return (self.grid_min or self.cw_min, self.grid_max or self.cw_max)


@dataclass(frozen=True)
class XcorrSection:
    window_ms: float = 200.0
    hop_ms: float = 10.0
    max_utterances: int = 8
    pearson_lags: int = 9


@dataclass(frozen=True)
class RunSection:
    seed: int = 0
    jobs: int = 1
    timings: bool = False
    dev_fraction: float = 0.3


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=_corpus_defaults)
    acoustics: AcousticsSection = AcousticsSection()
    features: FeatureConfig = field(default_factory=_feature_defaults)
    nn: NetSection = NetSection()
    train: TrainConfig = TrainConfig(batch_size=32, max_epochs=15)
    search: SearchSection = SearchSection()
    xcorr: XcorrSection = XcorrSection()
    run: RunSection = RunSection()

    def to_text(self) -> str:
        """Canonical ``key = value`` rendering; also the basis of the digest."""
        lines = []
        for sec in dataclasses.fields(self):
            lines.append(f"[{sec.name}]")
            obj = getattr(self, sec.name)
            for f in dataclasses.fields(obj):
                if f.name in _HIDDEN.get(sec.name, ()):
                    continue
                lines.append(f"{f.name} = {_render(getattr(obj, f.name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self, *sections: str) -> str:
        """sha256 of the canonical text, optionally restricted to some sections."""
        text = self.to_text()
        if sections:
            blocks = text.split("\n\n")
            text = "\n\n".join(b for b in blocks if b.split("]")[0].lstrip("[") in sections)
        return hashlib.sha256(text.encode()).hexdigest()


def _render(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_render(x) for x in v)
    if hasattr(v, "value"):
        return str(v.value)
    return str(v)


# owned elsewhere: seeds derive from run.seed, framing comes from [corpus]
_HIDDEN = {"corpus": {"seed"}, "train": {"seed"}, "features": {"frame_len_ms", "hop_ms"}}

_OPTIONAL = {"snr_db": float, "grid_min": int, "grid_max": int, "max_side": int, "fft_size": int}
_TUPLE_ITEM = {"t60_sweep": float, "room": float, "hidden_dims": int,
               "segment_len_ms": float, "pitch_hz": float}


def _parse_value(section: str, key: str, text: str, default):
    text = text.strip()
    try:
        if key in _OPTIONAL:
            return _OPTIONAL[key](text) if text else None
        if key in _TUPLE_ITEM:
            return tuple(_TUPLE_ITEM[key](t) for t in re.split(r"[,\s]+", text) if t)
        if isinstance(default, bool):
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {section}.{key}: {text!r}") from None


def _read_with_includes(path: Path, seen: tuple = ()) -> list[str]:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"include cycle at {path}")
    if not path.exists():
        raise FileNotFoundError(path)
    out = []
    in_section = False
    for line in path.read_text().splitlines():
        m = re.match(r"\s*include\s*=\s*(\S.*?)\s*$", line)
        if m and not in_section:
            out.extend(_read_with_includes(path.parent / m.group(1), seen + (path,)))
            continue
        if line.lstrip().startswith("["):
            in_section = True
        out.append(line)
    return out


def parse_overrides(items) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot or not section or not name:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        out.setdefault(section, {})[name] = value
    return out


def load_config(path=None, overrides=()) -> ExperimentConfig:
    """Defaults, then the file (with includes), then ``section.key=value`` overrides."""
    values: dict[str, dict[str, str]] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None, strict=False)
        try:
            parser.read_string("\n".join(_read_with_includes(Path(path))), source=str(path))
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from None
        for sec in parser.sections():
            values.setdefault(sec, {}).update(parser[sec])
    for sec, kv in parse_overrides(overrides).items():
        values.setdefault(sec, {}).update(kv)
    return build_config(values)


def build_config(values: dict[str, dict[str, str]]) -> ExperimentConfig:
    base = ExperimentConfig()
    known = {f.name for f in dataclasses.fields(base)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    kwargs = {}
    for sec in dataclasses.fields(base):
        obj = getattr(base, sec.name)
        given = values.get(sec.name, {})
        names = {f.name for f in dataclasses.fields(obj)} - _HIDDEN.get(sec.name, set())
        bad = set(given) - names
        if bad:
            raise ConfigError(f"unknown key(s) in [{sec.name}]: {', '.join(sorted(bad))}")
        changes = {k: _parse_value(sec.name, k, v, getattr(obj, k)) for k, v in given.items()}
        try:
            kwargs[sec.name] = dataclasses.replace(obj, **changes)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{sec.name}]: {exc}") from None
    return ExperimentConfig(**kwargs)
