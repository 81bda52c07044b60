"""Experiment configuration files.

Flat ``key = value`` pairs grouped under ``[section]`` headers; ``#`` starts a
comment. Every key maps onto a dataclass field, unknown keys are rejected and
every error carries the offending line number. An empty file yields the
defaults (512 subcarriers, CP 32, 20 symbols, 4 pilot symbols).

Sections and their targets::

    [scenario]   SubframeSpec fields, plus ebno_db, n_subframes, subcarrier_spacing_hz
    [channel]    ChannelProfile fields except sample_rate_hz (derived from n_sc)
    [pa]         PaConfig
    [detector]   variants (comma list), df_target, csi_taps, dd_alpha
    [reservoir]  ReservoirConfig
    [attention]  AttentionConfig
    [structnet]  StructNetConfig
"""

from __future__ import annotations

import dataclasses
import enum
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .channel import ChannelModel, ChannelProfile, PaConfig
from .errors import ConfigurationError
from .pipeline import AttentionConfig, DetectorConfig, ReservoirConfig, StructNetConfig, parse_variant
from .txchain import PilotMode, PilotPattern, SubframeSpec

__all__ = ["ExperimentConfig", "parse_config", "load_config", "serialize_config"]


@dataclass(frozen=True)
class ScenarioExtras:
    ebno_db: tuple = (21.0,)
    n_subframes: int = 10
    subcarrier_spacing_hz: float = 15e3


@dataclass(frozen=True)
class DetectorList:
    variants: tuple = ("RcAttStructNetDf",)
    df_target: str = "projection"
    csi_taps: Optional[int] = None
    dd_alpha: float = 0.95


@dataclass(frozen=True)
class ExperimentConfig:
    spec: SubframeSpec = field(default_factory=SubframeSpec)
    channel: ChannelProfile = field(default_factory=ChannelProfile)
    pa: PaConfig = field(default_factory=PaConfig)
    detectors: tuple = ("RcAttStructNetDf",)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    ebno_db: tuple = (21.0,)
    n_subframes: int = 10
    subcarrier_spacing_hz: float = 15e3

    def detector_configs(self) -> list:
        return [self.detector.with_variant(v) for v in self.detectors]


# section -> list of (dataclass, excluded field names)
_SECTIONS = {
    "scenario": [(SubframeSpec, ()), (ScenarioExtras, ())],
    "channel": [(ChannelProfile, ("sample_rate_hz",))],
    "pa": [(PaConfig, ())],
    "detector": [(DetectorList, ())],
    "reservoir": [(ReservoirConfig, ())],
    "attention": [(AttentionConfig, ())],
    "structnet": [(StructNetConfig, ())],
}
_TUPLE_ITEM = {"ebno_db": float, "variants": str, "power_delay_profile": float}


def _schema():
    out = {}
    for sec, classes in _SECTIONS.items():
        keys = {}
        for cls, skip in classes:
            hints = typing.get_type_hints(cls)
            for f in dataclasses.fields(cls):
                if f.name not in skip:
                    keys[f.name] = (hints[f.name], cls)
        out[sec] = keys
    return out


_SCHEMA = _schema()


def _unwrap_optional(tp):
    args = typing.get_args(tp)
    if typing.get_origin(tp) is typing.Union and type(None) in args:
        return [a for a in args if a is not type(None)][0], True
    return tp, False


def _coerce(key: str, raw: str, tp, line: int):
    base, optional = _unwrap_optional(tp)
    text = raw.strip()
    if optional and text.lower() in ("", "none"):
        return None
    try:
        if base is bool:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        if base is str:
            return text
        if base is tuple or typing.get_origin(base) is tuple:
            item = _TUPLE_ITEM.get(key, str)
            return tuple(item(v.strip()) for v in text.split(",") if v.strip())
        if isinstance(base, type) and issubclass(base, enum.Enum):
            return base(text)
    except ValueError:
        pass
    name = getattr(base, "__name__", str(base))
    raise ConfigurationError(f"{key}: cannot read {raw.strip()!r} as {name}", line=line)


def _tokenize(text: str):
    """Yield ``(section, key, value, line)``."""
    section = None
    seen = set()
    for no, raw in enumerate(text.splitlines(), start=1):
        s = raw.split("#", 1)[0].strip()
        if not s:
            continue
        if s.startswith("["):
            if not s.endswith("]"):
                raise ConfigurationError(f"malformed section header {s!r}", line=no)
            section = s[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigurationError(f"unknown section [{section}]", line=no)
            continue
        if "=" not in s:
            raise ConfigurationError(f"expected key = value, got {s!r}", line=no)
        if section is None:
            raise ConfigurationError("key outside of any [section]", line=no)
        key, value = (p.strip() for p in s.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigurationError(f"unknown key {key!r} in [{section}]", line=no)
        if (section, key) in seen:
            raise ConfigurationError(f"duplicate key {key!r} in [{section}]", line=no)
        seen.add((section, key))
        yield section, key, value, no


def _is_valid_order(m: int) -> bool:
    k = m.bit_length() - 1
    return m >= 4 and m == 1 << k and k % 2 == 0


def parse_config(text: str) -> ExperimentConfig:
    values = {sec: {} for sec in _SCHEMA}
    lines = {}
    for sec, key, raw, no in _tokenize(text):
        values[sec][key] = _coerce(key, raw, _SCHEMA[sec][key][0], no)
        lines[key] = no

    def build(cls, sec, **extra):
        kw = {k: v for k, v in values[sec].items() if _SCHEMA[sec][k][1] is cls}
        try:
            return cls(**kw, **extra)
        except ConfigurationError as exc:
            raise ConfigurationError(f"[{sec}] {exc}") from None
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"[{sec}] {exc}") from None

    sc = values["scenario"]
    if "mod_order" in sc and not _is_valid_order(sc["mod_order"]):
        raise ConfigurationError(f"mod_order={sc['mod_order']} is not a square power of two >= 4",
                                 line=lines["mod_order"])
    spec = build(SubframeSpec, "scenario")
    extras = build(ScenarioExtras, "scenario")
    if extras.n_subframes < 1:
        raise ConfigurationError("n_subframes must be >= 1", line=lines.get("n_subframes"))
    if not extras.ebno_db:
        raise ConfigurationError("ebno_db needs at least one value", line=lines.get("ebno_db"))

    n_taps = values["channel"].get("n_taps", ChannelProfile.n_taps)
    if n_taps > spec.n_cp:
        raise ConfigurationError(f"n_taps={n_taps} exceeds the cyclic prefix n_cp={spec.n_cp}",
                                 line=lines.get("n_taps", lines.get("n_cp")))
    channel = build(ChannelProfile, "channel", sample_rate_hz=extras.subcarrier_spacing_hz * spec.n_sc)
    pa = build(PaConfig, "pa")

    det = build(DetectorList, "detector")
    if not det.variants:
        raise ConfigurationError("variants needs at least one detector", line=lines.get("variants"))
    for v in det.variants:
        try:
            parse_variant(v)
        except ConfigurationError as exc:
            raise ConfigurationError(str(exc), line=lines.get("variants")) from None
    if det.csi_taps is not None and det.csi_taps > spec.n_cp:
        raise ConfigurationError("csi_taps exceeds n_cp", line=lines["csi_taps"])
    try:
        detector = DetectorConfig(variant=det.variants[0], reservoir=build(ReservoirConfig, "reservoir"),
                                  attention=build(AttentionConfig, "attention"),
                                  structnet=build(StructNetConfig, "structnet"),
                                  df_target=det.df_target, csi_taps=det.csi_taps, dd_alpha=det.dd_alpha)
    except ConfigurationError as exc:
        raise ConfigurationError(f"[detector] {exc}", line=lines.get("df_target")) from None
    return ExperimentConfig(spec, channel, pa, det.variants, detector, extras.ebno_db,
                            extras.n_subframes, extras.subcarrier_spacing_hz)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {str(p)!r}: {exc.strerror}") from None
    return parse_config(text)


def _fmt(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, enum.Enum):
        return str(v.value)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Text form listing every key; ``parse_config`` of it gives back ``cfg``."""
    objs = {
        "scenario": [cfg.spec, ScenarioExtras(cfg.ebno_db, cfg.n_subframes, cfg.subcarrier_spacing_hz)],
        "channel": [cfg.channel],
        "pa": [cfg.pa],
        "detector": [DetectorList(cfg.detectors, cfg.detector.df_target, cfg.detector.csi_taps,
                                  cfg.detector.dd_alpha)],
        "reservoir": [cfg.detector.reservoir],
        "attention": [cfg.detector.attention],
        "structnet": [cfg.detector.structnet],
    }
    out = []
    for sec, items in objs.items():
        out.append(f"[{sec}]")
        for key, (_, cls) in _SCHEMA[sec].items():
            obj = next(o for o in items if isinstance(o, cls))
            out.append(f"{key} = {_fmt(getattr(obj, key))}")
        out.append("")
    return "\n".join(out)
