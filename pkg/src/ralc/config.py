"""Run configuration: key=value files, CLI overrides, and hashing.

The hash covers every knob that shapes the produced map, so a snapshot
can refuse to resume under a different setup. Output location and
failure injection are orchestration details and stay out of the hash.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, fields
from typing import Optional, Tuple

from .exploration import PlannerConfig

ALGORITHMS = ("ralc", "ralc-no-marg", "alc-baseline")

UNHASHED_FIELDS = ("out_dir", "inject_failure")


@dataclass
class RunConfig:
    environment: str = "home_small"
    algorithm: str = "ralc"
    seed: int = 0
    odom_trans_sigma: float = 0.08
    odom_rot_sigma: float = 0.10
    anchors_per_region: int = 3
    recovery_topology: str = "tree"
    keyframe_distance: float = 0.5
    keyframe_rotation: float = 0.5
    closure_cooldown_keyframes: int = 6
    loop_closure_range: float = 1.5
    loop_min_separation: int = 10
    loop_feature_min: float = 0.3
    cycle_seconds: float = 1.0
    substeps: int = 10
    v_max: float = 0.5
    w_max: float = 2.0
    max_cycles: int = 50000
    max_recovery_attempts: int = 3
    out_dir: Optional[str] = None
    inject_failure: Optional[str] = None
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; "
                             f"expected one of {ALGORITHMS}")
        self.planner.regions_enabled = self.algorithm != "alc-baseline"


def parse_injection(spec: str) -> Tuple[int, str]:
    """Parse "region=<id>,kind=<no_path|cholesky>" into its two parts."""
    parts = dict(item.split("=", 1) for item in spec.split(",") if item)
    try:
        region = int(parts.pop("region"))
        kind = parts.pop("kind")
    except KeyError as missing:
        raise ValueError(f"failure injection needs {missing} in {spec!r}")
    if parts:
        raise ValueError(f"unknown injection keys {sorted(parts)} in {spec!r}")
    if kind not in ("no_path", "cholesky"):
        raise ValueError(f"unknown injection kind {kind!r}")
    return region, kind


_RUN_FIELDS = {f.name: f for f in fields(RunConfig) if f.name != "planner"}
_PLANNER_FIELDS = {f.name: f for f in fields(PlannerConfig)}


def _coerce(name: str, text: str, typ) -> object:
    text = text.strip()
    if typ in (float, "float"):
        return float(text)
    if typ in (int, "int"):
        return int(text)
    if typ in (bool, "bool"):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean for {name}: {text!r}")
    return text


def _field_type(f) -> type:
    if f.type in ("float", float):
        return float
    if f.type in ("int", int):
        return int
    if f.type in ("bool", bool):
        return bool
    return str


def load_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Apply key=value lines ('#' comments) on top of defaults."""
    cfg = base if base is not None else RunConfig()
    planner = dataclasses.replace(cfg.planner)
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in UNHASHED_FIELDS:
            updates[key] = value or None
        elif key in _RUN_FIELDS:
            updates[key] = _coerce(key, value, _field_type(_RUN_FIELDS[key]))
        elif key in _PLANNER_FIELDS:
            setattr(planner, key,
                    _coerce(key, value, _field_type(_PLANNER_FIELDS[key])))
        else:
            raise ValueError(f"line {lineno}: unknown configuration key {key!r}")
    merged = dataclasses.replace(cfg, planner=planner, **updates)
    return merged


def load_config_file(path: str, base: Optional[RunConfig] = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return load_config(fh.read(), base)


def config_lines(cfg: RunConfig, include_unhashed: bool = True) -> list:
    """Canonical sorted key=value lines describing the config."""
    entries = {}
    for name in _RUN_FIELDS:
        if not include_unhashed and name in UNHASHED_FIELDS:
            continue
        value = getattr(cfg, name)
        if value is None:
            if not include_unhashed:
                continue
            value = ""
        entries[name] = value
    for name in _PLANNER_FIELDS:
        entries[name] = getattr(cfg.planner, name)
    return [f"{key}={_render(entries[key])}" for key in sorted(entries)]


def _render(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def config_text(cfg: RunConfig) -> str:
    return "\n".join(config_lines(cfg)) + "\n"


def config_hash(cfg: RunConfig) -> int:
    """64-bit digest of every map-shaping parameter."""
    payload = "\n".join(config_lines(cfg, include_unhashed=False))
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")
