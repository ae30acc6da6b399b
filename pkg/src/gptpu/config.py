"""Key-value configuration for device profiles and the runtime.

INI layout::

    [device]
    count = 4
    onchip_memory_bytes = 8388608
    transfer_ms_per_mb = 6.0

    [ops]
    conv2d = 10268.80

    [runtime]
    strict = false
    scaling = interval
    mode = quantized
    task_workers = 8
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .device import DEFAULT_OPS, DeviceProfile
from .errors import InvalidInputError
from .ops import DEVICE_KINDS, normalize_kind
from .tensorizer import SCALING_POLICIES

MODES = ("quantized", "oracle-replay")


@dataclass(frozen=True)
class RuntimeConfig:
    devices: int = 1
    profile: DeviceProfile = field(default_factory=DeviceProfile)
    strict: bool = False
    scaling: str = "interval"
    mode: str = "quantized"
    task_workers: int = 8

    def __post_init__(self):
        if self.devices < 1:
            raise InvalidInputError("need at least one device")
        if self.scaling not in SCALING_POLICIES:
            raise InvalidInputError(f"unknown scaling policy {self.scaling!r}")
        if self.mode not in MODES:
            raise InvalidInputError(f"unknown mode {self.mode!r}")
        if self.task_workers < 1:
            raise InvalidInputError("task_workers must be >= 1")

    def with_overrides(self, **kw) -> "RuntimeConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


def parse_config(text: str, base: Optional[RuntimeConfig] = None) -> RuntimeConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise InvalidInputError(f"bad config: {e}") from None
    base = base or RuntimeConfig()
    prof = base.profile
    ops = dict(prof.ops)
    try:
        if cp.has_section("ops"):
            for k, v in cp.items("ops"):
                kind = normalize_kind(k)
                if kind not in DEVICE_KINDS:
                    raise InvalidInputError(f"{k} is not a device instruction")
                ops[kind] = float(v)
        dev = cp["device"] if cp.has_section("device") else {}
        profile = DeviceProfile(
            onchip_memory_bytes=int(dev.get("onchip_memory_bytes", prof.onchip_memory_bytes)),
            ops=ops,
            transfer_ms_per_mb=float(dev.get("transfer_ms_per_mb", prof.transfer_ms_per_mb)),
            arith_tile=int(dev.get("arith_tile", prof.arith_tile)),
            reduce_tile=int(dev.get("reduce_tile", prof.reduce_tile)),
        )
        rt = cp["runtime"] if cp.has_section("runtime") else None
        return RuntimeConfig(
            devices=int(dev.get("count", base.devices)),
            profile=profile,
            strict=rt.getboolean("strict", base.strict) if rt is not None else base.strict,
            scaling=rt.get("scaling", base.scaling) if rt is not None else base.scaling,
            mode=rt.get("mode", base.mode) if rt is not None else base.mode,
            task_workers=int(rt.get("task_workers", base.task_workers)) if rt is not None else base.task_workers,
        )
    except ValueError as e:
        raise InvalidInputError(f"bad config value: {e}") from None


def load_config(path) -> RuntimeConfig:
    p = Path(path)
    if not p.is_file():
        raise InvalidInputError(f"config file {p} not found")
    return parse_config(p.read_text())


def dump_config(cfg: RuntimeConfig) -> str:
    lines = [
        "[device]",
        f"count = {cfg.devices}",
        f"onchip_memory_bytes = {cfg.profile.onchip_memory_bytes}",
        f"transfer_ms_per_mb = {cfg.profile.transfer_ms_per_mb}",
        f"arith_tile = {cfg.profile.arith_tile}",
        f"reduce_tile = {cfg.profile.reduce_tile}",
        "",
        "[ops]",
    ]
    lines += [f"{k} = {cfg.profile.ops[k]}" for k in DEFAULT_OPS]
    lines += [
        "",
        "[runtime]",
        f"strict = {str(cfg.strict).lower()}",
        f"scaling = {cfg.scaling}",
        f"mode = {cfg.mode}",
        f"task_workers = {cfg.task_workers}",
        "",
    ]
    return "\n".join(lines)
