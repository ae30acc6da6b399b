"""Characterization loop, application runs and machine-readable reports.

Times are simulated unless a wall-clock measurement is asked for explicitly.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import datasets
from .config import RuntimeConfig
from .device import MB, Device, DeviceProfile, Instruction
from .errors import InvalidInputError, PlanningError
from .ops import DEVICE_KINDS, PAIRWISE, OpDescriptor, normalize_kind
from .runtime import Runtime
from .tensor import error_report, range_stats
from .tensorizer import input_params, quantize

SCHEMA_VERSION = 1
LOOPS = (10_000, 20_000)
RMSE_NOTE = "rmse_normalized divides by the oracle output's (max - min)"

DEFAULT_SIZES = {
    "gemm": 1024,
    "pagerank": 1024,
    "hotspot3d": 512,
    "lud": 256,
    "gaussian": 256,
    "backprop": 256,
    "blackscholes": 100_000,
}
# largest sizes the harness plans for; beyond these host memory or run time explode
MAX_SIZES = {
    "gemm": 4096,
    "pagerank": 4096,
    "hotspot3d": 2048,
    "lud": 1024,
    "gaussian": 1024,
    "backprop": 4096,
    "blackscholes": 10_000_000,
}
MIN_SIZES = {"hotspot3d": 2, "lud": 2, "gaussian": 2}
APP_ALIASES = {"hotspot": "hotspot3d"}
RANGED_APPS = ("gemm", "hotspot3d", "backprop")


# -- characterization --------------------------------------------------------


@dataclass(frozen=True)
class CharacterizationSample:
    kind: str
    input_bytes: int
    t1_us: float
    t2_us: float
    r1: int
    r2: int

    def __post_init__(self):
        if not self.t2_us > self.t1_us:
            raise InvalidInputError("t2 must exceed t1")
        if self.r2 < self.r1:
            raise InvalidInputError("r2 must be >= r1")


@dataclass(frozen=True)
class Characterization:
    sample: CharacterizationSample
    ops: float
    rps: float
    # bytes per second; None when t1 - (t2 - t1) <= 0
    data_exchange_rate: Optional[float]
    clock: str = "simulated"

    @property
    def data_exchange_mb_per_s(self) -> Optional[float]:
        return None if self.data_exchange_rate is None else self.data_exchange_rate / MB


def apply_equations(s: CharacterizationSample, n1: int = LOOPS[0]) -> Characterization:
    dt = (s.t2_us - s.t1_us) * 1e-6
    setup = (s.t1_us - (s.t2_us - s.t1_us)) * 1e-6
    return Characterization(
        sample=s,
        ops=n1 / dt,
        rps=(s.r2 - s.r1) / dt,
        data_exchange_rate=s.input_bytes / setup if setup > 0 else None,
    )


def _operands(kind: str, rows: int, cols: int, rng: np.random.Generator):
    def block(r, c):
        x = rng.uniform(-1.0, 1.0, (r, c))
        return quantize(x, input_params(range_stats(x)))

    a = block(rows, cols)
    if kind == "conv2d":
        return OpDescriptor(kind), [a, block(min(3, rows), min(3, cols))]
    if kind == "fully_connected":
        return OpDescriptor(kind), [a, block(cols, cols)]
    if kind in PAIRWISE:
        return OpDescriptor(kind), [a, block(rows, cols)]
    if kind == "crop":
        return OpDescriptor(kind, window=(0, max(1, rows // 2), 0, max(1, cols // 2))), [a]
    if kind == "ext":
        return OpDescriptor(kind, target=(2 * rows, 2 * cols)), [a]
    return OpDescriptor(kind), [a]


def _phase(profile, op, blocks, repeat, wall_clock) -> tuple[float, int]:
    dev = Device(profile)
    t0 = time.perf_counter()
    for i, b in enumerate(blocks):
        dev.load(f"in{i}", b)
    ins = Instruction(op, tuple(f"in{i}" for i in range(len(blocks))))
    if wall_clock:
        for _ in range(repeat):
            out = dev.execute(ins)
        elapsed = (time.perf_counter() - t0) * 1e6
    else:
        out = dev.execute(ins, repeat=repeat)
        elapsed = dev.clock_us
    return elapsed, repeat * out.values.size


def characterize(
    kind: str,
    rows: int,
    cols: int,
    profile: Optional[DeviceProfile] = None,
    wall_clock: bool = False,
    loops: tuple[int, int] = LOOPS,
    seed: int = datasets.DEFAULT_SEED,
) -> Characterization:
    """Run the two-phase loop for one instruction kind and apply the throughput equations.

    Each phase starts from a fresh device, transfers the operands once and
    issues the instruction ``loops[i]`` times.
    """
    kind = normalize_kind(kind)
    if kind not in DEVICE_KINDS:
        raise InvalidInputError(f"{kind} is not a device instruction")
    if rows < 1 or cols < 1:
        raise InvalidInputError("rows and cols must be positive")
    n1, n2 = loops
    if not 0 < n1 < n2:
        raise InvalidInputError("loops must be increasing positive counts")
    profile = profile or DeviceProfile()
    op, blocks = _operands(kind, rows, cols, np.random.default_rng(seed))
    t1, r1 = _phase(profile, op, blocks, n1, wall_clock)
    t2, r2 = _phase(profile, op, blocks, n2, wall_clock)
    s = CharacterizationSample(kind, sum(b.nbytes for b in blocks), t1, t2, r1, r2)
    res = apply_equations(s, n1)
    return Characterization(res.sample, res.ops, res.rps, res.data_exchange_rate, "wall" if wall_clock else "simulated")


# -- run reports -------------------------------------------------------------


@dataclass
class RunReport:
    app: str
    input: dict
    mode: str
    devices: int
    error: dict
    instruction_counts: dict
    makespan_us: dict
    saturation_events: int
    overflow_events: int
    clamped_inputs: int
    notes: list = field(default_factory=list)
    wall_clock_s: Optional[float] = None
    schema_version: int = SCHEMA_VERSION

    @property
    def speedup(self) -> dict:
        base = self.makespan_us.get("1")
        return {d: (base / t if t > 0 else None) for d, t in self.makespan_us.items()} if base else {}

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        d = dict(d)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise InvalidInputError(f"unsupported report schema {d.get('schema_version')!r}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def metrics(self) -> list[tuple[str, object, str, str]]:
        rows = [
            ("schema_version", self.schema_version, "", "artifact"),
            ("app", self.app, "", "input"),
            ("mode", self.mode, "", "input"),
            ("devices", self.devices, "count", "input"),
        ]
        rows += [(f"input.{k}", _csv_value(v), "", "input") for k, v in sorted(self.input.items())]
        units = {"mape": "fraction", "rmse_normalized": "fraction", "max_abs_error": "abs", "count": "elements"}
        rows += [(f"error.{k}", v, units.get(k, ""), "emulator vs float64 oracle") for k, v in sorted(self.error.items())]
        rows += [(f"instructions.{k}", v, "count", "emulator") for k, v in sorted(self.instruction_counts.items())]
        for d in sorted(self.makespan_us, key=int):
            rows.append((f"makespan.d{d}", self.makespan_us[d], "us", "simulated clock"))
        for d, s in sorted(self.speedup.items(), key=lambda kv: int(kv[0])):
            rows.append((f"speedup.d{d}", "n/a" if s is None else s, "x", "simulated clock"))
        rows += [
            ("saturation_events", self.saturation_events, "count", "emulator"),
            ("overflow_events", self.overflow_events, "count", "emulator"),
            ("clamped_inputs", self.clamped_inputs, "count", "tensorizer"),
        ]
        if self.wall_clock_s is not None:
            rows.append(("wall_clock", self.wall_clock_s, "s", "wall clock (not reproducible)"))
        rows += [(f"note.{i}", n, "", "artifact") for i, n in enumerate(self.notes)]
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("metric", "value", "unit", "provenance"))
        for row in self.metrics():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def _csv_value(v):
    return ":".join(str(x) for x in v) if isinstance(v, (list, tuple)) else v


def write_report(report: RunReport, path, fmt: Optional[str] = None) -> Path:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "json")
    if fmt not in ("csv", "json"):
        raise InvalidInputError(f"unknown report format {fmt!r}")
    text = report.to_csv() if fmt == "csv" else report.to_json()
    try:
        path.write_text(text)
    except OSError as e:
        raise InvalidInputError(f"cannot write report to {path}: {e}") from None
    return path


def load_report(path) -> RunReport:
    try:
        return RunReport.from_dict(json.loads(Path(path).read_text()))
    except (OSError, json.JSONDecodeError, TypeError) as e:
        raise InvalidInputError(f"cannot load report {path}: {e}") from None


# -- applications ------------------------------------------------------------


def canonical_app(app: str) -> str:
    from .kernels import APPS

    name = APP_ALIASES.get(app, app)
    if name not in APPS:
        raise InvalidInputError(f"unknown app {app!r}; choose from {', '.join(APPS)}")
    return name


def plan(app: str, size: int, profile: DeviceProfile) -> None:
    """Reject sizes the harness cannot run, before any work starts."""
    lo, hi = MIN_SIZES.get(app, 1), MAX_SIZES[app]
    if not lo <= size <= hi:
        raise PlanningError(f"{app} size {size} outside the plannable range [{lo}, {hi}]")
    # the largest lowered block: a stacked gemm tile, otherwise an arithmetic tile
    t = profile.arith_tile
    s = int(np.ceil(np.sqrt(t)))
    biggest = t * s * s if app == "gemm" else t * t
    if 2 * biggest > profile.onchip_memory_bytes:
        raise PlanningError(f"two {biggest}-byte blocks do not fit {profile.onchip_memory_bytes} bytes of device memory")


def _inputs(app: str, size: int, seed: int, value_range):
    from .kernels import init_network
    from .kernels import reference as ref

    rng_kw = {} if value_range is None else {"lo": value_range[0], "hi": value_range[1]}
    if app == "gemm":
        a, b = datasets.gemm_inputs(size, seed=seed, **rng_kw)
        return (a, b), lambda: ref.gemm_ref(a, b)
    if app == "pagerank":
        g = datasets.random_graph(size, seed=seed)
        return (g,), lambda: ref.pagerank_ref(g)[None]
    if app == "hotspot3d":
        t, p = datasets.hotspot_inputs(size, seed=seed, **rng_kw)
        return (t, p, 4), lambda: ref.hotspot3d_ref(t, p, steps=4).reshape(-1, size)
    if app == "lud":
        a, _, _ = datasets.unit_lu_integer_matrix(size, seed=seed)
        return (a,), lambda: np.hstack(ref.lud_ref(a))
    if app == "gaussian":
        a, b, _ = datasets.gaussian_inputs(size, seed=seed)
        return (a, b), lambda: ref.gaussian_ref(a, b)[None]
    if app == "backprop":
        net = init_network((size, size, 1), seed=seed)
        x, y = datasets.backprop_inputs(size, seed=seed, **rng_kw)
        return (net, x, y), lambda: ref.backprop_ref(net, x, y).network.flat()[None]
    opts = datasets.option_batch(size, seed=seed)
    return (opts,), lambda: ref.blackscholes_ref(opts)[None]


def _execute(app: str, args, rt: Runtime) -> np.ndarray:
    from . import kernels as k

    if app == "gemm":
        return k.tpu_gemm(*args, runtime=rt).numpy()
    if app == "pagerank":
        return k.pagerank(*args, runtime=rt)[None]
    if app == "hotspot3d":
        t, p, steps = args
        return k.hotspot3d(t, p, steps=steps, runtime=rt).reshape(-1, t.shape[-1])
    if app == "lud":
        return np.hstack(k.lud(*args, runtime=rt))
    if app == "gaussian":
        return k.gaussian(*args, runtime=rt)[None]
    if app == "backprop":
        return k.backprop(*args, runtime=rt).network.flat()[None]
    return k.blackscholes(*args, runtime=rt)[None]


def input_dims(app: str, size: int) -> list:
    return {
        "gemm": [size, size, size],
        "pagerank": [size, size],
        "hotspot3d": [4, size, size],
        "lud": [size, size],
        "gaussian": [size, size + 1],
        "backprop": [size, size, 1],
        "blackscholes": [size, 9],
    }[app]


def run_app(
    app: str,
    size: Optional[int] = None,
    seed: int = datasets.DEFAULT_SEED,
    devices: int = 1,
    mode: str = "quantized",
    value_range: Optional[tuple[float, float]] = None,
    config: Optional[RuntimeConfig] = None,
    strict: Optional[bool] = None,
    wall_clock: bool = False,
) -> RunReport:
    """Run one application against its float64 oracle and collect a report."""
    app = canonical_app(app)
    size = DEFAULT_SIZES[app] if size is None else int(size)
    cfg = (config or RuntimeConfig()).with_overrides(devices=devices, mode=mode, strict=strict)
    plan(app, size, cfg.profile)
    if value_range is not None:
        if app not in RANGED_APPS:
            raise InvalidInputError(f"{app} has a fixed input distribution; --range applies to {', '.join(RANGED_APPS)}")
        lo, hi = map(float, value_range)
        if not hi > lo:
            raise InvalidInputError(f"empty value range {lo}:{hi}")
        value_range = (lo, hi)
    args, reference = _inputs(app, size, seed, value_range)
    t0 = time.perf_counter()
    with Runtime(cfg) as rt:
        out = _execute(app, args, rt)
        elapsed = time.perf_counter() - t0
        trace = rt.trace()
        counts = rt.instruction_counts()
        sat, ovf, clamped = rt.saturation_events, rt.overflow_events, rt.clamped_inputs
    from .runtime import simulate_makespan

    spans = {str(d): simulate_makespan(trace, d, cfg.profile).makespan_us for d in range(1, cfg.devices + 1)}
    err = error_report(reference(), out)
    return RunReport(
        app=app,
        input={"size": size, "dims": input_dims(app, size), "seed": seed, "range": list(value_range) if value_range else []},
        mode=cfg.mode,
        devices=cfg.devices,
        error=err.as_dict(),
        instruction_counts=counts,
        makespan_us=spans,
        saturation_events=sat,
        overflow_events=ovf,
        clamped_inputs=clamped,
        notes=[RMSE_NOTE],
        wall_clock_s=elapsed if wall_clock else None,
    )
