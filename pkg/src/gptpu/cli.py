"""``bench`` command line: characterize instructions, run applications, inspect model blobs."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from . import bench
from .codec import read_blob
from .config import MODES, RuntimeConfig, load_config
from .errors import GptpuError
from .kernels import APPS


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = text.split(":")
        return float(lo), float(hi)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None


def _fmt(v) -> str:
    if v is None:
        return "n/a"
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bench", description="Emulated 8-bit accelerator benchmark harness.")
    p.add_argument("--config", help="INI file overriding device profile and runtime settings")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("characterize", help="measure OPS, RPS and data-exchange rate of one instruction")
    c.add_argument("--op", required=True)
    c.add_argument("--rows", type=int, required=True)
    c.add_argument("--cols", type=int, required=True)
    c.add_argument("--wall-clock", action="store_true", help="time the emulator itself instead of the simulated clock")
    c.add_argument("--json", action="store_true", help="print a JSON object")

    r = sub.add_parser("run", help="run an application against the float64 oracle")
    r.add_argument("--app", required=True, choices=sorted(set(APPS) | set(bench.APP_ALIASES)))
    r.add_argument("--size", type=int)
    r.add_argument("--range", type=_range, dest="value_range", metavar="LO:HI")
    r.add_argument("--seed", type=int, default=bench.datasets.DEFAULT_SEED)
    r.add_argument("--devices", type=int)
    r.add_argument("--mode", choices=MODES)
    r.add_argument("--strict", action="store_true", default=None)
    r.add_argument("--report", help="write the report here (.csv for CSV, JSON otherwise)")
    r.add_argument("--wall-clock", action="store_true")

    i = sub.add_parser("inspect-model", help="print the header fields of a model blob")
    i.add_argument("path")

    # accept --config after the subcommand as well
    for sp in (c, r, i):
        sp.add_argument("--config", dest="sub_config", help=argparse.SUPPRESS)
    return p


def _config(args) -> RuntimeConfig:
    path = getattr(args, "sub_config", None) or args.config
    return load_config(path) if path else RuntimeConfig()


def cmd_characterize(args, cfg: RuntimeConfig) -> int:
    res = bench.characterize(args.op, args.rows, args.cols, cfg.profile, wall_clock=args.wall_clock)
    s = res.sample
    row = {
        "kind": s.kind,
        "input_bytes": s.input_bytes,
        "t1_us": s.t1_us,
        "t2_us": s.t2_us,
        "r1": s.r1,
        "r2": s.r2,
        "ops": res.ops,
        "rps": res.rps,
        "data_exchange_mb_per_s": res.data_exchange_mb_per_s,
        "clock": res.clock,
    }
    if args.json:
        print(json.dumps(row, sort_keys=True))
    else:
        for k, v in row.items():
            print(f"{k:24s} {_fmt(v)}")
    return 0


def cmd_run(args, cfg: RuntimeConfig) -> int:
    rep = bench.run_app(
        args.app,
        args.size,
        seed=args.seed,
        devices=args.devices or cfg.devices,
        mode=args.mode or cfg.mode,
        value_range=args.value_range,
        config=cfg,
        strict=args.strict,
        wall_clock=args.wall_clock,
    )
    if args.report:
        bench.write_report(rep, args.report)
    for metric, value, unit, _ in rep.metrics():
        print(f"{metric:28s} {_fmt(value)} {unit}".rstrip())
    return 0


def cmd_inspect(args) -> int:
    block, info = read_blob(args.path)
    for k, v in info.as_dict().items():
        if k == "checksum":
            v = f"0x{v:08x}"
        print(f"{k:14s} {_fmt(v)}")
    print(f"{'value_range':14s} {_fmt(block.real_range()[0])}:{_fmt(block.real_range()[1])}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect-model":
            return cmd_inspect(args)
        cfg = _config(args)
        if args.command == "characterize":
            return cmd_characterize(args, cfg)
        return cmd_run(args, cfg)
    except (GptpuError, OSError) as e:
        print(f"bench: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
