"""Command-line entry point: ``pmbank {gen-stream,simulate,compare,inspect}``.

Exit codes: 0 ok, 2 usage or config error, 3 I/O or corrupt file, 4 protocol violation.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import re
import sys
from fractions import Fraction
from pathlib import Path

from .bank import NonMonotonicTimestamp
from .core import (
    InvalidConfig,
    PMBError,
    ShapeMismatch,
    dump_config,
    load_config,
    make_config,
    parse_config_text,
    validate_config,
)
from .harness import (
    PROTOCOLS,
    Comparison,
    QueryOutOfRange,
    compare_policies,
    query_ticks_every,
    run_protocol,
)
from .policies import POLICY_NAMES, policy_factory
from .stream import (
    InvalidSpec,
    StreamFileError,
    StreamSpec,
    atomic_write,
    encode_stream,
    gen_synthetic_stream,
    load_stream,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_PROTOCOL = 0, 2, 3, 4


class UsageError(PMBError):
    pass


def _default_seed() -> int:
    try:
        return int(os.environ.get("PMB_SEED", "0"))
    except ValueError:
        return 0


def _parse_dims(text: str) -> tuple[int, int, int]:
    m = re.fullmatch(r"(\d+)x(\d+)x(\d+)", text.strip())
    if not m:
        raise UsageError(f"--dims must look like HxWxD, got {text!r}")
    return tuple(int(g) for g in m.groups())


def _parse_seconds(text: str) -> Fraction:
    m = re.fullmatch(r"(\d+(?:\.\d+)?)s?", text.strip())
    if not m:
        raise UsageError(f"expected a duration like '10s', got {text!r}")
    value = Fraction(m.group(1))
    if value <= 0:
        raise UsageError("duration must be positive")
    return value


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


# -- subcommands ----------------------------------------------------------------


def cmd_gen_stream(args) -> int:
    h, w, d = _parse_dims(args.dims)
    spec = StreamSpec(seed=args.seed, base_fps=args.fps, duration_s=args.duration, height=h, width=w,
                      depth=d, scene_count=args.scenes, noise_sigma=args.noise)
    stream = gen_synthetic_stream(spec)
    blob = encode_stream(stream)
    out = Path(args.output)
    try:
        atomic_write(out, blob)
        sidecar = {
            "spec": spec.__dict__,
            "frames": len(stream),
            "scenes": [{"scene_id": s.scene_id, "start_tick": s.start_tick, "end_tick": s.end_tick}
                       for s in stream.scenes],
        }
        atomic_write(out.with_name(out.name + ".scenes.json"), json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"wrote {out}: {len(stream)} frames, {len(blob)} bytes")
    return EXIT_OK


def _effective_config(args, stream):
    overrides = _parse_overrides(args.set)
    if args.config:
        try:
            cfg = load_config(args.config, overrides)
        except OSError as exc:
            raise StreamFileError(f"cannot read config {args.config}: {exc}") from exc
    else:
        h, w, d = stream.shape
        base = make_config((2, 2, 12), res1=(h, w), base_fps=stream.base_fps, depth=d)
        cfg = parse_config_text(dump_config(base), overrides)
    report = validate_config(cfg)
    if not report.ok:
        raise InvalidConfig("; ".join(report.violations))
    first = cfg.layers[0]
    if (first.res_h, first.res_w, cfg.depth) != stream.shape:
        raise InvalidConfig(
            f"config expects {first.res_h}x{first.res_w}x{cfg.depth} frames, stream has "
            f"{'x'.join(map(str, stream.shape))}"
        )
    if cfg.base_fps != stream.base_fps:
        raise InvalidConfig(f"config base_fps {cfg.base_fps} does not match stream base_fps {stream.base_fps}")
    return cfg


def _query_ticks(args, stream):
    if args.query_ticks:
        try:
            return sorted(int(t) for t in args.query_ticks.split(","))
        except ValueError:
            raise UsageError(f"--query-ticks must be comma-separated integers, got {args.query_ticks!r}") from None
    return query_ticks_every(stream, _parse_seconds(args.query_every))


def _load_inputs(args):
    stream = load_stream(args.stream)
    cfg = _effective_config(args, stream)
    stream_digest = hashlib.sha256(Path(args.stream).read_bytes()).hexdigest()[:16]
    header = {
        "seed": args.seed,
        "config": cfg.to_dict(),
        "stream": {"digest": stream_digest, "frames": len(stream), "base_fps": stream.base_fps},
        "protocol_params": {"fps": args.fps, "window_s": args.window},
    }
    return stream, cfg, header


def _write_outputs(out_dir: Path, reports: dict, summary_csv: str, header: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, report in reports.items():
        atomic_write(out_dir / f"{name}.jsonl", report.to_jsonl(header))
    atomic_write(out_dir / "summary.csv", summary_csv)
    timing = {name: report.wall_time_s for name, report in reports.items()}
    atomic_write(out_dir / "timing.json", json.dumps(timing, indent=2, sort_keys=True) + "\n")


def _summary_for(reports: dict, errors=None) -> str:
    ranking = sorted(reports, key=lambda n: (-reports[n].mean_recall, n))
    return Comparison(reports, errors or {}, ranking).summary_csv()


def cmd_simulate(args) -> int:
    if args.policy not in POLICY_NAMES:
        raise UsageError(f"unknown policy {args.policy!r}")
    stream, cfg, header = _load_inputs(args)
    factory = policy_factory(args.policy, cfg, args.capacity)
    report = run_protocol(stream, factory, args.protocol, _query_ticks(args, stream), args.window, args.fps)
    report.config_digest = cfg.digest()
    _write_outputs(Path(args.out), {args.policy: report}, _summary_for({args.policy: report}), header)
    agg = report.aggregates()
    print(f"{args.policy}/{args.protocol}: {agg['queries']} queries, mean recall {agg['mean_recall']:.4f}, "
          f"peak tokens {agg['peak_tokens']} (budget {agg['budget']})")
    return EXIT_OK


def cmd_compare(args) -> int:
    names = [n.strip() for n in args.policies.split(",") if n.strip()]
    if len(names) != len(set(names)):
        raise UsageError(f"duplicate policy names in {args.policies!r}")
    if len(names) < 2:
        raise UsageError("compare needs at least two policies")
    unknown = [n for n in names if n not in POLICY_NAMES]
    if unknown:
        raise UsageError(f"unknown policies: {', '.join(unknown)}")
    stream, cfg, header = _load_inputs(args)
    capacity = None if args.matched_budget else args.capacity
    factories = {name: policy_factory(name, cfg, capacity) for name in names}
    result = compare_policies(stream, factories, args.protocol, _query_ticks(args, stream), jobs=args.jobs,
                              window_s=args.window, fps=args.fps)
    for report in result.reports.values():
        report.config_digest = cfg.digest()
    header = {**header, "matched_budget": capacity is None}
    _write_outputs(Path(args.out), result.reports, result.summary_csv(), header)
    for rank, name in enumerate(result.ranking, start=1):
        agg = result.reports[name].aggregates()
        print(f"{rank}. {name:<12} recall {agg['mean_recall']:.4f}  peak tokens {agg['peak_tokens']}")
    for name, err in result.errors.items():
        print(f"-  {name:<12} failed: {err}", file=sys.stderr)
    return EXIT_PROTOCOL if result.errors else EXIT_OK


def _inspect_stream(path: Path):
    stream = load_stream(path)
    h, w, d = stream.shape
    print(f"stream {path}")
    print(f"  base_fps  {stream.base_fps}")
    print(f"  dims      {h}x{w}x{d}")
    print(f"  frames    {len(stream)}")
    print(f"  scenes    {len(stream.scenes)}")
    for s in stream.scenes:
        print(f"    scene {s.scene_id}: ticks [{s.start_tick}, {s.end_tick})")


def _inspect_report(path: Path):
    aggregate = None
    with path.open() as fh:
        for line in fh:
            record = json.loads(line)
            if record.get("kind") == "aggregate":
                aggregate = record
    if aggregate is None:
        raise StreamFileError(f"{path} has no aggregate record")
    print(f"report {path}")
    for key in ("policy", "protocol", "queries", "mean_recall", "peak_tokens", "budget",
                "tokens_appended", "tokens_erased", "recompute_savings"):
        print(f"  {key:<18} {aggregate[key]}")


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        path = path / "summary.csv"
    try:
        if path.suffix == ".jsonl":
            _inspect_report(path)
        elif path.suffix == ".csv":
            with path.open(newline="") as fh:
                rows = list(csv.DictReader(fh))
            print(f"summary {path}")
            for row in rows:
                print(f"  {row['rank'] or '-':>2} {row['policy']:<12} recall {row['mean_recall'] or '-'}  "
                      f"peak tokens {row['peak_tokens'] or '-'}")
        else:
            _inspect_stream(path)
    except (json.JSONDecodeError, KeyError, UnicodeDecodeError) as exc:
        raise StreamFileError(f"cannot parse {path}: {exc}") from exc
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def _add_run_args(p):
    p.add_argument("-s", "--stream", required=True, help="stream file (.pmbs)")
    p.add_argument("-c", "--config", help="bank config file; defaults to the online 2/2/12 layout")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--protocol", choices=PROTOCOLS, default="streaming")
    p.add_argument("--query-every", default="10s", help="query interval, e.g. 10s")
    p.add_argument("--query-ticks", help="explicit comma-separated query ticks")
    p.add_argument("--window", type=int, default=32, help="sliding window length in seconds")
    p.add_argument("--fps", type=int, default=2, help="protocol sampling rate")
    p.add_argument("--capacity", type=int, help="frame capacity for flat baselines")
    p.add_argument("-o", "--out", default="pmb-out", help="output directory")
    p.add_argument("--seed", type=int, default=_default_seed())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmbank", description="Pyramid memory bank stream simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-stream", help="write a seeded synthetic stream file")
    p.add_argument("--seed", type=int, default=_default_seed())
    p.add_argument("--scenes", type=int, default=4)
    p.add_argument("--duration", type=int, default=40, help="seconds")
    p.add_argument("--fps", type=int, default=8)
    p.add_argument("--dims", default="16x16x8", help="HxWxD")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_stream)

    p = sub.add_parser("simulate", help="run one policy under one protocol")
    _add_run_args(p)
    p.add_argument("--policy", choices=POLICY_NAMES, default="pyramid")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compare", help="run several policies and rank them")
    _add_run_args(p)
    p.add_argument("--policies", default="pyramid,fifo,token-merge,uniform,none")
    p.add_argument("--matched-budget", action="store_true",
                   help="size flat baselines to the pyramid token budget (default when --capacity is unset)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("inspect", help="describe a stream file or report")
    p.add_argument("path")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, InvalidConfig, InvalidSpec, ShapeMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StreamFileError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (QueryOutOfRange, NonMonotonicTimestamp) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL


if __name__ == "__main__":
    sys.exit(main())
