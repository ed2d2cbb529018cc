"""Command-line interface: synthesize data, inspect representations,
train, infer, and benchmark.

Exit codes: 0 success, 1 usage error, 2 data/config error.  Output is
line-oriented ``key=value`` text so runs are easy to parse and diff.
"""

from __future__ import annotations

import argparse
import csv
import re
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .config import (
    SECTION_FIELDS,
    RunConfig,
    default_run_config,
    load_run_config,
    run_config_from_dict,
    run_config_to_dict,
    save_run_config,
)
from .io import EventStream, SynthSpec, generate_synthetic, read_stream, write_stream
from .model import (
    ModelConfig,
    ModelParams,
    classify,
    fresh_memory,
    memory_update,
    process_window,
)
from .perf import count_flops, patch_stats, random_tokens, time_window, verify_flops
from .representation import window_iterator
from .training import evaluate
from .training import train as train_model


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on bad usage; we reserve 2 for data
    errors, so usage problems are rethrown and mapped to exit 1."""

    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------

def _optional(base):
    def parse(text: str):
        return None if text.lower() in ("none", "null") else base(text)
    return parse


def _float_pair(text: str):
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two comma-separated numbers")
    return [float(p) for p in parts]


_FLAG_PARSERS = {
    "int": int,
    "float": float,
    "optional_int": _optional(int),
    "optional_float": _optional(float),
    "float_pair": _float_pair,
}


def _add_section_flags(p: argparse.ArgumentParser, sections) -> None:
    p.add_argument("--config", metavar="JSON",
                   help="config file; flags below override its values")
    for section in sections:
        group = p.add_argument_group(f"{section} overrides")
        for name, kind in SECTION_FIELDS[section].items():
            flag = f"--{section}-{name.replace('_', '-')}"
            dest = f"{section}__{name}"
            if kind == "bool":
                group.add_argument(flag, dest=dest,
                                   action=argparse.BooleanOptionalAction,
                                   default=argparse.SUPPRESS)
            else:
                group.add_argument(flag, dest=dest, type=_FLAG_PARSERS[kind],
                                   default=argparse.SUPPRESS,
                                   metavar=name.upper())


def _resolve_config(args) -> RunConfig:
    base = (load_run_config(args.config) if getattr(args, "config", None)
            else default_run_config())
    doc = run_config_to_dict(base)
    for key, value in vars(args).items():
        if "__" in key:
            section, name = key.split("__", 1)
            doc[section][name] = value
    if getattr(args, "seed", None) is not None and hasattr(args, "data"):
        doc["train"]["seed"] = args.seed
    return run_config_from_dict(doc)


# ---------------------------------------------------------------------------
# stream files
# ---------------------------------------------------------------------------

def _detect_format(path: Path) -> str:
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def _read_stream_auto(path: Path) -> EventStream:
    stream = read_stream(path, format=_detect_format(path))
    if stream.label is None:
        m = re.match(r"class(\d+)_", path.name)
        if m:
            stream = EventStream(stream.width, stream.height, ts=stream.ts,
                                 xs=stream.xs, ys=stream.ys, ps=stream.ps,
                                 label=int(m.group(1)))
    return stream


def _load_dataset(root: Path) -> list[EventStream]:
    root = Path(root)
    if not root.is_dir():
        raise ValueError(f"not a directory: {root}")
    files = sorted(p for p in root.iterdir()
                   if p.suffix.lower() in (".evt1", ".csv"))
    if not files:
        raise ValueError(f"no .evt1/.csv stream files in {root}")
    return [_read_stream_auto(p) for p in files]


def _common_geometry(streams) -> tuple[int, int]:
    sizes = {(s.width, s.height) for s in streams}
    if len(sizes) != 1:
        raise ValueError(f"streams disagree on sensor geometry: {sorted(sizes)}")
    return next(iter(sizes))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_synth(args) -> int:
    fmt = args.format
    ext = "csv" if fmt == "csv" else "evt1"
    if args.out is not None:
        if args.class_id is None:
            raise UsageError("--class is required with --out")
        spec = SynthSpec(class_id=args.class_id, duration_us=args.duration_us,
                         width=args.width, height=args.height,
                         signal_rate=args.signal_rate,
                         noise_rate=args.noise_rate, seed=args.seed)
        stream = generate_synthetic(spec)
        write_stream(stream, args.out, format=_detect_format(Path(args.out)))
        print(f"wrote={args.out} label={spec.class_id} "
              f"events={len(stream)} seed={spec.seed}")
        return 0
    if args.out_dir is None:
        raise UsageError("either --out or --out-dir is required")
    classes = [int(c) for c in args.classes.split(",")]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for c in classes:
        for k in range(args.per_class):
            # spread seeds so every (class, index) pair draws a fresh stream
            seed = args.seed + 7919 * c + k
            spec = SynthSpec(class_id=c, duration_us=args.duration_us,
                             width=args.width, height=args.height,
                             signal_rate=args.signal_rate,
                             noise_rate=args.noise_rate, seed=seed)
            stream = generate_synthetic(spec)
            path = out_dir / f"class{c}_{k:04d}.{ext}"
            write_stream(stream, path, format=fmt)
            print(f"wrote={path} label={c} events={len(stream)} seed={seed}")
    return 0


def _cmd_repr(args) -> int:
    repr_cfg = _resolve_config(args).repr
    stream = _read_stream_auto(Path(args.input))
    rows = []
    cursor = 0
    total = 0
    count = 0
    for i, result in enumerate(window_iterator(stream, repr_cfg)):
        print(f"window={i} start_us={cursor} end_us={result.window_end} "
              f"tokens={len(result.tokens)} "
              f"exhausted={str(result.exhausted).lower()}")
        for j, tok in enumerate(result.tokens):
            rows.append([i, j, tok.grid_row, tok.grid_col] + list(tok.values))
        total += len(result.tokens)
        cursor = result.window_end
        count = i + 1
    print(f"windows={count} total_tokens={total}")
    if args.tokens_csv:
        with open(args.tokens_csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            width = repr_cfg.token_dim
            writer.writerow(["window", "token", "grid_row", "grid_col"]
                            + [f"v{k}" for k in range(width)])
            writer.writerows(rows)
        print(f"tokens_csv={args.tokens_csv}")
    return 0


def _cmd_train(args) -> int:
    rc = _resolve_config(args)
    data = _load_dataset(Path(args.data))
    if any(s.label is None for s in data):
        raise ValueError("training data must be labeled (EVT1 label header "
                         "or a classN_ filename prefix)")
    width, height = _common_geometry(data)
    num_classes = max(s.label for s in data) + 1
    model_cfg = ModelConfig.for_sensor(num_classes, width, height, rc.repr,
                                       **asdict(rc.model))
    params, history = train_model(data, model_cfg, rc.repr, rc.train)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_run_config(rc, out_dir / "config.json")
    ckpt = out_dir / "model.ckpt"
    params.save(ckpt)
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "accuracy", "lr"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["loss"]),
                             repr(row["accuracy"]), repr(row["lr"])])
    for row in history:
        print(f"epoch={row['epoch']} loss={row['loss']:.6f} "
              f"accuracy={row['accuracy']:.6f} lr={row['lr']:.2e}")
    print(f"checkpoint={ckpt} params={params.param_count()} "
          f"classes={num_classes}")
    if args.test_data:
        result = evaluate(_load_dataset(Path(args.test_data)), params,
                          model_cfg, rc.repr)
        print(f"test_accuracy={result['accuracy']:.6f} "
              f"test_mean_loss={result['mean_loss']:.6f}")
    return 0


def _expand_stream_args(items) -> list[Path]:
    paths = []
    for item in items:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(q for q in p.iterdir()
                                if q.suffix.lower() in (".evt1", ".csv")))
        else:
            paths.append(p)
    if not paths:
        raise ValueError("no input streams")
    return paths


def _cmd_infer(args) -> int:
    rc = _resolve_config(args)
    params = ModelParams.load(args.ckpt)
    cfg = params.cfg
    dump_dir = Path(args.dump_attention) if args.dump_attention else None
    if dump_dir:
        dump_dir.mkdir(parents=True, exist_ok=True)
        save_run_config(rc, dump_dir / "config.json")
    correct = 0
    labeled = 0
    for path in _expand_stream_args(args.streams):
        stream = _read_stream_auto(path)
        memory = fresh_memory(params)
        times = []
        attention_rows = []
        for w, result in enumerate(window_iterator(stream, rc.repr)):
            if not result.tokens:
                continue
            t0 = time.perf_counter()
            out, record = process_window(result.tokens, memory, params, cfg,
                                         record_attention=dump_dir is not None)
            memory = memory_update(memory, out)
            times.append((time.perf_counter() - t0) * 1e3)
            if record is not None:
                for head, weights in enumerate(record):
                    for li, row in enumerate(weights):
                        for ti, value in enumerate(row):
                            attention_rows.append(
                                [w, head, li, ti, repr(float(value))])
        label = -1 if stream.label is None else stream.label
        if memory.windows_seen == 0:
            print(f"stream={path} error=no_information label={label}")
            labeled += int(label >= 0)
            continue
        lp = classify(memory, params)
        pred = int(np.argmax(lp.data[0]))
        probs = np.exp(lp.data[0])
        prob_text = " ".join(f"prob{i}={p:.6f}" for i, p in enumerate(probs))
        print(f"stream={path} pred={pred} label={label} "
              f"windows={memory.windows_seen} "
              f"median_window_ms={np.median(times):.3f} {prob_text}")
        if label >= 0:
            labeled += 1
            correct += int(pred == label)
        if dump_dir:
            out_csv = dump_dir / f"{path.stem}_attention.csv"
            with open(out_csv, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["window", "head", "latent", "token", "weight"])
                writer.writerows(attention_rows)
    if labeled:
        print(f"accuracy={correct / labeled:.6f}")
    return 0


def _cmd_bench(args) -> int:
    rc = _resolve_config(args)
    model_cfg = ModelConfig.for_sensor(args.classes, args.width, args.height,
                                       rc.repr, **asdict(rc.model))
    report = count_flops(model_cfg, args.tokens)
    components = [("ff1", report.ff1), ("ff2", report.ff2),
                  ("cross_attention", report.cross_attention),
                  ("self_attention", report.self_attention),
                  ("classifier", report.classifier)]
    for name, flops in components:
        print(f"component={name} flops={flops}")
    print(f"tokens={report.tokens} total_flops={report.total} "
          f"total_gflops={report.gflops:.4f} params={report.params}")
    deviation = verify_flops(model_cfg, args.tokens, seed=args.seed)
    print(f"flop_model_deviation={deviation:.6f}")
    params = ModelParams.init(model_cfg, seed=args.seed)
    tokens = random_tokens(model_cfg, args.tokens,
                           np.random.default_rng(args.seed))
    samples = time_window(tokens, params, model_cfg, reps=args.reps,
                          warmup=args.warmup)
    ms = samples * 1e3
    budget_ms = rc.repr.delta_t_us / 1e3
    print(f"latency_mean_ms={ms.mean():.3f} "
          f"latency_median_ms={np.median(ms):.3f} "
          f"latency_p95_ms={np.percentile(ms, 95):.3f} "
          f"budget_ms={budget_ms:.3f} "
          f"budget_met={str(bool(np.median(ms) < budget_ms)).lower()}")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        save_run_config(rc, out_dir / "config.json")
        with open(out_dir / "flops.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["component", "flops"])
            writer.writerows(components)
            writer.writerow(["total", report.total])
        with open(out_dir / "latency.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rep", "ms"])
            for i, value in enumerate(ms):
                writer.writerow([i, repr(float(value))])
        print(f"out_dir={out_dir}")
    return 0


def _cmd_stats(args) -> int:
    rc = _resolve_config(args)
    data = _load_dataset(Path(args.data))
    stats = patch_stats(data, rc.repr)
    print(f"windows={stats.n_windows} "
          f"mean_tokens={stats.mean_tokens:.3f} "
          f"median_tokens={stats.median_tokens:.3f} "
          f"mean_activated_fraction={stats.mean_activated_fraction:.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["tokens", "windows"])
            for t, count in stats.histogram.items():
                writer.writerow([t, count])
        print(f"csv={args.csv}")
    return 0


# ---------------------------------------------------------------------------
# parser assembly
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evtkit",
                     description="Event-stream patch tokens and latent-memory "
                                 "classification.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", help="generate synthetic gesture streams")
    p.add_argument("--class", dest="class_id", type=int, default=None,
                   help="gesture class id (0-5), single-stream mode")
    p.add_argument("--out", default=None, help="output file (single stream)")
    p.add_argument("--out-dir", default=None, help="output directory (batch)")
    p.add_argument("--classes", default="0,1,2,3",
                   help="comma-separated class ids for batch mode")
    p.add_argument("--per-class", type=int, default=10)
    p.add_argument("--duration-us", type=int, default=200_000)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--signal-rate", type=float, default=1.0)
    p.add_argument("--noise-rate", type=float, default=0.0)
    p.add_argument("--format", choices=("binary", "csv"), default="binary")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("repr", help="inspect a stream's window tokens")
    p.add_argument("--in", dest="input", required=True, metavar="STREAM")
    p.add_argument("--tokens-csv", default=None,
                   help="write every token's values to this CSV")
    _add_section_flags(p, ("repr",))
    p.set_defaults(func=_cmd_repr)

    p = sub.add_parser("train", help="train a classifier on a stream directory")
    p.add_argument("--data", required=True, help="directory of labeled streams")
    p.add_argument("--out-dir", required=True,
                   help="checkpoint, metrics, and config echo land here")
    p.add_argument("--test-data", default=None,
                   help="directory of held-out labeled streams")
    p.add_argument("--seed", type=int, default=None,
                   help="overrides train.seed from the config")
    _add_section_flags(p, ("repr", "model", "train"))
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="classify streams with a checkpoint")
    p.add_argument("streams", nargs="+", metavar="STREAM_OR_DIR")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dump-attention", default=None, metavar="DIR",
                   help="write per-window cross-attention weights as CSV")
    _add_section_flags(p, ("repr",))
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("bench", help="FLOP model and per-window latency")
    p.add_argument("--tokens", type=int, default=532)
    p.add_argument("--classes", type=int, default=101)
    p.add_argument("--width", type=int, default=240)
    p.add_argument("--height", type=int, default=180)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=0)
    _add_section_flags(p, ("repr", "model"))
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("stats", help="activated-patch statistics for a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--csv", default=None, help="write the T histogram here")
    _add_section_flags(p, ("repr",))
    p.set_defaults(func=_cmd_stats)

    return parser


def cli_main(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if getattr(args, "func", None) is None:
        parser.print_help(sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main(argv=None) -> int:
    return cli_main(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
