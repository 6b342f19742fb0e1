"""Command line entry point: gen / train / eval / bench / verify / inspect.

Every artifact-producing subcommand resolves its configuration (TOML file,
then key=value overrides), creates a fresh run directory named by
timestamp and config hash, and drops a manifest.json holding the resolved
config, a content hash of the installed package source, and the seeds in
play — enough to reproduce the run exactly. Exit codes: 0 success, 1
runtime or invariant failure, 2 bad configuration or unreadable input.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import struct
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import bench as bench_mod
from . import model
from . import train as train_mod
from . import verify as verify_mod
from .kernels.specs import VARIANTS
from .tasks import (CODE_INPUT_TOKENS, CODE_OUTPUT_TOKENS,
                    LISTOPS_INPUT_TOKENS, LISTOPS_OUTPUT_TOKENS, SPLIT_SIZES,
                    CodeExecSpec, ListOpsSpec, dataset_export, episode_rng,
                    gen_episode)


class ConfigError(Exception):
    """Bad configuration or unreadable input; maps to exit code 2."""


_TASK_SPECS = {"code_exec": CodeExecSpec, "listops": ListOpsSpec}
_TASK_VOCABS = {
    "code_exec": (len(CODE_INPUT_TOKENS), len(CODE_OUTPUT_TOKENS)),
    "listops": (len(LISTOPS_INPUT_TOKENS), len(LISTOPS_OUTPUT_TOKENS)),
}
_COUNT_KEYS = ("train_episodes", "valid_episodes", "test_episodes")


# ----------------------------------------------------------- provenance


def code_version() -> str:
    """Content hash of the installed package source (first 12 hex digits)."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(p.relative_to(root).as_posix().encode())
        h.update(b"\0")
        h.update(p.read_bytes())
        h.update(b"\0")
    return h.hexdigest()[:12]


def make_run_dir(base, config) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    tag = hashlib.sha256(blob + code_version().encode()).hexdigest()[:8]
    base = Path(base)
    run = base / f"{stamp}-{tag}"
    n = 1
    while run.exists():
        run = base / f"{stamp}-{tag}-{n}"
        n += 1
    run.mkdir(parents=True)
    return run


def write_manifest(run_dir, command, config, seeds):
    doc = {"command": command, "config": config,
           "code_version": code_version(), "seeds": seeds}
    (Path(run_dir) / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------- configuration


def load_config(path) -> dict:
    try:
        with open(path, "rb") as f:
            return tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config {path} is not valid TOML: {e}") from None


def parse_override(text):
    key, sep, raw = text.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(
            f"override must look like section.key=value, got {text!r}")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()  # bare word: treat as a string
    return key, value


def apply_overrides(cfg, sets) -> dict:
    """File values lose to --set overrides; tables are created on demand."""
    for text in sets or ():
        key, value = parse_override(text)
        parts = key.split(".")
        node = cfg
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(
                    f"cannot override {key}: {part!r} is not a table")
            node = nxt
        node[parts[-1]] = value
    return cfg


def _check_sections(cfg, allowed, required):
    unknown = set(cfg) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)} "
                          f"(expected {sorted(allowed)})")
    for sec in required:
        if sec not in cfg:
            raise ConfigError(f"config needs a [{sec}] section")


def build_task_spec(data_cfg):
    task = data_cfg.get("task")
    if task is None:
        raise ConfigError("[data] needs a task (code_exec or listops)")
    if task not in _TASK_SPECS:
        raise ConfigError(f"unknown task {task!r} (expected code_exec or "
                          f"listops)")
    fields = {k: v for k, v in data_cfg.items()
              if k != "task" and k not in _COUNT_KEYS}
    try:
        return _TASK_SPECS[task](**fields)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [data] settings: {e}") from None


def make_split(task_spec, split, count):
    return [gen_episode(task_spec, episode_rng(task_spec.seed, split, i))
            for i in range(count)]


def build_model(model_cfg, vocab_in, vocab_out):
    cfg = dict(model_cfg)
    seed = cfg.pop("seed", 0)
    variant = cfg.pop("variant", None)
    if variant is None:
        raise ConfigError("[model] needs a variant")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x510)))
    try:
        if variant == "LSTM":
            spec = model.LstmSpec(vocab_in=vocab_in, vocab_out=vocab_out,
                                  **cfg)
            return spec, model.init_lstm_params(spec, rng), seed
        spec = model.ModelSpec(variant=variant, vocab_in=vocab_in,
                               vocab_out=vocab_out, **cfg)
        return spec, model.init_params(spec, rng), seed
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [model] settings: {e}") from None


# ------------------------------------------------------------ subcommands


def cmd_gen(args):
    try:
        if args.task == "code_exec":
            task_spec = CodeExecSpec(n_statements=args.n_statements,
                                     n_variables=args.n_variables,
                                     greater_than=args.greater_than,
                                     seed=args.seed)
        else:
            task_spec = ListOpsSpec(depth=args.depth, max_args=args.max_args,
                                    branch_prob=args.branch_prob,
                                    seed=args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    counts = dict(SPLIT_SIZES)
    for split in counts:
        given = getattr(args, f"{split}_count")
        if given is not None:
            counts[split] = given
    config = {"task": args.task, "spec": dataclasses.asdict(task_spec),
              "counts": counts}
    run_dir = make_run_dir(args.out, config)
    write_manifest(run_dir, "gen", config, {"data": task_spec.seed})
    try:
        paths = dataset_export(task_spec, run_dir, counts=counts)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    for name in sorted(paths):
        print(paths[name])
    return 0


def cmd_train(args):
    cfg = apply_overrides(load_config(args.config), args.set)
    _check_sections(cfg, allowed=("model", "train", "data"),
                    required=("model", "train", "data"))
    data_cfg = cfg["data"]
    task_spec = build_task_spec(data_cfg)
    task = data_cfg["task"]
    n_train = data_cfg.get("train_episodes", 1000)
    n_valid = data_cfg.get("valid_episodes", 100)
    vocab_in, vocab_out = _TASK_VOCABS[task]
    spec, params, model_seed = build_model(cfg["model"], vocab_in, vocab_out)
    try:
        tconf = train_mod.TrainConfig.from_dict(cfg["train"])
    except ValueError as e:
        raise ConfigError(f"bad [train] settings: {e}") from None

    resolved = {
        "model": {"variant": cfg["model"].get("variant"), "seed": model_seed,
                  **{f.name: getattr(spec, f.name)
                     for f in dataclasses.fields(spec)}},
        "train": tconf.as_dict(),
        "data": {"task": task, **dataclasses.asdict(task_spec),
                 "train_episodes": n_train, "valid_episodes": n_valid},
    }
    run_dir = make_run_dir(args.out, resolved)
    write_manifest(run_dir, "train", resolved,
                   {"model": model_seed, "train": tconf.seed,
                    "data": task_spec.seed})

    train_set = make_split(task_spec, "train", n_train)
    val_set = make_split(task_spec, "valid", n_valid) if n_valid else None
    records = []
    with open(run_dir / "metrics.jsonl", "w") as stream:
        def sink(rec):
            records.append(rec)
            stream.write(rec.to_json() + "\n")
            stream.flush()

        try:
            train_mod.train(spec, params, train_set, tconf, task,
                            val_set=val_set, sink=sink)
        except train_mod.TrainingDiverged as e:
            print(f"run dir: {run_dir}")
            raise RuntimeError(f"training diverged: {e}") from None

    ckpt = run_dir / "checkpoint.fwl"
    model.save_checkpoint(ckpt, spec, params,
                          manifest={"config": resolved,
                                    "code_version": code_version()})
    n_params = sum(int(np.prod(p.data.shape)) for p in params.values())
    print(f"run dir: {run_dir}")
    print(f"checkpoint: {ckpt} ({n_params:,} parameters)")
    if records:
        last = records[-1]
        print(f"final step {last.step}: loss {last.loss:.4f}")
        for k in ("sequence_accuracy", "print_token_accuracy"):
            if k in last.metrics:
                print(f"valid {k}: {last.metrics[k]:.2f}")
    return 0


def _load_checkpoint(path):
    try:
        return model.load_checkpoint(path)
    except (OSError, ValueError, KeyError, TypeError, struct.error,
            json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read checkpoint {path}: {e}") from None


def cmd_eval(args):
    cfg = apply_overrides(load_config(args.config), args.set)
    _check_sections(cfg, allowed=("data", "eval"), required=("data",))
    spec, params, _ = _load_checkpoint(args.checkpoint)
    data_cfg = cfg["data"]
    task_spec = build_task_spec(data_cfg)
    task = data_cfg["task"]
    count = data_cfg.get("test_episodes", 500)
    eval_cfg = dict(cfg.get("eval", {}))
    unknown = set(eval_cfg) - {"batch_size", "bptt_span", "carryover"}
    if unknown:
        raise ConfigError(f"unknown [eval] settings: {sorted(unknown)}")

    resolved = {"checkpoint": str(args.checkpoint),
                "data": {"task": task, **dataclasses.asdict(task_spec),
                         "test_episodes": count},
                "eval": eval_cfg}
    run_dir = make_run_dir(args.out, resolved)
    write_manifest(run_dir, "eval", resolved, {"data": task_spec.seed})

    episodes = make_split(task_spec, "test", count)
    scores = train_mod.evaluate(spec, params, episodes, task,
                                batch_size=eval_cfg.get("batch_size", 64),
                                bptt_span=eval_cfg.get("bptt_span"),
                                carryover=eval_cfg.get("carryover", True))
    (run_dir / "metrics.json").write_text(
        json.dumps(scores, sort_keys=True, indent=2) + "\n")
    print(json.dumps(scores, sort_keys=True))
    print(f"run dir: {run_dir}", file=sys.stderr)
    return 0


def cmd_bench(args):
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variants {bad}; choose from "
                          f"{list(VARIANTS)}")
    try:
        lengths = tuple(int(x) for x in args.lengths.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"--lengths must be comma-separated integers, "
                          f"got {args.lengths!r}") from None
    if not variants or not lengths:
        raise ConfigError("bench needs at least one variant and one length")

    config = {"variants": list(variants), "lengths": list(lengths),
              "d_model": args.d_model, "heads": args.heads,
              "n_layers": args.n_layers, "reps": args.reps,
              "seed": args.seed, "ordering": args.ordering}
    run_dir = make_run_dir(args.out, config)
    write_manifest(run_dir, "bench", config, {"bench": args.seed})

    points = bench_mod.scaling_sweep(variants, lengths, d_model=args.d_model,
                                     heads=args.heads,
                                     n_layers=args.n_layers,
                                     reps=args.reps, seed=args.seed)
    csv_text = bench_mod.to_csv(points)
    (run_dir / "scaling.csv").write_text(csv_text)
    print(csv_text, end="")

    if args.ordering:
        rows = bench_mod.ordering_report(variants, reps=args.reps,
                                         seed=args.seed)
        (run_dir / "ordering.json").write_text(
            json.dumps(rows, indent=2) + "\n")
        print()
        print(f"{'variant':<20s} {'tokens/s':>12s} {'relative':>9s}")
        for r in rows:
            print(f"{r['variant']:<20s} {r['tokens_per_second']:>12.0f} "
                  f"{r['relative']:>9.3f}")
    print(f"run dir: {run_dir}", file=sys.stderr)
    return 0


def cmd_verify(args):
    results = verify_mod.run_checks()
    for r in results:
        line = f"{'PASS' if r.ok else 'FAIL'}  {r.name}"
        if r.detail:
            line += f"  ({r.detail})"
        print(line)
    good = sum(r.ok for r in results)
    print(f"{good}/{len(results)} invariants hold")
    if args.out is not None:
        config = {"checks": [r.name for r in results]}
        run_dir = make_run_dir(args.out, config)
        write_manifest(run_dir, "verify", config, {})
        (run_dir / "results.json").write_text(json.dumps(
            [dataclasses.asdict(r) for r in results], indent=2) + "\n")
        print(f"run dir: {run_dir}", file=sys.stderr)
    failed = [r for r in results if not r.ok]
    if failed:
        print(f"error: invariant failed: {failed[0].name}", file=sys.stderr)
        return 1
    return 0


def cmd_inspect(args):
    spec, params, manifest = _load_checkpoint(args.checkpoint)
    print(f"kind: {type(spec).__name__}")
    for f in dataclasses.fields(spec):
        print(f"  {f.name} = {getattr(spec, f.name)}")
    total = sum(int(np.prod(p.data.shape)) for p in params.values())
    formula = (model.param_count(spec) if isinstance(spec, model.ModelSpec)
               else model.lstm_param_count(spec))
    print(f"parameters: {total:,}")
    if total != formula:
        print(f"warning: stored parameters ({total:,}) do not match the "
              f"spec's count ({formula:,})", file=sys.stderr)
    print("layout:")
    for name, p in params.items():
        shape = "x".join(str(s) for s in p.data.shape) or "scalar"
        print(f"  {name:<28s} {shape:<16s} {p.data.dtype}")
    if manifest:
        print(f"manifest: {json.dumps(manifest, sort_keys=True)}")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwl",
        description="Fast-weight sequence layers: data generation, "
                    "training, evaluation, benchmarking and verification.",
        epilog="FWL_THREADS caps gradient-shard workers; FWL_BACKEND "
               "selects the compute backend (auto/numba/numpy).")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="export episode datasets as JSONL splits")
    p.add_argument("--task", required=True, choices=sorted(_TASK_SPECS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs")
    for split, dflt in SPLIT_SIZES.items():
        p.add_argument(f"--{split}-count", type=int, default=None,
                       help=f"episodes in the {split} split "
                            f"(default {dflt})")
    p.add_argument("--n-statements", type=int, default=100,
                   help="code_exec: statements per episode")
    p.add_argument("--n-variables", type=int, default=3,
                   help="code_exec: distinct variable names")
    p.add_argument("--greater-than", action="store_true",
                   help="code_exec: also draw > comparisons")
    p.add_argument("--depth", type=int, default=2,
                   help="listops: exact nesting depth")
    p.add_argument("--max-args", type=int, default=5,
                   help="listops: most arguments per list")
    p.add_argument("--branch-prob", type=float, default=0.25,
                   help="listops: chance an argument nests a new list")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("train", help="train a model from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config value, e.g. train.lr=1e-3")
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on fresh episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True,
                   help="TOML with [data] (and optional [eval]) sections")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("bench", help="per-token cost and state-size sweep")
    p.add_argument("--variants",
                   default="LinearTransformer,DeltaNet,BaselineSoftmax")
    p.add_argument("--lengths", default="256,1024,4096",
                   help="comma-separated sequence lengths")
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--n-layers", type=int, default=2)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ordering", action="store_true",
                   help="also rank the variants by throughput under the "
                        "standard 16-layer reduced-width configuration")
    p.add_argument("--out", default="runs")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("verify",
                       help="run the built-in invariant suite")
    p.add_argument("--out", default=None,
                   help="also write results.json under a run directory")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("inspect", help="describe a checkpoint file")
    p.add_argument("checkpoint")
    p.set_defaults(fn=cmd_inspect)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - the CLI boundary reports, not crashes
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
