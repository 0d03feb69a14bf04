"""Command line entry point: ``incepse <command> [options]``.

Commands: synth, preprocess, train, evaluate, predict, ablate-clip,
ablate-stability, gradcheck. Exit status is 0 on success, 2 for invalid
input (bad flags, config, manifest or checkpoint) and 3 for runtime
failures (diverged training, failed gradient checks).

Training settings resolve in order: per-task defaults, the config file's
``[DEFAULT]`` section, its ``[<task>]`` section, then command-line flags.
The resolved settings are written to ``<out>/effective_config.ini`` before
any work starts. ``INCEPSE_WORKERS`` sets how many seeds run in parallel.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint
from .data import (
    Dataset,
    ManifestError,
    SynthSpec,
    get_task,
    read_manifest,
    read_signal,
    synth_dataset,
    write_signal,
    load_manifest,
    write_manifest,
)
from .metrics import UndefinedMetricError, macro_auroc
from .model import IncepSEConfig
from .signal import BandpassSpec, apply_zero_phase, design_bandpass, lead_stats, write_stats
from .training import TASK_DEFAULTS, TrainConfig, TrainingDiverged, fit, mean_std, predict_logits, write_report

log = logging.getLogger("incepse")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

MODEL_KEYS = ("depth", "branch_channels", "bottleneck_channels", "se_reduction", "kernel_sizes",
              "double_final_bottleneck")
SPLIT_FOLDS = {"train": set(range(1, 9)), "val": {9}, "test": {10}, "all": set(range(1, 11))}


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------- config

def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0-9"`` or ``"0,2,5"``."""
    seeds: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise ValidationError(f"no seeds in {text!r}")
    return seeds


def _coerce(field: dataclasses.Field, raw: str):
    raw = raw.strip()
    name = field.name
    if name in ("clip_norm",) and raw.lower() in ("none", "off", "0", ""):
        return None
    if name == "sched_epochs" and raw.lower() in ("none", ""):
        return None
    if name == "kernel_sizes":
        return tuple(int(k) for k in raw.replace(";", ",").split(","))
    if name == "double_final_bottleneck":
        return raw.lower() in ("1", "true", "yes", "on")
    default = field.default
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int) and not isinstance(default, bool) or name in ("sched_epochs",):
        return int(raw)
    if isinstance(default, float) or name == "clip_norm":
        return float(raw)
    return raw


def resolve_config(task: str, config_path=None, overrides: dict | None = None) -> tuple[TrainConfig, IncepSEConfig]:
    """Merge task defaults, config file sections and flag overrides."""
    values: dict[str, str] = {}
    if config_path:
        cp = configparser.ConfigParser()
        if not cp.read(config_path):
            raise ValidationError(f"cannot read config file {config_path}")
        values.update(cp.defaults())
        if cp.has_section(task):
            values.update({k: v for k, v in cp.items(task)})
    train_fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    model_fields = {f.name: f for f in dataclasses.fields(IncepSEConfig)}
    train_kw = dict(TASK_DEFAULTS.get(task, {}))
    model_kw = {}
    for key, raw in values.items():
        key = key.replace("-", "_")
        if key in MODEL_KEYS:
            model_kw[key] = _coerce(model_fields[key], raw)
        elif key in train_fields:
            train_kw[key] = _coerce(train_fields[key], raw)
        else:
            raise ValidationError(f"unknown config key {key!r}")
    for key, v in (overrides or {}).items():
        if key in MODEL_KEYS:
            model_kw[key] = v
        else:
            train_kw[key] = v
    train_kw["task"] = task
    try:
        return TrainConfig(**train_kw), IncepSEConfig(**model_kw)
    except (TypeError, ValueError) as exc:
        raise ValidationError(str(exc)) from None


def write_effective_config(out_dir: Path, command: str, sections: dict[str, dict]) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    cp = configparser.ConfigParser()
    cp["command"] = {"name": command}
    for name, items in sections.items():
        cp[name] = {k: "none" if v is None else (",".join(map(str, v)) if isinstance(v, tuple) else str(v))
                    for k, v in items.items()}
    path = out_dir / "effective_config.ini"
    with path.open("w") as fh:
        cp.write(fh)
    return path


def _flag_overrides(args) -> dict:
    out = {}
    mapping = {"clip_norm": "clip_norm", "weight_decay": "weight_decay", "batch_size": "batch_size",
               "epochs": "epochs", "lr": "base_lr", "depth": "depth", "branch_channels": "branch_channels",
               "bottleneck_channels": "bottleneck_channels", "dropout": "dropout_p", "dtype": "dtype"}
    for attr, key in mapping.items():
        v = getattr(args, attr, None)
        if v is not None:
            out[key] = v
    if getattr(args, "no_clip", False):
        out["clip_norm"] = None
    return out


def _clip_value(text: str):
    return None if text.lower() in ("none", "off") else float(text)


# ---------------------------------------------------------------- data helpers

def _load(args, task_name: str | None = None) -> Dataset:
    task = get_task(task_name or args.task, args.task_file)
    return load_manifest(args.data, task, leads=args.leads, fs_hz=args.fs)


def _subset(d: Dataset, split: str) -> Dataset:
    folds = SPLIT_FOLDS[split]
    sub = d.replace(records=[r for r in d.records if r.fold in folds])
    if not len(sub):
        raise ValidationError(f"no records in split {split!r}")
    return sub


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    ratios = tuple(float(r) for r in args.ratios.split(",")) if args.ratios else None
    spec = SynthSpec(num_records=args.num_records, classes=args.classes, imbalance_ratios=ratios,
                     fs=args.fs, seconds=args.seconds, leads=args.leads, noise_sigma=args.noise,
                     jitter=args.jitter)
    out = Path(args.out)
    write_effective_config(out, "synth", {"synth": dataclasses.asdict(spec) | {"seed": args.seed}})
    ds = synth_dataset(spec, args.seed)
    manifest = write_manifest(ds, out)
    lines = ["[synthetic]"] + [f"{c},{c}" for c in ds.task.class_names]
    (out / "tasks.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(ds)} records to {manifest} (task file {out / 'tasks.txt'}, task 'synthetic')")
    return EXIT_OK


def cmd_preprocess(args) -> int:
    band = BandpassSpec(args.low, args.high, args.fs, args.order)
    out = Path(args.out)
    write_effective_config(out, "preprocess", {"band": dataclasses.asdict(band),
                                               "options": {"standardize": not args.no_standardize,
                                                           "leads": args.leads, "data": args.data}})
    cascade = design_bandpass(band)
    rows = read_manifest(args.data)
    base = Path(args.data).parent
    filtered = {}
    for row in rows:
        path = base / row.signal_file
        if not path.exists():
            raise ManifestError(f"missing signal file {path} at row {row.row}")
        filtered[row.record_id] = apply_zero_phase(read_signal(path, args.leads), cascade)
    if not args.no_standardize:
        train = [filtered[r.record_id] for r in rows if r.fold <= 8]
        if not train:
            raise ValidationError("standardization needs training folds 1-8")
        stats = lead_stats(np.stack(train))
        write_stats(stats, out / "lead_stats.txt")
        for k, sig in filtered.items():
            filtered[k] = (sig - stats.mean[:, None]) / stats.std[:, None]
    (out / "signals").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    lines = ["record_id,fold,signal_file,labels"]
    for row in rows:
        rel = f"signals/{row.record_id}.bin"
        write_signal(out / rel, filtered[row.record_id])
        lines.append(f"{row.record_id},{row.fold},{rel},{';'.join(row.statements)}")
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"preprocessed {len(rows)} records ({band.low_hz}-{band.high_hz} Hz, order {band.order}) -> {manifest}")
    return EXIT_OK


def _run_seed(job):
    cfg, model_cfg, data_args, out_dir = job
    manifest, task_name, task_file, leads, fs = data_args
    ds = load_manifest(manifest, get_task(task_name, task_file), leads=leads, fs_hz=fs)
    t0 = time.time()
    report = fit(cfg, ds, model_cfg, checkpoint_dir=out_dir)
    report.best_params = None
    return report, time.time() - t0


def run_seeds(setting: str, cfg: TrainConfig, model_cfg: IncepSEConfig, seeds: list[int], args,
              out_dir: Path) -> dict:
    """Fit once per seed; failures are reported and skipped."""
    out_dir.mkdir(parents=True, exist_ok=True)
    data_args = (args.data, args.task, args.task_file, args.leads, args.fs)
    jobs = [(cfg.replace(seed=s), model_cfg, data_args, out_dir) for s in seeds]
    workers = int(os.environ.get("INCEPSE_WORKERS", "1"))
    results, failures = {}, {}
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = {s: pool.submit(_run_seed, j) for s, j in zip(seeds, jobs)}
            outcomes = []
            for s, fut in futures.items():
                try:
                    outcomes.append((s, fut.result(), None))
                except Exception as exc:  # noqa: BLE001 - reported per seed
                    outcomes.append((s, None, exc))
    else:
        outcomes = []
        for s, j in zip(seeds, jobs):
            try:
                outcomes.append((s, _run_seed(j), None))
            except Exception as exc:  # noqa: BLE001 - reported per seed
                outcomes.append((s, None, exc))
    for s, res, exc in outcomes:
        if exc is not None:
            failures[s] = f"{type(exc).__name__}: {exc}"
            print(f"[{setting}] seed {s} FAILED: {failures[s]}", file=sys.stderr)
            continue
        report, secs = res
        write_report(report, out_dir / f"report_seed{s}.csv")
        results[s] = report
        print(f"[{setting}] seed {s}: best epoch {report.best_epoch}, "
              f"val {report.best_val_auroc:.4f}, test {report.test_auroc:.4f} ({secs:.0f}s)")
    return {"results": results, "failures": failures}


def _aggregate_line(setting: str, outcome: dict) -> str:
    vals = [r.test_auroc for r in outcome["results"].values()]
    mean, std = mean_std(vals) if vals else (float("nan"), float("nan"))
    return f"{setting},{len(vals)},{mean!r},{std!r},{len(outcome['failures'])}"


AGG_HEADER = "setting,runs,mean_test_auroc,std_test_auroc,failed"


def _training_setup(args) -> tuple[TrainConfig, IncepSEConfig]:
    cfg, model_cfg = resolve_config(args.task, args.config, _flag_overrides(args))
    ds = _load(args)  # fail fast on bad data; also fixes the input and head sizes
    return cfg, model_cfg.replace(input_channels=ds.num_leads, num_classes=ds.task.num_classes,
                                  dropout_p=cfg.dropout_p)


def cmd_train(args) -> int:
    cfg, model_cfg = _training_setup(args)
    seeds = parse_seeds(args.seeds) if args.seeds else [args.seed]
    out = Path(args.out)
    write_effective_config(out, "train", {"train": dataclasses.asdict(cfg), "model": dataclasses.asdict(model_cfg),
                                          "run": {"seeds": ",".join(map(str, seeds)), "data": args.data}})
    outcome = run_seeds("train", cfg, model_cfg, seeds, args, out)
    line = _aggregate_line(args.task, outcome)
    (out / "aggregate.csv").write_text(AGG_HEADER + "\n" + line + "\n")
    print(AGG_HEADER)
    print(line)
    return EXIT_RUNTIME if outcome["failures"] else EXIT_OK


def _ablate(args, name: str, settings: list[tuple[str, dict]]) -> int:
    base_cfg, model_cfg = _training_setup(args)
    seeds = parse_seeds(args.seeds) if args.seeds else [args.seed]
    out = Path(args.out)
    sections = {"base": dataclasses.asdict(base_cfg), "model": dataclasses.asdict(model_cfg)}
    sections.update({f"setting:{label}": ov for label, ov in settings})
    sections["run"] = {"seeds": ",".join(map(str, seeds)), "data": args.data}
    write_effective_config(out, name, sections)
    lines, failed = [AGG_HEADER], False
    for label, ov in settings:
        outcome = run_seeds(label, base_cfg.replace(**ov), model_cfg, seeds, args, out / label.replace("+", "_"))
        failed |= bool(outcome["failures"])
        lines.append(_aggregate_line(label, outcome))
    (out / f"{name.replace('-', '_')}.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_RUNTIME if failed else EXIT_OK


def clip_settings(values: list) -> list[tuple[str, dict]]:
    return [("no-clip" if v is None else f"clip={v:g}", {"clip_norm": v}) for v in values]


STABILITY_SETTINGS = [
    ("clip+decay", {}),  # base clip and weight decay as resolved
    ("decay-only", {"clip_norm": None}),
    ("none", {"clip_norm": None, "weight_decay": 0.0}),
]


def cmd_ablate_clip(args) -> int:
    values = [_clip_value(v) for v in args.values.split(",")]
    return _ablate(args, "ablate-clip", clip_settings(values))


def cmd_ablate_stability(args) -> int:
    return _ablate(args, "ablate-stability", STABILITY_SETTINGS)


def cmd_evaluate(args) -> int:
    ds = _subset(_load(args), args.split)
    params = load_checkpoint(args.checkpoint, num_classes=ds.task.num_classes, input_channels=ds.num_leads)
    value, skipped = macro_auroc(expit(predict_logits(params, ds)), ds.labels)
    names = [ds.task.class_names[i] for i in skipped]
    print(f"split={args.split} records={len(ds)} macro_auroc={value:.6f} skipped={','.join(names) or '-'}")
    if args.out:
        out = Path(args.out)
        write_effective_config(out, "evaluate", {"evaluate": {"checkpoint": args.checkpoint, "split": args.split,
                                                              "data": args.data, "task": args.task}})
        (out / "evaluation.csv").write_text(
            f"split,records,macro_auroc,skipped\n{args.split},{len(ds)},{value!r},{';'.join(names)}\n")
    return EXIT_OK


def cmd_predict(args) -> int:
    params = load_checkpoint(args.checkpoint, input_channels=args.leads)
    rows = read_manifest(args.data)
    base = Path(args.data).parent
    signals = np.stack([read_signal(base / r.signal_file, args.leads) for r in rows])
    if args.task:
        task = get_task(args.task, args.task_file)
        if task.num_classes != params.config.num_classes:
            raise CheckpointError(f"checkpoint head has {params.config.num_classes} classes, "
                                  f"task {task.name} has {task.num_classes}")
        names = list(task.class_names)
    else:
        names = [f"class{i}" for i in range(params.config.num_classes)]
    from .model import model_forward

    probs = []
    for lo in range(0, len(rows), 128):
        probs.append(expit(model_forward(signals[lo:lo + 128].astype(params.dtype), params, "eval").values))
    probs = np.concatenate(probs)
    out = Path(args.out)
    write_effective_config(out, "predict", {"predict": {"checkpoint": args.checkpoint, "data": args.data}})
    lines = ["record_id," + ",".join(names)]
    lines += [r.record_id + "," + ",".join(repr(float(p)) for p in row) for r, row in zip(rows, probs)]
    (out / "predictions.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote {len(rows)} predictions to {out / 'predictions.csv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.time()
    if args.scale == "op":
        results, tol = gradcheck.op_suite(args.seed), 1e-4
    elif args.scale == "layer":
        results, tol = [gradcheck.layer_check(args.seed), gradcheck.layer_check(args.seed, final=True)], 1e-3
    else:
        results, tol = [gradcheck.mini_model_check(args.seed)], 1e-3
    ok = True
    for r in results:
        status = "PASS" if r.passed(tol) else "FAIL"
        ok &= r.passed(tol)
        print(f"{status} {r.name:24s} worst rel err {r.max_rel_error:.3e} (tol {tol:g})")
    print(f"{'all passed' if ok else 'FAILURES'} in {time.time() - t0:.1f}s")
    return EXIT_OK if ok else EXIT_RUNTIME


# ---------------------------------------------------------------- parser

def _add_data(p, task_required=True):
    p.add_argument("--data", required=True, help="manifest CSV")
    p.add_argument("--task", required=task_required, default=None)
    p.add_argument("--task-file", default=None, help="statement->class table (default: bundled PTB-XL tables)")
    p.add_argument("--leads", type=int, default=12)
    p.add_argument("--fs", type=float, default=100.0)


def _add_training(p):
    _add_data(p)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", default=None, help="e.g. 0-9 or 0,1,2")
    p.add_argument("--out", required=True)
    p.add_argument("--clip-norm", type=_clip_value, default=None)
    p.add_argument("--no-clip", action="store_true")
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--branch-channels", type=int, default=None)
    p.add_argument("--bottleneck-channels", type=int, default=None)
    p.add_argument("--dtype", choices=("float32", "float64"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incepse", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic ECG-like dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--num-records", type=int, default=500)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--ratios", default=None, help="comma-separated class prevalences summing to 1")
    p.add_argument("--seconds", type=float, default=10.0)
    p.add_argument("--leads", type=int, default=12)
    p.add_argument("--fs", type=float, default=100.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--jitter", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="bandpass filter and standardize signals")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--low", type=float, default=1.0)
    p.add_argument("--high", type=float, default=45.0)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--fs", type=float, default=100.0)
    p.add_argument("--leads", type=int, default=12)
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="fit one model per seed")
    _add_training(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate-clip", help="grid over gradient clipping values")
    _add_training(p)
    p.add_argument("--values", default="none,0.5,0.3,0.1")
    p.set_defaults(func=cmd_ablate_clip)

    p = sub.add_parser("ablate-stability", help="clip+decay vs decay-only vs none")
    _add_training(p)
    p.set_defaults(func=cmd_ablate_stability)

    p = sub.add_parser("evaluate", help="macro AUROC of a checkpoint on one split")
    _add_data(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=tuple(SPLIT_FOLDS), default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-record class probabilities")
    _add_data(p, task_required=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--scale", choices=("op", "layer", "mini"), default="op")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ValidationError, ManifestError, CheckpointError, UndefinedMetricError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, RuntimeError, OSError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
