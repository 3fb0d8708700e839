"""Command-line entry point: ``relbal {gen,train,eval,sweep,audit}``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then flags (``--key value``). Each command writes its
fully resolved settings to ``config.txt`` in its output directory, so
``relbal <cmd> --config <out>/config.txt`` repeats the run.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import head as H
from .data import (
    SyntheticSpec,
    generate_split,
    inject_label_noise,
    load_dataset,
    read_manifest,
    save_dataset,
    write_manifest,
)
from .experiments import AXES, Benchmark, sweep
from .losses import LossWeights
from .metrics import evaluate
from .numerics import InvalidInputError, make_rng
from .train import TrainConfig, finite_difference_audit, train

OUTPUT_ROOT_ENV = "RELBAL_OUTPUT_ROOT"

# name: (type, default, help)
GEN_KEYS = {
    "classes": (int, 8, "number of classes N"),
    "dim": (int, 128, "embedding dimension d"),
    "per-class": (int, 600, "training samples per class"),
    "test-per-class": (int, 300, "held-out samples per class"),
    "spread": (float, 1.0, "per-class isotropic standard deviation"),
    "separation": (float, 2.5, "radius of the sphere holding class means"),
    "noise": (float, 0.0, "label noise on the training split, percent"),
    "data-seed": (int, 7, "seed for the synthetic data"),
    "format": (str, "binary", "dataset file format: binary or text"),
}
TRAIN_KEYS = {
    "epochs": (int, 1000, "training epochs"),
    "lr": (float, 3e-4, "initial learning rate"),
    "gamma": (float, 0.995, "per-epoch learning-rate decay"),
    "batch-size": (int, 64, "minibatch size"),
    "anchors": (int, 8, "anchors per class K (0 disables anchor correction)"),
    "delta": (float, 1.0, "similarity softmax temperature"),
    "tokens": (int, 8, "tokens the embedding is split into for self-attention"),
    "heads": (int, 4, "attention heads"),
    "hidden": (int, 64, "MLP hidden width"),
    "dropout": (float, 0.5, "dropout probability"),
    "reduce-dim": (int, 0, "linear reduction to this width (0: none)"),
    "smoothing": (float, 0.0, "label smoothing term, percent"),
    "lambda-cls": (float, 1.0, "class-distribution loss weight"),
    "lambda-a": (float, 0.1, "anchor loss weight"),
    "lambda-c": (float, 0.1, "center loss weight"),
    "per-group": (int, 512, "refinement: samples kept per group"),
    "per-class-sample": (int, 500, "refinement: samples drawn per class each epoch"),
    "clip-norm": (float, 0.0, "global gradient-norm clip (0: off)"),
    "seed": (int, 0, "training seed"),
    "eval-every": (int, 1, "evaluate and checkpoint every this many epochs"),
}
DATA_KEYS = {
    "data": (str, "", "dataset manifest (JSON) or dataset file"),
    "split": (str, "test", "manifest split used for evaluation"),
}
EVAL_KEYS = {
    "checkpoint": (str, "", "head checkpoint"),
    "dump-records": (bool, False, "write every prediction record as JSON lines"),
}
SWEEP_KEYS = {
    "axis": (str, "anchors", f"sweep axis: {', '.join(AXES)}"),
    "values": (str, "0,1,2,4,8", "comma-separated sweep values"),
    "seeds": (str, "0", "comma-separated run seeds"),
    "k-values": (str, "", "comma-separated K grid for noise/smoothing/lambda-a sweeps"),
}
AUDIT_KEYS = {
    "instances": (int, 20, "random instances"),
    "audit-seed": (int, 0, "seed for the random instances"),
    "step": (float, 1e-5, "finite-difference step"),
    "tolerance": (float, 1e-4, "maximum relative error"),
}
COMMON_KEYS = {"out": (str, "", "output directory")}

COMMANDS = {
    "gen": (GEN_KEYS,),
    "train": (DATA_KEYS, TRAIN_KEYS),
    "eval": (DATA_KEYS, EVAL_KEYS),
    "sweep": (SWEEP_KEYS, GEN_KEYS, TRAIN_KEYS),
    "audit": (AUDIT_KEYS,),
}


class ConfigFileError(ValueError):
    pass


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.replace("_", "-")] = value
    return out


def write_config(path, settings: dict) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in settings.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _keys_for(command: str) -> dict:
    keys = dict(COMMON_KEYS)
    for table in COMMANDS[command]:
        keys.update(table)
    return keys


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relbal", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", default=None, help="key = value settings file")
        for key, (typ, default, help_) in _keys_for(command).items():
            if typ is bool:
                p.add_argument(f"--{key}", nargs="?", const="true", default=None, help=help_)
            else:
                p.add_argument(f"--{key}", default=None, help=f"{help_} (default: {default})")
    return parser


def resolve(command: str, args: argparse.Namespace) -> dict:
    keys = _keys_for(command)
    from_file = read_config(args.config) if args.config else {}
    unknown = set(from_file) - set(keys)
    if unknown:
        raise ConfigFileError(f"unknown keys for '{command}': {', '.join(sorted(unknown))}")
    settings = {}
    for key, (typ, default, _) in keys.items():
        flag = getattr(args, key.replace("-", "_"))
        raw = flag if flag is not None else from_file.get(key, default)
        try:
            settings[key] = _parse_bool(raw) if typ is bool else typ(raw)
        except ValueError:
            raise InvalidInputError(f"--{key}: cannot read {raw!r} as {typ.__name__}") from None
    if not settings["out"]:
        root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
        settings["out"] = str(Path(root) / command)
    return settings


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def train_config(s: dict) -> TrainConfig:
    return TrainConfig(
        epochs=s["epochs"], base_lr=s["lr"], gamma=s["gamma"], batch_size=s["batch-size"],
        weights=LossWeights(s["lambda-cls"], s["lambda-a"], s["lambda-c"]), smoothing=s["smoothing"],
        anchors=s["anchors"], delta=s["delta"], tokens=s["tokens"], n_heads=s["heads"], hidden=s["hidden"],
        dropout=s["dropout"], reduce_dim=s["reduce-dim"] or None, per_group=s["per-group"],
        per_class=s["per-class-sample"], clip_norm=s["clip-norm"] or None, seed=s["seed"],
        eval_every=s["eval-every"],
    )


def synthetic_spec(s: dict) -> SyntheticSpec:
    return SyntheticSpec(num_classes=s["classes"], dim=s["dim"], per_class=s["per-class"],
                         spread=s["spread"], separation=s["separation"], seed=s["data-seed"])


def _output_dir(s: dict) -> Path:
    out = Path(s["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _load_split(path: str, split: str):
    if path.endswith(".json"):
        manifest = read_manifest(path)
        return load_dataset(manifest["train"]), load_dataset(manifest[split])
    ds = load_dataset(path)
    return ds, ds


def cmd_gen(s: dict) -> dict:
    out = _output_dir(s)
    spec = synthetic_spec(s)
    train_ds, test_ds = generate_split(spec, s["test-per-class"])
    if s["noise"] > 0:
        rng = make_rng(np.random.SeedSequence([spec.seed, 17]))
        train_ds = inject_label_noise(train_ds, s["noise"] / 100.0, rng)
    ext = ".txt" if s["format"] == "text" else ".bin"
    if s["format"] not in ("text", "binary"):
        raise InvalidInputError(f"--format must be text or binary, got {s['format']!r}")
    save_dataset(out / f"train{ext}", train_ds)
    save_dataset(out / f"test{ext}", test_ds)
    write_manifest(out / "manifest.json", f"train{ext}", f"test{ext}", spec.seed,
                   num_classes=spec.num_classes, dim=spec.dim, noise=s["noise"],
                   checksums={"train": train_ds.checksum(), "test": test_ds.checksum()})
    write_config(out / "config.txt", s)
    return {"manifest": str(out / "manifest.json"), "num_classes": spec.num_classes, "dim": spec.dim}


def cmd_train(s: dict) -> dict:
    if not s["data"]:
        raise InvalidInputError("--data is required")
    out = _output_dir(s)
    train_ds, eval_ds = _load_split(s["data"], s["split"])
    cfg = train_config(s)
    write_config(out / "config.txt", s)
    result = train(train_ds, eval_ds, cfg, log_path=out / "train_log.jsonl", checkpoint_path=out / "head.ckpt")
    report, _ = evaluate(result.params, eval_ds.embeddings, eval_ds.labels)
    report.save(out / "metrics.json")
    return {"checkpoint": str(out / "head.ckpt"), "accuracy": report.accuracy}


def cmd_eval(s: dict) -> dict:
    if not s["data"] or not s["checkpoint"]:
        raise InvalidInputError("--data and --checkpoint are required")
    out = _output_dir(s)
    _, ds = _load_split(s["data"], s["split"])
    params, _ = H.load_checkpoint(s["checkpoint"])
    if params.config.in_dim != ds.dim or params.config.num_classes != ds.num_classes:
        raise H.CheckpointError(
            f"checkpoint expects d={params.config.in_dim}, N={params.config.num_classes}; "
            f"dataset has d={ds.dim}, N={ds.num_classes}")
    write_config(out / "config.txt", s)
    report, batch = evaluate(params, ds.embeddings, ds.labels)
    report.save(out / "metrics.json")
    if s["dump-records"]:
        with open(out / "records.jsonl", "w") as fh:
            for rec in H.records_from_batch(batch):
                fh.write(json.dumps(rec.to_json()) + "\n")
    return {"accuracy": report.accuracy, "metrics": str(out / "metrics.json")}


def cmd_sweep(s: dict) -> dict:
    out = _output_dir(s)
    write_config(out / "config.txt", s)
    bench = Benchmark(synthetic_spec(s), s["test-per-class"], s["noise"])
    rows = sweep(s["axis"], _floats(s["values"]), train_config(s), bench, _ints(s["seeds"]),
                 _ints(s["k-values"]) or None, out)
    failed = sum(r["status"] != "ok" for r in rows)
    return {"table": str(out / "table.csv"), "runs": len(rows), "failed": failed}


def audit_instances(count: int, seed: int):
    """Random small problems: N=3, K=2, d=8, T=2, batch 4, with K=0 and T=1 variants."""
    rng = make_rng(seed)
    for i in range(count):
        k = 0 if i % 5 == 3 else 2
        t = 1 if i % 5 == 4 else 2
        input_dim = 12 if i % 5 == 2 else None
        cfg = H.HeadConfig(num_classes=3, dim=8, input_dim=input_dim, hidden=16, anchors_per_class=k,
                           tokens=t, n_heads=2)
        params = H.init_params(cfg, rng)
        for arr in params.params.values():
            arr += 0.1 * rng.standard_normal(arr.shape)
        E = rng.standard_normal((4, cfg.in_dim))
        y = rng.integers(0, 3, 4)
        weights = LossWeights(1.0, float(rng.uniform(0.05, 0.5)), float(rng.uniform(0.05, 0.5)))
        yield cfg, params, E, y, weights


def cmd_audit(s: dict) -> dict:
    out = _output_dir(s)
    write_config(out / "config.txt", s)
    results = []
    for cfg, params, E, y, weights in audit_instances(s["instances"], s["audit-seed"]):
        rep = finite_difference_audit(params, E, y, weights, step=s["step"], tolerance=s["tolerance"])
        results.append({"anchors": cfg.anchors_per_class, "tokens": cfg.tokens, "coords": rep.n_coords,
                        "max_rel_error": rep.max_rel_error, "worst": rep.worst_name, "passed": rep.passed})
    summary = {"instances": len(results), "passed": all(r["passed"] for r in results),
               "max_rel_error": max(r["max_rel_error"] for r in results), "results": results}
    (out / "audit.json").write_text(json.dumps(summary, indent=2) + "\n")
    if not summary["passed"]:
        raise AuditFailed(f"max relative error {summary['max_rel_error']:.3g} >= {s['tolerance']}")
    return {"passed": True, "max_rel_error": summary["max_rel_error"]}


class AuditFailed(RuntimeError):
    pass


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "audit": cmd_audit}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        settings = resolve(args.command, args)
        summary = HANDLERS[args.command](settings)
    except Exception as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
