"""``mmbeam`` command line: generate, train, eval, sweep-report, gradcheck.

Exit codes: 0 success, 1 failed check, 2 usage or config error, 3 data error.
Every command that takes ``--out`` writes ``run_manifest.json`` there with the
resolved config, seed, library versions and input/output checksums.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .channel import make_dft_codebook
from .config import RunSettings, flatten, format_config, load_settings, settings_from_flat
from .dataio import (
    NormalizationStats,
    load_index,
    preprocess_split,
    save_dataset,
    tree_checksums,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateRange,
    EmptyDataset,
    MissingArtifact,
    SchemaError,
)
from .evalkit import curves_csv, evaluate_predictions, report_json, sweep_table
from .models import BeamPredictor, fit, predict, rank_beams
from .nn.checkpoint import atomic_write_bytes, encode, load_into

log = logging.getLogger("mmbeam")

MANIFEST = "run_manifest.json"
MODEL_FILE = "model.json"
BEST_CKPT = "best.ckpt"
LAST_CKPT = "last.ckpt"


class UsageError(Exception):
    """Bad invocation: missing inputs, missing flags."""


# --- helpers -----------------------------------------------------------------

def _write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _versions() -> dict:
    return {"mmbeam": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _write_manifest(out: Path, command: str, settings: RunSettings, inputs: dict, extra: dict | None = None):
    outputs = {k: v for k, v in tree_checksums(out).items() if k != MANIFEST}
    manifest = {
        "command": command,
        "seed": settings.seed,
        "config": flatten(settings),
        "versions": _versions(),
        "inputs": inputs,
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    _write_text(out / MANIFEST, _dump_json(manifest))


def _out_dir(args) -> Path:
    if args.out is None:
        raise UsageError(f"{args.command} needs --out DIR")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from None
    return out


def _dataset_dir(args) -> Path:
    if args.data is None:
        raise UsageError(f"{args.command} needs --data DIR (a dataset written by 'generate')")
    path = Path(args.data)
    index = path / "index.csv" if path.is_dir() else path
    if not index.is_file():
        raise UsageError(f"no dataset at {path}")
    return path


def _settings(args) -> RunSettings:
    overrides = list(args.override or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "modalities", None):
        overrides.append(f"model.modalities={args.modalities}")
    if getattr(args, "topm", None):
        overrides.append(f"eval.topm={args.topm}")
    return load_settings(args.config, overrides)


def _split_arrays(ds, settings: RunSettings, stats, name: str):
    return preprocess_split(ds, name, stats, settings.preprocess, settings.model.modalities, settings.seed)


# --- commands ----------------------------------------------------------------

def cmd_generate(args) -> int:
    from .scenario import generate_scenario

    settings = _settings(args)
    out = _out_dir(args)
    spec = settings.scenario_spec()
    cb = make_dft_codebook(settings.array, settings.n_beams)
    ds = generate_scenario(spec, settings.array, cb)
    save_dataset(ds, out)
    _write_text(out / "config.txt", format_config(settings))
    _write_manifest(out, "generate", settings, {})
    log.info("wrote %d samples (%s) to %s", len(ds), spec.kind, out)
    return 0


def cmd_train(args) -> int:
    settings = _settings(args)
    data = _dataset_dir(args)
    out = _out_dir(args)
    ds = load_index(data)
    if ds.n_beams != settings.n_beams:
        raise ConfigError(f"dataset has {ds.n_beams} beams, config says n_beams = {settings.n_beams}")
    stats = NormalizationStats.from_training(ds)
    train_arr = _split_arrays(ds, settings, stats, "train")
    val_arr = _split_arrays(ds, settings, stats, "val")
    model = BeamPredictor(settings.model_config(), seed=settings.seed)
    _write_text(out / MODEL_FILE, _dump_json({"settings": flatten(settings), "stats": stats.to_dict()}))

    best = {"acc": -1.0}

    def checkpoint(rec, m):
        blob = encode(m.state_dict())
        atomic_write_bytes(out / LAST_CKPT, blob)
        if rec.val_acc > best["acc"] or len(val_arr.labels) == 0:
            best["acc"] = rec.val_acc
            atomic_write_bytes(out / BEST_CKPT, blob)

    hist = fit(model, train_arr.inputs, train_arr.labels, val_arr.inputs, val_arr.labels,
               settings.train_config(), on_epoch=checkpoint)
    _write_text(out / "history.csv", hist.to_csv())
    summary = {"initial_loss": hist.initial_loss, "best_epoch": hist.best_epoch,
               "best_val_acc": best["acc"] if best["acc"] >= 0 else None}
    _write_manifest(out, "train", settings, {"dataset": tree_checksums(data)}, {"results": summary})
    log.info("best epoch %d, checkpoints in %s", hist.best_epoch, out)
    return 0


def _load_trained(model_dir: Path):
    info_path, ckpt = model_dir / MODEL_FILE, model_dir / BEST_CKPT
    for p in (info_path, ckpt):
        if not p.is_file():
            raise UsageError(f"missing {p}; run 'train' first or pass --oracle")
    info = json.loads(info_path.read_text())
    trained = settings_from_flat(info["settings"])
    model = BeamPredictor(trained.model_config(), seed=trained.seed)
    load_into(model, ckpt)
    return model, trained, NormalizationStats(**info["stats"])


def cmd_eval(args) -> int:
    settings = _settings(args)
    data = _dataset_dir(args)
    model = None
    if not args.oracle:
        if args.model is None:
            raise UsageError("eval needs --model DIR (a 'train' output) or --oracle")
        model, trained, stats = _load_trained(Path(args.model))
    out = _out_dir(args)
    ds = load_index(data)
    split = settings.eval.split
    if split not in ds.splits:
        raise ConfigError(f"dataset has no split {split!r}")
    idx = ds.splits[split]
    if len(idx) == 0:
        raise EmptyDataset(f"split {split!r} is empty")
    profiles = np.array([ds.samples[i].power_profile for i in idx])
    truths = [ds.samples[i].best_beam for i in idx]
    if model is None:
        ranked = np.argsort(-profiles, axis=1, kind="stable") + 1
    else:
        arrays = _split_arrays(ds, trained, stats, split)
        ranked = rank_beams(predict(model, arrays.inputs))
    report = evaluate_predictions(truths, profiles, ranked, settings.eval.topm)
    _write_text(out / "report.json", report_json(report))
    _write_text(out / "curves.csv", curves_csv(report))
    depth = max(settings.eval.topm)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seq", "best_beam", "ranked"])
    for i, r in zip(idx, ranked):
        w.writerow([ds.samples[i].seq, ds.samples[i].best_beam, " ".join(map(str, r[:depth]))])
    _write_text(out / "predictions.csv", buf.getvalue())
    inputs = {"dataset": tree_checksums(data)}
    if model is not None:
        inputs["model"] = {k: v for k, v in tree_checksums(args.model).items() if k in (MODEL_FILE, BEST_CKPT)}
    _write_manifest(out, "eval", settings, inputs, {"oracle": bool(args.oracle)})
    for m in report.topm:
        print(f"M={m:3d}  acc={report.accuracy[m]:.4f}  power_ratio={report.power_ratio[m]:.4f}  "
              f"sweep={report.sweep_ms[m]:.5f} ms")
    print(f"exhaustive sweep: {report.exhaustive_ms} ms")
    return 0


def cmd_sweep_report(args) -> int:
    settings = _settings(args)
    rows = sweep_table(settings.eval.topm, settings.n_beams)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    sys.stdout.write(buf.getvalue())
    if args.out is not None:
        out = _out_dir(args)
        _write_text(out / "sweep.csv", buf.getvalue())
        _write_manifest(out, "sweep-report", settings, {})
    return 0


def cmd_gradcheck(args) -> int:
    from .models.diagnostics import check_layers, check_reduced_model

    settings = _settings(args)
    reports = dict(check_layers(settings.seed))
    reports["reduced_model"] = check_reduced_model(settings.seed)
    ok = True
    for name, rep in reports.items():
        passed = rep.passed()
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {name:16s} max_rel_error={rep.max_rel_error:.3e}  ({rep.worst})")
    if args.out is not None:
        out = _out_dir(args)
        body = {k: {"max_rel_error": r.max_rel_error, "n_checked": r.n_checked, "worst": r.worst}
                for k, r in reports.items()}
        _write_text(out / "gradcheck.json", _dump_json(body))
        _write_manifest(out, "gradcheck", settings, {})
    return 0 if ok else 1


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-report": cmd_sweep_report,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value settings file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="run seed (all random substreams derive from it)")
    common.add_argument("--override", action="append", metavar="KEY=VALUE", help="dotted config override; repeatable")
    common.add_argument("--modalities", help="comma list from pos,vis,lid")
    common.add_argument("--topm", help="comma list of M values, e.g. 1,5,9,13")
    common.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on stderr")

    parser = argparse.ArgumentParser(prog="mmbeam", description="Multimodal mmWave beam prediction toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="synthesize a labeled scenario dataset")
    p = sub.add_parser("train", parents=[common], help="train a beam predictor on a dataset")
    p.add_argument("--data", help="dataset directory")
    p = sub.add_parser("eval", parents=[common], help="score a trained model (or the oracle) on a split")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--model", help="train output directory")
    p.add_argument("--oracle", action="store_true", help="rank beams by the true power profile")
    sub.add_parser("sweep-report", parents=[common], help="beam-sweep timing table")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"mmbeam {args.command}: {exc}", file=sys.stderr)
        return 2
    except (SchemaError, MissingArtifact, CheckpointError, EmptyDataset, DegenerateRange) as exc:
        print(f"mmbeam {args.command}: data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
