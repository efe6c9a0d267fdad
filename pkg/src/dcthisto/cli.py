"""Command line: synth-data, train, eval, gradcheck, bench.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Results go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import gradcheck as GC
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, RunConfig, load_run_config, preset
from .data import (
    MAGNIFICATIONS,
    ArrayDataset,
    ManifestDataset,
    band_energies,
    holdout_split,
    load_manifest,
    manifest_labels,
    synth_dataset,
)
from .errors import ConfigError, DctHistoError, InputError, ManifestError
from .metrics import (
    METRICS,
    ConfusionMatrix,
    aggregate_seeds,
    compute_metrics,
    format_magnification_table,
    format_table,
    report_csv,
)
from .model import count_flops, forward, init_params, param_shapes
from .rng import RngState
from .tensor import OPS
from .train import METRICS_HEADER, TrainingDiverged, evaluate, train

log = logging.getLogger("dcthisto")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
CHECKPOINT_NAME = "checkpoint.dcth"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for runtime failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# shared helpers


def _run_config(args) -> RunConfig:
    if args.config and args.preset:
        raise UsageError("give either --config or --preset, not both")
    if args.config:
        if not Path(args.config).is_file():
            raise ConfigError(f"config file not found: {args.config}")
        return load_run_config(args.config)
    if args.preset:
        return preset(args.preset)
    raise UsageError(f"{args.command} needs --config PATH or --preset NAME")


def load_datasets(run: RunConfig, seed: int, magnification: int | None = None):
    """(train, val) datasets for one seed; val is None when the split is empty."""
    if run.synth is not None:
        if magnification is not None:
            raise UsageError("--magnification needs manifest data, synthetic images have none")
        s = run.synth
        root = RngState(seed).split("data")
        tr = synth_dataset(root.split("train"), s.train_per_class, s.classes, s.size)
        va = synth_dataset(root.split("val"), s.val_per_class, s.classes, s.size) if s.val_per_class else None
        return tr, va
    manifest = load_manifest(run.manifest, run.labels).filter(magnification=magnification)
    tr_rows, va_rows = manifest.filter(split="train"), manifest.filter(split="val")
    if len(tr_rows) and not len(va_rows):
        tr_rows, va_rows = holdout_split(tr_rows, RngState(seed).split("holdout"))
    if not len(tr_rows):
        raise InputError(f"manifest {run.manifest} has no training rows after filtering")
    size = run.model.input_shape[1:]
    return ManifestDataset(tr_rows, size), (ManifestDataset(va_rows, size) if len(va_rows) else None)


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _magnification_accuracy(data, predictions: np.ndarray) -> dict[int, float]:
    mags = getattr(data, "magnifications", None)
    if mags is None:
        return {}
    out = {}
    for m in MAGNIFICATIONS:
        sel = mags == m
        if sel.any():
            out[m] = float(np.mean(predictions[sel] == data.labels[sel]))
    return out


def _write_report(out: Path, report, mag_acc: dict[int, float], title: str) -> None:
    (out / "report.txt").write_text(
        format_table(report.as_dict(), title=title)
        + (format_magnification_table(mag_acc) if mag_acc else ""),
        encoding="utf-8",
    )
    (out / "report.csv").write_text(report_csv(report.as_dict()), encoding="utf-8")
    detail = {
        "headline": report.as_dict(),
        "weighted": report.weighted,
        "per_class": report.per_class,
        "flags": report.flags,
        "support": report.support,
        "magnification_accuracy": {str(k): v for k, v in mag_acc.items()},
    }
    (out / "report.json").write_text(json.dumps(detail, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# train


def train_one(run: RunConfig, out: Path, magnification: int | None = None):
    """Train one seed into ``out``; returns (MetricsReport, per-magnification accuracy)."""
    seed = run.seeds[0]
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(run.to_json(), encoding="utf-8")
    tr, va = load_datasets(run, seed, magnification)
    log.info("seed %d: %d train / %d val images", seed, len(tr), len(va) if va is not None else 0)
    with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRICS_HEADER)

        def on_epoch(epoch, rows, params):
            for r in rows:
                writer.writerow([r.epoch, r.split, _fmt(r.loss), _fmt(r.accuracy), _fmt(r.precision), _fmt(r.recall), _fmt(r.f1)])
            fh.flush()

        try:
            result = train(run.model, tr, run.train, va, on_epoch=on_epoch)
        except TrainingDiverged as e:
            save_checkpoint(out / CHECKPOINT_NAME, e.result.params, e.result.state)
            raise
    save_checkpoint(out / CHECKPOINT_NAME, result.params, result.state)
    data, split = (va, "val") if va is not None else (tr, "train")
    ev = evaluate(run.model, result.params, data, run.train.eval_batch_size)
    report = compute_metrics(ev.cm)
    mag_acc = _magnification_accuracy(data, ev.predictions)
    _write_report(out, report, mag_acc, f"seed {seed}, {split} split, n={len(data)}")
    return report, mag_acc


def cmd_train(args) -> int:
    run = _run_config(args)
    seeds = tuple(args.seed) if args.seed else run.seeds
    out = Path(args.out or run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports, mags = [], []
    for seed in seeds:
        report, mag_acc = train_one(run.for_seed(seed), out / f"seed_{seed}", args.magnification)
        reports.append(report)
        mags.append(mag_acc)
        print(f"seed {seed}: " + ", ".join(f"{m}={getattr(report, m):.4f}" for m in METRICS))
    agg = aggregate_seeds(reports)
    text = format_table(agg, title=f"mean ± std over seeds {list(seeds)}")
    common = sorted(set.intersection(*(set(m) for m in mags))) if mags and all(mags) else []
    if common:
        mag_agg = {m: (float(np.mean([d[m] for d in mags])), float(np.std([d[m] for d in mags]))) for m in common}
        text += "\n" + format_magnification_table(mag_agg)
    (out / "summary.txt").write_text(text, encoding="utf-8")
    (out / "summary.csv").write_text(report_csv(agg), encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    if args.config or args.preset:
        run = _run_config(args)
    else:
        snap = ckpt_path.parent / "config.json"
        if not snap.is_file():
            raise ConfigError(f"no --config given and no config.json next to {ckpt_path}")
        run = load_run_config(snap)
    if args.manifest:
        run = replace(run, manifest=str(args.manifest), synth=None)
    if run.manifest is not None:
        found = manifest_labels(run.manifest)
        known = {lab.lower() for lab in run.labels}
        if any(lab.lower() not in known for lab in found):
            raise ConfigError(f"label-set mismatch: manifest has {found}, model was trained on {list(run.labels)}")
    ckpt = load_checkpoint(ckpt_path)
    params = ckpt.params()
    expected = param_shapes(run.model)
    got = {k: tuple(v.shape) for k, v in params.items()}
    if got != expected:
        missing = sorted(set(expected) - set(got))
        wrong = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        raise ConfigError(f"checkpoint does not match model config: missing {missing}, shape mismatch {wrong}")
    seed = args.seed[0] if args.seed else run.seeds[0]
    tr, va = load_datasets(run, seed, args.magnification)
    if args.split == "train":
        data = tr
    elif args.split == "val":
        if va is None:
            raise InputError("validation split is empty")
        data = va
    else:
        data = tr if va is None else _concat(tr, va)
    ev = evaluate(run.model, params, data, run.train.eval_batch_size)
    report = compute_metrics(ev.cm)
    mag_acc = _magnification_accuracy(data, ev.predictions)
    title = f"{args.split} split, n={len(data)}" + (f", {args.magnification}X" if args.magnification else "")
    sys.stdout.write(format_table(report.as_dict(), title=title))
    if mag_acc:
        sys.stdout.write("\n" + format_magnification_table(mag_acc))
    for flag in report.flags:
        print(f"warning: {flag}", file=sys.stderr)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_report(out, report, mag_acc, title)
    return EXIT_OK


class _Joined:
    def __init__(self, a, b):
        self.a, self.b = a, b
        self.labels = np.concatenate([a.labels, b.labels])
        ma, mb = getattr(a, "magnifications", None), getattr(b, "magnifications", None)
        self.magnifications = None if ma is None or mb is None else np.concatenate([ma, mb])

    def __len__(self):
        return len(self.a) + len(self.b)

    def batch(self, indices):
        idx = np.asarray(indices)
        n = len(self.a)
        parts = [self.a.batch(idx[idx < n]), self.b.batch(idx[idx >= n] - n)]
        parts = [p for p, sel in zip(parts, (idx < n, idx >= n)) if sel.any()]
        return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _concat(a, b):
    if isinstance(a, ArrayDataset) and isinstance(b, ArrayDataset):
        return ArrayDataset(np.concatenate([a.images, b.images]), np.concatenate([a.labels, b.labels]), None, a.label_names)
    return _Joined(a, b)


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    scope = args.scope or "all"
    if scope not in ("all", "model") and scope not in OPS:
        raise UsageError(f"unknown op {scope!r}; known ops: {', '.join(sorted(OPS))}")
    seed = args.seed[0] if args.seed else 0
    results = GC.check_scope(scope, seed)
    for r in results:
        adj = "" if r.adjoint_error is None else f"  adjoint_err={r.adjoint_error:.3e}"
        print(f"{r.name:<18} max_rel_err={r.max_rel_error:.3e}{adj}  {'PASS' if r.passed else 'FAIL'}")
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed (tolerance {GC.TOLERANCE:g})")
    return EXIT_OK if not failed else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# bench


def time_forward(cfg, params, x, iters: int = 20, warmup: int = 2) -> float:
    """Median seconds per forward call over ``iters`` warm iterations."""
    for _ in range(warmup):
        forward(cfg, params, x)
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        forward(cfg, params, x)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cmd_bench(args) -> int:
    run = _run_config(args) if (args.config or args.preset) else preset("desk")
    if args.iters < 20:
        raise UsageError("--iters must be at least 20")
    seed = args.seed[0] if args.seed else 0
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in args.r or [1, 2, 4]:
        cfg = run.model.with_r(r)
        flops = count_flops(cfg)
        params = init_params(cfg, RngState(seed).split("init"))
        x = RngState(seed).split("bench").random((args.batch,) + cfg.input_shape)
        ms = 1000.0 * time_forward(cfg, params, x, args.iters) / args.batch
        rows.append((r, flops.attention_score, flops.total, ms))
        if out:
            (out / f"flops_r{r}.csv").write_text(flops.to_csv(), encoding="utf-8")
    text_rows = [("r", "attn_score_macs", "total_macs", "ms_per_image")]
    text_rows += [(str(r), str(a), str(t), f"{ms:.3f}") for r, a, t, ms in rows]
    for row in text_rows:
        print(",".join(row))
    if out:
        (out / "bench.csv").write_text("".join(",".join(row) + "\n" for row in text_rows), encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth-data


def cmd_synth_data(args) -> int:
    run = _run_config(args) if (args.config or args.preset) else preset("desk")
    if run.synth is None:
        raise ConfigError("config has no synth section")
    seed = args.seed[0] if args.seed else run.seeds[0]
    tr, va = load_datasets(run, seed)
    tensors = {"train.images": tr.images, "train.labels": tr.labels.astype(np.float64)}
    if va is not None:
        tensors["val.images"] = va.images
        tensors["val.labels"] = va.labels.astype(np.float64)
    out = Path(args.out or "synth.dcth")
    if out.suffix == "" or out.is_dir():
        out.mkdir(parents=True, exist_ok=True)
        out = out / f"synth_seed{seed}.dcth"
    save_checkpoint(out, tensors)
    energies = np.stack([band_energies(tr.images[tr.labels == c], run.synth.classes) for c in range(run.synth.classes)])
    print(f"wrote {out}: {len(tr)} train, {len(va) if va is not None else 0} val images of {tr.images.shape[1:]}")
    print("band energy by class (rows) and band (columns):")
    for c, row in enumerate(energies):
        print(f"  class {c}: " + " ".join(f"{v:10.3f}" for v in row))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="run configuration JSON")
    common.add_argument("--preset", choices=PRESETS, help="built-in run configuration")
    common.add_argument("--seed", metavar="N", type=int, action="append", help="seed (repeatable)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--magnification", type=int, choices=MAGNIFICATIONS, help="restrict manifest data to one magnification")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="dcthisto", description="Frequency-attention hybrid classifier for histopathology images.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    sub.add_parser("train", parents=[common], help="train one run per seed")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", metavar="PATH", required=True)
    ev.add_argument("--manifest", metavar="PATH", help="evaluate on this manifest instead of the configured data")
    ev.add_argument("--split", choices=("train", "val", "all"), default="val")

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    gc.add_argument("--scope", metavar="NAME", help="'all' (default), 'model', or one op name")

    b = sub.add_parser("bench", parents=[common], help="analytic MACs and forward wall-clock per r")
    b.add_argument("--r", type=int, action="append", help="low-pass factor (repeatable; default 1, 2, 4)")
    b.add_argument("--iters", type=int, default=20)
    b.add_argument("--batch", type=int, default=1)

    sub.add_parser("synth-data", parents=[common], help="write the synthetic spectral dataset")
    return p


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "synth-data": cmd_synth_data,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, ManifestError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DctHistoError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
