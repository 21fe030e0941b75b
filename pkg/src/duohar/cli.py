"""Command-line orchestration of every experiment stage.

Commands: synth, ingest, cwt, augment-preview, pretrain, finetune, evaluate,
transfer, export-embeddings.  Each takes a YAML config plus repeatable
``--set dotted.key=value`` overrides.  Every run writes a provenance record
(resolved config, hash, backend, code version, timings) into the output
directory.  Exit codes: 0 success, 2 invalid config, 3 data error, 4 numeric
error, 5 storage/I-O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, config as config_mod, contrastive, dataio, downstream, evaluation
from .augment import RngStream, make_views
from .contrastive import SCALOGRAM, SIGNAL
from .errors import ToolkitError
from .kernels import BACKEND
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .wavelet import scalogram, write_preview_png, write_scalogram_bin


def _write_provenance(out_dir, command: str, cfg, t0: float, extra=None) -> None:
    os.makedirs(out_dir, exist_ok=True)
    record = {
        "command": command,
        "config": cfg.raw,
        "config_hash": cfg.hash(),
        "backend": BACKEND,
        "version": __version__,
        "timings": {"total_s": time.perf_counter() - t0},
    }
    if extra:
        record.update(extra)
    with open(os.path.join(out_dir, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(record, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _cmd_synth(args, cfg) -> int:
    rs = cfg.synth_recordings()
    out = args.out or os.path.join(cfg.output_dir, "corpus.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    dataio.save_csv(rs, out)
    n = sum(len(r) for r in rs.recordings)
    print(f"wrote {out}: {len(rs.recordings)} recordings, {n} samples")
    return 0


def _cmd_ingest(args, cfg) -> int:
    ws = cfg.load_windows(args.csv)
    print(f"windows: {len(ws.windows)}")
    print(f"subjects: {len(ws.subjects())} ({', '.join(ws.subjects())})")
    print(f"classes: {ws.label_map}")
    print(f"skipped short recordings: {ws.skipped_recordings}")
    if args.out:
        values = np.stack([w.values for w in ws.windows]) if ws.windows else np.zeros((0, ws.window_len, 3))
        labels = np.asarray([-1 if w.label is None else w.label for w in ws.windows])
        subjects = np.asarray([w.subject_id for w in ws.windows])
        np.savez(args.out, values=values, labels=labels, subjects=subjects)
        print(f"wrote {args.out}")
    return 0


def _cmd_cwt(args, cfg) -> int:
    ws = cfg.load_windows(args.csv)
    grid = cfg.grid(ws.sample_rate_hz)
    out_dir = os.path.join(cfg.output_dir, "scalograms")
    os.makedirs(out_dir, exist_ok=True)
    limit = min(args.limit, len(ws.windows))
    for i in range(limit):
        sca = scalogram(ws.windows[i], grid)
        write_scalogram_bin(os.path.join(out_dir, f"window{i:04d}.bin"), sca.pixels)
        write_preview_png(os.path.join(out_dir, f"window{i:04d}.png"), sca.pixels)
    print(f"wrote {limit} scalograms to {out_dir}")
    return 0


def _cmd_augment_preview(args, cfg) -> int:
    ws = cfg.load_windows(args.csv)
    if not ws.windows:
        print("no windows to preview", file=sys.stderr)
        return 0
    out_dir = os.path.join(cfg.output_dir, "augment_preview")
    os.makedirs(out_dir, exist_ok=True)
    w = ws.windows[0]
    pipes = cfg.pipelines()
    rng = RngStream(seed=int(cfg.raw["pretrain"]["seed"]), stream_id=99)
    np.savetxt(os.path.join(out_dir, "signal_original.csv"), w.values, delimiter=",")
    vi, vj = make_views(w, pipes[SIGNAL], rng.child(0))
    np.savetxt(os.path.join(out_dir, "signal_view_i.csv"), vi.values, delimiter=",")
    np.savetxt(os.path.join(out_dir, "signal_view_j.csv"), vj.values, delimiter=",")
    grid = cfg.grid(ws.sample_rate_hz)
    sca = scalogram(w, grid)
    write_preview_png(os.path.join(out_dir, "scalogram_original.png"), sca.pixels)
    si, sj = make_views(sca, pipes[SCALOGRAM], rng.child(1))
    write_preview_png(os.path.join(out_dir, "scalogram_view_i.png"), si.pixels)
    write_preview_png(os.path.join(out_dir, "scalogram_view_j.png"), sj.pixels)
    write_scalogram_bin(os.path.join(out_dir, "scalogram_view_i.bin"), si.pixels)
    write_scalogram_bin(os.path.join(out_dir, "scalogram_view_j.bin"), sj.pixels)
    print(f"wrote previews to {out_dir}")
    return 0


def _cmd_pretrain(args, cfg) -> int:
    ws = cfg.load_windows(args.csv)
    learner = args.learner
    run_dir = os.path.join(cfg.output_dir, f"pretrain_{learner}")
    grid = cfg.grid(ws.sample_rate_hz) if learner == SCALOGRAM else None
    ck = contrastive.pretrain(cfg.pretrain_config(learner), ws, grid=grid, run_dir=run_dir)
    save_checkpoint(ck, os.path.join(run_dir, "checkpoint"))
    print(f"checkpoint {ck.checkpoint_id[:12]} -> {run_dir}/checkpoint")
    print(f"final loss: {ck.manifest['history']['loss_curve'][-1]:.4f}")
    return 0


def _cmd_finetune(args, cfg) -> int:
    ws = cfg.load_windows(args.csv)
    plan = dataio.make_splits(
        ws,
        cfg.scheme,
        int(cfg.raw["split"]["seed"]),
        val_fraction=float(cfg.raw["split"]["val_fraction"]),
        test_fraction=float(cfg.raw["split"]["test_fraction"]),
    )
    fold = plan.folds[args.fold]
    train_ws, val_ws, _ = dataio.split_windows(ws, fold)
    ck = load_checkpoint(args.checkpoint)
    stream = SIGNAL if ck.manifest["architecture"].startswith(SIGNAL) else SCALOGRAM
    run_dir = os.path.join(cfg.output_dir, f"finetune_{stream}")
    model = downstream.finetune(
        ck, train_ws, val_ws, cfg.finetune_config(stream),
        subject_guard=set(fold.train_subjects), run_dir=run_dir,
    )
    save_checkpoint(downstream.model_checkpoint(model), os.path.join(run_dir, "checkpoint"))
    best = model.history["best_epoch"]
    print(f"fine-tuned {stream} model -> {run_dir}/checkpoint (best epoch: {best})")
    return 0


def _cmd_evaluate(args, cfg) -> int:
    sweep = config_mod.expand_sweep(cfg)
    for i, entry in enumerate(sweep):
        run_dir = entry.output_dir if len(sweep) == 1 else os.path.join(cfg.output_dir, f"sweep{i:03d}")
        ws = entry.load_windows(args.csv)
        plan = dataio.make_splits(
            ws,
            entry.scheme,
            int(entry.raw["split"]["seed"]),
            val_fraction=float(entry.raw["split"]["val_fraction"]),
            test_fraction=float(entry.raw["split"]["test_fraction"]),
        )
        jobs = args.jobs if args.jobs is not None else entry.jobs
        report = evaluation.run_scheme(plan, ws, entry, run_dir=run_dir, jobs=jobs)
        print(f"# run {run_dir}")
        print(report.render_table())
        _write_provenance(run_dir, "evaluate", entry, args._t0)
    return 0


def _cmd_transfer(args, cfg) -> int:
    pretrain_ws = cfg.load_windows(args.pretrain_csv)
    target_ws = cfg.load_windows(args.target_csv)
    report = evaluation.transfer_protocol(pretrain_ws, target_ws, cfg, run_dir=cfg.output_dir)
    print(report.render_table())
    return 0


def _cmd_export_embeddings(args, cfg) -> int:
    ws = cfg.load_windows(args.csv)
    model = downstream.model_from_checkpoint(load_checkpoint(args.checkpoint))
    out = args.out or os.path.join(cfg.output_dir, "embeddings.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    n = evaluation.export_embeddings(model, ws.windows, out)
    print(f"wrote {n} embedding rows to {out}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "ingest": _cmd_ingest,
    "cwt": _cmd_cwt,
    "augment-preview": _cmd_augment_preview,
    "pretrain": _cmd_pretrain,
    "finetune": _cmd_finetune,
    "evaluate": _cmd_evaluate,
    "transfer": _cmd_transfer,
    "export-embeddings": _cmd_export_embeddings,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="duohar", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="YAML experiment config")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dotted-path config override")

    p = sub.add_parser("synth", help="generate a synthetic corpus CSV")
    common(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("ingest", help="parse and window a corpus, print a summary")
    common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--out", default=None, help="optional .npz of windows")

    p = sub.add_parser("cwt", help="export scalograms for inspection")
    common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--limit", type=int, default=8)

    p = sub.add_parser("augment-preview", help="write before/after augmentation samples")
    common(p)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on the whole corpus")
    common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--learner", choices=(SIGNAL, SCALOGRAM), required=True)

    p = sub.add_parser("finetune", help="fine-tune a pretrained checkpoint on one fold")
    common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fold", type=int, default=0)

    p = sub.add_parser("evaluate", help="full cross-validation run (supports sweep)")
    common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel folds (processes)")

    p = sub.add_parser("transfer", help="pretrain on one corpus, evaluate on another")
    common(p)
    p.add_argument("--pretrain-csv", default=None)
    p.add_argument("--target-csv", required=True)

    p = sub.add_parser("export-embeddings", help="write per-window embeddings as CSV")
    common(p)
    p.add_argument("--csv", default=None)
    p.add_argument("--checkpoint", required=True, help="fine-tuned model checkpoint dir")
    p.add_argument("--out", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    t0 = time.perf_counter()
    args._t0 = t0
    try:
        cfg = config_mod.load_config(args.config, args.overrides)
        code = _COMMANDS[args.command](args, cfg)
        if args.command != "evaluate":  # evaluate writes one record per sweep entry
            _write_provenance(cfg.output_dir, args.command, cfg, t0)
        return code
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
