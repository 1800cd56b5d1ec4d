"""Command-line entry point: ``pasnet <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .config import PROFILES, ModelConfig, TrainConfig, apply_overrides, load_config, profile
from .data import (confusion_matrix, generate_synthetic, load_dataset, macro_f1, save_dataset,
                   split_subject_independent)
from .errors import ConfigurationError, InputError, PasNetError
from .io import read_window
from .model import build_model, layer_tensors
from .profiler import (energy_saved_by_exit, format_energy_table, profile_model, write_energy_csv,
                       write_firing_csv)
from .readout import ExitPolicy, first_exit, predict_logits, warmup_steps, write_exit_trace
from .streaming import StreamingEngine, stream_with_exit
from .topology import export_mask_heatmaps
from .training import load_checkpoint, save_checkpoint, train

log = logging.getLogger("pasnet")


def _resolve_config(args) -> tuple[ModelConfig, TrainConfig]:
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = ModelConfig(), TrainConfig()
    if args.profile:
        if args.config:
            raise ConfigurationError("use either --config or --profile, not both")
        model_cfg = profile(args.profile)
    return apply_overrides(model_cfg, train_cfg, args.set or [])


def _model(args, dtype=torch.float32):
    """Trained model from ``--checkpoint``, else a freshly initialised one from the config."""
    if getattr(args, "checkpoint", None):
        model, _, _ = load_checkpoint(args.checkpoint, dtype=dtype)
        return model
    cfg, _ = _resolve_config(args)
    return build_model(cfg, dtype=dtype).eval()


def _dataset(args, cfg: ModelConfig, split=None):
    return load_dataset(args.data, cfg.in_channels, cfg.nodes, split=split)


def cmd_gen_data(args) -> int:
    cfg, _ = _resolve_config(args)
    ds = generate_synthetic(classes=cfg.classes, samples_per_class=args.samples_per_class, T=cfg.window,
                            in_channels=cfg.in_channels, nodes=cfg.nodes, seed=args.seed,
                            noise=args.noise, n_subjects=args.subjects)
    splits = split_subject_independent(ds.subjects, seed=args.seed)
    manifest = save_dataset(args.out, ds, splits)
    print(f"wrote {len(ds)} windows to {manifest}")
    return 0


def cmd_train(args) -> int:
    model_cfg, train_cfg = _resolve_config(args)
    train_set = _dataset(args, model_cfg, "train")
    val_set = _dataset(args, model_cfg, "val")
    if train_set.windows.shape[1] != model_cfg.window:
        raise ConfigurationError(
            f"model.window = {model_cfg.window} but the data has windows of length {train_set.windows.shape[1]}")
    model = build_model(model_cfg)
    result = train(model, train_set, val_set, train_cfg, seed=args.seed, metrics_path=args.metrics)
    save_checkpoint(args.out, result.model, result.optimizer, best_epoch=result.best_epoch,
                    best_val_acc=result.best_val_acc)
    print(f"best epoch {result.best_epoch}, validation accuracy {result.best_val_acc:.4f}; saved {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = _model(args)
    cfg = model.cfg
    ds = _dataset(args, cfg, args.split)
    logits = predict_logits(model, ds.windows)
    pred = logits[:, -1].argmax(-1).numpy()
    acc = float((pred == ds.labels).mean())
    f1 = macro_f1(ds.labels, pred, cfg.classes)
    print(f"samples {len(ds)}")
    print(f"accuracy {acc:.6f}")
    print(f"macro_f1 {f1:.6f}")
    if args.confusion:
        m = confusion_matrix(ds.labels, pred, cfg.classes)
        np.savetxt(args.confusion, m, fmt="%d", delimiter=",")
    return 0


def _trace_rows(ids, exits, preds, labels, confs, seq_len):
    for i, t, p, y, c in zip(ids, exits, preds, labels, confs):
        yield {"sample_id": i, "exit_step": t, "predicted_class": p, "true_class": y,
               "confidence_at_exit": c, "energy_saved_fraction": energy_saved_by_exit(seq_len, t)}


def cmd_infer_stream(args) -> int:
    model = _model(args, dtype=torch.float64 if args.double else torch.float32)
    cfg = model.cfg
    policy = cfg.exit_policy() if args.threshold is None else ExitPolicy(args.threshold)
    if args.window:
        windows, labels = read_window(args.window, cfg.in_channels, cfg.nodes)[None], np.array([-1])
    else:
        ds = _dataset(args, cfg, args.split)
        windows, labels = ds.windows, ds.labels
    engine = StreamingEngine(model)
    exits, preds, confs, steps = [], [], [], []
    for w in windows:
        r = stream_with_exit(engine, torch.as_tensor(w), policy)
        exits.append(r.exit_step)
        preds.append(r.predicted)
        confs.append(r.confidence)
        steps.append(r.logits)
    seq_len = windows.shape[1] // cfg.stride
    rows = list(_trace_rows(range(len(windows)), exits, preds, labels.tolist(), confs, seq_len))
    if args.out:
        write_exit_trace(args.out, rows)
    if args.logits_out:
        with open(args.logits_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "step"] + [f"logit_{k}" for k in range(cfg.classes)])
            for i, lg in enumerate(steps):
                for t, row in enumerate(lg.tolist(), start=1):
                    w.writerow([i, t] + [f"{v:.9g}" for v in row])
    mean_exit = float(np.mean(exits))
    print(f"samples {len(windows)}")
    print(f"mean exit step {mean_exit:.3f} of {seq_len}")
    print(f"mean energy saved {np.mean([r['energy_saved_fraction'] for r in rows]):.4f}")
    if (labels >= 0).all():
        print(f"accuracy at exit {float(np.mean(np.array(preds) == labels)):.6f}")
    return 0


def cmd_export_exit_trace(args) -> int:
    model = _model(args)
    cfg = model.cfg
    ds = _dataset(args, cfg, args.split)
    policy = cfg.exit_policy() if args.threshold is None else ExitPolicy(args.threshold)
    logits = predict_logits(model, ds.windows)
    seq_len = logits.shape[1]
    t_warm = warmup_steps(seq_len, cfg.warmup_ratio)
    exits, preds, confs = [], [], []
    for lg in logits:
        t, d = first_exit(lg, policy, t_warm)
        exits.append(t)
        preds.append(d.predicted)
        confs.append(d.confidence)
    write_exit_trace(args.out, _trace_rows(range(len(ds)), exits, preds, ds.labels.tolist(), confs, seq_len))
    print(f"wrote {len(ds)} rows to {args.out}")
    return 0


def cmd_profile(args) -> int:
    model = _model(args)
    cfg = model.cfg
    if args.data:
        windows = _dataset(args, cfg, args.split).windows
    else:
        windows = generate_synthetic(cfg.classes, 8, cfg.window, cfg.in_channels, cfg.nodes, seed=cfg.seed).windows
    result = profile_model(model, windows, e_mac=args.e_mac, e_ac=args.e_ac)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_energy_csv(out / "energy.csv", result.energy)
    table = format_energy_table(result.energy)
    (out / "energy.txt").write_text(table)
    write_firing_csv(out / "firing_matrix.csv", result.firing)
    print(table, end="")
    return 0


def cmd_export_raster(args) -> int:
    model = _model(args)
    cfg = model.cfg
    if args.window:
        x = read_window(args.window, cfg.in_channels, cfg.nodes)
    elif args.data:
        ds = _dataset(args, cfg, args.split)
        if not 0 <= args.index < len(ds):
            raise InputError(f"--index {args.index} out of range for {len(ds)} windows")
        x = ds.windows[args.index]
    else:
        raise ConfigurationError("export-raster needs --window or --data")
    with torch.no_grad():
        _, rec = model(torch.as_tensor(x)[None], record=True)
    layers = layer_tensors(rec)
    if args.layers:
        missing = set(args.layers) - set(layers)
        if missing:
            raise ConfigurationError(f"unknown layer(s) {sorted(missing)}; known: {list(layers)}")
        layers = {k: layers[k] for k in args.layers}
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer", "t", "channel", "node", "value"])
        for name, s in layers.items():
            arr = s[0].to(torch.int64).numpy()
            for t, c, v in np.ndindex(arr.shape):
                w.writerow([name, t, c, v, arr[t, c, v]])
    print(f"wrote {len(layers)} layers to {args.out}")
    return 0


def cmd_export_topology(args) -> int:
    model = _model(args)
    paths = export_mask_heatmaps(model, args.out_dir)
    for p in paths:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pasnet", description="Multiplier-free spiking HAR engine.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="config file (header '# pasnet-config v1')")
        sp.add_argument("--profile", choices=sorted(PROFILES), help="dataset hyperparameter profile")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.set_defaults(func=fn)
        return sp

    def model_source(sp, data_required=False):
        sp.add_argument("--checkpoint", help="trained checkpoint; default is a fresh model from the config")
        sp.add_argument("--data", required=data_required, help="dataset manifest.csv")
        sp.add_argument("--split", default="test", help="manifest split to use (default: test)")

    sp = command("gen-data", cmd_gen_data, "write a synthetic multi-node dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--samples-per-class", type=int, default=200)
    sp.add_argument("--subjects", type=int, default=20)
    sp.add_argument("--noise", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)

    sp = command("train", cmd_train, "train on a manifest's train/val splits")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--metrics", help="per-epoch metrics CSV")
    sp.add_argument("--seed", type=int, default=0, help="data-order seed")

    sp = command("eval", cmd_eval, "accuracy and macro-F1 at the final step")
    model_source(sp, data_required=True)
    sp.add_argument("--confusion", help="write the raw confusion matrix CSV here")

    sp = command("infer-stream", cmd_infer_stream, "step-by-step BN-folded inference with early exit")
    model_source(sp)
    sp.add_argument("--window", help="single raw window (.bin or .csv)")
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--out", help="exit trace CSV")
    sp.add_argument("--logits-out", help="per-step logits CSV for the computed steps")
    sp.add_argument("--double", action="store_true", help="run in float64")

    sp = command("profile", cmd_profile, "FLOPs/SOPs, energy and firing matrix")
    model_source(sp)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--e-mac", type=float, default=4.6, help="pJ per MAC")
    sp.add_argument("--e-ac", type=float, default=0.1, help="pJ per accumulate")

    sp = command("export-raster", cmd_export_raster, "per-layer spike trains of one window")
    model_source(sp)
    sp.add_argument("--window", help="raw window file (.bin or .csv)")
    sp.add_argument("--index", type=int, default=0, help="window index within --data/--split")
    sp.add_argument("--layers", nargs="+", help="subset of layer names")
    sp.add_argument("--out", required=True)

    sp = command("export-topology", cmd_export_topology, "learned adjacency masks, one file per block")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out-dir", required=True)

    sp = command("export-exit-trace", cmd_export_exit_trace, "batch-mode exit decisions per sample")
    model_source(sp, data_required=True)
    sp.add_argument("--threshold", type=float)
    sp.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (PasNetError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
