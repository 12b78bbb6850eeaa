"""Command-line interface.

Subcommands cover dataset generation/ingestion, training with resume,
evaluation, the K and module ablations, entropy-map emission, gradient
checking, the discrete causal oracle, and band/omega inspection dumps.
"""

import argparse
import csv
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import scm as scm_mod
from .boundary import boundary_band, sobel_magnitude, uncertainty_map
from .checkpoint import CheckpointError, load_checkpoint
from .scm import SCMError
from .config import ConfigError, ModelConfig, TrainConfig, load_scm_config, load_train_config
from .data import DatasetError, PgmError, export_dataset, generate_synthetic, ingest, read_pgm, write_pgm
from .losses import entropy_map
from .model import SegModel
from .tensor import Tensor
from .train import (SGD, TrainingError, ablate_k, ablate_modules, evaluate_model, fit,
                    gradient_check, load_dataset, restore_training_state)

_BOOL_FIELDS = ("augment", "use_gsm", "use_cibm", "detach_uncertainty", "stochastic_eval")
_VALUE_FIELDS = {"lr": float, "momentum": float, "weight_decay": float, "batch": int,
                 "epochs": int, "k": int, "band_width": int, "split_fraction": float,
                 "schedule": str, "size": int, "data": str, "n_samples": int}


def _add_config_flags(parser, require_seed=False):
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, required=require_seed,
                        help="run seed" + (" (required)" if require_seed else ""))
    for name, kind in _VALUE_FIELDS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", type=kind, dest=name)
    for name in _BOOL_FIELDS:
        flag = name.replace("_", "-")
        group = parser.add_mutually_exclusive_group()
        group.add_argument(f"--{flag}", dest=name, action="store_true", default=None)
        group.add_argument(f"--no-{flag}", dest=name, action="store_false", default=None)


def _config_from_args(args) -> TrainConfig:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(TrainConfig)}
    return load_train_config(args.config, overrides)


def _load_model(args, cfg: TrainConfig) -> tuple[SegModel, object]:
    ckpt = load_checkpoint(args.checkpoint)
    model = SegModel(cfg.model_config(), cfg.seed)
    opt = SGD(model.registry, cfg.momentum, cfg.weight_decay)
    restore_training_state(ckpt, model, opt)
    return model, ckpt


def cmd_generate(args):
    records = generate_synthetic(args.n_samples or 256, args.size or 64, args.seed)
    export_dataset(records, args.out)
    tags = np.bincount([r.confounder_tag for r in records], minlength=3)
    print(f"wrote {len(records)} image/mask pairs to {args.out} "
          f"(confounder levels {tags[0]}/{tags[1]}/{tags[2]})")
    return 0


def cmd_ingest_check(args):
    records, errors = ingest(args.data)
    for path, message in errors:
        print(f"ERROR {path}: {message}")
    if not records and not errors:
        print(f"warning: no image/mask pairs in {args.data}")
    print(f"{len(records)} valid pairs, {len(errors)} bad files")
    return 1 if errors else 0


def cmd_train(args):
    cfg = _config_from_args(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = fit(cfg, csv_path=out / "metrics.csv", checkpoint_path=out / "model.ckpt",
                 resume=args.resume, log=print)
    final = result.history[-1].test if result.history else {}
    print(f"done: checkpoint {out / 'model.ckpt'}, metrics {out / 'metrics.csv'}")
    if final:
        print("final test metrics: " + ", ".join(f"{k} {v:.4f}" for k, v in final.items()))
    return 0


def cmd_evaluate(args):
    cfg = _config_from_args(args)
    model, _ = _load_model(args, cfg)
    records = load_dataset(cfg)
    per_image, mean = evaluate_model(model, records, cfg)
    rows = [{"stem": rec.stem or str(i), "dice": m.dice, "iou": m.iou,
             "fdr": m.fdr, "auc": m.auc}
            for i, (rec, m) in enumerate(zip(records, per_image))]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("stem", "dice", "iou", "fdr", "auc"))
            writer.writeheader()
            writer.writerows(rows)
            writer.writerow({"stem": "mean", **mean})
    print("mean: " + ", ".join(f"{k} {v:.4f}" for k, v in mean.items()))
    return 0


def cmd_ablate_k(args):
    cfg = _config_from_args(args)
    k_list = [int(tok) for tok in args.k_list.split(",") if tok.strip()]
    rows = ablate_k(cfg, k_list, csv_path=args.out, log=print)
    print(f"wrote {len(rows)} rows to {args.out}" if args.out else f"{len(rows)} rows")
    return 0


def cmd_ablate_modules(args):
    cfg = _config_from_args(args)
    seeds = [int(tok) for tok in args.seeds.split(",")] if args.seeds else None
    rows = ablate_modules(cfg, seeds=seeds, csv_path=args.out, log=print)
    print(f"wrote {len(rows)} rows to {args.out}" if args.out else f"{len(rows)} rows")
    return 0


def cmd_entropy(args):
    cfg = _config_from_args(args)
    model, _ = _load_model(args, cfg)
    records = load_dataset(cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(records):
        result = model.forward(rec.image[None].astype(np.float32), training=False)
        ent = entropy_map(result.pred.data[0, 0])
        write_pgm(outdir / f"{rec.stem or i}.entropy.pgm", ent)
    print(f"wrote {len(records)} entropy maps to {outdir}")
    return 0


def cmd_gradcheck(args):
    out = gradient_check(k=args.k or 8, size=args.size or 32, seed=args.seed,
                         max_probes=args.max_probes)
    worst = max(out.values())
    for name, err in out.items():
        print(f"{name}: max relative gradient error {err:.3e}")
    print(f"worst {worst:.3e} ({'PASS' if worst <= args.tolerance else 'FAIL'} "
          f"at tolerance {args.tolerance:.0e})")
    return 0 if worst <= args.tolerance else 1


def cmd_oracle(args):
    model = load_scm_config(args.config) if args.config else scm_mod.worked_example()
    print(f"discrete SCM: |C|={model.n_c} |X|={model.n_x} |Y|={model.n_y}")
    header = f"{'x':>3} {'P(Y|x)':>24} {'P(Y|do(x))':>24} {'surgery':>24} {'approx gap':>10}"
    print(header)
    for x in range(model.n_x):
        obs = np.array2string(scm_mod.observational(model, x), precision=4)
        adj = np.array2string(scm_mod.backdoor_adjust(model, x), precision=4)
        enum = np.array2string(scm_mod.intervene_enumerate(model, x), precision=4)
        gap = scm_mod.approximation_gap(model, x)
        print(f"{x:>3} {obs:>24} {adj:>24} {enum:>24} {gap:>10.4f}")
    return 0


def cmd_inspect_band(args):
    cfg = _config_from_args(args)
    records = load_dataset(cfg)
    if not 0 <= args.index < len(records):
        print(f"index {args.index} out of range (dataset has {len(records)} records)",
              file=sys.stderr)
        return 1
    rec = records[args.index]
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    stem = rec.stem or str(args.index)
    band = boundary_band(rec.mask, cfg.band_width)
    edges = sobel_magnitude(rec.mask)
    write_pgm(outdir / f"{stem}.band.pgm", band.band.astype(np.float64))
    write_pgm(outdir / f"{stem}.sobel.pgm", edges / max(edges.max(), 1.0))
    emitted = ["band", "sobel"]
    if args.checkpoint:
        model, _ = _load_model(args, cfg)
        result = model.forward(rec.image[None].astype(np.float32), training=False)
        pred = result.pred.data[0, 0].astype(np.float64)
        umap = uncertainty_map(Tensor(pred), band)
        v = umap.v.data
        write_pgm(outdir / f"{stem}.uncertainty.pgm", v / max(v.max(), 1e-12))
        emitted.append("uncertainty")
    print(f"band pixels: {band.n}; wrote {', '.join(emitted)} maps to {outdir}")
    return 0


def cmd_inspect_omega(args):
    cfg = _config_from_args(args)
    if not cfg.use_cibm:
        print("model has no mixing weights (use_cibm is off)", file=sys.stderr)
        return 1
    model, _ = _load_model(args, cfg)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    for stage, mixer in enumerate(model.pipeline.mixers):
        omega = mixer.omega().data
        path = outdir / f"omega_stage{stage}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["channel"] + [f"k{j}" for j in range(omega.shape[1])])
            for row_idx, row in enumerate(omega):
                writer.writerow([row_idx] + [f"{w:.8f}" for w in row])
        print(f"stage {stage}: {omega.shape[0]}x{omega.shape[1]} -> {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causalseg",
        description="Causal-intervention segmentation harness on synthetic confounded data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="emit a synthetic confounded dataset as PGM pairs")
    p.add_argument("--out", required=True)
    p.add_argument("--n-samples", type=int, dest="n_samples")
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("ingest-check", help="validate an image/mask directory")
    p.add_argument("--data", required=True)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("train", help="train a model")
    _add_config_flags(p, require_seed=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="per-image metrics CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate-k", help="train/evaluate across K values")
    _add_config_flags(p)
    p.add_argument("--k-list", required=True, help="comma-separated K values")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_ablate_k)

    p = sub.add_parser("ablate-modules", help="backbone/GSm/CIBM ablation grid")
    _add_config_flags(p)
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--out", help="CSV path")
    p.set_defaults(func=cmd_ablate_modules)

    p = sub.add_parser("entropy", help="emit per-image entropy maps")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_entropy)

    p = sub.add_parser("gradcheck", help="finite-difference audit of all losses")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--max-probes", type=int, default=40)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("oracle", help="discrete backdoor-adjustment oracle table")
    p.add_argument("--config", help="SCM definition file (default: built-in example)")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("inspect-band", help="dump boundary band/Sobel/uncertainty maps")
    _add_config_flags(p)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--checkpoint", help="optional, adds the uncertainty map")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_band)

    p = sub.add_parser("inspect-omega", help="dump per-stage mixing weights as CSV")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect_omega)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CheckpointError, ConfigError, DatasetError, PgmError, SCMError,
            TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
