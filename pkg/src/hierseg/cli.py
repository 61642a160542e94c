"""Command-line entry points: phantom, preprocess, train, crossval, infer, eval.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.  Every command that writes outputs echoes its fully resolved
configuration to ``<out>/resolved.cfg`` so runs can be reproduced exactly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from hierseg.config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common_flags(parser) -> None:
    parser.add_argument("--config", help="config file with flat dotted keys")
    parser.add_argument("--seed", type=int, help="base RNG seed (overrides config)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--set", dest="overrides", action="append", metavar="KEY=VALUE",
                        help="override a single config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hierseg",
                     description="Hierarchical-decoding 3D segmentation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", parents=[], help="generate synthetic phantom scans")
    _common_flags(p)
    p.add_argument("-n", "--count", type=int, default=4, help="number of phantoms")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="apply the preprocessing chain to a scan folder")
    _common_flags(p)
    p.add_argument("--in", dest="in_dir", required=True, help="input scan directory")
    p.add_argument("--modality", choices=("ct", "mri"), default="ct")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one cross-validation fold")
    _common_flags(p)
    p.add_argument("--data", required=True, help="directory of image/mask NIfTI pairs")
    p.add_argument("--fold", type=int, default=0, help="fold index to train")
    p.add_argument("--resume", action="store_true",
                   help="resume from <out>/last.pt if present")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="full k-fold cross-validation with reports")
    _common_flags(p)
    p.add_argument("--data", required=True, help="directory of image/mask NIfTI pairs")
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("infer", help="segment one scan with a trained checkpoint")
    _common_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--montage", action="store_true", help="also write a slice montage PNG")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="compare a predicted mask against ground truth")
    _common_flags(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def _resolve(args) -> RunConfig:
    return RunConfig.resolve(config_file=args.config, overrides=args.overrides,
                             seed=args.seed)


def _out_dir(args, required=True) -> Path | None:
    if args.out is None:
        if required:
            raise UsageError("--out is required for this command")
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_phantom(args) -> int:
    from hierseg.phantom import make_phantom
    from hierseg.scanio import save_scan

    cfg = _resolve(args)
    out = _out_dir(args)
    extents = cfg["phantom.extents"]
    blobs = cfg["phantom.blobs"]
    base = cfg["seed"]
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    for i in range(args.count):
        rec = make_phantom(base + i, extents, blobs)
        save_scan(rec, out / f"{rec.id}.nii.gz", out / f"{rec.id}_mask.nii.gz")
    cfg.echo(out / "resolved.cfg")
    print(f"wrote {2 * args.count} files to {out}")
    return EXIT_OK


def _preprocess_one(record, cfg: RunConfig, modality: str):
    from hierseg import preprocess as pp

    steps = []
    record = pp.reorient_ras(record)
    steps.append("reorient_ras")
    record = pp.resample_isotropic(record, cfg["preprocess.target_mm"])
    steps.append(f"resample_isotropic:{cfg['preprocess.target_mm']}")
    if modality == "mri":
        record = pp.smooth_edge_preserving(
            record, cfg["preprocess.smooth_sigma_spatial"],
            cfg["preprocess.smooth_sigma_range"])
        steps.append("smooth_edge_preserving:"
                     f"{cfg['preprocess.smooth_sigma_spatial']},"
                     f"{cfg['preprocess.smooth_sigma_range']}")
        record = pp.standardize_intensity(record, cfg["preprocess.p_low"],
                                          cfg["preprocess.p_high"])
        steps.append(f"standardize_intensity:{cfg['preprocess.p_low']},"
                     f"{cfg['preprocess.p_high']}")
    record = pp.normalize_minmax(record)
    steps.append("normalize_minmax")
    return record, steps


def cmd_preprocess(args) -> int:
    from hierseg.scanio import list_scan_images, load_scan, mask_path_for, save_scan

    cfg = _resolve(args)
    out = _out_dir(args)
    in_dir = Path(args.in_dir)
    images = list_scan_images(in_dir)
    if not images:
        raise FileNotFoundError(f"no NIfTI scans found in {in_dir}")

    entries = []
    steps_used: list[str] = []
    failed = 0
    for image_path in images:
        mask_path = mask_path_for(image_path)
        entry = {"image": image_path.name}
        try:
            record = load_scan(image_path, mask_path if mask_path.exists() else None)
            record, steps_used = _preprocess_one(record, cfg, args.modality)
            outputs = [out / f"{record.id}.nii.gz"]
            if record.mask is not None:
                outputs.append(out / f"{record.id}_mask.nii.gz")
                save_scan(record, outputs[0], outputs[1])
            else:
                save_scan(record, outputs[0])
            entry.update(status="ok", outputs=[p.name for p in outputs])
        except Exception as exc:  # per-scan failure: log and continue
            failed += 1
            entry.update(status=f"failed: {exc}", outputs=[])
            print(f"ERROR processing {image_path.name}: {exc}", file=sys.stderr)
        entries.append(entry)

    digest = hashlib.sha256()
    for name in sorted(n for e in entries for n in e["outputs"]):
        digest.update((out / name).read_bytes())
    manifest = {
        "modality": args.modality,
        "steps": steps_used,
        "scans": entries,
        "content_sha256": digest.hexdigest(),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    cfg.echo(out / "resolved.cfg")
    print(f"processed {len(entries) - failed}/{len(entries)} scans "
          f"(manifest {manifest['content_sha256'][:12]})")
    return EXIT_DATA if failed else EXIT_OK


def _load_records(data_dir):
    from hierseg.scanio import load_dataset

    records = load_dataset(data_dir, require_masks=True)
    return sorted(records, key=lambda r: r.id)


def cmd_train(args) -> int:
    from hierseg.folds import make_folds
    from hierseg.model import build_model, count_parameters
    from hierseg.train import CHECKPOINT_LAST, select_epoch, train

    cfg = _resolve(args)
    out = _out_dir(args)
    records = _load_records(args.data)
    by_id = {r.id: r for r in records}
    plan = make_folds(sorted(by_id), k=cfg["cv.folds"],
                      val_fraction=cfg["train.val_fraction"], seed=cfg["seed"])
    if not 0 <= args.fold < plan.k:
        raise UsageError(f"--fold must be in [0, {plan.k})")

    model = build_model(cfg.model_config(), rng_seed=cfg["seed"])
    print(f"model {cfg['model.preset']}: {count_parameters(model):,} parameters")
    train_scans = [by_id[i] for i in plan.train_ids(args.fold)]
    val_scans = [by_id[i] for i in plan.val_ids(args.fold)]
    resume = out / CHECKPOINT_LAST if args.resume and (out / CHECKPOINT_LAST).exists() else None
    result = train(model, train_scans, val_scans, cfg.train_config(), out_dir=out,
                   resume_from=resume)
    cfg.echo(out / "resolved.cfg")
    chosen = select_epoch(result.history) if result.history.val_series() else None
    print(f"fold {args.fold}: best val DSC "
          f"{result.best_val_dsc if result.best_val_dsc is not None else float('nan'):.4f} "
          f"at epoch {chosen}")
    return EXIT_OK


def run_crossval(records, cfg: RunConfig, out: Path):
    """Train every fold, evaluate its test scans, emit per-fold and pooled reports."""
    from hierseg.folds import make_folds
    from hierseg.infer import binarize, sliding_infer
    from hierseg.metrics import evaluate_pair, make_report, pooled_report, render_table, \
        write_report_csv
    from hierseg.model import build_model, count_parameters
    from hierseg.train import train

    by_id = {r.id: r for r in records}
    plan = make_folds(sorted(by_id), k=cfg["cv.folds"],
                      val_fraction=cfg["train.val_fraction"], seed=cfg["seed"])
    train_cfg = cfg.train_config()

    fold_reports = []
    for fold in range(plan.k):
        fold_dir = out / f"fold-{fold}"
        model = build_model(cfg.model_config(), rng_seed=cfg["seed"] + fold)
        if fold == 0:
            print(f"model {cfg['model.preset']}: {count_parameters(model):,} parameters")
        result = train(model,
                       [by_id[i] for i in plan.train_ids(fold)],
                       [by_id[i] for i in plan.val_ids(fold)],
                       train_cfg, out_dir=fold_dir)
        state = result.best_state if result.best_state is not None else result.final_state
        model.load_state_dict(state)
        model.eval()
        per_scan = []
        for scan_id in sorted(plan.test_ids(fold)):
            scan = by_id[scan_id]
            probs = sliding_infer(model, scan, window=cfg["infer.window"],
                                  overlap=cfg["infer.overlap"])
            per_scan.append(evaluate_pair(binarize(probs), scan.mask, scan_id))
        report = make_report(f"fold-{fold}", per_scan)
        write_report_csv(report, out / f"fold-{fold}.csv")
        fold_reports.append(report)

    pooled = pooled_report(fold_reports)
    write_report_csv(pooled, out / "pooled.csv")
    table = render_table(fold_reports + [pooled])
    (out / "report.txt").write_text(table + "\n")
    return fold_reports, pooled, table


def cmd_crossval(args) -> int:
    cfg = _resolve(args)
    out = _out_dir(args)
    records = _load_records(args.data)
    _, pooled, table = run_crossval(records, cfg, out)
    cfg.echo(out / "resolved.cfg")
    print(table)
    print(f"pooled mean DSC: {pooled.mean_dsc:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    from hierseg import nifti
    from hierseg.infer import binarize, save_montage, sliding_infer
    from hierseg.scanio import load_scan
    from hierseg.train import model_from_checkpoint

    cfg = _resolve(args)
    out = _out_dir(args)
    model = model_from_checkpoint(args.checkpoint)
    scan = load_scan(args.scan)
    probs = sliding_infer(model, scan, window=cfg["infer.window"],
                          overlap=cfg["infer.overlap"])
    mask = binarize(probs)
    affine = nifti.affine_from_axcodes(scan.orientation, scan.image.spacing)
    pred_path = out / f"{scan.id}_pred.nii.gz"
    nifti.write_nifti(pred_path, mask.values, affine, dtype="uint8")
    if args.montage:
        save_montage(scan.image, mask, out / f"{scan.id}_montage.png")
    cfg.echo(out / "resolved.cfg")
    print(f"wrote {pred_path} (foreground voxels: {mask.foreground_count()})")
    return EXIT_OK


def cmd_eval(args) -> int:
    import numpy as np

    from hierseg import nifti
    from hierseg.metrics import evaluate_pair
    from hierseg.volume import BinaryMask

    def load_mask(path):
        data, affine = nifti.read_nifti(path)
        spacing = tuple(float(s) for s in np.linalg.norm(affine[:3, :3], axis=0))
        return BinaryMask((data > 0.5).astype(np.uint8), spacing)

    pred = load_mask(args.pred)
    gt = load_mask(args.gt)
    metrics = evaluate_pair(pred, gt, scan_id=Path(args.pred).name)
    print(f"DSC {metrics.dsc:.4f}  PPV {metrics.ppv:.4f}  SENS {metrics.sensitivity:.4f}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    from hierseg.nifti import NiftiError
    from hierseg.scanio import DataError
    from hierseg.train import NumericalError

    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, NiftiError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
