"""Command-line front end: simulate, train, evaluate, ablate, report.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 runtime failure.
The PETLAB_THREADS environment variable caps worker parallelism.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .checkpoint import load_checkpoint
from .config import ExperimentConfig, load_config
from .counts import DoseConfig
from .csvio import HISTORY_HEADER, METRICS_HEADER, STUDY_HEADER, write_rows
from .dataset import build_dataset, derive_seed, load_dataset, save_dataset
from .errors import ConfigError, DataError, PetlabError
from .network import build_network
from .phantom import generate_phantom
from .report import dump_image_panel, write_aggregate_table
from .train import (Fold, evaluate, fold_summary, loocv_folds,
                    metrics_rows_with_aggregates, predict_volume, train)

logger = logging.getLogger("petlab")

STUDY_IDS = {"skip": 1, "slices": 2, "depth": 3, "loss": 4}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def resolve_jobs(requested: int | None) -> int:
    jobs = max(1, requested or 1)
    cap = os.environ.get("PETLAB_THREADS")
    if cap:
        try:
            jobs = max(1, min(jobs, int(cap)))
        except ValueError:
            raise ConfigError(f"PETLAB_THREADS must be an integer, got {cap!r}") from None
    return jobs


def _select_folds(folds, spec: str):
    if spec == "all":
        return list(range(len(folds)))
    try:
        idx = int(spec)
    except ValueError:
        raise ConfigError(f"--fold must be an integer or 'all', got {spec!r}") from None
    if not (0 <= idx < len(folds)):
        raise ConfigError(f"fold id {idx} out of range 0..{len(folds) - 1}")
    return [idx]


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    out = args.out or cfg.data_dir
    if os.path.exists(out) and os.listdir(out) and not args.force:
        raise ConfigError(f"output directory {out!r} already exists; use --force")
    phantoms = [
        generate_phantom(derive_seed(cfg.seed, 0x50, i), cfg.volume_depth,
                         cfg.volume_size, cfg.volume_size, cfg.lesions)
        for i in range(cfg.subjects)
    ]
    ds = build_dataset(phantoms, cfg.acquisition(), cfg.doses(), cfg.recon(),
                       keep_sinograms=cfg.save_sinograms)
    manifest = save_dataset(ds, out)
    n_volumes = len(ds.subjects) * (1 + len(ds.dose_fractions))
    print(f"simulate: wrote {len(ds.subjects)} subjects "
          f"({n_volumes} volumes) to {out}")
    print(f"simulate: manifest {manifest}")
    return 0


# ---------------------------------------------------------------------------
# train

def _train_single_fold(config_path: str, dataset_dir: str, fold_idx: int,
                       out_dir: str) -> dict:
    cfg = load_config(config_path)
    ds = load_dataset(dataset_dir)
    folds = loocv_folds(ds.subject_ids)
    fold = folds[fold_idx]
    dose = cfg.resolve_train_dose()
    net = build_network(cfg.network(seed=derive_seed(cfg.seed, 0x71, fold_idx)))
    train_cfg = cfg.train(seed=derive_seed(cfg.seed, 0x72, fold_idx))
    fold_dir = os.path.join(out_dir, f"fold{fold_idx}")
    os.makedirs(fold_dir, exist_ok=True)
    history = train(net, ds, fold, train_cfg, dose_fraction=dose,
                    checkpoint_dir=fold_dir)
    write_rows(os.path.join(fold_dir, "history.csv"), HISTORY_HEADER,
               [h.as_row() for h in history])
    records = evaluate(net, ds.subject(fold.test_subject), dose)
    write_rows(os.path.join(fold_dir, "metrics.csv"), METRICS_HEADER,
               metrics_rows_with_aggregates(records))
    summary = fold_summary(records)
    summary.update({"fold": fold_idx, "test_subject": fold.test_subject})
    return summary


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    dataset_dir = args.dataset or cfg.data_dir
    if not os.path.exists(os.path.join(dataset_dir, "manifest.json")):
        raise DataError(f"no dataset at {dataset_dir!r}; run `petlab simulate` first")
    ds = load_dataset(dataset_dir)
    folds = loocv_folds(ds.subject_ids)
    indices = _select_folds(folds, args.fold)
    jobs = resolve_jobs(args.jobs)
    os.makedirs(args.out, exist_ok=True)

    tasks = [(args.config, dataset_dir, i, args.out) for i in indices]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            summaries = list(pool.map(_train_fold_star, tasks))
    else:
        summaries = [_train_single_fold(*t) for t in tasks]
    for s in summaries:
        print(f"train: fold {s['fold']} (test {s['test_subject']}): "
              f"psnr {s['low']['psnr_db']:.2f} -> {s['proposed']['psnr_db']:.2f} dB "
              f"(gain {s['psnr_gain_db']:+.2f}), "
              f"ssim {s['low']['ssim']:.3f} -> {s['proposed']['ssim']:.3f}")
    return 0


def _train_fold_star(t):
    return _train_single_fold(*t)


# ---------------------------------------------------------------------------
# evaluate

def cmd_evaluate(args) -> int:
    net, meta = load_checkpoint(args.checkpoint)
    ds = load_dataset(args.dataset)
    subject_id = args.subject or meta.get("test_subject")
    if not subject_id:
        raise ConfigError("checkpoint has no test_subject; pass --subject")
    dose = args.dose if args.dose is not None else meta.get("dose_fraction")
    if dose is None:
        if len(ds.dose_fractions) != 1:
            raise ConfigError("dataset has several doses; pass --dose")
        dose = ds.dose_fractions[0]
    records = evaluate(net, ds.subject(subject_id), float(dose))
    write_rows(args.out, METRICS_HEADER, metrics_rows_with_aggregates(records))
    summary = fold_summary(records)
    print(f"evaluate: {subject_id} drf {1 / float(dose):g}: "
          f"psnr {summary['low']['psnr_db']:.2f} -> "
          f"{summary['proposed']['psnr_db']:.2f} dB, wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# ablate

def study_variants(study: str, cfg: ExperimentConfig) -> list[dict]:
    """Enumerate variants with feasibility for the configured image size."""
    size = cfg.volume_size
    variants = []
    if study == "skip":
        for mode in ("both", "concat_only", "residual_only", "none"):
            variants.append({"variant": mode, "net": {"skip_mode": mode},
                             "train": {}, "feasible": True, "reason": ""})
    elif study == "slices":
        for n in (1, 3, 5, 7):
            feasible = n <= cfg.volume_depth
            variants.append({"variant": f"slices{n}", "net": {"n_slices": n},
                             "train": {}, "feasible": feasible,
                             "reason": "" if feasible else
                             f"n_slices {n} exceeds volume depth {cfg.volume_depth}"})
    elif study == "depth":
        for n_p in (2, 3, 4, 5):
            for n_c in (1, 2, 3):
                reason = ""
                if size % (2 ** n_p):
                    reason = f"image size {size} not divisible by 2^{n_p}"
                elif size // (2 ** n_p) < 4:
                    b = size // (2 ** n_p)
                    reason = f"bottleneck {b}x{b} below the 4x4 minimum"
                variants.append({"variant": f"np{n_p}_nc{n_c}",
                                 "net": {"n_p": n_p, "n_c": n_c}, "train": {},
                                 "feasible": not reason, "reason": reason})
    elif study == "loss":
        for loss in ("l1", "mse", "ssim", "msssim"):
            reason = ""
            if loss == "ssim" and size < 11:
                reason = f"image size {size} smaller than the 11x11 window"
            if loss == "msssim" and size // (2 ** (cfg.msssim_levels - 1)) < 11:
                reason = (f"K={cfg.msssim_levels} infeasible: coarsest level below "
                          f"the 11x11 window")
            variants.append({"variant": loss, "net": {}, "train": {"loss": loss},
                             "feasible": not reason, "reason": reason})
    else:
        raise ConfigError(f"unknown study {study!r}")
    return variants


def _ablate_task(config_path: str, dataset_dir: str, study: str, variant_idx: int,
                 fold_idx: int):
    cfg = load_config(config_path)
    ds = load_dataset(dataset_dir)
    variant = study_variants(study, cfg)[variant_idx]
    fold = loocv_folds(ds.subject_ids)[fold_idx]
    dose = cfg.resolve_train_dose()
    seed = derive_seed(cfg.seed, STUDY_IDS[study], variant_idx, fold_idx)
    net = build_network(cfg.network(seed=seed, **variant["net"]))
    train_cfg = cfg.train(seed=seed, **variant["train"])
    train(net, ds, fold, train_cfg, dose_fraction=dose, log_every=0)
    records = evaluate(net, ds.subject(fold.test_subject), dose)
    prop = fold_summary(records)["proposed"]
    return (study, variant["variant"], fold_idx, "ok",
            prop["nrmse"], prop["psnr_db"], prop["ssim"], "")


def _ablate_task_star(t):
    return _ablate_task(*t)


def cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    dataset_dir = args.dataset or cfg.data_dir
    if not os.path.exists(os.path.join(dataset_dir, "manifest.json")):
        raise DataError(f"no dataset at {dataset_dir!r}; run `petlab simulate` first")
    ds = load_dataset(dataset_dir)
    folds = loocv_folds(ds.subject_ids)
    fold_indices = _select_folds(folds, args.fold)
    variants = study_variants(args.study, cfg)
    jobs = resolve_jobs(args.jobs)

    tasks = [(args.config, dataset_dir, args.study, vi, fi)
             for vi, v in enumerate(variants) if v["feasible"]
             for fi in fold_indices]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_ablate_task_star, tasks))
    else:
        results = [_ablate_task(*t) for t in tasks]

    by_key = {(r[1], r[2]): r for r in results}
    rows = []
    for vi, v in enumerate(variants):
        if not v["feasible"]:
            rows.append((args.study, v["variant"], "", "skipped", "", "", "",
                         v["reason"]))
            continue
        for fi in fold_indices:
            rows.append(by_key[(v["variant"], fi)])

    os.makedirs(args.out, exist_ok=True)
    out_csv = os.path.join(args.out, f"{args.study}.csv")
    write_rows(out_csv, STUDY_HEADER, rows)
    n_ok = sum(1 for r in rows if r[3] == "ok")
    n_skip = sum(1 for r in rows if r[3] == "skipped")
    print(f"ablate[{args.study}]: {len(variants)} variants, {n_ok} trained rows, "
          f"{n_skip} skipped; wrote {out_csv}")
    return 0


# ---------------------------------------------------------------------------
# report

def cmd_report(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    agg_path = os.path.join(args.out, "aggregates.csv")
    rows = write_aggregate_table(agg_path, args.study_csv)
    print(f"report: {len(rows)} aggregate rows -> {agg_path}")

    if args.dataset and args.checkpoint:
        net, meta = load_checkpoint(args.checkpoint)
        ds = load_dataset(args.dataset)
        subject_id = args.subject or meta.get("test_subject") or ds.subject_ids[0]
        subject = ds.subject(subject_id)
        dose = meta.get("dose_fraction") or ds.dose_fractions[0]
        low = subject.low[float(dose)]
        k = args.slice if args.slice is not None else len(subject.slices_kept) // 2
        if not (0 <= k < len(subject.slices_kept)):
            raise ConfigError(f"--slice {k} out of range 0..{len(subject.slices_kept) - 1}")
        pred = predict_volume(net, low)
        paths = dump_image_panel(os.path.join(args.out, f"{subject_id}_slice{k}"),
                                 reference=subject.standard[k], low_dose=low[k],
                                 prediction=pred[k])
        print(f"report: image panel for {subject_id} slice {k}: "
              f"{', '.join(sorted(paths))}")
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="petlab",
                     description="Desk-scale low-dose PET denoising laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate phantoms and paired volumes")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train leave-one-out folds")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--fold", default="all")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--subject", default=None)
    p.add_argument("--dose", type=float, default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="run an ablation study")
    p.add_argument("--study", required=True, choices=sorted(STUDY_IDS))
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--fold", default="all")
    p.add_argument("--jobs", type=int, default=None)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="aggregate study CSVs and dump image panels")
    p.add_argument("--study-csv", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--subject", default=None)
    p.add_argument("--slice", type=int, default=None)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("PETLAB_LOGLEVEL", "INFO"),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except PetlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001
        print(f"unexpected failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
