"""Report emission: aggregate statistic tables and greyscale image dumps.

Images are written as 16-bit binary PGM (P5), each panel scaled to its own
peak so zero maps to black and the maximum to white.
"""

from __future__ import annotations

import os

import numpy as np

from .csvio import STUDY_HEADER, read_rows, write_rows
from .errors import DataError

AGGREGATE_HEADER = ("study", "variant", "n",
                    "nrmse_mean", "nrmse_std", "nrmse_min", "nrmse_max",
                    "psnr_mean", "psnr_std", "psnr_min", "psnr_max",
                    "ssim_mean", "ssim_std", "ssim_min", "ssim_max")


def write_pgm(path, image: np.ndarray, peak: float | None = None) -> None:
    """16-bit greyscale PGM; nonpositive peaks produce an all-black image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise DataError(f"PGM dump expects a 2-d image, got shape {img.shape}")
    peak = float(img.max()) if peak is None else float(peak)
    if peak <= 0:
        quant = np.zeros(img.shape, dtype=np.uint16)
    else:
        quant = np.clip(np.round(img / peak * 65535.0), 0, 65535).astype(np.uint16)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        f.write(quant.astype(">u2").tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise DataError(f"{path}: not a binary PGM file")
    w, h = (int(t) for t in parts[1].split())
    maxval = int(parts[2])
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(parts[3], dtype=dtype, count=w * h).reshape(h, w)
    return img.astype(np.uint16)


def dump_image_panel(outdir, reference: np.ndarray, low_dose: np.ndarray,
                     prediction: np.ndarray) -> dict:
    """Write reference/low-dose/prediction plus the |prediction-reference| map."""
    os.makedirs(outdir, exist_ok=True)
    error_map = np.abs(np.asarray(prediction, dtype=np.float64)
                       - np.asarray(reference, dtype=np.float64))
    panels = {
        "reference": (reference, None),
        "low_dose": (low_dose, None),
        "prediction": (prediction, None),
        "error_map": (error_map, None),
    }
    paths = {}
    for name, (img, peak) in panels.items():
        path = os.path.join(outdir, f"{name}.pgm")
        write_pgm(path, img, peak)
        paths[name] = path
    return paths


def _stats(values):
    arr = np.asarray(values, dtype=np.float64)
    return (float(arr.mean()), float(arr.std()), float(arr.min()), float(arr.max()))


def aggregate_study(csv_path) -> list[tuple]:
    """Per-variant mean/std/min/max over the ok rows of one study CSV."""
    rows = read_rows(csv_path, STUDY_HEADER)
    if not rows:
        raise DataError(f"{csv_path}: study CSV has no rows")
    by_variant: dict[tuple, list[dict]] = {}
    for row in rows:
        if row["status"] != "ok":
            continue
        by_variant.setdefault((row["study"], row["variant"]), []).append(row)
    out = []
    for (study, variant), group in sorted(by_variant.items()):
        metrics = {name: [float(r[name]) for r in group]
                   for name in ("nrmse", "psnr_db", "ssim")}
        out.append((study, variant, len(group),
                    *_stats(metrics["nrmse"]), *_stats(metrics["psnr_db"]),
                    *_stats(metrics["ssim"])))
    return out


def write_aggregate_table(out_path, csv_paths) -> list[tuple]:
    rows = []
    for path in csv_paths:
        rows.extend(aggregate_study(path))
    write_rows(out_path, AGGREGATE_HEADER, rows)
    return rows
