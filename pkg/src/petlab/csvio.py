"""Strict CSV emission/parsing for metric and study tables.

Fixed headers, '.' decimal separator, repr-based float formatting so every
value round-trips exactly through the file.
"""

from __future__ import annotations

import csv
import math

from .errors import DataError

METRICS_HEADER = ("subject", "slice", "method", "drf", "nrmse", "psnr_db", "ssim")
HISTORY_HEADER = ("epoch", "lr", "train_loss", "val_nrmse", "val_psnr", "val_ssim")
STUDY_HEADER = ("study", "variant", "fold", "status", "nrmse", "psnr_db", "ssim", "note")


def format_value(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_rows(path, header) -> list[dict]:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        got = next(reader, None)
        if got is None or tuple(got) != tuple(header):
            raise DataError(f"{path}: expected header {','.join(header)}, got {got}")
        out = []
        for row in reader:
            if len(row) != len(header):
                raise DataError(f"{path}: row width {len(row)} != header width {len(header)}")
            out.append(dict(zip(header, row)))
        return out
