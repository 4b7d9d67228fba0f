"""Paired low-dose / standard-dose dataset construction and persistence.

For each subject, the standard-dose count realization is acquired once and
every reduced dose is obtained by binomial thinning of those same counts, so
the pairs share one acquisition randomness lineage. Pure-air slices at the
volume ends are removed before acquisition.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .counts import AcquisitionConfig, DoseConfig, SinogramCounts, acquire_counts, thin_counts
from .csvio import METRICS_HEADER, write_rows
from .errors import ConfigError, DataError, DegenerateInputError
from .losses import SSIMParams
from .metrics import MetricsRecord, estimate_brain_mask, masked_ssim, nrmse, psnr
from .phantom import PhantomVolume, air_slice_mask
from .projector import get_geometry
from .recon import ReconConfig, osem_reconstruct

logger = logging.getLogger(__name__)


def drf_tag(fraction: float) -> str:
    return f"drf{round(1.0 / fraction)}"


def derive_seed(base: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=int(base), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


@dataclass
class SubjectData:
    subject_id: str
    slices_kept: list[int]
    phantom: np.ndarray
    standard: np.ndarray
    low: dict[float, np.ndarray]
    sinograms: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class PairedDataset:
    subjects: list[SubjectData]
    acq: AcquisitionConfig
    recon: ReconConfig
    dose_fractions: list[float]
    baseline: list[MetricsRecord] = field(default_factory=list)

    def subject(self, subject_id: str) -> SubjectData:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise DataError(f"unknown subject {subject_id!r}")

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]


def _baseline_records(subject: SubjectData, fraction: float) -> list[MetricsRecord]:
    rows = []
    ref_volume = subject.standard
    params = SSIMParams.for_dynamic_range(float(ref_volume.max()))
    for k, z in enumerate(subject.slices_kept):
        ref = ref_volume[k]
        try:
            mask = estimate_brain_mask(ref)
        except DegenerateInputError:
            logger.warning("subject %s slice %d: empty mask, skipped", subject.subject_id, z)
            continue
        low = subject.low[fraction][k]
        rows.append(MetricsRecord(
            subject=subject.subject_id, slice_index=z, method="low-dose",
            drf=1.0 / fraction, nrmse=nrmse(low, ref, mask), psnr_db=psnr(low, ref, mask),
            ssim=masked_ssim(low, ref, params, mask)))
    return rows


def build_dataset(phantoms: list[PhantomVolume], acq: AcquisitionConfig,
                  doses: list[DoseConfig], recon: ReconConfig,
                  keep_sinograms: bool = False) -> PairedDataset:
    """Acquire, thin, and reconstruct paired volumes for every phantom."""
    if len(phantoms) < 2:
        raise ConfigError("dataset needs >= 2 phantoms (leave-one-out requires >= 2 subjects)")
    shapes = {p.voxels.shape for p in phantoms}
    if len(shapes) != 1:
        raise ConfigError(f"phantoms must share one shape, got {sorted(shapes)}")
    d, h, w = phantoms[0].voxels.shape
    geo = get_geometry(h, w, acq.n_angles, acq.n_bins)

    subjects = []
    baseline = []
    for si, ph in enumerate(phantoms):
        sid = f"s{si:02d}"
        vol = ph.voxels
        kept = [int(z) for z in np.where(~air_slice_mask(vol))[0]]
        if not kept:
            raise DataError(f"phantom {sid} contains only air")
        expected = np.stack([geo.forward(vol[z]) for z in kept])
        total = acq.total_counts * len(kept)
        counts_std = acquire_counts(expected, total, derive_seed(acq.seed, si, 0))

        def recon_stack(counts: SinogramCounts, tag: str) -> np.ndarray:
            out = np.empty((len(kept), h, w), dtype=np.float32)
            for k in range(len(kept)):
                img = osem_reconstruct(counts.counts[k], geo, recon,
                                       provenance={"subject": sid, "dose": tag})
                out[k] = img.pixels
            return out

        standard = recon_stack(counts_std, "drf1")
        low = {}
        sinos = {"drf1": counts_std.counts} if keep_sinograms else {}
        for di, dose in enumerate(doses):
            thinned = thin_counts(counts_std, dose, derive_seed(acq.seed, si, 1 + di))
            # dose normalization: a p-fraction acquisition estimates p*activity,
            # so the reconstruction is rescaled into standard-dose units
            low[dose.fraction] = recon_stack(thinned, drf_tag(dose.fraction)) / dose.fraction
            if keep_sinograms:
                sinos[drf_tag(dose.fraction)] = thinned.counts

        subject = SubjectData(subject_id=sid, slices_kept=kept,
                              phantom=vol[kept].astype(np.float32),
                              standard=standard, low=low, sinograms=sinos)
        subjects.append(subject)
        for dose in doses:
            baseline.extend(_baseline_records(subject, dose.fraction))
        logger.info("built subject %s: %d slices, doses %s", sid, len(kept),
                    [drf_tag(dz.fraction) for dz in doses])

    return PairedDataset(subjects=subjects, acq=acq, recon=recon,
                         dose_fractions=[dz.fraction for dz in doses], baseline=baseline)


# ---------------------------------------------------------------------------
# persistence

def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def save_dataset(ds: PairedDataset, outdir: str) -> str:
    """Persist a dataset directory tree; returns the manifest path."""
    from .tensorfile import write_tensor

    os.makedirs(os.path.join(outdir, "volumes"), exist_ok=True)
    os.makedirs(os.path.join(outdir, "phantoms"), exist_ok=True)
    manifest = {
        "format": 1,
        "acquisition": {"n_angles": ds.acq.n_angles, "n_bins": ds.acq.n_bins,
                        "total_counts": ds.acq.total_counts, "seed": ds.acq.seed},
        "reconstruction": {"n_subsets": ds.recon.n_subsets,
                           "n_iterations": ds.recon.n_iterations,
                           "init_value": ds.recon.init_value},
        "dose_fractions": ds.dose_fractions,
        "subjects": [],
    }
    for s in ds.subjects:
        entry = {"id": s.subject_id, "slices_kept": s.slices_kept,
                 "files": {}, "sha256": {}}
        paths = {"phantom": os.path.join("phantoms", f"{s.subject_id}.tsr"),
                 "drf1": os.path.join("volumes", f"{s.subject_id}_drf1.tsr")}
        arrays = {"phantom": s.phantom, "drf1": s.standard}
        for fraction in ds.dose_fractions:
            tag = drf_tag(fraction)
            paths[tag] = os.path.join("volumes", f"{s.subject_id}_{tag}.tsr")
            arrays[tag] = s.low[fraction]
        for tag, sino in s.sinograms.items():
            os.makedirs(os.path.join(outdir, "sinograms"), exist_ok=True)
            paths[f"sino_{tag}"] = os.path.join("sinograms", f"{s.subject_id}_{tag}.tsr")
            arrays[f"sino_{tag}"] = sino
        for tag, rel in paths.items():
            full = os.path.join(outdir, rel)
            write_tensor(full, arrays[tag])
            entry["files"][tag] = rel
            entry["sha256"][tag] = _sha256(full)
        manifest["subjects"].append(entry)

    rows = [r.as_row() for r in ds.baseline]
    rows.extend(aggregate_rows(ds.baseline))
    write_rows(os.path.join(outdir, "baseline.csv"), METRICS_HEADER, rows)

    manifest_path = os.path.join(outdir, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


def aggregate_rows(records: list[MetricsRecord]):
    """Per (subject, method, drf) mean rows, slice column set to 'mean'."""
    groups: dict[tuple, list[MetricsRecord]] = {}
    for r in records:
        groups.setdefault((r.subject, r.method, r.drf), []).append(r)
    rows = []
    for (subject, method, drf), rs in sorted(groups.items()):
        rows.append((subject, "mean", method, drf,
                     float(np.mean([r.nrmse for r in rs])),
                     float(np.mean([r.psnr_db for r in rs])),
                     float(np.mean([r.ssim for r in rs]))))
    return rows


def load_dataset(path: str) -> PairedDataset:
    from .tensorfile import read_tensor

    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no dataset manifest at {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    acq = AcquisitionConfig(**manifest["acquisition"])
    recon = ReconConfig(**manifest["reconstruction"])
    fractions = [float(v) for v in manifest["dose_fractions"]]
    subjects = []
    for entry in manifest["subjects"]:
        files = entry["files"]
        low = {}
        for fraction in fractions:
            tag = drf_tag(fraction)
            low[fraction] = read_tensor(os.path.join(path, files[tag]))
        subjects.append(SubjectData(
            subject_id=entry["id"], slices_kept=[int(z) for z in entry["slices_kept"]],
            phantom=read_tensor(os.path.join(path, files["phantom"])),
            standard=read_tensor(os.path.join(path, files["drf1"])), low=low))
    return PairedDataset(subjects=subjects, acq=acq, recon=recon, dose_fractions=fractions)
