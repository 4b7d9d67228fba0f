"""Training loop with on-the-fly augmentation and leave-one-out cross validation.

Each epoch shuffles the training slices, assembles 2.5D stacks from the
low-dose volume with the standard-dose center slice as target, applies random
flips/transposition, and takes one RMSprop step per batch under the scheduled
learning rate. Held-out metrics are recorded every epoch.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import PairedDataset, SubjectData, aggregate_rows, derive_seed
from .errors import ConfigError, DataError, DegenerateInputError, NumericsError, TrainingAborted
from .losses import LOSS_NAMES, SSIMParams, make_loss
from .metrics import MetricsRecord, estimate_brain_mask, masked_ssim, nrmse, psnr
from .network import Network, batch_from_stacks, stack_slices
from .optim import OptimizerState, lr_at_epoch, rmsprop_step
from .tensor import Tape, Tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 120
    lr_start: float = 1e-3
    lr_end: float = 2.5e-4
    batch_size: int = 8
    loss: str = "l1"
    seed: int = 0
    rho: float = 0.9
    eps: float = 1e-8
    augment_enabled: bool = True
    msssim_levels: int = 3

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.lr_end > self.lr_start:
            raise ConfigError("lr_end must not exceed lr_start")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.loss not in LOSS_NAMES:
            raise ConfigError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")


@dataclass(frozen=True)
class Fold:
    train_subjects: tuple
    test_subject: str


@dataclass
class HistoryRecord:
    epoch: int
    lr: float
    train_loss: float
    val_nrmse: float
    val_psnr: float
    val_ssim: float

    def as_row(self):
        return (self.epoch, self.lr, self.train_loss,
                self.val_nrmse, self.val_psnr, self.val_ssim)


def loocv_folds(subject_ids) -> list[Fold]:
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate subject ids")
    if len(ids) < 2:
        raise ConfigError("leave-one-out needs >= 2 subjects")
    return [Fold(train_subjects=tuple(s for s in ids if s != test), test_subject=test)
            for test in ids]


# ---------------------------------------------------------------------------
# augmentation

def apply_dihedral(arrays, flip_h: bool, flip_v: bool, transpose: bool):
    """Apply the same flips/transposition to every array (channels last two axes)."""
    out = []
    for a in arrays:
        if transpose and a.shape[-1] != a.shape[-2]:
            raise ConfigError("transpose augmentation requires square slices")
        b = a
        if flip_h:
            b = b[..., ::-1]
        if flip_v:
            b = b[..., ::-1, :]
        if transpose:
            b = b.swapaxes(-1, -2)
        out.append(np.ascontiguousarray(b))
    return out


def augment(sample, rng):
    """Random flip-x / flip-y / transpose (p=0.5 each), identical across the
    input channels and the target."""
    stack, target = sample
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    transpose = rng.random() < 0.5
    stack, target = apply_dihedral([stack, target], flip_h, flip_v, transpose)
    return stack, target


# ---------------------------------------------------------------------------
# evaluation

def predict_volume(net: Network, volume: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """Eval-mode prediction for every slice of a low-dose volume."""
    n_slices = net.config.n_slices
    stacks = [stack_slices(volume, z, n_slices) for z in range(volume.shape[0])]
    preds = np.empty_like(volume, dtype=np.float32)
    for start in range(0, len(stacks), batch_size):
        chunk = stacks[start:start + batch_size]
        out = net.forward(batch_from_stacks(chunk), "eval")
        preds[start:start + len(chunk)] = out.data[:, 0]
    return preds


def evaluate(net: Network, subject: SubjectData, dose_fraction: float,
             ssim_params: SSIMParams | None = None) -> list[MetricsRecord]:
    """Masked metrics for the low-dose baseline and the network prediction."""
    low = subject.low.get(dose_fraction)
    if low is None:
        raise DataError(f"subject {subject.subject_id} has no dose fraction {dose_fraction}")
    ref_volume = subject.standard
    if ssim_params is None:
        ssim_params = SSIMParams.for_dynamic_range(float(ref_volume.max()))
    preds = predict_volume(net, low)
    drf = 1.0 / dose_fraction
    records = []
    for k, z in enumerate(subject.slices_kept):
        ref = ref_volume[k]
        try:
            mask = estimate_brain_mask(ref)
        except DegenerateInputError:
            logger.warning("subject %s slice %d: empty mask, skipped",
                           subject.subject_id, z)
            continue
        for method, img in (("low-dose", low[k]), ("proposed", preds[k])):
            records.append(MetricsRecord(
                subject=subject.subject_id, slice_index=z, method=method, drf=drf,
                nrmse=nrmse(img, ref, mask), psnr_db=psnr(img, ref, mask),
                ssim=masked_ssim(img, ref, ssim_params, mask)))
    return records


def _mean_metrics(records, method):
    rows = [r for r in records if r.method == method]
    return (float(np.mean([r.nrmse for r in rows])),
            float(np.mean([r.psnr_db for r in rows])),
            float(np.mean([r.ssim for r in rows])))


# ---------------------------------------------------------------------------
# training

def _snapshot(net: Network):
    params = {p.name: p.tensor.data.copy() for p in net.parameters()}
    bn = {name: (state.running_mean.copy(), state.running_var.copy(), state.initialized)
          for name, state in net.bn_layers()}
    return params, bn


def _restore(net: Network, snapshot):
    params, bn = snapshot
    for p in net.parameters():
        p.tensor.data = params[p.name].copy()
    for name, state in net.bn_layers():
        mean, var, initialized = bn[name]
        state.running_mean = mean.copy()
        state.running_var = var.copy()
        state.initialized = initialized


def train(net: Network, dataset: PairedDataset, fold: Fold, config: TrainConfig,
          dose_fraction: float | None = None, checkpoint_dir: str | None = None,
          log_every: int = 10) -> list[HistoryRecord]:
    """Train one LOOCV fold; returns the per-epoch history."""
    if dose_fraction is None:
        if len(dataset.dose_fractions) != 1:
            raise ConfigError("dose_fraction must be given for multi-dose datasets")
        dose_fraction = dataset.dose_fractions[0]

    train_subjects = [dataset.subject(s) for s in fold.train_subjects]
    test_subject = dataset.subject(fold.test_subject)
    samples = [(s, k) for s in train_subjects for k in range(len(s.slices_kept))]
    if not samples:
        raise DataError("no training slices available")

    ref_peak = max(float(s.standard.max()) for s in train_subjects)
    ssim_params = SSIMParams.for_dynamic_range(ref_peak)
    loss_params = ssim_params if config.loss != "msssim" else \
        SSIMParams.for_dynamic_range(ref_peak, levels=config.msssim_levels)
    loss_fn = make_loss(config.loss, loss_params)
    params = net.parameters()
    state = OptimizerState(params)
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, 0xA))
    augment_rng = np.random.default_rng(derive_seed(config.seed, 0xB))

    n_slices = net.config.n_slices
    history: list[HistoryRecord] = []
    last_good = _snapshot(net)

    def abort(reason):
        path = None
        if checkpoint_dir:
            from .checkpoint import save_checkpoint

            _restore(net, last_good)
            path = os.path.join(checkpoint_dir, "last-good")
            save_checkpoint(path, net, meta={"aborted": reason})
        raise TrainingAborted(f"training aborted: {reason}", checkpoint_path=path)

    for epoch in range(config.epochs):
        lr = lr_at_epoch(epoch, config.epochs, config.lr_start, config.lr_end)
        order = shuffle_rng.permutation(len(samples))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            xs, ys = [], []
            for i in order[start:start + config.batch_size]:
                subj, k = samples[i]
                stack = stack_slices(subj.low[dose_fraction], k, n_slices).channels
                target = subj.standard[k][None]
                if config.augment_enabled:
                    stack, target = augment((stack, target), augment_rng)
                xs.append(stack)
                ys.append(target)
            x = Tensor(np.stack(xs))
            y = Tensor(np.stack(ys))
            with Tape() as tape:
                out = net.forward(x, "train")
                loss = loss_fn(out, y)
                value = loss.item()
                if not math.isfinite(value):
                    abort(f"non-finite loss at epoch {epoch}")
                tape.backward(loss)
            try:
                rmsprop_step(params, state, lr, config.rho, config.eps)
            except NumericsError as exc:
                abort(str(exc))
            epoch_losses.append(value)

        val_records = evaluate(net, test_subject, dose_fraction, ssim_params)
        v_nrmse, v_psnr, v_ssim = _mean_metrics(val_records, "proposed")
        history.append(HistoryRecord(epoch=epoch, lr=lr,
                                     train_loss=float(np.mean(epoch_losses)),
                                     val_nrmse=v_nrmse, val_psnr=v_psnr, val_ssim=v_ssim))
        last_good = _snapshot(net)
        if log_every and (epoch % log_every == 0 or epoch == config.epochs - 1):
            logger.info("fold[test=%s] epoch %d lr=%.2e loss=%.4f val_psnr=%.2f",
                        fold.test_subject, epoch, lr, history[-1].train_loss, v_psnr)

    if checkpoint_dir:
        from .checkpoint import save_checkpoint

        save_checkpoint(os.path.join(checkpoint_dir, "final"), net,
                        meta={"test_subject": fold.test_subject,
                              "dose_fraction": dose_fraction,
                              "epochs": config.epochs, "loss": config.loss})
    return history


def fold_summary(records: list[MetricsRecord]) -> dict:
    """Mean metrics per method plus the improvement deltas."""
    low = _mean_metrics(records, "low-dose")
    prop = _mean_metrics(records, "proposed")
    return {
        "low": {"nrmse": low[0], "psnr_db": low[1], "ssim": low[2]},
        "proposed": {"nrmse": prop[0], "psnr_db": prop[1], "ssim": prop[2]},
        "psnr_gain_db": prop[1] - low[1],
        "ssim_gain": prop[2] - low[2],
    }


def metrics_rows_with_aggregates(records: list[MetricsRecord]):
    rows = [r.as_row() for r in records]
    rows.extend(aggregate_rows(records))
    return rows
