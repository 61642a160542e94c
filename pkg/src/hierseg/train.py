"""Optimization loop with validation-based epoch selection and exact resume.

One epoch is one pass over the training scans: each scan contributes one
augmented crop per epoch, crops are grouped into mini-batches and stepped
with Adam on the multi-part Dice loss.  Validation DSC is computed through
the full sliding-window inference path, and the best-so-far validation
checkpoint is what cross-validation later evaluates on the test fold.

Determinism contract: augmentation draws come from a single NumPy generator
whose state is checkpointed, batches are assembled in a fixed order, and no
stochastic torch op runs during training, so a resumed run continues the
loss curve of an uninterrupted one exactly.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from hierseg.augment import AugmentConfig, augment
from hierseg.infer import sliding_infer, binarize
from hierseg.losses import hierarchical_loss
from hierseg.metrics import confusion_counts, dsc
from hierseg.model import HierSegNet, build_model, config_from_dict, config_to_dict

CHECKPOINT_LAST = "last.pt"
CHECKPOINT_BEST = "best.pt"


class NumericalError(RuntimeError):
    """Training diverged: the loss became non-finite."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 3000
    crop_size: tuple[int, int, int] = (128, 128, 48)
    betas: tuple[float, float] = (0.9, 0.999)
    flip: bool = True
    rotate: bool = True
    random_crop: bool = True
    fg_bias: float = 0.5
    loss_eps: float = 1e-5
    seed: int = 0
    val_every: int = 1
    window: tuple[int, int, int] = (256, 256, 48)
    overlap: float = 0.25

    def augment_config(self) -> AugmentConfig:
        return AugmentConfig(crop_size=tuple(self.crop_size), flip=self.flip,
                             rotate=self.rotate, random_crop=self.random_crop,
                             fg_bias=self.fg_bias)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_dsc: float | None
    seconds: float
    rng_digest: str


@dataclass
class TrainingHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        if self.records and record.epoch != self.records[-1].epoch + 1:
            raise ValueError("epoch numbering must be contiguous")
        self.records.append(record)

    def val_series(self) -> list[tuple[int, float]]:
        return [(r.epoch, r.val_dsc) for r in self.records if r.val_dsc is not None]

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_dsc,seconds"]
        for r in self.records:
            val = f"{r.val_dsc:.10f}" if r.val_dsc is not None else ""
            lines.append(f"{r.epoch},{r.train_loss:.10f},{val},{r.seconds:.3f}")
        Path(path).write_text("\n".join(lines) + "\n")


def select_epoch(history: TrainingHistory) -> int:
    """Epoch (1-based) with the highest validation DSC; ties go to the earliest."""
    series = history.val_series()
    if not series:
        raise ValueError("history has no validation records")
    best_epoch, best = series[0]
    for epoch, value in series[1:]:
        if value > best:
            best_epoch, best = epoch, value
    return best_epoch


@dataclass
class TrainResult:
    history: TrainingHistory
    best_epoch: int | None
    best_val_dsc: float | None
    best_state: dict | None
    final_state: dict


def _rng_digest(rng: np.random.Generator) -> str:
    blob = repr(rng.bit_generator.state).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def _scan_to_tensors(image, mask):
    x = torch.from_numpy(np.ascontiguousarray(image.values, dtype=np.float32))
    y = torch.from_numpy(np.ascontiguousarray(mask.values, dtype=np.float32))
    return x, y


def validation_dsc(model: HierSegNet, scans, window, overlap) -> float:
    """Mean DSC over scans via the full sliding-infer + binarize path."""
    scores = []
    for scan in scans:
        probs = sliding_infer(model, scan, window=window, overlap=overlap)
        scores.append(dsc(confusion_counts(binarize(probs), scan.mask)))
    return float(np.mean(scores))


def save_checkpoint(path, model: HierSegNet, optimizer, cfg: TrainConfig, epoch: int,
                    rng: np.random.Generator, history: TrainingHistory,
                    best: dict | None) -> None:
    """Single-archive checkpoint: config echo, named parameters, epoch, RNG state."""
    payload = {
        "format_version": 1,
        "model_config": config_to_dict(model.cfg),
        "train_config": asdict(cfg),
        "epoch": epoch,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "numpy_rng_state": rng.bit_generator.state,
        "torch_rng_state": torch.get_rng_state(),
        "history": [asdict(r) for r in history.records],
        "best": best,
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    payload["model_config"] = config_from_dict(payload["model_config"])
    return payload


def model_from_checkpoint(path) -> HierSegNet:
    payload = load_checkpoint(path)
    model = build_model(payload["model_config"])
    model.load_state_dict(payload["model_state"])
    model.eval()
    return model


def train(model: HierSegNet, train_scans, val_scans, cfg: TrainConfig,
          out_dir=None, resume_from=None) -> TrainResult:
    """Run (or resume) training; returns history plus best/final parameter states.

    All scans must carry masks.  ``out_dir`` receives last.pt / best.pt
    checkpoints and history.csv; ``resume_from`` restores a last.pt archive
    and continues to cfg.epochs with an identical trajectory.
    """
    if not train_scans:
        raise ValueError("no training scans")
    for scan in list(train_scans) + list(val_scans):
        if scan.mask is None:
            raise ValueError(f"scan {scan.id} has no ground-truth mask")

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=tuple(cfg.betas))
    history = TrainingHistory()
    rng = np.random.default_rng(cfg.seed)
    start_epoch = 1
    best: dict | None = None
    best_state: dict | None = None

    if resume_from is not None:
        payload = load_checkpoint(resume_from)
        model.load_state_dict(payload["model_state"])
        optimizer.load_state_dict(payload["optimizer_state"])
        rng = np.random.default_rng()
        rng.bit_generator.state = payload["numpy_rng_state"]
        torch.set_rng_state(payload["torch_rng_state"])
        for rec in payload["history"]:
            history.append(EpochRecord(**rec))
        start_epoch = payload["epoch"] + 1
        best = payload["best"]
        if best is not None:
            candidates = [Path(resume_from).parent / CHECKPOINT_BEST]
            if out_dir is not None:
                candidates.append(out_dir / CHECKPOINT_BEST)
            for candidate in candidates:
                if candidate.exists():
                    best_state = load_checkpoint(candidate)["model_state"]
                    break

    aug_cfg = cfg.augment_config()
    n = len(train_scans)

    for epoch in range(start_epoch, cfg.epochs + 1):
        tic = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        losses = []
        for lo in range(0, n, cfg.batch_size):
            batch_idx = order[lo: lo + cfg.batch_size]
            xs, ys = [], []
            for i in batch_idx:
                scan = train_scans[int(i)]
                image, mask = augment(scan.image, scan.mask, rng, aug_cfg)
                x, y = _scan_to_tensors(image, mask)
                xs.append(x)
                ys.append(y)
            batch_x = torch.stack(xs)
            batch_y = torch.stack(ys)
            optimizer.zero_grad()
            out = model(batch_x)
            loss = hierarchical_loss(out, batch_y, eps=cfg.loss_eps).loss
            if not torch.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch scans "
                    f"{[train_scans[int(i)].id for i in batch_idx]}")
            loss.backward()
            optimizer.step()
            losses.append(float(loss.detach()) * len(batch_idx))
        train_loss = sum(losses) / n

        val = None
        if val_scans and epoch % cfg.val_every == 0:
            val = validation_dsc(model, val_scans, cfg.window, cfg.overlap)
            if best is None or val > best["val_dsc"]:
                best = {"epoch": epoch, "val_dsc": val}
                best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
                if out_dir is not None:
                    save_checkpoint(out_dir / CHECKPOINT_BEST, model, optimizer, cfg,
                                    epoch, rng, history, best)

        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_dsc=val,
                                   seconds=time.perf_counter() - tic,
                                   rng_digest=_rng_digest(rng)))
        if out_dir is not None:
            save_checkpoint(out_dir / CHECKPOINT_LAST, model, optimizer, cfg, epoch,
                            rng, history, best)
            history.to_csv(out_dir / "history.csv")

    return TrainResult(
        history=history,
        best_epoch=best["epoch"] if best else None,
        best_val_dsc=best["val_dsc"] if best else None,
        best_state=best_state,
        final_state={k: v.detach().clone() for k, v in model.state_dict().items()},
    )
