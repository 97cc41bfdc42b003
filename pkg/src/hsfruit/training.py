"""Losses, optimizers, the early-stopping training loop and TTA evaluation."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .adabound import AdaBound
from .dataset import AugmentationConfig, augment, balance, derived_rng, dihedral_view

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam", "adabound_default", "adabound_lr01")
LOSSES = ("focal", "cross_entropy")


class TrainingError(RuntimeError):
    pass


# -- losses ---------------------------------------------------------------------------


def focal_loss(probabilities, target_class, gamma: float = 2.0) -> float:
    """Mean of ``-(1 - p_t)**gamma * log(p_t)`` over a batch of distributions."""
    p = np.atleast_2d(np.asarray(probabilities, dtype=np.float64))
    t = np.atleast_1d(np.asarray(target_class, dtype=int))
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if p.shape[0] != t.shape[0]:
        raise ValueError(f"{p.shape[0]} distributions but {t.shape[0]} targets")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1) > 1e-6):
        raise ValueError("probabilities must be nonnegative and sum to 1")
    if np.any(t < 0) or np.any(t >= p.shape[1]):
        raise ValueError("target class out of range")
    pt = p[np.arange(len(t)), t]
    with np.errstate(divide="ignore"):
        logpt = np.log(pt)
    loss = -np.power(1.0 - pt, gamma) * logpt
    return float(loss.mean())


def focal_loss_logits(logits: torch.Tensor, target: torch.Tensor, gamma: float = 2.0) -> torch.Tensor:
    logp = F.log_softmax(logits, dim=1).gather(1, target[:, None]).squeeze(1)
    pt = logp.exp()
    return (-(1 - pt).pow(gamma) * logp).mean()


def loss_fn(name: str, gamma: float):
    if name == "focal":
        return lambda logits, y: focal_loss_logits(logits, y, gamma)
    if name == "cross_entropy":
        return F.cross_entropy
    raise ValueError(f"unknown loss '{name}'")


# -- config and reports --------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 32
    optimizer: str = "adabound_lr01"
    learning_rate: Optional[float] = None
    weight_decay: float = 0.0
    loss: str = "focal"
    focal_gamma: float = 2.0
    early_stop_patience: int = 10
    max_epochs: int = 200
    min_delta: float = 0.0
    seed: int = 0
    balanced: bool = True
    # recompute batch-norm statistics on the training set after every epoch
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be at least 1")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer '{self.optimizer}'")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss '{self.loss}'")

    def to_dict(self) -> dict:
        return asdict(self)


def make_optimizer(name: str, params, lr: Optional[float] = None, weight_decay: float = 0.0) -> torch.optim.Optimizer:
    """The four optimizer variants of the ablation; ``lr`` overrides the preset."""
    wd = weight_decay
    if name == "sgd":
        return torch.optim.SGD(params, lr=1e-2 if lr is None else lr, momentum=0.9, weight_decay=wd)
    if name == "adam":
        return torch.optim.Adam(params, lr=1e-3 if lr is None else lr, weight_decay=wd)
    if name == "adabound_default":
        return AdaBound(params, lr=1e-3 if lr is None else lr, final_lr=0.1, weight_decay=wd)
    if name == "adabound_lr01":
        return AdaBound(params, lr=1e-2 if lr is None else lr, final_lr=0.1, weight_decay=wd)
    raise ValueError(f"unknown optimizer '{name}'")


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0
    best_val_loss: float = math.inf
    class_counts: list = field(default_factory=list)
    class_weight_sums: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    config_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvalReport:
    accuracy: float
    confusion: list
    precision: list
    recall: list
    tta_views: int
    n: int

    @classmethod
    def from_predictions(cls, y_true, y_pred, n_classes: int = 3, tta_views: int = 1) -> "EvalReport":
        y_true = np.asarray(y_true, dtype=int)
        y_pred = np.asarray(y_pred, dtype=int)
        cm = np.zeros((n_classes, n_classes), dtype=int)
        np.add.at(cm, (y_true, y_pred), 1)
        diag = np.diag(cm).astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            precision = np.where(cm.sum(0) > 0, diag / cm.sum(0), np.nan)
            recall = np.where(cm.sum(1) > 0, diag / cm.sum(1), np.nan)
        total = cm.sum()
        acc = float(diag.sum() / total) if total else float("nan")
        return cls(acc, cm.tolist(), _nan_none(precision), _nan_none(recall), tta_views, int(total))

    def to_dict(self) -> dict:
        return asdict(self)


def _nan_none(a):
    return [None if np.isnan(v) else float(v) for v in a]


# -- tensors ---------------------------------------------------------------------------


def to_input(batch: np.ndarray) -> torch.Tensor:
    """(N, H, W, B) array to an (N, B, H, W) float tensor (channels-last in memory)."""
    return torch.from_numpy(np.ascontiguousarray(batch, dtype=np.float32)).permute(0, 3, 1, 2)


@torch.no_grad()
def predict_logits(model: nn.Module, X: np.ndarray, batch_size: int = 32) -> np.ndarray:
    model.eval()
    out = [model(to_input(X[i : i + batch_size])).double().numpy() for i in range(0, len(X), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, 3))


def predict_proba(model: nn.Module, X: np.ndarray, batch_size: int = 32) -> np.ndarray:
    logits = predict_logits(model, X, batch_size)
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def evaluate(model: nn.Module, X: np.ndarray, y, batch_size: int = 32) -> EvalReport:
    """Plain evaluation on unmodified inputs."""
    probs = predict_proba(model, X, batch_size)
    return EvalReport.from_predictions(y, probs.argmax(axis=1), probs.shape[1], tta_views=1)


def tta_proba(
    model: nn.Module,
    X: np.ndarray,
    views: int = 8,
    aug_cfg: Optional[AugmentationConfig] = None,
    seed: int = 0,
    batch_size: int = 32,
) -> np.ndarray:
    """Class probabilities averaged over ``views`` copies of every sample.

    The first eight views are the deterministic dihedral set starting with
    the identity; further views are random draws from ``aug_cfg``.
    """
    if views < 1:
        raise ValueError("views must be at least 1")
    if views > 8 and aug_cfg is None:
        raise ValueError("more than 8 views need an augmentation config")
    total = None
    for v in range(views):
        if v == 0:
            Xv = X
        elif v < 8:
            Xv = dihedral_view(X, v)
        else:
            rng = derived_rng(seed, v)
            Xv = np.stack([augment(x, aug_cfg, rng) for x in X])
        p = predict_proba(model, Xv, batch_size)
        total = p if total is None else total + p
    return total / views


def evaluate_tta(model, X, y, views: int = 8, aug_cfg=None, seed: int = 0, batch_size: int = 32) -> EvalReport:
    probs = tta_proba(model, X, views, aug_cfg, seed, batch_size)
    # argmax breaks ties toward the lower class index
    return EvalReport.from_predictions(y, probs.argmax(axis=1), probs.shape[1], tta_views=views)


# -- training loop ---------------------------------------------------------------------------


def seed_everything(seed: int):
    torch.manual_seed(seed)
    np.random.seed(seed % (2**32))
    torch.use_deterministic_algorithms(True, warn_only=True)


@torch.no_grad()
def recalibrate_batchnorm(model: nn.Module, X: np.ndarray, batch_size: int = 32) -> bool:
    """Replace running batch-norm statistics by exact averages over ``X``.

    Returns False when the model has no batch-norm layers.
    """
    bns = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return False
    saved = [m.momentum for m in bns]
    for m in bns:
        m.reset_running_stats()
        m.momentum = None
    model.train()
    for i in range(0, len(X), batch_size):
        if len(X[i : i + batch_size]) > 1:
            model(to_input(X[i : i + batch_size]))
    for m, mom in zip(bns, saved):
        m.momentum = mom
    model.eval()
    return True


@torch.no_grad()
def _mean_loss(model, X, y, criterion, batch_size) -> tuple[float, float]:
    model.eval()
    total, correct = 0.0, 0
    for i in range(0, len(X), batch_size):
        logits = model(to_input(X[i : i + batch_size]))
        yb = torch.from_numpy(np.asarray(y[i : i + batch_size], dtype=np.int64))
        total += float(criterion(logits, yb)) * len(yb)
        correct += int((logits.argmax(1) == yb).sum())
    return total / len(X), correct / len(X)


def train(
    model: nn.Module,
    train_set: tuple,
    val_set: tuple,
    cfg: TrainConfig = None,
    aug_cfg: Optional[AugmentationConfig] = None,
    n_classes: int = 3,
):
    """Train with balanced sampling and early stopping on the validation loss.

    ``train_set`` and ``val_set`` are ``(X, y)`` with X shaped (N, H, W, B).
    Returns the model restored to its best-validation-loss epoch and a
    :class:`TrainReport`.
    """
    cfg = cfg or TrainConfig()
    Xtr, ytr = train_set
    Xva, yva = val_set
    ytr = np.asarray(ytr, dtype=np.int64)
    yva = np.asarray(yva, dtype=np.int64)
    if len(Xtr) == 0 or len(Xva) == 0:
        raise TrainingError("training and validation sets must be non-empty")

    seed_everything(cfg.seed)
    criterion = loss_fn(cfg.loss, cfg.focal_gamma)
    opt = make_optimizer(cfg.optimizer, model.parameters(), cfg.learning_rate, cfg.weight_decay)
    counts = np.bincount(ytr, minlength=n_classes)
    if cfg.balanced:
        weights = balance(ytr, n_classes)
    else:
        weights = np.ones(len(ytr))
    report = TrainReport(
        class_counts=counts.tolist(),
        class_weight_sums=[float(weights[ytr == c].sum()) for c in range(n_classes)],
        config={"train": cfg.to_dict(), "augmentation": aug_cfg.to_dict() if aug_cfg else None},
    )
    report.config_hash = config_hash(report.config)
    probs = weights / weights.sum()

    best_state = copy.deepcopy(model.state_dict())
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        rng = derived_rng(cfg.seed, epoch)
        order = rng.choice(len(Xtr), size=len(Xtr), replace=True, p=probs)
        model.train()
        run_loss, run_correct = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2 and start > 0:
                continue  # batch norm needs more than one sample
            xb = Xtr[idx]
            if aug_cfg is not None:
                xb = np.stack([augment(x, aug_cfg, rng) for x in xb])
            yb = torch.from_numpy(ytr[idx])
            logits = model(to_input(xb))
            loss = criterion(logits, yb)
            if not torch.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss.item()} at epoch {epoch}, batch starting {start}; "
                    f"input range [{xb.min():.3g}, {xb.max():.3g}], "
                    f"logit range [{logits.min().item():.3g}, {logits.max().item():.3g}]"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            run_loss += float(loss.detach()) * len(idx)
            run_correct += int((logits.argmax(1) == yb).sum())
        if cfg.recalibrate_bn:
            recalibrate_batchnorm(model, Xtr, cfg.batch_size)
        val_loss, val_acc = _mean_loss(model, Xva, yva, criterion, cfg.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        report.epochs.append(
            {
                "epoch": epoch,
                "train_loss": run_loss / len(order),
                "train_accuracy": run_correct / len(order),
                "val_loss": val_loss,
                "val_accuracy": val_acc,
            }
        )
        log.info("epoch %d train %.4f val %.4f acc %.3f", epoch, run_loss / len(order), val_loss, val_acc)
        if val_loss < report.best_val_loss - cfg.min_delta:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
            stale = 0
        else:
            stale += 1
        report.stopped_epoch = epoch
        if stale >= cfg.early_stop_patience:
            break
    model.load_state_dict(best_state)
    model.eval()
    return model, report
