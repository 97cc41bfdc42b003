"""Model x reduction x category x camera accuracy grid and ablation runs."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
import torch

from .cube import HyperCube, WavelengthAxis
from .dataset import AugmentationConfig, band_std
from .models import (
    ModelConfig,
    build_model,
    count_parameters,
    extract_shallow_features,
    fit_knn,
    fit_svm,
)
from .preprocess import apply_pca, fit_pca, rgb_cube
from .training import TrainConfig, config_hash, evaluate, evaluate_tta, train

log = logging.getLogger(__name__)

REDUCTIONS = ("full", "rgb", "pca5")
DEEP_MODELS = ("hscnn", "resnet18", "alexnet")
SHALLOW_MODELS = ("svm", "knn")
GRID_FIELDS = (
    "camera", "category", "model", "reduction", "status", "accuracy", "tta_views",
    "n_train", "n_val", "n_test", "param_count", "hyperparameters", "seed", "config_hash",
)
ABLATIONS = {
    "pooling": ("average", "max"),
    "head": ("gap_plus_linear", "gap_only", "fully_connected"),
    "conv_type": ("separable", "normal"),
    "loss": ("focal", "cross_entropy"),
    "optimizer": ("sgd", "adam", "adabound_default", "adabound_lr01"),
    "augmentation": ("full", "no_tta", "no_noise", "no_cut", "no_transform"),
}


@dataclass
class Task:
    """Preprocessed (N, H, W, B) cubes of one camera/category with a split."""

    camera: str
    category: str
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    axis: WavelengthAxis

    def part(self, name: str):
        sel = self.split == name
        return self.X[sel], self.y[sel]


def reduce_task(task: Task, reduction: str, seed: int = 0) -> Task:
    """Full cubes, RGB renderings or 5-component PCA fitted on training pixels only."""
    if reduction == "full":
        return task
    if reduction == "rgb":
        out = [rgb_cube(HyperCube(x.astype(np.float64), task.axis)) for x in task.X]
    elif reduction == "pca5":
        Xtr, _ = task.part("train")
        flat = Xtr.reshape(-1, Xtr.shape[-1])
        proj = fit_pca(flat[flat.any(axis=1)], k=5, seed=seed)
        out = [apply_pca(proj, HyperCube(x.astype(np.float64), task.axis)) for x in task.X]
    else:
        raise ValueError(f"unknown reduction '{reduction}'")
    X = np.stack([c.data for c in out]).astype(np.float32)
    return replace(task, X=X, axis=out[0].axis)


def fit_and_score(
    task: Task,
    model_name: str,
    train_cfg: TrainConfig,
    aug_cfg: Optional[AugmentationConfig],
    views: int = 8,
    model_cfg: Optional[ModelConfig] = None,
) -> dict:
    """Train one model on ``task`` and return a result row (without camera/category keys)."""
    Xtr, ytr = task.part("train")
    Xva, yva = task.part("val")
    Xte, yte = task.part("test")
    row = {"n_train": len(ytr), "n_val": len(yva), "n_test": len(yte), "seed": train_cfg.seed}
    if model_name in SHALLOW_MODELS:
        feats = lambda X: np.stack([extract_shallow_features(x) for x in X])
        # grid search uses the training split only; validation data stays unused
        fit = fit_svm if model_name == "svm" else fit_knn
        folds = int(min(5, np.bincount(ytr)[np.bincount(ytr) > 0].min()))
        sm = fit(feats(Xtr), ytr, folds=folds, seed=train_cfg.seed)
        row.update(
            accuracy=sm.score(feats(Xte), yte), tta_views=0, param_count=None,
            hyperparameters=json.dumps({sm.param_name: sm.param_value, "cv_accuracy": sm.cv_accuracy}),
        )
        row["config_hash"] = config_hash(model_name, row["hyperparameters"], train_cfg.seed)
        return row
    torch.manual_seed(train_cfg.seed)
    model = build_model(model_name, Xtr.shape[-1], model_cfg)
    if aug_cfg is not None and aug_cfg.random_noise and aug_cfg.reference_std is None:
        aug_cfg = replace(aug_cfg, reference_std=band_std(Xtr))
    model, report = train(model, (Xtr, ytr), (Xva, yva), train_cfg, aug_cfg)
    ev = evaluate_tta(model, Xte, yte, views) if views > 1 else evaluate(model, Xte, yte)
    hp = {"train": train_cfg.to_dict(), "stopped_epoch": report.stopped_epoch, "best_epoch": report.best_epoch}
    if model_cfg is not None:
        hp["model"] = model_cfg.to_dict()
    row.update(
        accuracy=ev.accuracy, tta_views=ev.tta_views, param_count=count_parameters(model),
        hyperparameters=json.dumps(hp, sort_keys=True), config_hash=report.config_hash,
    )
    return row


def run_benchmark_grid(
    tasks: Mapping,
    cameras: Sequence[str],
    categories: Sequence[str],
    models: Sequence[str],
    reductions: Sequence[str] = REDUCTIONS,
    train_cfg: TrainConfig = None,
    aug_cfg: Optional[AugmentationConfig] = None,
    views: int = 8,
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """One row per (camera, category, model, reduction, seed).

    ``tasks`` maps ``(camera, category)`` to a :class:`Task`; missing or
    empty entries produce rows with ``status = "absent"``.
    """
    train_cfg = train_cfg or TrainConfig()
    aug_cfg = aug_cfg if aug_cfg is not None else AugmentationConfig()
    rows = []
    for camera in cameras:
        for category in categories:
            task = tasks.get((camera, category))
            for reduction in reductions:
                reduced = None
                if task is not None and len(task.y) > 0:
                    try:
                        reduced = reduce_task(task, reduction)
                    except ValueError as exc:
                        log.warning("%s/%s/%s: %s", camera, category, reduction, exc)
                for model_name in models:
                    for seed in seeds:
                        base = {"camera": camera, "category": category, "model": model_name,
                                "reduction": reduction, "seed": seed}
                        if reduced is None:
                            rows.append({**base, "status": "absent"})
                            continue
                        cfg = replace(train_cfg, seed=seed)
                        aug = replace(aug_cfg, seed=seed)
                        row = fit_and_score(reduced, model_name, cfg, aug, views)
                        rows.append({**base, **row, "status": "ok"})
                        log.info("%s", rows[-1])
    return rows


def run_ablation(
    task: Task,
    axis: str,
    train_cfg: TrainConfig = None,
    aug_cfg: Optional[AugmentationConfig] = None,
    model_cfg: Optional[ModelConfig] = None,
    views: int = 8,
    seeds: Sequence[int] = (0,),
) -> list[dict]:
    """Retrain the HS-CNN once per value of ``axis``, pairing seeds across values."""
    if axis not in ABLATIONS:
        raise ValueError(f"unknown ablation axis '{axis}', choose from {sorted(ABLATIONS)}")
    train_cfg = train_cfg or TrainConfig()
    aug_cfg = aug_cfg if aug_cfg is not None else AugmentationConfig()
    model_cfg = model_cfg or ModelConfig(in_bands=task.X.shape[-1])
    rows = []
    for value in ABLATIONS[axis]:
        accs = []
        for seed in seeds:
            mcfg, tcfg, acfg, v = model_cfg, replace(train_cfg, seed=seed), replace(aug_cfg, seed=seed), views
            if axis in ("pooling", "head", "conv_type"):
                mcfg = replace(model_cfg, **{axis: value})
            elif axis == "loss":
                tcfg = replace(tcfg, loss=value)
            elif axis == "optimizer":
                tcfg = replace(tcfg, optimizer=value)
            elif value == "no_tta":
                v = 1
            elif value == "no_noise":
                acfg = replace(acfg, random_noise=False)
            elif value == "no_cut":
                acfg = replace(acfg, random_cut=False)
            elif value == "no_transform":
                acfg = replace(acfg, rotation=False, flip=False)
            row = fit_and_score(task, "hscnn", tcfg, acfg, v, mcfg)
            accs.append(row["accuracy"])
        rows.append({"axis": axis, "value": value, "accuracy": float(np.mean(accs)),
                     "accuracies": accs, "seeds": list(seeds)})
    return rows


def write_rows_csv(rows: Sequence[dict], path, fields: Optional[Sequence[str]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = list(fields or (GRID_FIELDS if rows and "model" in rows[0] else rows[0].keys() if rows else GRID_FIELDS))
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()})
    return path
