"""HS-CNN with its ablation switches, adapted deep baselines and shallow baselines."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torchvision
from sklearn.model_selection import GridSearchCV, StratifiedKFold
from sklearn.neighbors import KNeighborsClassifier
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler
from sklearn.svm import SVC
from torch import nn

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
REFERENCE_BANDS = 224
DEFAULT_WIDTHS = (32, 64, 128)


ACTIVATIONS = {"relu": nn.ReLU, "silu": nn.SiLU, "softplus": nn.Softplus}


class ModelError(ValueError):
    pass


@dataclass
class ModelConfig:
    in_bands: int = REFERENCE_BANDS
    n_classes: int = 3
    conv_type: str = "separable"
    pooling: str = "average"
    head: str = "gap_plus_linear"
    widths: Optional[tuple] = None
    kernel: int = 3
    hidden: int = 64
    input_size: int = 64
    activation: str = "relu"

    def __post_init__(self):
        if self.in_bands <= 0:
            raise ModelError("in_bands must be positive")
        if self.conv_type not in ("separable", "normal"):
            raise ModelError(f"unknown conv_type '{self.conv_type}'")
        if self.pooling not in ("average", "max"):
            raise ModelError(f"unknown pooling '{self.pooling}'")
        if self.head not in ("gap_plus_linear", "gap_only", "fully_connected"):
            raise ModelError(f"unknown head '{self.head}'")
        if self.activation not in ACTIVATIONS:
            raise ModelError(f"unknown activation '{self.activation}'")
        if self.widths is not None:
            self.widths = tuple(int(w) for w in self.widths)
            if len(self.widths) != 3:
                raise ModelError(f"widths must have 3 entries, got {self.widths}")
            if min(self.widths) < 1:
                raise ModelError(f"widths must be positive, got {self.widths}")

    def resolved_widths(self) -> tuple:
        """Explicit widths, or the defaults scaled by ``in_bands / 224`` in steps of 8."""
        if self.widths is not None:
            return self.widths
        scale = self.in_bands / REFERENCE_BANDS
        return tuple(max(8, int(round(w * scale / 8)) * 8) for w in DEFAULT_WIDTHS)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = None if self.widths is None else list(self.widths)
        return d


class SeparableConv2d(nn.Sequential):
    def __init__(self, c_in, c_out, kernel):
        super().__init__(
            nn.Conv2d(c_in, c_in, kernel, padding=kernel // 2, groups=c_in, bias=False),
            nn.Conv2d(c_in, c_out, 1),
        )


def conv_block(c_in, c_out, cfg: ModelConfig) -> nn.Sequential:
    if cfg.conv_type == "separable":
        conv = SeparableConv2d(c_in, c_out, cfg.kernel)
    else:
        conv = nn.Conv2d(c_in, c_out, cfg.kernel, padding=cfg.kernel // 2)
    pool = nn.AvgPool2d(2) if cfg.pooling == "average" else nn.MaxPool2d(2)
    return nn.Sequential(conv, nn.BatchNorm2d(c_out), ACTIVATIONS[cfg.activation](), pool)


class HSCNN(nn.Module):
    """Three conv blocks followed by a configurable head.

    Input is (N, B, H, W); output is (N, n_classes) unnormalized scores.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        w1, w2, w3 = cfg.resolved_widths()
        self.features = nn.Sequential(
            conv_block(cfg.in_bands, w1, cfg),
            conv_block(w1, w2, cfg),
            conv_block(w2, w3, cfg),
        )
        if cfg.head == "gap_plus_linear":
            self.head = nn.Sequential(
                nn.AdaptiveAvgPool2d(1), nn.Flatten(),
                nn.Linear(w3, cfg.hidden), ACTIVATIONS[cfg.activation](),
                nn.Linear(cfg.hidden, cfg.n_classes),
            )
        elif cfg.head == "gap_only":
            self.head = nn.Sequential(
                nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(w3, cfg.n_classes)
            )
        else:
            side = cfg.input_size // 8
            self.head = nn.Sequential(
                nn.Flatten(),
                nn.Linear(w3 * side * side, cfg.hidden), ACTIVATIONS[cfg.activation](),
                nn.Linear(cfg.hidden, cfg.n_classes),
            )

    def forward(self, x):
        return self.head(self.features(x))


def build_hscnn(cfg: ModelConfig = None) -> HSCNN:
    cfg = cfg or ModelConfig()
    model = HSCNN(cfg)
    log.info("HS-CNN %s: %d parameters", cfg.resolved_widths(), count_parameters(model))
    return model


def _adapt_first_conv(conv: nn.Conv2d, in_bands: int) -> nn.Conv2d:
    return nn.Conv2d(
        in_bands, conv.out_channels, conv.kernel_size, conv.stride, conv.padding,
        bias=conv.bias is not None,
    )


def build_resnet18_adapted(in_bands: int, n_classes: int = 3) -> nn.Module:
    if in_bands <= 0:
        raise ModelError("in_bands must be positive")
    m = torchvision.models.resnet18(weights=None, num_classes=n_classes)
    m.conv1 = _adapt_first_conv(m.conv1, in_bands)
    return m


def build_alexnet_adapted(in_bands: int, n_classes: int = 3) -> nn.Module:
    if in_bands <= 0:
        raise ModelError("in_bands must be positive")
    m = torchvision.models.alexnet(weights=None, num_classes=n_classes)
    m.features[0] = _adapt_first_conv(m.features[0], in_bands)
    return m


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def build_model(name: str, in_bands: int, cfg: Optional[ModelConfig] = None) -> nn.Module:
    if name == "hscnn":
        cfg = cfg or ModelConfig()
        if cfg.in_bands != in_bands:
            cfg = ModelConfig(**{**cfg.to_dict(), "in_bands": in_bands})
        return build_hscnn(cfg)
    if name == "resnet18":
        return build_resnet18_adapted(in_bands)
    if name == "alexnet":
        return build_alexnet_adapted(in_bands)
    raise ModelError(f"unknown deep model '{name}'")


def model_spec(model: nn.Module) -> dict:
    if isinstance(model, HSCNN):
        return {"name": "hscnn", "config": model.cfg.to_dict()}
    if isinstance(model, torchvision.models.ResNet):
        return {"name": "resnet18", "in_bands": model.conv1.in_channels}
    if isinstance(model, torchvision.models.AlexNet):
        return {"name": "alexnet", "in_bands": model.features[0].in_channels}
    raise ModelError(f"no checkpoint spec for {type(model).__name__}")


def save_checkpoint(model: nn.Module, path, extra: Optional[dict] = None) -> Path:
    """Architecture JSON plus named float arrays in one ``.npz`` file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {"version": CHECKPOINT_VERSION, "architecture": model_spec(model), "extra": extra or {}}
    arrays = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    with path.open("wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)
    return path


def load_checkpoint(path) -> tuple[nn.Module, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        if "version" not in header:
            raise ModelError(f"{path}: checkpoint has no version field")
        if header["version"] > CHECKPOINT_VERSION:
            raise ModelError(f"{path}: checkpoint version {header['version']} is newer than supported")
        arch = header["architecture"]
        if arch["name"] == "hscnn":
            model = build_hscnn(ModelConfig(**arch["config"]))
        else:
            model = build_model(arch["name"], arch["in_bands"])
        state = {k: torch.from_numpy(z[k].copy()) for k in z.files if k != "__header__"}
    model.load_state_dict(state)
    model.eval()
    return model, header


# -- shallow baselines ------------------------------------------------------------


def extract_shallow_features(data: np.ndarray, mask_aware: bool = True) -> np.ndarray:
    """Mean spectrum over fruit pixels (pixels with any nonzero band)."""
    data = np.asarray(data, dtype=np.float64)
    flat = data.reshape(-1, data.shape[-1])
    if mask_aware:
        flat = flat[flat.any(axis=1)]
        if flat.shape[0] == 0:
            raise ModelError("cube has no nonzero pixels")
    return flat.mean(axis=0)


@dataclass
class ShallowModel:
    kind: str
    param_name: str
    param_value: float
    cv_accuracy: float
    estimator: object = field(repr=False)
    features: str = "masked_mean_spectrum"

    def predict(self, X) -> np.ndarray:
        return self.estimator.predict(np.asarray(X))

    def score(self, X, y) -> float:
        return float((self.predict(X) == np.asarray(y)).mean())


def _grid_fit(kind, estimator, param, grid, X, y, folds, seed) -> ShallowModel:
    grid = list(grid)
    if not grid:
        raise ModelError(f"empty {param} grid")
    y = np.asarray(y)
    counts = np.bincount(y)
    counts = counts[counts > 0]
    if folds < 2:
        raise ModelError("need at least 2 folds")
    if folds > counts.min():
        raise ModelError(f"{folds} folds but the smallest class has {counts.min()} samples")
    cv = StratifiedKFold(folds, shuffle=True, random_state=seed)
    search = GridSearchCV(estimator, {param: grid}, cv=cv, scoring="accuracy", refit=True)
    search.fit(np.asarray(X), y)
    value = search.best_params_[param]
    log.info("%s: best %s=%s cv accuracy %.3f", kind, param, value, search.best_score_)
    return ShallowModel(kind, param.split("__")[-1], value, float(search.best_score_), search.best_estimator_)


def fit_svm(features, labels, C_grid: Sequence[float] = (0.1, 1, 10, 100, 1000), folds: int = 5, seed: int = 0):
    est = make_pipeline(StandardScaler(), SVC(kernel="rbf", gamma="scale"))
    return _grid_fit("svm_rbf", est, "svc__C", C_grid, features, labels, folds, seed)


def fit_knn(features, labels, k_grid: Sequence[int] = (1, 3, 5, 7, 9), folds: int = 5, seed: int = 0):
    est = make_pipeline(StandardScaler(), KNeighborsClassifier())
    return _grid_fit("knn", est, "kneighborsclassifier__n_neighbors", k_grid, features, labels, folds, seed)
