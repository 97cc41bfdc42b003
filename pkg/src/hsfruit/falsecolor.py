"""Pixel autoencoder with a three-dimensional latent space, the latent
classifier it is fine-tuned with, and false-colour rendering."""
from __future__ import annotations

import copy
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from torch import nn

from .cube import HyperCube
from .models import HSCNN, ModelConfig
from .training import focal_loss_logits, recalibrate_batchnorm

log = logging.getLogger(__name__)

LATENT_DIM = 3
STAGES = ("reconstruction_only", "classification_tuned")
BUNDLE_VERSION = 1


class FalseColorError(ValueError):
    pass


def make_encoder(bands: int, hidden=(64, 16)) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(bands, hidden[0]), nn.ReLU(),
        nn.Linear(hidden[0], hidden[1]), nn.ReLU(),
        nn.Linear(hidden[1], LATENT_DIM),
    )


def make_decoder(bands: int, hidden=(64, 16)) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(LATENT_DIM, hidden[1]), nn.ReLU(),
        nn.Linear(hidden[1], hidden[0]), nn.ReLU(),
        nn.Linear(hidden[0], bands),
    )


@dataclass
class AutoencoderConfig:
    hidden: tuple = (64, 16)
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 3e-3
    holdout: float = 0.1
    min_spectra: int = 10_000
    seed: int = 0


@dataclass
class EncoderBundle:
    encoder: nn.Sequential
    decoder: nn.Sequential
    bands: int
    latent_min: np.ndarray
    latent_max: np.ndarray
    # per-band input normalisation learned from the training spectra
    input_mean: np.ndarray
    input_scale: np.ndarray
    stage: str = "reconstruction_only"
    category: Optional[str] = None
    heldout_mse: float = float("nan")
    train_mse: float = float("nan")
    metrics: dict = field(default_factory=dict)

    def _normalize(self, spectra: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.input_mean, dtype=spectra.dtype)
        scale = torch.as_tensor(self.input_scale, dtype=spectra.dtype)
        return (spectra - mean) / scale

    def encode_tensor(self, spectra: torch.Tensor) -> torch.Tensor:
        return self.encoder(self._normalize(spectra))

    def decode_tensor(self, latents: torch.Tensor) -> torch.Tensor:
        mean = torch.as_tensor(self.input_mean, dtype=latents.dtype)
        scale = torch.as_tensor(self.input_scale, dtype=latents.dtype)
        return self.decoder(latents) * scale + mean

    @torch.no_grad()
    def encode(self, spectra: np.ndarray) -> np.ndarray:
        self.encoder.eval()
        s = torch.as_tensor(np.asarray(spectra, dtype=np.float32).reshape(-1, self.bands))
        return self.encode_tensor(s).numpy().astype(np.float64)

    @torch.no_grad()
    def decode(self, latents: np.ndarray) -> np.ndarray:
        self.decoder.eval()
        z = torch.as_tensor(np.asarray(latents, dtype=np.float32).reshape(-1, LATENT_DIM))
        return self.decode_tensor(z).numpy().astype(np.float64)

    def reconstruct(self, spectra: np.ndarray) -> np.ndarray:
        return self.decode(self.encode(spectra))

    def normalize_latents(self, z: np.ndarray) -> np.ndarray:
        span = np.where(self.latent_max > self.latent_min, self.latent_max - self.latent_min, 1.0)
        return (z - self.latent_min) / span

    def set_latent_norm(self, spectra: np.ndarray):
        z = self.encode(spectra)
        self.latent_min = z.min(axis=0)
        self.latent_max = z.max(axis=0)


def _split_holdout(X: np.ndarray, frac: float, rng: np.random.Generator):
    idx = rng.permutation(len(X))
    n_hold = max(1, int(round(len(X) * frac)))
    return X[idx[n_hold:]], X[idx[:n_hold]]


def train_autoencoder(spectra: np.ndarray, cfg: AutoencoderConfig = None) -> EncoderBundle:
    """Stage one: per-pixel reconstruction with mean-squared error.

    ``spectra`` is (N, B) and may mix labeled and unlabeled recordings;
    all-zero background spectra should be removed beforehand.
    """
    cfg = cfg or AutoencoderConfig()
    X = np.asarray(spectra, dtype=np.float32)
    if X.ndim != 2:
        raise FalseColorError("spectra must be an (N, B) array")
    if len(X) < cfg.min_spectra:
        raise FalseColorError(f"need at least {cfg.min_spectra} spectra, got {len(X)}")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    train_x, hold_x = _split_holdout(X, cfg.holdout, rng)
    b = X.shape[1]
    mean = train_x.mean(axis=0).astype(np.float64)
    scale = float(train_x.std()) or 1.0
    bundle = EncoderBundle(
        make_encoder(b, cfg.hidden), make_decoder(b, cfg.hidden), b,
        np.zeros(LATENT_DIM), np.ones(LATENT_DIM), mean, np.full(b, scale),
    )
    params = list(bundle.encoder.parameters()) + list(bundle.decoder.parameters())
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
    xt = torch.from_numpy(train_x)
    xt_norm = bundle._normalize(xt)
    for epoch in range(cfg.epochs):
        bundle.encoder.train()
        bundle.decoder.train()
        order = torch.from_numpy(rng.permutation(len(xt)))
        for start in range(0, len(order), cfg.batch_size):
            xb = xt_norm[order[start : start + cfg.batch_size]]
            loss = ((bundle.decoder(bundle.encoder(xb)) - xb) ** 2).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
        sched.step()
    bundle.train_mse = _mse(bundle, train_x)
    bundle.heldout_mse = _mse(bundle, hold_x)
    bundle.set_latent_norm(train_x)
    log.info("autoencoder train mse %.3g held-out mse %.3g", bundle.train_mse, bundle.heldout_mse)
    return bundle


def _mse(bundle: EncoderBundle, X: np.ndarray) -> float:
    return float(((bundle.reconstruct(X) - X) ** 2).mean())


class LatentClassifier(nn.Module):
    """Reduced HS-CNN over the embedded (3-channel) image."""

    def __init__(self, widths=(16, 32, 32), hidden: int = 32, n_classes: int = 3):
        super().__init__()
        self.cfg = ModelConfig(in_bands=LATENT_DIM, n_classes=n_classes, widths=widths, hidden=hidden)
        self.net = HSCNN(self.cfg)

    def forward(self, z_img):
        return self.net(z_img)


class EmbeddedClassifier(nn.Module):
    """Encoder applied per pixel, background zeroed, then the latent classifier.

    Takes (N, B, H, W) cubes like the other classifiers.
    """

    def __init__(self, bundle: EncoderBundle, classifier: LatentClassifier):
        super().__init__()
        self.bundle = bundle
        self.encoder = bundle.encoder
        self.classifier = classifier

    def embed(self, x):
        n, b, h, w = x.shape
        pix = x.permute(0, 2, 3, 1).reshape(-1, b)
        fruit = (pix != 0).any(dim=1, keepdim=True).to(pix.dtype)
        z = self.bundle.encode_tensor(pix) * fruit
        return z.reshape(n, h, w, LATENT_DIM).permute(0, 3, 1, 2)

    def forward(self, x):
        return self.classifier(self.embed(x))


@dataclass
class LatentTrainConfig:
    epochs: int = 25
    batch_size: int = 16
    learning_rate: float = 1e-3
    encoder_learning_rate: float = 1e-3
    focal_gamma: float = 2.0
    freeze_encoder: bool = False
    seed: int = 0


def train_latent_classifier(
    bundle: EncoderBundle,
    train_set: tuple,
    val_set: tuple,
    category: str,
    cfg: LatentTrainConfig = None,
    latent_norm_spectra: Optional[np.ndarray] = None,
):
    """Stage two: jointly tune the encoder and a latent classifier with focal loss.

    Returns a new ``classification_tuned`` bundle (the input bundle is left
    untouched), the classifier and its validation accuracy.
    """
    cfg = cfg or LatentTrainConfig()
    if bundle.stage != "reconstruction_only":
        raise FalseColorError(f"bundle is already {bundle.stage}; only one fine-tuning pass is allowed")
    Xtr, ytr = train_set
    Xva, yva = val_set
    if ytr is None or len(ytr) == 0 or any(v is None for v in ytr):
        raise FalseColorError(f"missing {category} labels for the latent classifier")
    ytr = np.asarray(ytr, dtype=np.int64)
    yva = np.asarray(yva, dtype=np.int64)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)

    tuned = copy.deepcopy(bundle)
    clf = LatentClassifier()
    model = EmbeddedClassifier(tuned, clf)
    groups = [{"params": clf.parameters(), "lr": cfg.learning_rate}]
    if cfg.freeze_encoder:
        for p in tuned.encoder.parameters():
            p.requires_grad_(False)
    else:
        groups.append({"params": tuned.encoder.parameters(), "lr": cfg.encoder_learning_rate})
    opt = torch.optim.Adam(groups)

    def to_t(a):
        return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32)).permute(0, 3, 1, 2)

    best_acc, best_state = -1.0, None
    for epoch in range(cfg.epochs):
        model.train()
        order = rng.permutation(len(Xtr))
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if len(idx) < 2:
                continue
            loss = focal_loss_logits(model(to_t(Xtr[idx])), torch.from_numpy(ytr[idx]), cfg.focal_gamma)
            opt.zero_grad()
            loss.backward()
            opt.step()
        with torch.no_grad():
            recalibrate_batchnorm(clf, model.embed(to_t(Xtr)).numpy().transpose(0, 2, 3, 1), cfg.batch_size)
            model.eval()
            pred = torch.cat([model(to_t(Xva[i : i + 32])).argmax(1) for i in range(0, len(Xva), 32)])
        acc = float((pred.numpy() == yva).mean())
        if acc > best_acc:
            best_acc, best_state = acc, copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    for p in tuned.encoder.parameters():
        p.requires_grad_(True)

    tuned.stage = "classification_tuned"
    tuned.category = category
    if latent_norm_spectra is None:
        flat = Xtr.reshape(-1, Xtr.shape[-1])
        latent_norm_spectra = flat[flat.any(axis=1)]
    tuned.set_latent_norm(latent_norm_spectra)
    tuned.metrics = {"val_accuracy": best_acc, "freeze_encoder": cfg.freeze_encoder}
    log.info("latent classifier val accuracy %.3f", best_acc)
    return tuned, clf, best_acc


def render_false_color(bundle: EncoderBundle, cube) -> np.ndarray:
    """H x W x 3 image in [0, 1]: normalised latents as RGB, background black."""
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube)
    if data.shape[-1] != bundle.bands:
        raise FalseColorError(f"cube has {data.shape[-1]} bands, encoder expects {bundle.bands}")
    if bundle.stage != "classification_tuned":
        warnings.warn("rendering with an encoder that was not tuned for classification", stacklevel=2)
    h, w, b = data.shape
    flat = data.reshape(-1, b)
    rgb = np.clip(bundle.normalize_latents(bundle.encode(flat)), 0.0, 1.0)
    rgb[~flat.any(axis=1)] = 0.0
    return rgb.reshape(h, w, LATENT_DIM)


def save_bundle(bundle: EncoderBundle, path, classifier: Optional[LatentClassifier] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "version": BUNDLE_VERSION,
        "bands": bundle.bands,
        "hidden": [bundle.encoder[0].out_features, bundle.encoder[2].out_features],
        "stage": bundle.stage,
        "category": bundle.category,
        "heldout_mse": bundle.heldout_mse,
        "train_mse": bundle.train_mse,
        "metrics": bundle.metrics,
        "classifier": None if classifier is None else classifier.cfg.to_dict(),
    }
    arrays = {
        "latent_min": bundle.latent_min,
        "latent_max": bundle.latent_max,
        "input_mean": bundle.input_mean,
        "input_scale": bundle.input_scale,
    }
    for prefix, mod in (("encoder", bundle.encoder), ("decoder", bundle.decoder)):
        arrays.update({f"{prefix}.{k}": v.detach().numpy() for k, v in mod.state_dict().items()})
    if classifier is not None:
        arrays.update({f"classifier.{k}": v.detach().numpy() for k, v in classifier.state_dict().items()})
    with path.open("wb") as fh:
        np.savez(fh, __header__=np.array(json.dumps(header)), **arrays)
    return path


def load_bundle(path):
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["__header__"]))
        b, hidden = header["bands"], tuple(header["hidden"])
        bundle = EncoderBundle(
            make_encoder(b, hidden), make_decoder(b, hidden), b,
            z["latent_min"].copy(), z["latent_max"].copy(),
            z["input_mean"].copy(), z["input_scale"].copy(),
            stage=header["stage"], category=header["category"],
            heldout_mse=header["heldout_mse"], train_mse=header["train_mse"],
            metrics=header.get("metrics", {}),
        )

        def sub(prefix):
            return {k[len(prefix) + 1 :]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith(prefix + ".")}

        bundle.encoder.load_state_dict(sub("encoder"))
        bundle.decoder.load_state_dict(sub("decoder"))
        clf = None
        if header["classifier"] is not None:
            c = header["classifier"]
            clf = LatentClassifier(widths=tuple(c["widths"]), hidden=c["hidden"], n_classes=c["n_classes"])
            clf.load_state_dict(sub("classifier"))
            clf.eval()
    return bundle, clf
