"""Background removal, cropping, resizing and channel reduction (RGB, PCA)."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage
from sklearn.model_selection import train_test_split
from sklearn.neural_network import MLPClassifier

from .cube import HyperCube, WavelengthAxis

log = logging.getLogger(__name__)

VISIBLE_NM = (380.0, 740.0)

# linear sRGB from CIE XYZ (D65)
XYZ_TO_SRGB = np.array(
    [
        [3.2404542, -1.5371385, -0.4985314],
        [-0.9692660, 1.8760108, 0.0415560],
        [0.0556434, -0.2040259, 1.0572252],
    ]
)
BRADFORD = np.array(
    [
        [0.8951, 0.2664, -0.1614],
        [-0.7502, 1.7135, 0.0367],
        [0.0389, -0.0685, 1.0296],
    ]
)
D65_WHITE = np.array([0.95047, 1.0, 1.08883])


class PreprocessError(ValueError):
    pass


# -- background segmentation ------------------------------------------------


@dataclass
class PixelClassifier:
    """Per-pixel fruit/background model with one hidden layer of 16 units."""

    model: MLPClassifier
    bands: int
    heldout_accuracy: float

    def predict_proba(self, spectra: np.ndarray) -> np.ndarray:
        spectra = np.asarray(spectra, dtype=np.float64).reshape(-1, self.bands)
        fruit_col = list(self.model.classes_).index(1)
        return self.model.predict_proba(spectra)[:, fruit_col]


class ConstantClassifier(PixelClassifier):
    """Returns a fixed probability; useful for tests and pre-masked data."""

    def __init__(self, bands: int, p: float = 1.0):
        self.model = None
        self.bands = bands
        self.heldout_accuracy = float("nan")
        self.p = p

    def predict_proba(self, spectra):
        n = np.asarray(spectra).reshape(-1, self.bands).shape[0]
        return np.full(n, self.p)


def train_background_classifier(
    spectra, is_fruit, holdout: float = 0.2, seed: int = 0, max_iter: int = 500
) -> PixelClassifier:
    X = np.asarray(spectra, dtype=np.float64)
    y = np.asarray(is_fruit).astype(int)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise PreprocessError("expected an (N, B) spectra array and N labels")
    counts = np.bincount(y, minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise PreprocessError(
            f"background classifier needs both classes, got {counts[1]} fruit and {counts[0]} background pixels"
        )
    strat = y if counts.min() >= 2 else None
    Xtr, Xte, ytr, yte = train_test_split(X, y, test_size=holdout, random_state=seed, stratify=strat)
    if len(np.unique(ytr)) < 2:
        Xtr, ytr = X, y
    mlp = MLPClassifier(hidden_layer_sizes=(16,), max_iter=max_iter, random_state=seed)
    mlp.fit(Xtr, ytr)
    acc = float((mlp.predict(Xte) == yte).mean())
    log.info("background classifier held-out accuracy %.4f on %d pixels", acc, len(yte))
    return PixelClassifier(mlp, X.shape[1], acc)


def largest_component(mask: np.ndarray) -> np.ndarray:
    labels, n = ndimage.label(mask)
    if n <= 1:
        return mask.astype(bool)
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    return labels == sizes.argmax()


def segment(cube: HyperCube, clf: PixelClassifier, threshold: float = 0.5) -> np.ndarray:
    """Fruit mask: ``P(fruit) > threshold`` reduced to its largest connected component."""
    if cube.bands != clf.bands:
        raise PreprocessError(f"cube has {cube.bands} bands, classifier expects {clf.bands}")
    h, w, b = cube.shape
    p = clf.predict_proba(cube.data.reshape(-1, b)).reshape(h, w)
    return largest_component(p > threshold)


def crop_to_fruit(cube: HyperCube, mask: np.ndarray) -> HyperCube:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != cube.shape[:2]:
        raise PreprocessError(f"mask shape {mask.shape} != cube spatial shape {cube.shape[:2]}")
    if not mask.any():
        raise PreprocessError("cannot crop to an empty mask")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    sub_mask = mask[r0:r1, c0:c1]
    data = cube.data[r0:r1, c0:c1, :] * sub_mask[..., None]
    return HyperCube(data, cube.axis, mask=sub_mask.copy())


def resize(cube: HyperCube, out_h: int = 64, out_w: int = 64) -> HyperCube:
    """Bilinear resize of every band (half-pixel centres, edge clamped)."""
    h, w, _ = cube.shape
    if (h, w) == (out_h, out_w):
        return HyperCube(cube.data.copy(), cube.axis, cube.mask)
    data = resize_array(cube.data, out_h, out_w)
    mask = None
    if cube.mask is not None:
        mask = resize_array(cube.mask[..., None].astype(np.float64), out_h, out_w)[..., 0] >= 0.5
    return HyperCube(data, cube.axis, mask)


def resize_array(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    t = torch.from_numpy(np.ascontiguousarray(data, dtype=np.float64)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(out_h, out_w), mode="bilinear", align_corners=False)
    return out[0].permute(1, 2, 0).numpy().astype(data.dtype, copy=False)


# -- RGB reduction ------------------------------------------------------------


@lru_cache(maxsize=1)
def cie_table() -> np.ndarray:
    """Rows of (wavelength_nm, x_bar, y_bar, z_bar) at 5 nm from 380 to 740 nm."""
    ref = resources.files("hsfruit") / "data" / "cie1931_2deg_5nm.csv"
    with ref.open() as fh:
        return np.loadtxt(fh, delimiter=",", comments="#", skiprows=2)


def cmf_on_axis(axis: WavelengthAxis) -> tuple[np.ndarray, np.ndarray]:
    """Colour matching functions interpolated to ``axis`` and trapezoid weights.

    Returns ``(cmf, weights)``, ``cmf`` being (B, 3); bands outside the
    visible range get zero weight.
    """
    tab = cie_table()
    wl = axis.values
    inside = (wl >= VISIBLE_NM[0]) & (wl <= VISIBLE_NM[1])
    if inside.sum() == 0:
        raise PreprocessError(
            f"no visible band: axis spans {wl[0]:.0f}-{wl[-1]:.0f} nm, CIE table 380-740 nm"
        )
    cmf = np.stack([np.interp(wl, tab[:, 0], tab[:, i], left=0, right=0) for i in (1, 2, 3)], axis=1)
    cmf[~inside] = 0.0
    weights = np.zeros_like(wl)
    idx = np.flatnonzero(inside)
    if idx.size == 1:
        weights[idx] = 1.0
    else:
        d = np.diff(wl[idx])
        weights[idx[:-1]] += d / 2
        weights[idx[1:]] += d / 2
    return cmf, weights


@lru_cache(maxsize=1)
def _white_adaptation() -> np.ndarray:
    # Bradford transform taking the equal-energy white of the CMF table to
    # D65, so a spectrally flat reflector maps to sRGB white.
    tab = cie_table()
    src = np.trapezoid(tab[:, 1:], tab[:, 0], axis=0)
    src = src / src[1]
    gain = (BRADFORD @ D65_WHITE) / (BRADFORD @ src)
    return np.linalg.inv(BRADFORD) @ np.diag(gain) @ BRADFORD


def spectra_to_linear_rgb(spectra: np.ndarray, axis: WavelengthAxis) -> np.ndarray:
    """Un-normalized linear sRGB, linear in the input spectra (negatives kept).

    Reflectance is integrated against the CIE 1931 2 degree observer, the
    equal-energy white is adapted to D65 and the result goes through the
    sRGB matrix.
    """
    cmf, weights = cmf_on_axis(axis)
    xyz = np.asarray(spectra, dtype=np.float64) @ (cmf * weights[:, None])
    return xyz @ (XYZ_TO_SRGB @ _white_adaptation()).T


def to_rgb(cube: HyperCube) -> np.ndarray:
    """H x W x 3 linear sRGB image, negatives clipped, scaled so the image max is 1."""
    h, w, b = cube.shape
    rgb = spectra_to_linear_rgb(cube.data.reshape(-1, b), cube.axis).reshape(h, w, 3)
    rgb = np.clip(rgb, 0.0, None)
    peak = rgb.max()
    if peak > 0:
        rgb = rgb / peak
    return rgb


# nominal band centres, in increasing order (B, G, R)
RGB_AXIS = WavelengthAxis(np.array([465.0, 550.0, 610.0]))


def rgb_cube(cube: HyperCube) -> HyperCube:
    """:func:`to_rgb` wrapped as a 3-band cube (bands ordered B, G, R by wavelength)."""
    rgb = to_rgb(cube)[..., ::-1]
    return HyperCube(np.ascontiguousarray(rgb), RGB_AXIS, cube.mask)


# -- PCA ------------------------------------------------------------------------


@dataclass(frozen=True)
class PcaProjection:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def k(self) -> int:
        return self.components.shape[0]

    def transform(self, spectra: np.ndarray) -> np.ndarray:
        return (np.asarray(spectra, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components + self.mean


def fit_pca(
    training_pixels: np.ndarray, k: int = 5, max_pixels: int = 200_000, seed: int = 0
) -> PcaProjection:
    """Top-``k`` eigenvectors of the pixel covariance.

    Fit on training-split pixels only; larger inputs are subsampled to
    ``max_pixels`` rows.
    """
    X = np.asarray(training_pixels, dtype=np.float64)
    if X.ndim != 2:
        raise PreprocessError("training pixels must be an (N, B) array")
    n, b = X.shape
    if k > b:
        raise PreprocessError(f"k={k} exceeds the band count {b}")
    if n > max_pixels:
        X = X[np.random.default_rng(seed).choice(n, max_pixels, replace=False)]
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, bias=False).reshape(b, b)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0, None), evecs[:, order]
    tol = max(evals[0], 1e-300) * b * np.finfo(float).eps * 10
    rank = int((evals > tol).sum())
    if rank < k:
        raise PreprocessError(f"pixel spectra have rank {rank} < k={k}")
    comps = evecs[:, :k].T
    # sign convention: largest |loading| positive
    signs = np.sign(comps[np.arange(k), np.abs(comps).argmax(axis=1)])
    comps = comps * signs[:, None]
    total = evals.sum()
    return PcaProjection(mean, comps, evals[:k], evals[:k] / total)


def apply_pca(proj: PcaProjection, cube: HyperCube, keep_background: bool = True) -> HyperCube:
    """Project every pixel onto the components.

    With ``keep_background`` all-zero (background) pixels stay zero so the
    zero-background convention survives the reduction.
    """
    h, w, b = cube.shape
    flat = cube.data.reshape(-1, b)
    scores = proj.transform(flat)
    if keep_background:
        scores[~flat.any(axis=1)] = 0.0
    axis = WavelengthAxis(np.arange(proj.k, dtype=np.float64))
    return HyperCube(scores.reshape(h, w, proj.k), axis, cube.mask)
