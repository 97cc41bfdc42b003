"""Integrated-gradients attribution and its spatial / spectral marginals."""
from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import torch
from torch import nn

from .cube import HyperCube, WavelengthAxis


class AttributionError(ValueError):
    pass


@dataclass
class AttributionResult:
    values: np.ndarray
    target_class: int
    baseline: str
    steps: int
    output_delta: float
    completeness_gap: float

    @property
    def relative_gap(self) -> float:
        return self.completeness_gap / max(abs(self.output_delta), 1e-300)


def integrated_gradients_fn(
    f: Callable[[torch.Tensor], torch.Tensor],
    x: np.ndarray,
    baseline: np.ndarray,
    m: int = 128,
    batch_size: int = 16,
    dtype=torch.float64,
) -> tuple[np.ndarray, float]:
    """Midpoint-rule integrated gradients of a scalar function.

    ``f`` maps a batch shaped ``(N, *x.shape)`` to ``N`` scores. Returns the
    attribution array and ``f(x) - f(baseline)``.
    """
    if m < 1:
        raise AttributionError("need at least one integration step")
    x = np.asarray(x)
    baseline = np.asarray(baseline)
    if x.shape != baseline.shape:
        raise AttributionError(f"baseline shape {baseline.shape} != input shape {x.shape}")
    xt = torch.as_tensor(x, dtype=dtype)
    bt = torch.as_tensor(baseline, dtype=dtype)
    diff = xt - bt
    alphas = (torch.arange(m, dtype=dtype) + 0.5) / m
    grad_sum = torch.zeros_like(xt)
    for start in range(0, m, batch_size):
        a = alphas[start : start + batch_size].reshape(-1, *([1] * x.ndim))
        path = (bt + a * diff).requires_grad_(True)
        out = f(path)
        (g,) = torch.autograd.grad(out.sum(), path)
        grad_sum += g.sum(dim=0)
    attr = (diff * grad_sum / m).numpy()
    with torch.no_grad():
        ends = f(torch.stack([xt, bt]))
    delta = float(ends[0] - ends[1])
    return attr, delta


def integrated_gradients(
    model: nn.Module,
    cube,
    target_class: int,
    baseline: Optional[np.ndarray] = None,
    m: int = 128,
    batch_size: int = 16,
    baseline_name: str = "custom",
) -> AttributionResult:
    """Attribute the pre-softmax score of ``target_class`` to every pixel and band.

    ``cube`` is a :class:`HyperCube` or an (H, W, B) array; the default
    baseline is the all-zero cube. ``baseline_name`` labels a given baseline
    in the result. The model is evaluated in float64 and in inference mode.
    """
    data = cube.data if isinstance(cube, HyperCube) else np.asarray(cube)
    if data.ndim != 3:
        raise AttributionError(f"expected an H x W x B cube, got shape {data.shape}")
    desc = "zeros"
    if baseline is None:
        baseline = np.zeros_like(data, dtype=np.float64)
    else:
        desc = baseline_name
        if np.shape(baseline) != data.shape:
            raise AttributionError(f"baseline shape {np.shape(baseline)} != cube shape {data.shape}")
    net = copy.deepcopy(model).double().eval()

    def score(batch):
        # float64 convolutions have no fast channels-last path, so copy to channels-first
        return net(batch.permute(0, 3, 1, 2).contiguous())[:, target_class]

    attr, delta = integrated_gradients_fn(score, data, baseline, m, batch_size)
    gap = abs(float(attr.sum()) - delta)
    return AttributionResult(attr, int(target_class), desc, m, delta, gap)


def mean_baseline(cubes: np.ndarray) -> np.ndarray:
    """Average training cube: a reference fruit with the class-independent spectrum."""
    return np.asarray(cubes, dtype=np.float64).mean(axis=0)


def spatial_impact(attr: AttributionResult) -> dict:
    """Per-pixel sums over bands, signed and absolute."""
    v = attr.values
    return {"signed": v.sum(axis=2), "absolute": np.abs(v).sum(axis=2)}


def spectral_impact(attr: AttributionResult, axis: Optional[WavelengthAxis] = None) -> dict:
    """Per-band sums over pixels, signed and absolute, with wavelengths."""
    v = attr.values
    b = v.shape[2]
    wl = axis.values if axis is not None else np.arange(b, dtype=np.float64)
    return {
        "wavelength_nm": np.asarray(wl),
        "signed": v.sum(axis=(0, 1)),
        "absolute": np.abs(v).sum(axis=(0, 1)),
    }


def mass_near(profile: dict, center_nm: float, half_window_nm: float) -> float:
    """Fraction of absolute attribution within ``center_nm +- half_window_nm``."""
    wl = profile["wavelength_nm"]
    a = profile["absolute"]
    near = np.abs(wl - center_nm) <= half_window_nm
    total = a.sum()
    return float(a[near].sum() / total) if total > 0 else 0.0


def write_profile_csv(profile: dict, path):
    rows = np.column_stack([profile["wavelength_nm"], profile["signed"], profile["absolute"]])
    np.savetxt(path, rows, delimiter=",", header="wavelength_nm,signed,absolute", comments="", fmt="%.10g")
