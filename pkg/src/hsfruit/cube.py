"""Hyperspectral cube containers and reference-based reflectance calibration.

All in-memory cubes are band-last (H, W, B).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class CubeError(ValueError):
    """Raised for inconsistent cube shapes, axes or coordinates."""


@dataclass(frozen=True)
class WavelengthAxis:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 1:
            raise CubeError("wavelength axis needs at least one band")
        if not np.all(np.isfinite(v)):
            raise CubeError("wavelength axis contains non-finite values")
        if v.size > 1 and np.any(np.diff(v) <= 0):
            raise CubeError("wavelength axis must be strictly increasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, WavelengthAxis):
            return NotImplemented
        return self.values.shape == other.values.shape and np.allclose(
            self.values, other.values, rtol=0, atol=1e-6
        )

    __hash__ = None

    @classmethod
    def linspace(cls, low: float, high: float, n: int) -> "WavelengthAxis":
        return cls(np.linspace(low, high, n))

    def index_of(self, nm: float) -> int:
        """Index of the band closest to ``nm``."""
        return int(np.argmin(np.abs(self.values - nm)))


@dataclass(frozen=True)
class CameraProfile:
    name: str
    band_count: int
    range_nm: tuple

    def __post_init__(self):
        if self.band_count <= 0:
            raise CubeError("band_count must be positive")
        if not self.range_nm[0] < self.range_nm[1]:
            raise CubeError("camera range must satisfy low < high")

    def axis(self) -> WavelengthAxis:
        return WavelengthAxis.linspace(self.range_nm[0], self.range_nm[1], self.band_count)


SPECIM_FX10 = CameraProfile("specim_fx10", 224, (400.0, 1000.0))
REDEYE_17 = CameraProfile("redeye_17", 252, (950.0, 1700.0))
CAMERAS = {p.name: p for p in (SPECIM_FX10, REDEYE_17)}


def _check_shape(data: np.ndarray, axis: WavelengthAxis):
    if data.ndim != 3:
        raise CubeError(f"expected an H x W x B array, got shape {data.shape}")
    if data.shape[2] != len(axis):
        raise CubeError(
            f"data has {data.shape[2]} bands but the wavelength axis has {len(axis)}"
        )


@dataclass(frozen=True)
class RawFrame:
    """Uncalibrated sensor counts."""

    data: np.ndarray
    axis: WavelengthAxis

    def __post_init__(self):
        _check_shape(self.data, self.axis)
        if np.any(self.data < 0):
            raise CubeError("raw counts must be nonnegative")

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True)
class HyperCube:
    """Reflectance volume. ``mask`` marks valid (H, W) pixels when present."""

    data: np.ndarray
    axis: WavelengthAxis
    mask: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        _check_shape(self.data, self.axis)
        if not np.all(np.isfinite(self.data)):
            raise CubeError("reflectance values must be finite")
        if self.mask is not None and self.mask.shape != self.data.shape[:2]:
            raise CubeError(
                f"mask shape {self.mask.shape} does not match spatial shape {self.data.shape[:2]}"
            )

    @property
    def shape(self):
        return self.data.shape

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, mask=None) -> "HyperCube":
        return HyperCube(data, self.axis, mask)


def spectrum_at(cube: HyperCube, x: int, y: int) -> np.ndarray:
    """Spectrum at column ``x``, row ``y``."""
    h, w = cube.data.shape[:2]
    if not (0 <= x < w and 0 <= y < h):
        raise CubeError(f"pixel ({x}, {y}) outside a {w} x {h} image")
    return cube.data[y, x, :].copy()


def average_references(frames: Sequence[RawFrame]) -> RawFrame:
    if len(frames) == 0:
        raise CubeError("need at least one reference frame")
    first = frames[0]
    for i, f in enumerate(frames[1:], start=1):
        if f.data.shape != first.data.shape or f.axis != first.axis:
            raise CubeError(f"reference frame {i} does not match frame 0 in shape or axis")
    stack = np.stack([np.asarray(f.data, dtype=np.float64) for f in frames])
    return RawFrame(stack.mean(axis=0), first.axis)


def calibrate(raw: RawFrame, white: RawFrame, dark: RawFrame) -> HyperCube:
    """Flat-field correction ``(raw - dark) / (white - dark)``.

    Elements where white equals dark are set to 0 and their pixel is
    flagged invalid in the returned mask. Values are not clipped.
    """
    for name, ref in (("white", white), ("dark", dark)):
        if ref.data.shape != raw.data.shape:
            raise CubeError(f"{name} reference shape {ref.data.shape} != raw {raw.data.shape}")
        if ref.axis != raw.axis:
            raise CubeError(f"{name} reference wavelength axis differs from raw")
    r = np.asarray(raw.data, dtype=np.float64)
    w = np.asarray(white.data, dtype=np.float64)
    d = np.asarray(dark.data, dtype=np.float64)
    span = w - d
    dead = span == 0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(dead, 0.0, (r - d) / np.where(dead, 1.0, span))
    return HyperCube(out, raw.axis, mask=~dead.any(axis=2))
