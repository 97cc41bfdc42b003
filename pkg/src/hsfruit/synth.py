"""Synthetic hyperspectral fruit with known ripeness, labels and masks.

A fruit is an ellipse on a zero background. Its spectrum is a smooth base
curve plus ripeness-dependent contributions confined to designated signal
bands, plus optional per-fruit nuisance variation and pixel noise.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .cube import SPECIM_FX10, CameraProfile, HyperCube
from .dataset import (
    FIRMNESS_BOUNDS,
    RIPENESS_STATES,
    SWEETNESS_BOUNDS,
    LabelRecord,
    assign_firmness_class,
    write_manifest,
)


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class SignalBand:
    """Ripeness-dependent contribution ``amplitude(t) * profile(wavelength)``.

    ``bump`` is a raised cosine of half width ``half_width_nm`` around the
    centre; ``step`` rises smoothly from the centre over ``half_width_nm``
    and stays at 1 above it. Both are exactly zero outside their support.
    """

    center_nm: float
    half_width_nm: float
    at_t0: float
    at_t1: float
    kind: str = "bump"

    def profile(self, wl: np.ndarray) -> np.ndarray:
        u = (wl - self.center_nm) / self.half_width_nm
        if self.kind == "bump":
            return np.where(np.abs(u) < 1, 0.5 * (1 + np.cos(np.pi * u)), 0.0)
        if self.kind == "step":
            ramp = np.clip(u, 0.0, 1.0)
            return ramp * ramp * (3 - 2 * ramp)
        raise SynthError(f"unknown signal kind '{self.kind}'")

    def support(self) -> tuple[float, float]:
        if self.kind == "bump":
            return self.center_nm - self.half_width_nm, self.center_nm + self.half_width_nm
        return self.center_nm, np.inf

    def amplitude(self, t: float) -> float:
        return (1 - t) * self.at_t0 + t * self.at_t1


# chlorophyll dip fading with ripeness, NIR reflectance rising above 800 nm
CHLOROPHYLL_DIP = SignalBand(680.0, 30.0, -0.15, -0.02, "bump")
NIR_SHIFT = SignalBand(800.0, 150.0, 0.0, 0.15, "step")
DEFAULT_SIGNALS = (CHLOROPHYLL_DIP, NIR_SHIFT)


def nir_only_signals(center_nm: float = 900.0, half_width_nm: float = 15.0, gain: float = 0.12):
    return (SignalBand(center_nm, half_width_nm, 0.0, gain, "bump"),)


@dataclass(frozen=True)
class SynthSpec:
    camera: CameraProfile = SPECIM_FX10
    t: float = 0.5
    signals: tuple = DEFAULT_SIGNALS
    noise_sigma: float = 0.01
    nuisance: float = 0.0
    height: int = 64
    width: int = 64
    # centre row/col and radii as fractions of the image size
    ellipse: tuple = (0.5, 0.5, 0.4, 0.35)
    fruit: str = "avocado"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise SynthError(f"ripeness t={self.t} outside [0, 1]")
        if self.noise_sigma < 0 or self.nuisance < 0:
            raise SynthError("noise levels must be nonnegative")
        lo, hi = self.camera.range_nm
        for s in self.signals:
            if not lo <= s.center_nm <= hi:
                raise SynthError(f"signal at {s.center_nm} nm outside camera range {lo}-{hi} nm")


def base_reflectance(wl: np.ndarray) -> np.ndarray:
    """Smooth fruit-like curve: low visible reflectance, red edge near 720 nm."""
    vis = 0.12 + 0.06 * np.exp(-0.5 * ((wl - 550.0) / 40.0) ** 2)
    edge = 0.35 / (1 + np.exp(-(wl - 720.0) / 25.0))
    return vis + edge + 0.05 * (wl - 400.0) / 1300.0


def fruit_spectrum(spec: SynthSpec, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Noise-free mean spectrum of the fruit, including nuisance variation."""
    wl = spec.camera.axis().values
    s = base_reflectance(wl)
    for sig in spec.signals:
        s = s + sig.amplitude(spec.t) * sig.profile(wl)
    if spec.nuisance > 0:
        rng = rng if rng is not None else np.random.default_rng(spec.seed)
        x = (wl - wl[0]) / max(wl[-1] - wl[0], 1e-9)
        a = rng.normal(0.0, spec.nuisance, size=3)
        s = s + a[0] + a[1] * np.cos(np.pi * x) + a[2] * np.cos(2 * np.pi * x)
    return s


def ellipse_mask(spec: SynthSpec) -> np.ndarray:
    cy, cx, ry, rx = spec.ellipse
    if ry <= 0 or rx <= 0:
        raise SynthError(f"degenerate ellipse radii ({ry}, {rx})")
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    yy = (yy + 0.5) / spec.height
    xx = (xx + 0.5) / spec.width
    mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    if not mask.any():
        raise SynthError("ellipse covers no pixel")
    return mask


def firmness_for(fruit: str, t: float) -> float:
    """Affine firmness with the class thresholds at t = 1/3 and t = 2/3."""
    hard, soft = FIRMNESS_BOUNDS[fruit]
    step = hard - soft
    return hard + step - 3 * step * t


def brix_for(t: float) -> float:
    low, high = SWEETNESS_BOUNDS
    step = high - low
    return low - step + 3 * step * t


def ripeness_class(t: float) -> int:
    return 0 if t < 1 / 3 else (2 if t > 2 / 3 else 1)


def generate_cube(spec: SynthSpec, recording_id: str = "synth", day: Optional[int] = None):
    """Return ``(cube, record, mask)`` for one synthetic recording."""
    rng = np.random.default_rng(spec.seed)
    mask = ellipse_mask(spec)
    mean = fruit_spectrum(spec, rng)
    b = mean.size
    data = np.zeros((spec.height, spec.width, b), dtype=np.float64)
    n = int(mask.sum())
    pixels = np.broadcast_to(mean, (n, b))
    if spec.noise_sigma > 0:
        pixels = pixels + rng.normal(0.0, spec.noise_sigma, size=(n, b))
    data[mask] = pixels
    cube = HyperCube(data, spec.camera.axis(), mask=mask.copy())
    record = LabelRecord(
        recording_id=recording_id,
        fruit=spec.fruit,
        camera=spec.camera.name,
        day=int(round(spec.t * 9)) if day is None else day,
        firmness_g_cm2=round(firmness_for(spec.fruit, spec.t), 6),
        sugar_brix=round(brix_for(spec.t), 6) if spec.fruit == "kiwi" else None,
        ripeness_state=RIPENESS_STATES[ripeness_class(spec.t)],
    )
    return cube, record, mask


@dataclass
class SynthDataset:
    cubes: list
    records: list
    masks: list
    ripeness: np.ndarray
    manifest: list = field(default_factory=list)


def class_counts(n: int, balance: Sequence[float]) -> list[int]:
    w = np.asarray(balance, dtype=np.float64)
    if w.size != 3 or np.any(w < 0) or w.sum() == 0:
        raise SynthError(f"class balance must be three nonnegative weights, got {balance}")
    exact = n * w / w.sum()
    counts = np.floor(exact).astype(int)
    counts[np.argsort(-(exact - counts), kind="stable")[: n - counts.sum()]] += 1
    if np.any((w > 0) & (counts == 0)):
        raise SynthError(f"n={n} cannot realise class balance {list(balance)}")
    return counts.tolist()


def generate_dataset(
    n: int,
    balance: Sequence[float] = (1, 1, 1),
    camera: CameraProfile = SPECIM_FX10,
    seed: int = 0,
    fruit: str = "avocado",
    signals: tuple = DEFAULT_SIGNALS,
    noise_sigma: float = 0.01,
    nuisance: float = 0.0,
    size: int = 64,
    margin: float = 0.1,
    jitter: float = 0.05,
    dtype=np.float32,
    out_dir=None,
) -> SynthDataset:
    """``n`` recordings with class counts following ``balance``.

    Ripeness is drawn uniformly inside each class's third of [0, 1], keeping
    ``margin`` (fraction of the third) away from the class boundaries.
    If ``out_dir`` is given, cubes are written as ENVI pairs next to a
    ``manifest.json``.
    """
    if n < 3:
        raise SynthError("need at least 3 recordings")
    counts = class_counts(n, balance)
    rng = np.random.default_rng(seed)
    ts = []
    for c, k in enumerate(counts):
        lo = (c + margin) / 3
        hi = (c + 1 - margin) / 3
        ts.extend(rng.uniform(lo, hi, size=k))
    ts = np.asarray(ts)[rng.permutation(n)]
    seeds = rng.integers(0, 2**31 - 1, size=n)
    cubes, records, masks = [], [], []
    for i, (t, s) in enumerate(zip(ts, seeds)):
        erng = np.random.default_rng(s + 1)
        ell = (
            0.5 + erng.uniform(-jitter, jitter),
            0.5 + erng.uniform(-jitter, jitter),
            0.38 + erng.uniform(-jitter, jitter),
            0.32 + erng.uniform(-jitter, jitter),
        )
        spec = SynthSpec(
            camera=camera, t=float(t), signals=signals, noise_sigma=noise_sigma,
            nuisance=nuisance, height=size, width=size, ellipse=ell, fruit=fruit, seed=int(s),
        )
        cube, rec, mask = generate_cube(spec, recording_id=f"{fruit}_synth_{i:04d}")
        if dtype is not None:
            cube = HyperCube(cube.data.astype(dtype), cube.axis, cube.mask)
        cubes.append(cube)
        records.append(rec)
        masks.append(mask)
    ds = SynthDataset(cubes, records, masks, ts)
    ds.manifest = [asdict(r) for r in records]
    if out_dir is not None:
        save_dataset(ds, out_dir)
    return ds


def save_dataset(ds: SynthDataset, out_dir) -> Path:
    from .envi import save_cube

    out = Path(out_dir)
    (out / "cubes").mkdir(parents=True, exist_ok=True)
    for cube, rec in zip(ds.cubes, ds.records):
        rel = Path("cubes") / f"{rec.recording_id}.bin"
        save_cube(cube, out / rel)
        rec.path = str(rel)
    ds.manifest = [asdict(r) for r in ds.records]
    write_manifest(ds.records, out / "manifest.json")
    (out / "ripeness.json").write_text(
        json.dumps({r.recording_id: float(t) for r, t in zip(ds.records, ds.ripeness)}, indent=1)
    )
    return out


def ripening_series(steps: Sequence[float], spec: SynthSpec = SynthSpec()) -> list:
    """One cube per ripeness value, identical shape and noise seed."""
    return [generate_cube(replace(spec, t=float(t)))[0] for t in steps]


def firmness_classes(records) -> list[int]:
    return [assign_firmness_class(r.fruit, r.firmness_g_cm2).class_index for r in records]
