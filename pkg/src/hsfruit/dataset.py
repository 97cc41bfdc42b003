"""Label taxonomy, fruit-grouped stratified splitting, class balancing and augmentation."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .preprocess import resize_array

FRUITS = ("avocado", "kiwi")
CAMERA_NAMES = ("specim_fx10", "redeye_17")
CATEGORIES = ("firmness", "sweetness", "ripeness")
RIPENESS_STATES = ("unripe", "perfect", "overripe")
CLASS_NAMES = {
    "firmness": ("too hard", "perfect", "too soft"),
    "sweetness": ("not sweet", "perfect", "too sweet"),
    "ripeness": RIPENESS_STATES,
}
SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (3 / 4, 1 / 8, 1 / 8)

# (too hard above, too soft below) in g/cm^2
FIRMNESS_BOUNDS = {"avocado": (1200.0, 900.0), "kiwi": (1500.0, 1000.0)}
# (not sweet below, too sweet above) in degrees Brix, kiwi only
SWEETNESS_BOUNDS = (15.5, 17.0)


class LabelError(ValueError):
    pass


class SplitError(ValueError):
    pass


@dataclass(frozen=True)
class ClassLabel:
    category: str
    class_index: int

    @property
    def name(self) -> str:
        return CLASS_NAMES[self.category][self.class_index]


@dataclass
class LabelRecord:
    recording_id: str
    fruit: str
    camera: str
    day: int
    series: int = 1
    side: str = "front"
    firmness_g_cm2: Optional[float] = None
    sugar_brix: Optional[float] = None
    ripeness_state: Optional[str] = None
    fruit_id: Optional[str] = None
    path: Optional[str] = None

    def __post_init__(self):
        if self.fruit not in FRUITS:
            raise LabelError(f"unknown fruit '{self.fruit}'")
        if self.camera not in CAMERA_NAMES:
            raise LabelError(f"unknown camera '{self.camera}'")
        if self.series not in (1, 2):
            raise LabelError(f"series must be 1 or 2, got {self.series}")
        if self.side not in ("front", "back"):
            raise LabelError(f"side must be front or back, got '{self.side}'")
        if self.sugar_brix is not None and self.fruit != "kiwi":
            raise LabelError(f"{self.recording_id}: sugar content is only recorded for kiwis")
        if self.ripeness_state is not None and self.ripeness_state not in RIPENESS_STATES:
            raise LabelError(f"unknown ripeness state '{self.ripeness_state}'")
        if self.fruit_id is None:
            self.fruit_id = self.recording_id

    @property
    def is_labeled(self) -> bool:
        return any(v is not None for v in (self.firmness_g_cm2, self.sugar_brix, self.ripeness_state))

    def label(self, category: str) -> Optional[ClassLabel]:
        """Class for ``category`` or None if this record carries no such measurement."""
        if category == "firmness":
            if self.firmness_g_cm2 is None:
                return None
            return assign_firmness_class(self.fruit, self.firmness_g_cm2)
        if category == "sweetness":
            if self.sugar_brix is None or self.fruit != "kiwi":
                return None
            return assign_sweetness_class(self.fruit, self.sugar_brix)
        if category == "ripeness":
            if self.ripeness_state is None:
                return None
            return ClassLabel("ripeness", RIPENESS_STATES.index(self.ripeness_state))
        raise LabelError(f"unknown category '{category}'")


def assign_firmness_class(fruit: str, firmness_g_cm2: float) -> ClassLabel:
    if fruit not in FIRMNESS_BOUNDS:
        raise LabelError(f"unknown fruit '{fruit}'")
    if not firmness_g_cm2 > 0:
        raise LabelError(f"firmness must be positive, got {firmness_g_cm2}")
    hard, soft = FIRMNESS_BOUNDS[fruit]
    # boundary values count as perfect: the outer classes use strict inequalities
    if firmness_g_cm2 > hard:
        return ClassLabel("firmness", 0)
    if firmness_g_cm2 < soft:
        return ClassLabel("firmness", 2)
    return ClassLabel("firmness", 1)


def assign_sweetness_class(fruit: str, brix: float) -> ClassLabel:
    if fruit != "kiwi":
        raise LabelError("sweetness classes are only defined for kiwis")
    if brix < 0:
        raise LabelError(f"sugar content must be nonnegative, got {brix}")
    low, high = SWEETNESS_BOUNDS
    if brix < low:
        return ClassLabel("sweetness", 0)
    if brix > high:
        return ClassLabel("sweetness", 2)
    return ClassLabel("sweetness", 1)


# -- manifest I/O -----------------------------------------------------------------

_FIELD_TYPES = {
    "day": int,
    "series": int,
    "firmness_g_cm2": float,
    "sugar_brix": float,
}


def _coerce(row: dict) -> dict:
    out = {}
    names = {f.name for f in fields(LabelRecord)}
    for k, v in row.items():
        if k not in names:
            continue
        if v == "" or v is None:
            out[k] = None
        elif k in _FIELD_TYPES:
            out[k] = _FIELD_TYPES[k](v)
        else:
            out[k] = v
    return out


def write_manifest(records: Sequence[LabelRecord], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [asdict(r) for r in records]
    if path.suffix == ".csv":
        with path.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=[f.name for f in fields(LabelRecord)])
            w.writeheader()
            for row in rows:
                w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    else:
        path.write_text(json.dumps(rows, indent=1))
    return path


def read_manifest(path) -> list[LabelRecord]:
    path = Path(path)
    if path.suffix == ".csv":
        with path.open(newline="") as fh:
            rows = list(csv.DictReader(fh))
    else:
        rows = json.loads(path.read_text())
    return [LabelRecord(**_coerce(r)) for r in rows]


# -- splitting ---------------------------------------------------------------------


def largest_remainder(total: int, ratios: Sequence[float], rng=None) -> np.ndarray:
    """Integer apportionment of ``total`` following ``ratios``."""
    exact = total * np.asarray(ratios, dtype=np.float64) / sum(ratios)
    counts = np.floor(exact + 1e-9).astype(int)
    frac = exact - counts
    left = total - counts.sum()
    tiebreak = rng.random(len(ratios)) if rng is not None else np.zeros(len(ratios))
    order = np.lexsort((tiebreak, -np.round(frac, 9)))
    counts[order[:left]] += 1
    return counts


def _class_counts(n_by_class: dict, ratios, rng) -> dict:
    # per-class floors; leftover units go to splits with the largest fractional
    # share that still have room under the global apportionment, at most one
    # extra unit per split and class
    target = largest_remainder(sum(n_by_class.values()), ratios, rng)
    share = np.asarray(ratios, dtype=np.float64) / sum(ratios)
    out, fracs = {}, {}
    for c, n in n_by_class.items():
        exact = n * share
        out[c] = np.floor(exact + 1e-9).astype(int)
        fracs[c] = exact - out[c]
    deficit = target - sum(out.values())
    for c in n_by_class:
        used = np.zeros(len(ratios), dtype=bool)
        for _ in range(n_by_class[c] - out[c].sum()):
            key = [(not used[s], deficit[s] > 0, round(fracs[c][s], 9), deficit[s]) for s in range(len(ratios))]
            s = max(range(len(ratios)), key=lambda s: key[s])
            out[c][s] += 1
            used[s] = True
            deficit[s] -= 1
    return out


def split(
    records: Sequence[LabelRecord],
    category: str,
    ratios: Sequence[float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> dict:
    """Stratified train/val/test assignment ``{recording_id: split}``.

    Apportionment runs over physical fruit, so front and back recordings of
    one fruit always land in the same split.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise SplitError("ratios must be three nonnegative numbers")
    groups: dict[str, list[LabelRecord]] = {}
    for r in records:
        groups.setdefault(r.fruit_id, []).append(r)
    by_class: dict[int, list[str]] = {}
    for fid, recs in sorted(groups.items()):
        labels = {None if r.label(category) is None else r.label(category).class_index for r in recs}
        if None in labels:
            bad = [r.recording_id for r in recs if r.label(category) is None]
            raise SplitError(f"records without a {category} label: {bad}")
        if len(labels) > 1:
            raise SplitError(f"fruit {fid} has conflicting {category} classes {sorted(labels)}")
        by_class.setdefault(labels.pop(), []).append(fid)
    for c, fids in sorted(by_class.items()):
        if len(fids) < 3:
            raise SplitError(
                f"class '{CLASS_NAMES[category][c]}' has only {len(fids)} physical fruit, need at least 3"
            )
    rng = np.random.default_rng(seed)
    counts = _class_counts({c: len(f) for c, f in sorted(by_class.items())}, ratios, rng)
    assignment = {}
    for c, fids in sorted(by_class.items()):
        order = rng.permutation(len(fids))
        bounds = np.cumsum(counts[c])
        for pos, i in enumerate(order):
            s = SPLITS[int(np.searchsorted(bounds, pos, side="right"))]
            for r in groups[fids[i]]:
                assignment[r.recording_id] = s
    return assignment


def write_split(assignment: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dict(sorted(assignment.items())), indent=1))
    return path


def read_split(path) -> dict:
    return json.loads(Path(path).read_text())


def balance(labels: Sequence[int], n_classes: int = 3) -> np.ndarray:
    """Per-record sampling weights giving every class the same total weight."""
    y = np.asarray(labels, dtype=int)
    if y.size == 0:
        raise SplitError("cannot balance an empty training set")
    counts = np.bincount(y, minlength=n_classes)
    if np.any(counts == 0):
        empty = [i for i in range(n_classes) if counts[i] == 0]
        raise SplitError(f"classes {empty} have no training records")
    return 1.0 / (n_classes * counts[y])


# -- augmentation -------------------------------------------------------------------


@dataclass
class AugmentationConfig:
    rotation: bool = True
    flip: bool = True
    random_noise: bool = True
    random_cut: bool = True
    noise_sigma: float = 0.05
    cut_range: tuple = (0.7, 1.0)
    probability: float = 0.5
    reference_std: Optional[object] = field(default=None, repr=False)
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        lo, hi = self.cut_range
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"cut_range {self.cut_range} must lie in (0, 1]")

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        return cls(rotation=False, flip=False, random_noise=False, random_cut=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cut_range"] = list(self.cut_range)
        d.pop("reference_std")
        return d


def band_std(cubes: Iterable[np.ndarray]) -> np.ndarray:
    """Band-wise std over all nonzero (fruit) pixels; reference scale for noise."""
    n, s, s2 = 0, 0.0, 0.0
    for c in cubes:
        flat = np.asarray(c, dtype=np.float64).reshape(-1, c.shape[-1])
        flat = flat[flat.any(axis=1)]
        n += flat.shape[0]
        s = s + flat.sum(axis=0)
        s2 = s2 + (flat**2).sum(axis=0)
    if n == 0:
        raise ValueError("no fruit pixels to estimate the band std from")
    mean = s / n
    return np.sqrt(np.maximum(s2 / n - mean**2, 0.0))


def random_cut(data: np.ndarray, rng: np.random.Generator, cut_range=(0.7, 1.0)) -> np.ndarray:
    h, w = data.shape[:2]
    ch = max(1, int(round(h * rng.uniform(*cut_range))))
    cw = max(1, int(round(w * rng.uniform(*cut_range))))
    r0 = int(rng.integers(0, h - ch + 1))
    c0 = int(rng.integers(0, w - cw + 1))
    return resize_array(data[r0 : r0 + ch, c0 : c0 + cw], h, w)


def augment(data: np.ndarray, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    """Randomly augment one H x W x B array.

    Each enabled transform fires independently with ``cfg.probability``.
    Noise is added to fruit (nonzero) pixels only, scaled per band by
    ``cfg.reference_std`` or, failing that, the array's own band std.
    """
    out = data
    p = cfg.probability
    if cfg.rotation and rng.random() < p:
        out = np.rot90(out, k=int(rng.integers(1, 4)), axes=(0, 1))
    if cfg.flip:
        if rng.random() < p:
            out = out[:, ::-1]
        if rng.random() < p:
            out = out[::-1, :]
    if cfg.random_cut and rng.random() < p:
        out = random_cut(np.ascontiguousarray(out), rng, cfg.cut_range)
    if cfg.random_noise and cfg.noise_sigma > 0 and rng.random() < p:
        fruit = out.any(axis=2)
        ref = cfg.reference_std
        if ref is None:
            ref = band_std([out])
        scale = cfg.noise_sigma * np.broadcast_to(np.asarray(ref, dtype=np.float64), (out.shape[2],))
        noise = rng.standard_normal(out.shape) * scale
        out = out + (noise * fruit[..., None]).astype(out.dtype)
    return np.ascontiguousarray(out)


# 8 deterministic views: identity, 3 rotations, 4 flip combinations
def dihedral_view(data: np.ndarray, k: int) -> np.ndarray:
    if not 0 <= k < 8:
        raise ValueError("view index must be in 0..7")
    out = np.rot90(data, k=k % 4, axes=(-3, -2)) if k < 4 else data
    if k == 4:
        out = data[..., :, ::-1, :]
    elif k == 5:
        out = data[..., ::-1, :, :]
    elif k == 6:
        out = np.rot90(data[..., :, ::-1, :], k=1, axes=(-3, -2))
    elif k == 7:
        out = np.rot90(data[..., ::-1, :, :], k=1, axes=(-3, -2))
    return np.ascontiguousarray(out)


def derived_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for (seed, epoch, worker, ...) streams."""
    return np.random.default_rng(np.random.SeedSequence([seed, *keys]))

