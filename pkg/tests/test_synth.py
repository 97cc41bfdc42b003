from dataclasses import replace

import numpy as np
import pytest

from hsfruit.cube import REDEYE_17, SPECIM_FX10
from hsfruit.dataset import read_manifest
from hsfruit.envi import load_cube
from hsfruit.preprocess import crop_to_fruit
from hsfruit.synth import (
    DEFAULT_SIGNALS, SignalBand, SynthError, SynthSpec, class_counts, ellipse_mask, firmness_classes,
    generate_cube, generate_dataset, nir_only_signals, ripeness_class, ripening_series, save_dataset,
)


def test_noiseless_deterministic():
    spec = SynthSpec(noise_sigma=0.0, seed=4, t=0.3)
    a, _, _ = generate_cube(spec)
    b, _, _ = generate_cube(spec)
    assert np.array_equal(a.data, b.data)


def test_t0_vs_t1_differ_only_at_signal_bands():
    spec = SynthSpec(noise_sigma=0.0)
    a, _, m = generate_cube(replace(spec, t=0.0))
    b, _, _ = generate_cube(replace(spec, t=1.0))
    wl = SPECIM_FX10.axis().values
    inside = np.zeros(len(wl), bool)
    for s in DEFAULT_SIGNALS:
        lo, hi = s.support()
        inside |= (wl > lo) & (wl < hi)
    diff = np.abs(a.data - b.data)[m]
    assert diff[:, ~inside].max() < 1e-9
    assert diff[:, inside].max() > 0.05


def test_nir_signal_outside_visible():
    spec = SynthSpec(noise_sigma=0.0, signals=nir_only_signals())
    a, _, m = generate_cube(replace(spec, t=0.0))
    b, _, _ = generate_cube(replace(spec, t=1.0))
    wl = SPECIM_FX10.axis().values
    changed = wl[np.abs(a.data - b.data)[m].max(axis=0) > 1e-9]
    assert changed.min() > 884 and changed.max() < 916


def test_mask_and_crop_background_zero():
    cube, _, mask = generate_cube(SynthSpec(seed=2))
    assert np.all(cube.data[~mask] == 0)
    cropped = crop_to_fruit(cube, mask)
    assert np.all(cropped.data[~cropped.mask] == 0)


def test_mask_recoverable_by_threshold():
    cube, _, mask = generate_cube(SynthSpec(noise_sigma=0.0))
    for band in (0, 100, 223):
        assert np.array_equal(cube.data[..., band] > 0, mask)


def test_dataset_balanced_counts_and_labels():
    ds = generate_dataset(30, seed=1)
    labels = firmness_classes(ds.records)
    assert np.bincount(labels).tolist() == [10, 10, 10]
    assert [ripeness_class(t) for t in ds.ripeness] == labels
    for r in ds.records:
        assert r.label("ripeness").class_index == r.label("firmness").class_index


def test_dataset_deterministic():
    a = generate_dataset(9, seed=3)
    b = generate_dataset(9, seed=3)
    assert a.manifest == b.manifest
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.cubes, b.cubes))


@pytest.mark.parametrize("fruit", ["avocado", "kiwi"])
def test_firmness_round_trip_per_class(fruit):
    ds = generate_dataset(30, seed=0, fruit=fruit, size=16)
    for t, r in zip(ds.ripeness, ds.records):
        assert r.label("firmness").class_index == ripeness_class(t)
        if fruit == "kiwi":
            assert r.label("sweetness").class_index == ripeness_class(t)


def test_imbalanced_counts():
    assert class_counts(10, (2, 1, 1)) == [5, 3, 2]
    with pytest.raises(SynthError):
        class_counts(2, (1, 1, 1))
    with pytest.raises(SynthError):
        generate_dataset(2)


def test_spec_validation():
    with pytest.raises(SynthError):
        SynthSpec(t=1.5)
    with pytest.raises(SynthError):
        SynthSpec(camera=REDEYE_17)  # default signals lie below 950 nm
    with pytest.raises(SynthError):
        ellipse_mask(SynthSpec(ellipse=(0.5, 0.5, 0.0, 0.3)))
    with pytest.raises(SynthError):
        SignalBand(900, 10, 0, 1, "square").profile(np.array([900.0]))


def test_redeye_camera():
    ds = generate_dataset(6, camera=REDEYE_17, signals=nir_only_signals(1200), size=16)
    assert ds.cubes[0].bands == 252 and ds.records[0].camera == "redeye_17"


def test_save_dataset(tmp_path):
    ds = generate_dataset(6, seed=0, size=16)
    save_dataset(ds, tmp_path)
    recs = read_manifest(tmp_path / "manifest.json")
    assert len(recs) == 6
    back = load_cube(tmp_path / recs[0].path)
    np.testing.assert_array_equal(back.data, ds.cubes[0].data)


def test_ripening_series_shapes():
    cubes = ripening_series([0.0, 0.5, 1.0], SynthSpec(height=16, width=16))
    assert len(cubes) == 3 and cubes[0].shape == (16, 16, 224)
