import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hsfruit.dataset import (
    DEFAULT_RATIOS, AugmentationConfig, LabelError, LabelRecord, SplitError, assign_firmness_class,
    assign_sweetness_class, augment, balance, band_std, dihedral_view, largest_remainder, random_cut, read_manifest,
    read_split, split, write_manifest, write_split,
)


@pytest.mark.parametrize("fruit,value,cls", [
    ("avocado", 1300, 0), ("avocado", 1050, 1), ("avocado", 850, 2),
    ("kiwi", 1600, 0), ("kiwi", 1200, 1), ("kiwi", 950, 2),
])
def test_firmness_examples(fruit, value, cls):
    assert assign_firmness_class(fruit, value).class_index == cls


@pytest.mark.parametrize("brix,cls", [(15.0, 0), (16.0, 1), (17.5, 2)])
def test_sweetness_examples(brix, cls):
    assert assign_sweetness_class("kiwi", brix).class_index == cls


@pytest.mark.parametrize("fruit,value", [("avocado", 1200), ("avocado", 900), ("kiwi", 1500), ("kiwi", 1000)])
def test_firmness_ties_are_perfect(fruit, value):
    lab = assign_firmness_class(fruit, value)
    assert lab.class_index == 1 and lab.name == "perfect"


@pytest.mark.parametrize("brix", [15.5, 17.0])
def test_sweetness_ties_are_perfect(brix):
    assert assign_sweetness_class("kiwi", brix).class_index == 1


def test_label_errors():
    with pytest.raises(LabelError):
        assign_firmness_class("banana", 1000)
    with pytest.raises(LabelError):
        assign_firmness_class("kiwi", -5)
    with pytest.raises(LabelError):
        assign_sweetness_class("avocado", 16)
    with pytest.raises(LabelError):
        LabelRecord("r", "avocado", "specim_fx10", 1, sugar_brix=15.0)
    with pytest.raises(LabelError):
        LabelRecord("r", "avocado", "hyperion", 1)


def test_unlabeled_record():
    r = LabelRecord("r", "kiwi", "redeye_17", 3)
    assert not r.is_labeled and r.label("firmness") is None and r.fruit_id == "r"


def test_manifest_round_trip(tmp_path):
    recs = [
        LabelRecord("a", "kiwi", "specim_fx10", 2, firmness_g_cm2=1100.5, sugar_brix=16.2, ripeness_state="perfect"),
        LabelRecord("b", "avocado", "redeye_17", 4, series=2, side="back", fruit_id="f7", path="x/b.bin"),
    ]
    for name in ("m.json", "m.csv"):
        write_manifest(recs, tmp_path / name)
        assert read_manifest(tmp_path / name) == recs


def _records(per_class, fruit_groups=1, fruit="avocado"):
    values = {0: 1400.0, 1: 1050.0, 2: 800.0}
    recs = []
    for c, n in enumerate(per_class):
        for i in range(n):
            for side in ("front", "back")[:fruit_groups]:
                recs.append(LabelRecord(f"{c}_{i}_{side}", fruit, "specim_fx10", 1, side=side,
                                        firmness_g_cm2=values[c], fruit_id=f"{c}_{i}"))
    return recs


def _totals(assign):
    vals = list(assign.values())
    return [vals.count(s) for s in ("train", "val", "test")]


def test_split_divisible_case():
    recs = _records((8, 8, 8))
    a = split(recs, "firmness")
    assert _totals(a) == [18, 3, 3]
    for c in range(3):
        per = [a[r.recording_id] for r in recs if r.recording_id.startswith(f"{c}_")]
        assert [per.count(s) for s in ("train", "val", "test")] == [6, 1, 1]


def test_split_180_records():
    recs = _records((60, 60, 60))
    assert tuple(_totals(split(recs, "firmness", seed=3))) in {(135, 22, 23), (135, 23, 22)}


def test_split_deterministic_and_seeded():
    recs = _records((20, 13, 9))
    assert split(recs, "firmness", seed=5) == split(recs, "firmness", seed=5)
    assert split(recs, "firmness", seed=5) != split(recs, "firmness", seed=6)


def test_split_groups_fruit():
    recs = _records((10, 9, 11), fruit_groups=2)
    a = split(recs, "firmness")
    for r in recs:
        twin = r.recording_id.rsplit("_", 1)[0] + ("_back" if r.side == "front" else "_front")
        assert a[r.recording_id] == a[twin]


@settings(max_examples=40, deadline=None)
@given(counts=st.tuples(st.integers(3, 40), st.integers(3, 40), st.integers(3, 40)), seed=st.integers(0, 100))
def test_split_apportionment_property(counts, seed):
    recs = _records(counts)
    a = split(recs, "firmness", seed=seed)
    assert set(a) == {r.recording_id for r in recs}
    assert sum(_totals(a)) == len(recs)
    for c, n in enumerate(counts):
        per = [a[r.recording_id] for r in recs if r.recording_id.startswith(f"{c}_")]
        got = np.array([per.count(s) for s in ("train", "val", "test")])
        exact = n * np.array(DEFAULT_RATIOS)
        assert np.all(np.abs(got - exact) <= 1)


def test_split_errors():
    with pytest.raises(SplitError, match="only 2"):
        split(_records((5, 5, 2)), "firmness")
    recs = _records((4, 4, 4)) + [LabelRecord("x", "avocado", "specim_fx10", 1)]
    with pytest.raises(SplitError, match="without"):
        split(recs, "firmness")


def test_split_file_round_trip(tmp_path):
    a = split(_records((6, 6, 6)), "firmness")
    write_split(a, tmp_path / "s.json")
    assert read_split(tmp_path / "s.json") == a


def test_largest_remainder():
    assert largest_remainder(24, DEFAULT_RATIOS).tolist() == [18, 3, 3]
    assert largest_remainder(10, (1, 1, 1)).sum() == 10


def test_balance_examples():
    w = balance([0] * 10 + [1] * 10 + [2] * 10)
    assert np.all(w == w[0])
    w = balance([0] * 30 + [1] * 10 + [2] * 10)
    assert w[0] == pytest.approx(w[-1] / 3, rel=1e-12)
    with pytest.raises(SplitError):
        balance([0, 0, 1])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=3, max_size=200).filter(lambda v: len(set(v)) == 3))
def test_balance_class_sums_equal(labels):
    w = balance(labels)
    y = np.asarray(labels)
    sums = [w[y == c].sum() for c in range(3)]
    assert max(sums) - min(sums) <= 1e-9


def test_augment_disabled_identity(rng):
    x = rng.random((8, 8, 4))
    assert np.array_equal(augment(x, AugmentationConfig.disabled(), rng), x)


def test_flip_involution(rng):
    x = rng.random((8, 8, 4))
    assert np.array_equal(x[:, ::-1][:, ::-1], x)
    v4 = dihedral_view(x, 4)
    assert np.array_equal(dihedral_view(v4, 4), x)


def test_geometric_augment_preserves_spectra_multiset(rng):
    x = rng.random((9, 9, 5))
    cfg = AugmentationConfig(random_noise=False, random_cut=False, probability=1.0)
    for seed in range(5):
        y = augment(x, cfg, np.random.default_rng(seed))
        rows = lambda a: sorted(map(tuple, a.reshape(-1, 5).tolist()))
        assert rows(x) == rows(y)


def test_noise_scaled_by_reference_std():
    x = np.full((64, 64, 3), 0.5)
    ref = np.array([0.2, 1.0, 3.0])
    cfg = AugmentationConfig(rotation=False, flip=False, random_cut=False, noise_sigma=0.1,
                             probability=1.0, reference_std=ref)
    y = augment(x, cfg, np.random.default_rng(0))
    std = y.reshape(-1, 3).std(axis=0, ddof=1)
    np.testing.assert_allclose(std, 0.1 * ref, rtol=0.2)


def test_noise_skips_background():
    x = np.zeros((16, 16, 3))
    x[4:12, 4:12] = 1.0
    cfg = AugmentationConfig(rotation=False, flip=False, random_cut=False, probability=1.0, reference_std=np.ones(3))
    y = augment(x, cfg, np.random.default_rng(0))
    assert np.all(y[0] == 0) and not np.array_equal(y[5, 5], x[5, 5])


def test_random_cut_keeps_shape(rng):
    x = rng.random((20, 30, 2))
    out = random_cut(x, rng, (0.7, 1.0))
    assert out.shape == x.shape
    assert np.array_equal(random_cut(x, rng, (1.0, 1.0)), x)


def test_dihedral_views_distinct(rng):
    x = rng.random((2, 6, 6, 3))
    views = [dihedral_view(x, k) for k in range(8)]
    assert np.array_equal(views[0], x)
    flat = {v.tobytes() for v in views}
    assert len(flat) == 8
    with pytest.raises(ValueError):
        dihedral_view(x, 8)


def test_band_std_ignores_background():
    a = np.zeros((4, 4, 2))
    a[0, 0] = [1.0, 2.0]
    a[0, 1] = [3.0, 2.0]
    np.testing.assert_allclose(band_std([a]), [1.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError, match="cut_range"):
        AugmentationConfig(cut_range=(0.0, 1.0))
    with pytest.raises(ValueError, match="noise_sigma"):
        AugmentationConfig(noise_sigma=-1)
