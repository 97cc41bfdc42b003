import warnings

import numpy as np
import pytest
import torch

from hsfruit.falsecolor import (
    AutoencoderConfig,
    FalseColorError,
    LatentClassifier,
    LatentTrainConfig,
    load_bundle,
    render_false_color,
    save_bundle,
    train_autoencoder,
    train_latent_classifier,
)

BANDS = 20


def rank3_spectra(n, sigma, seed=0):
    rng = np.random.default_rng(seed)
    basis = rng.normal(size=(3, BANDS))
    clean = rng.normal(size=(n, 3)) @ basis * 0.2 + 0.5
    return clean + sigma * rng.normal(size=clean.shape)


@pytest.fixture(scope="module")
def bundle():
    X = rank3_spectra(20000, 0.01)
    return train_autoencoder(X, AutoencoderConfig(epochs=30, seed=0))


def test_rank3_subspace_reaches_noise_floor(bundle):
    # noise orthogonal to the subspace cannot be reconstructed; the rest can
    floor = 0.01**2 * (BANDS - 3) / BANDS
    assert bundle.heldout_mse <= 2 * floor


def test_train_mse_close_to_or_below_heldout(bundle):
    assert bundle.train_mse <= bundle.heldout_mse * 1.05


def test_constant_spectra_reconstruct_exactly():
    b = train_autoencoder(np.full((2000, BANDS), 0.3), AutoencoderConfig(epochs=20, min_spectra=0))
    assert b.heldout_mse < 1e-8


def test_too_few_spectra_is_an_error():
    with pytest.raises(FalseColorError):
        train_autoencoder(rank3_spectra(500, 0.01))


def test_latent_norm_maps_training_latents_into_unit_cube(bundle):
    X = rank3_spectra(3000, 0.01, seed=5)
    bundle.set_latent_norm(X)
    z = bundle.normalize_latents(bundle.encode(X))
    assert z.min() >= -1e-9 and z.max() <= 1 + 1e-9
    np.testing.assert_allclose(z.min(axis=0), 0.0, atol=1e-9)
    np.testing.assert_allclose(z.max(axis=0), 1.0, atol=1e-9)


def test_zero_cube_renders_black(bundle):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        img = render_false_color(bundle, np.zeros((6, 5, BANDS)))
    assert img.shape == (6, 5, 3)
    assert not img.any()


def test_untuned_render_warns(bundle):
    with pytest.warns(UserWarning):
        render_false_color(bundle, rank3_spectra(12, 0.01).reshape(3, 4, BANDS))


def test_render_is_deterministic_and_pixelwise(bundle):
    cube = rank3_spectra(48, 0.01, seed=9).reshape(6, 8, BANDS)
    cube[0, 0] = 0.0
    perm = np.random.default_rng(1).permutation(48)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = render_false_color(bundle, cube)
        b = render_false_color(bundle, cube)
        shuffled = render_false_color(bundle, cube.reshape(48, 1, BANDS)[perm])
    np.testing.assert_array_equal(a, b)
    # a per-pixel map commutes with any rearrangement of the pixels
    np.testing.assert_allclose(shuffled.reshape(48, 3), a.reshape(48, 3)[perm], atol=1e-6)
    assert not a[0, 0].any()
    assert a.min() >= 0 and a.max() <= 1


def test_identical_spectra_give_identical_colors(bundle):
    s = rank3_spectra(1, 0.0, seed=3)[0]
    cube = np.broadcast_to(s, (4, 4, BANDS)).copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        img = render_false_color(bundle, cube)
    assert np.ptp(img.reshape(-1, 3), axis=0).max() == 0


def test_band_mismatch_is_an_error(bundle):
    with pytest.raises(FalseColorError):
        render_false_color(bundle, np.zeros((2, 2, BANDS + 1)))


# -- latent classifier on a rank-one class signal -------------------------------------


def class_images(n, seed, size=12):
    """Fruit disk on a zero background; the class moves spectra along one direction."""
    rng = np.random.default_rng(seed)
    direction = np.linspace(-1, 1, BANDS)
    y = np.arange(n) % 3
    yy, xx = np.mgrid[:size, :size]
    disk = (yy - size / 2 + 0.5) ** 2 + (xx - size / 2 + 0.5) ** 2 <= (size / 2 - 1) ** 2
    X = np.zeros((n, size, size, BANDS), dtype=np.float32)
    for i, c in enumerate(y):
        t = (c - 1) * 0.1 + 0.01 * rng.normal()
        spec = 0.5 + t * direction
        X[i][disk] = spec + 0.01 * rng.normal(size=(disk.sum(), BANDS))
    return X, y


@pytest.fixture(scope="module")
def class_data():
    tr, va = class_images(60, 1), class_images(30, 2)
    pix = tr[0].reshape(-1, BANDS)
    pix = pix[pix.any(axis=1)]
    ae = train_autoencoder(pix, AutoencoderConfig(epochs=10, min_spectra=0, seed=0))
    return ae, tr, va


def test_latent_classifier_learns_rank_one_signal(class_data):
    ae, tr, va = class_data
    tuned, clf, acc = train_latent_classifier(ae, tr, va, "firmness", LatentTrainConfig(epochs=15))
    assert acc >= 0.9
    assert tuned.stage == "classification_tuned" and ae.stage == "reconstruction_only"
    z = tuned.normalize_latents(tuned.encode(tr[0].reshape(-1, BANDS)[tr[0].reshape(-1, BANDS).any(1)]))
    assert z.min() >= -1e-9 and z.max() <= 1 + 1e-9
    with pytest.raises(FalseColorError):
        train_latent_classifier(tuned, tr, va, "firmness")


def test_missing_labels_are_an_error(class_data):
    ae, tr, va = class_data
    with pytest.raises(FalseColorError):
        train_latent_classifier(ae, (tr[0], [None] * len(tr[0])), va, "firmness")


@pytest.mark.slow
def test_frozen_encoder_no_better_than_tuned(class_data):
    ae, tr, va = class_data
    frozen, tuned = [], []
    for seed in range(3):
        frozen.append(train_latent_classifier(ae, tr, va, "firmness", LatentTrainConfig(epochs=8, freeze_encoder=True, seed=seed))[2])
        tuned.append(train_latent_classifier(ae, tr, va, "firmness", LatentTrainConfig(epochs=8, seed=seed))[2])
    assert np.mean(frozen) <= np.mean(tuned) + 1e-9


def test_bundle_round_trip(tmp_path, class_data):
    ae, tr, va = class_data
    tuned, clf, _ = train_latent_classifier(ae, tr, va, "firmness", LatentTrainConfig(epochs=2))
    path = save_bundle(tuned, tmp_path / "enc.npz", clf)
    loaded, clf2 = load_bundle(path)
    assert loaded.stage == tuned.stage and loaded.category == "firmness"
    x = tr[0][0]
    np.testing.assert_allclose(render_false_color(loaded, x), render_false_color(tuned, x), atol=1e-6)
    clf.eval()
    z = torch.rand(2, 3, 12, 12)
    with torch.no_grad():
        np.testing.assert_allclose(clf2(z).numpy(), clf(z).numpy(), atol=1e-5)
    assert isinstance(clf2, LatentClassifier)
