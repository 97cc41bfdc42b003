import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st
from torch import nn

from hsfruit.adabound import AdaBound
from hsfruit.dataset import AugmentationConfig
from hsfruit.models import ModelConfig, build_hscnn
from hsfruit.training import (
    OPTIMIZERS, EvalReport, TrainConfig, TrainingError, _mean_loss, evaluate, evaluate_tta, focal_loss,
    focal_loss_logits, loss_fn, make_optimizer, predict_proba, recalibrate_batchnorm, train, tta_proba,
)


# -- focal loss -------------------------------------------------------------------------


def test_focal_hand_values():
    assert focal_loss([[0.0, 1.0, 0.0]], [1]) == 0.0
    assert focal_loss([[0.5, 0.5, 0.0]], [0], gamma=2) == pytest.approx(0.25 * math.log(2), abs=1e-9)


def test_focal_gamma0_is_cross_entropy(rng):
    p = rng.dirichlet(np.ones(3), size=1000)
    t = rng.integers(0, 3, 1000)
    for i in range(1000):
        assert focal_loss(p[i], t[i], gamma=0) == pytest.approx(-math.log(p[i, t[i]]), abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(1e-6, 1.0), b=st.floats(1e-6, 1.0), gamma=st.floats(0, 5))
def test_focal_nonnegative_and_monotone(a, b, gamma):
    lo, hi = sorted((a, b))
    f = lambda p: focal_loss([[p, 1 - p]], [0], gamma)
    assert f(lo) >= f(hi) >= 0


def test_focal_validation():
    with pytest.raises(ValueError):
        focal_loss([[0.2, 0.2]], [0])
    with pytest.raises(ValueError):
        focal_loss([[0.5, 0.5]], [2])
    with pytest.raises(ValueError):
        focal_loss([[0.5, 0.5]], [0], gamma=-1)


def test_focal_logits_matches_numpy(rng):
    logits = rng.normal(size=(16, 3))
    t = rng.integers(0, 3, 16)
    p = np.exp(logits) / np.exp(logits).sum(1, keepdims=True)
    got = float(focal_loss_logits(torch.from_numpy(logits), torch.from_numpy(t), 2.0))
    assert got == pytest.approx(focal_loss(p, t, 2.0), abs=1e-9)
    ce = float(loss_fn("focal", 0.0)(torch.from_numpy(logits), torch.from_numpy(t)))
    assert ce == pytest.approx(float(nn.functional.cross_entropy(torch.from_numpy(logits), torch.from_numpy(t))), abs=1e-9)


# -- optimizers --------------------------------------------------------------------------


@pytest.mark.parametrize("name", OPTIMIZERS)
def test_zero_gradient_leaves_parameters(name):
    m = nn.Linear(4, 3)
    before = [p.detach().clone() for p in m.parameters()]
    opt = make_optimizer(name, m.parameters())
    for _ in range(3):
        opt.zero_grad()
        for p in m.parameters():
            p.grad = torch.zeros_like(p)
        opt.step()
    for a, b in zip(before, m.parameters()):
        assert torch.equal(a, b)


def _adabound_oracle(grads, lr, final_lr, gamma, betas=(0.9, 0.999), eps=1e-8, x0=0.0):
    x, m, v = x0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = betas[0] * m + (1 - betas[0]) * g
        v = betas[1] * v + (1 - betas[1]) * g * g
        step = lr * math.sqrt(1 - betas[1] ** t) / (1 - betas[0] ** t) / (math.sqrt(v) + eps)
        lower = final_lr * (1 - 1 / (gamma * t + 1))
        upper = final_lr * (1 + 1 / (gamma * t))
        x -= min(max(step, lower), upper) * m
    return x


def test_adabound_matches_scalar_oracle(rng):
    grads = rng.normal(size=25).tolist()
    p = nn.Parameter(torch.zeros(1, dtype=torch.float64))
    opt = AdaBound([p], lr=0.01, final_lr=0.1, gamma=0.5)
    for g in grads:
        p.grad = torch.tensor([g], dtype=torch.float64)
        opt.step()
    assert float(p.detach()) == pytest.approx(_adabound_oracle(grads, 0.01, 0.1, 0.5), abs=1e-12)


def test_adabound_converges_on_quadratic():
    p = nn.Parameter(torch.tensor([5.0, -3.0]))
    opt = AdaBound([p], lr=0.05, final_lr=0.1)
    for _ in range(500):
        opt.zero_grad()
        (p**2).sum().backward()
        opt.step()
    assert p.abs().max() < 1e-2


def test_optimizer_presets():
    m = nn.Linear(2, 2)
    assert make_optimizer("adabound_lr01", m.parameters()).param_groups[0]["lr"] == 1e-2
    assert make_optimizer("adabound_default", m.parameters()).param_groups[0]["lr"] == 1e-3
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", m.parameters())
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(early_stop_patience=0)


# -- training loop -----------------------------------------------------------------------


def separable_task(n, seed, bands=6, size=16):
    r = np.random.default_rng(seed)
    y = np.arange(n) % 3
    X = r.uniform(0.2, 0.4, size=(n, size, size, bands)).astype(np.float32)
    for i, c in enumerate(y):
        X[i, :, :, c] += 0.5
    return X, y


def small_model(bands=6):
    return build_hscnn(ModelConfig(in_bands=bands, widths=(8, 8, 16), hidden=16, input_size=16))


def test_train_separable():
    tr, va = separable_task(200, 0), separable_task(40, 1)
    torch.manual_seed(0)
    _, rep = train(small_model(), tr, va, TrainConfig(max_epochs=30, early_stop_patience=30))
    assert max(e["val_accuracy"] for e in rep.epochs) >= 0.95
    assert rep.stopped_epoch <= 30


def test_patience_one_zero_lr_stops_at_two():
    tr, va = separable_task(30, 0), separable_task(9, 1)
    cfg = TrainConfig(optimizer="sgd", learning_rate=0.0, early_stop_patience=1, max_epochs=20)
    _, rep = train(small_model(), tr, va, cfg)
    assert rep.stopped_epoch == 2 and rep.best_epoch == 1
    assert rep.epochs[0]["val_loss"] == rep.epochs[1]["val_loss"]


def test_training_deterministic():
    tr, va = separable_task(48, 0), separable_task(12, 1)
    cfg = TrainConfig(max_epochs=4, early_stop_patience=4, seed=3)
    aug = AugmentationConfig(seed=3)
    runs = []
    for _ in range(2):
        torch.manual_seed(7)
        _, rep = train(small_model(), tr, va, cfg, aug)
        runs.append([(e["train_loss"], e["val_loss"]) for e in rep.epochs])
    assert runs[0] == runs[1]


def test_best_epoch_restored():
    tr, va = separable_task(60, 0), separable_task(15, 1)
    cfg = TrainConfig(max_epochs=8, early_stop_patience=8)
    torch.manual_seed(0)
    model, rep = train(small_model(), tr, va, cfg)
    final, _ = _mean_loss(model, *va, loss_fn(cfg.loss, cfg.focal_gamma), cfg.batch_size)
    assert all(final <= e["val_loss"] + 1e-6 for e in rep.epochs)
    assert final == pytest.approx(rep.best_val_loss, abs=1e-6)


def test_report_balance_stats():
    X, y = separable_task(30, 0)
    y = np.r_[np.zeros(20, int), np.ones(5, int), np.full(5, 2)]
    _, rep = train(small_model(), (X, y), separable_task(9, 1), TrainConfig(max_epochs=1))
    assert rep.class_counts == [20, 5, 5]
    assert max(rep.class_weight_sums) - min(rep.class_weight_sums) <= 1e-9
    assert len(rep.config_hash) == 16


def test_non_finite_input_raises():
    X, y = separable_task(12, 0)
    X[0, 0, 0, 0] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        train(small_model(), (X, y), separable_task(6, 1), TrainConfig(max_epochs=1, batch_size=12, balanced=False))


def test_empty_sets_rejected():
    X, y = separable_task(6, 0)
    with pytest.raises(TrainingError):
        train(small_model(), (X[:0], y[:0]), (X, y))


def test_recalibrate_batchnorm_exact_stats():
    m = nn.Sequential(nn.Conv2d(2, 2, 1, bias=False), nn.BatchNorm2d(2))
    X = np.random.default_rng(0).normal(size=(10, 4, 4, 2)).astype(np.float32)
    assert recalibrate_batchnorm(m, X, batch_size=5)
    with torch.no_grad():
        feats = m[0](torch.from_numpy(X).permute(0, 3, 1, 2))
    np.testing.assert_allclose(m[1].running_mean.numpy(), feats.mean((0, 2, 3)).numpy(), atol=1e-5)
    assert not recalibrate_batchnorm(nn.Linear(2, 2), X)


# -- evaluation --------------------------------------------------------------------------


class GapLinear(nn.Module):
    """Spatially averaged linear model, invariant to flips and rotations."""

    def __init__(self, bands):
        super().__init__()
        self.fc = nn.Linear(bands, 3)

    def forward(self, x):
        return self.fc(x.mean(dim=(2, 3)))


def test_tta_one_view_bit_exact():
    X, y = separable_task(20, 2)
    m = small_model().eval()
    assert evaluate_tta(m, X, y, views=1).accuracy == evaluate(m, X, y).accuracy
    assert np.array_equal(tta_proba(m, X, views=1), predict_proba(m, X))


def test_tta_invariant_model():
    X, y = separable_task(20, 2)
    m = GapLinear(6).eval()
    np.testing.assert_allclose(tta_proba(m, X, views=8), tta_proba(m, X, views=1), atol=1e-6)
    assert evaluate_tta(m, X, y, 8).confusion == evaluate_tta(m, X, y, 1).confusion


def test_tta_more_views_needs_aug():
    X, y = separable_task(6, 2)
    with pytest.raises(ValueError):
        tta_proba(GapLinear(6), X, views=9)
    with pytest.raises(ValueError):
        tta_proba(GapLinear(6), X, views=0)
    p = tta_proba(GapLinear(6), X, views=10, aug_cfg=AugmentationConfig(reference_std=np.ones(6)))
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-6)


def test_confusion_recount(rng):
    y = rng.integers(0, 3, 50)
    pred = np.where(rng.random(50) < 0.7, y, rng.integers(0, 3, 50))
    rep = EvalReport.from_predictions(y, pred)
    cm = np.array(rep.confusion)
    assert rep.accuracy == np.trace(cm) / cm.sum() == np.mean(y == pred)
    assert cm.sum(axis=1).tolist() == np.bincount(y, minlength=3).tolist()
    for i in range(3):
        assert rep.recall[i] == pytest.approx(cm[i, i] / cm[i].sum())
