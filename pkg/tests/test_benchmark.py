import csv

import numpy as np
import pytest

from hsfruit.benchmark import ABLATIONS, Task, reduce_task, run_ablation, run_benchmark_grid, write_rows_csv
from hsfruit.cube import WavelengthAxis
from hsfruit.training import TrainConfig


def tiny_task(n=36, size=16, bands=12, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    X = np.zeros((n, size, size, bands), dtype=np.float32)
    # the class tilts the whole spectrum
    X[:, 3:-3, 3:-3, :] = 0.4 + 0.1 * y[:, None, None, None] * np.linspace(0, 1, bands)
    X += np.where(X > 0, 0.01 * rng.normal(size=X.shape), 0).astype(np.float32)
    split = np.array(["train", "train", "train", "train", "val", "test"] * (n // 6))
    return Task("specim_fx10", "firmness", X, y, split, WavelengthAxis.linspace(400.0, 1000.0, bands))


FAST = TrainConfig(max_epochs=2, early_stop_patience=1, batch_size=8)


def test_grid_has_one_row_per_cell():
    task = tiny_task()
    rows = run_benchmark_grid({("specim_fx10", "firmness"): task}, ["specim_fx10"], ["firmness"],
                              ["hscnn", "knn"], ["full", "pca5"], FAST, None, views=1)
    assert len(rows) == 4
    assert {(r["model"], r["reduction"]) for r in rows} == {
        ("hscnn", "full"), ("hscnn", "pca5"), ("knn", "full"), ("knn", "pca5")}
    assert all(r["status"] == "ok" and 0 <= r["accuracy"] <= 1 for r in rows)
    assert all(r["n_test"] == 6 for r in rows)


def test_empty_model_list_gives_empty_table(tmp_path):
    rows = run_benchmark_grid({("specim_fx10", "firmness"): tiny_task()}, ["specim_fx10"], ["firmness"], [], ["full"])
    assert rows == []
    path = write_rows_csv(rows, tmp_path / "grid.csv")
    with path.open() as fh:
        assert list(csv.reader(fh)) and len(list(csv.reader(path.open()))) == 1


def test_missing_task_marks_rows_absent():
    rows = run_benchmark_grid({}, ["redeye_17"], ["sweetness"], ["svm"], ["full"])
    assert rows == [{"camera": "redeye_17", "category": "sweetness", "model": "svm", "reduction": "full",
                     "seed": 0, "status": "absent"}]


def test_knn_separates_the_tiny_task():
    rows = run_benchmark_grid({("specim_fx10", "firmness"): tiny_task()}, ["specim_fx10"], ["firmness"],
                              ["knn"], ["full"])
    assert rows[0]["accuracy"] == 1.0


def test_pca_reduction_uses_training_pixels_only():
    task = tiny_task()
    poisoned = task.X.copy()
    poisoned[task.split == "test"] *= 3.0
    a = reduce_task(task, "pca5")
    b = reduce_task(Task(task.camera, task.category, poisoned, task.y, task.split, task.axis), "pca5")
    tr = task.split == "train"
    np.testing.assert_allclose(a.X[tr], b.X[tr], atol=1e-5)
    assert a.X.shape[-1] == 5


def test_unknown_reduction_is_an_error():
    with pytest.raises(ValueError):
        reduce_task(tiny_task(), "hsv")


def test_ablation_rows_follow_axis_values():
    rows = run_ablation(tiny_task(), "loss", FAST, None, views=1, seeds=(0, 1))
    assert [r["value"] for r in rows] == list(ABLATIONS["loss"])
    assert all(len(r["accuracies"]) == 2 for r in rows)
    with pytest.raises(ValueError):
        run_ablation(tiny_task(), "dropout")
