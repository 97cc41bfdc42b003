"""``hsfruit`` command line: one verb per pipeline stage.

Every verb reads a JSON :class:`PipelineConfig` (``--config``) with
``--set key=value`` overrides and writes into a fresh directory
``<output_dir>/<verb>-<hash>`` that is never reused.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import joblib
import numpy as np
import torch
from sklearn.cluster import KMeans

from . import plotting
from .attribution import integrated_gradients, mean_baseline, spatial_impact, spectral_impact, write_profile_csv
from .benchmark import ABLATIONS, DEEP_MODELS, REDUCTIONS, SHALLOW_MODELS, Task, run_ablation, run_benchmark_grid, write_rows_csv
from .config import DATA_ENV, ConfigError, PipelineConfig, apply_override
from .cube import CAMERAS, HyperCube, average_references, calibrate
from .dataset import CLASS_NAMES, SPLITS, band_std, read_manifest, read_split, split, write_manifest, write_split
from .envi import EnviError, load_cube, save_cube
from .falsecolor import (
    AutoencoderConfig, LatentTrainConfig, render_false_color, save_bundle, train_autoencoder, train_latent_classifier,
)
from .models import (
    build_model, count_parameters, extract_shallow_features, fit_knn, fit_svm, load_checkpoint,
    save_checkpoint,
)
from .preprocess import (
    PcaProjection, apply_pca, crop_to_fruit, fit_pca, resize, rgb_cube, segment, to_rgb, train_background_classifier,
)
from .synth import DEFAULT_SIGNALS, generate_dataset, nir_only_signals
from .training import EvalReport, evaluate, evaluate_tta, train

log = logging.getLogger("hsfruit")


class CliError(RuntimeError):
    pass


# -- run directories and reports ---------------------------------------------------------


def make_run_dir(cfg: PipelineConfig, verb: str, extra: dict) -> tuple[Path, str]:
    h = cfg.hash(verb, extra)
    base = Path(cfg.output_dir) / f"{verb}-{h[:12]}"
    out, k = base, 1
    while out.exists():
        out = base.with_name(f"{base.name}.{k}")
        k += 1
    out.mkdir(parents=True)
    (out / "config.json").write_text(json.dumps({"config": cfg.to_dict(), "args": extra, "config_hash": h}, indent=2))
    return out, h


def write_json(path: Path, payload: dict, h: str) -> Path:
    path.write_text(json.dumps({**payload, "config_hash": h}, indent=2, sort_keys=True, default=_jsonable))
    return path


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


# -- data loading ------------------------------------------------------------------------


def _existing(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{what} '{p}' does not exist")
    return p


def load_records(data_dir: Path, cfg: PipelineConfig):
    manifest = data_dir / "manifest.json"
    if not manifest.exists():
        manifest = _existing(data_dir / "manifest.csv", "manifest")
    records = [
        r for r in read_manifest(manifest)
        if r.fruit == cfg.fruit and r.camera == cfg.camera and r.label(cfg.category) is not None
    ]
    if not records:
        raise CliError(f"no {cfg.fruit}/{cfg.camera} records with {cfg.category} labels in {manifest}")
    return records


def load_task(data_dir: Path, cfg: PipelineConfig, split_path: Optional[str]) -> tuple[Task, list]:
    records = load_records(data_dir, cfg)
    assignment = read_split(_existing(split_path, "split file")) if split_path else split(records, cfg.category, seed=cfg.seed)
    records = [r for r in records if r.recording_id in assignment]
    cubes = [load_cube(data_dir / r.path, kind="cube") for r in records]
    shapes = {c.shape for c in cubes}
    if len(shapes) != 1:
        raise CliError(f"cubes differ in shape {sorted(shapes)}; run 'hsfruit preprocess' first")
    X = np.stack([c.data.astype(np.float32) for c in cubes])
    y = np.array([r.label(cfg.category).class_index for r in records])
    s = np.array([assignment[r.recording_id] for r in records])
    return Task(cfg.camera, cfg.category, X, y, s, cubes[0].axis), records


def reduce_with(task: Task, reduction: str, proj: Optional[PcaProjection]) -> Task:
    if reduction == "full":
        return task
    if reduction == "rgb":
        out = [rgb_cube(HyperCube(x.astype(np.float64), task.axis)) for x in task.X]
    else:
        out = [apply_pca(proj, HyperCube(x.astype(np.float64), task.axis)) for x in task.X]
    return replace(task, X=np.stack([c.data for c in out]).astype(np.float32), axis=out[0].axis)


def fit_reduction(task: Task, reduction: str, seed: int) -> Optional[PcaProjection]:
    if reduction != "pca5":
        return None
    Xtr, _ = task.part("train")
    flat = Xtr.reshape(-1, Xtr.shape[-1])
    return fit_pca(flat[flat.any(axis=1)], k=5, seed=seed)


def save_pca(proj: PcaProjection, path: Path):
    np.savez(path, mean=proj.mean, components=proj.components,
             explained_variance=proj.explained_variance, explained_variance_ratio=proj.explained_variance_ratio)


def load_pca(path: Path) -> PcaProjection:
    with np.load(path) as z:
        return PcaProjection(z["mean"], z["components"], z["explained_variance"], z["explained_variance_ratio"])


def load_trained(model_dir: Path):
    """Model (torch module or shallow estimator), its train-time config and PCA projection."""
    meta = json.loads(_existing(model_dir / "train_report.json", "train report").read_text())
    proj = load_pca(model_dir / "pca.npz") if (model_dir / "pca.npz").exists() else None
    if meta["model"] in SHALLOW_MODELS:
        return joblib.load(model_dir / "model.joblib"), meta, proj
    model, _ = load_checkpoint(model_dir / "model.npz")
    return model, meta, proj


# -- verbs -------------------------------------------------------------------------------


def cmd_synth(cfg, args):
    s = cfg.synth_settings()
    out, h = make_run_dir(cfg, "synth", {})
    signals = DEFAULT_SIGNALS if s.signals == "default" else nir_only_signals()
    ds = generate_dataset(
        s.n, balance=s.balance, camera=CAMERAS[cfg.camera], seed=cfg.seed, fruit=cfg.fruit, signals=signals,
        noise_sigma=s.noise_sigma, nuisance=s.nuisance, size=s.size, out_dir=out,
    )
    counts = np.bincount([r.label(cfg.category).class_index for r in ds.records], minlength=3)
    write_json(out / "synth_report.json", {"n": s.n, "class_counts": counts.tolist(), "settings": cfg.synth}, h)
    idx = np.argsort(ds.ripeness)[:: max(1, s.n // 8)]
    plotting.ripening_strip(
        [to_rgb(ds.cubes[i]) / max(to_rgb(ds.cubes[i]).max(), 1e-12) for i in idx],
        [f"t={ds.ripeness[i]:.2f}" for i in idx], out / "preview.png",
    )
    print(f"synthesised {s.n} recordings, class counts {counts.tolist()}")
    return out


def cmd_calibrate(cfg, args):
    raw_dir = _existing(args.raw, "raw directory")
    white = average_references([load_cube(p, kind="raw") for p in args.white])
    dark = average_references([load_cube(p, kind="raw") for p in args.dark])
    out, h = make_run_dir(cfg, "calibrate", {"raw": str(raw_dir), "white": args.white, "dark": args.dark})
    ref_paths = {Path(p).resolve() for p in args.white + args.dark}
    rows = []
    for hdr in sorted(raw_dir.glob("*.hdr")):
        if hdr.resolve() in ref_paths or hdr.with_suffix(".bin").resolve() in ref_paths:
            continue
        frame = load_cube(hdr, kind="raw")
        cube = calibrate(frame, white, dark)
        save_cube(cube, out / "cubes" / f"{hdr.stem}.bin")
        rows.append({"recording": hdr.stem, "invalid_pixels": int((~cube.mask).sum()),
                     "mean_reflectance": float(cube.data.mean())})
    if not rows:
        raise CliError(f"no ENVI recordings found in {raw_dir}")
    for name in ("manifest.json", "manifest.csv"):
        if (raw_dir / name).exists():
            recs = read_manifest(raw_dir / name)
            for r in recs:
                r.path = f"cubes/{r.recording_id}.bin"
            write_manifest(recs, out / "manifest.json")
    write_rows_csv(rows, out / "calibration.csv")
    write_json(out / "calibration_report.json", {"recordings": rows}, h)
    print(f"calibrated {len(rows)} recordings into {out / 'cubes'}")
    return out


def _brightness_labels(cubes, seed: int, per_cube: int = 2000):
    """Pixel sample labelled fruit/background by two-cluster k-means on mean reflectance."""
    rng = np.random.default_rng(seed)
    spectra = []
    for c in cubes:
        flat = c.data.reshape(-1, c.bands)
        spectra.append(flat[rng.choice(len(flat), size=min(per_cube, len(flat)), replace=False)])
    spectra = np.concatenate(spectra)
    bright = spectra.mean(axis=1, keepdims=True)
    km = KMeans(2, n_init=10, random_state=seed).fit(bright)
    fruit_cluster = int(np.argmax(km.cluster_centers_.ravel()))
    return spectra, km.labels_ == fruit_cluster


def cmd_preprocess(cfg, args):
    data_dir = _existing(args.data, "data directory")
    recs = read_manifest(_existing(data_dir / "manifest.json", "manifest"))
    out, h = make_run_dir(cfg, "preprocess", {"data": str(data_dir), "size": args.size})
    cubes = [load_cube(data_dir / r.path, kind="cube") for r in recs]
    spectra, is_fruit = _brightness_labels(cubes, cfg.seed)
    clf = train_background_classifier(spectra, is_fruit, seed=cfg.seed)
    rows = []
    for r, c in zip(recs, cubes):
        mask = segment(c, clf)
        small = resize(crop_to_fruit(c, mask), args.size, args.size)
        save_cube(small, out / "cubes" / f"{r.recording_id}.bin")
        rgb = to_rgb(small)
        plotting.save_image(rgb / max(rgb.max(), 1e-12), out / "previews" / f"{r.recording_id}.png")
        r.path = f"cubes/{r.recording_id}.bin"
        rows.append({"recording": r.recording_id, "fruit_pixels": int(mask.sum())})
    write_manifest(recs, out / "manifest.json")
    write_rows_csv(rows, out / "segmentation.csv")
    write_json(out / "preprocess_report.json",
               {"classifier_heldout_accuracy": clf.heldout_accuracy, "size": args.size, "recordings": rows}, h)
    print(f"segmented {len(rows)} recordings, background classifier held-out accuracy {clf.heldout_accuracy:.4f}")
    return out


def cmd_split(cfg, args):
    data_dir = _existing(args.data, "data directory")
    records = load_records(data_dir, cfg)
    assignment = split(records, cfg.category, seed=cfg.seed)
    out, h = make_run_dir(cfg, "split", {"data": str(data_dir)})
    write_split(assignment, out / "split.json")
    rows = []
    for s in SPLITS:
        ys = [r.label(cfg.category).class_index for r in records if assignment[r.recording_id] == s]
        counts = np.bincount(ys, minlength=3)
        rows.append({"split": s, "total": len(ys), **{CLASS_NAMES[cfg.category][c]: int(counts[c]) for c in range(3)}})
    write_rows_csv(rows, out / "split_counts.csv")
    write_json(out / "split_report.json", {"counts": rows}, h)
    print(" ".join(f"{r['split']}={r['total']}" for r in rows))
    return out


def cmd_train(cfg, args):
    data_dir = _existing(args.data, "data directory")
    task, _ = load_task(data_dir, cfg, args.split)
    out, h = make_run_dir(cfg, "train", {"data": str(data_dir), "split": args.split})
    proj = fit_reduction(task, cfg.reduction, cfg.seed)
    task = reduce_with(task, cfg.reduction, proj)
    if proj is not None:
        save_pca(proj, out / "pca.npz")
    Xtr, ytr = task.part("train")
    Xva, yva = task.part("val")
    meta = {"model": cfg.model, "reduction": cfg.reduction, "category": cfg.category, "camera": cfg.camera,
            "fruit": cfg.fruit, "n_train": len(ytr), "n_val": len(yva)}
    if cfg.model in SHALLOW_MODELS:
        fit = fit_svm if cfg.model == "svm" else fit_knn
        feats = np.stack([extract_shallow_features(x) for x in Xtr])
        folds = int(min(5, np.bincount(ytr)[np.bincount(ytr) > 0].min()))
        sm = fit(feats, ytr, folds=folds, seed=cfg.seed)
        joblib.dump(sm, out / "model.joblib")
        meta.update(hyperparameters={sm.param_name: sm.param_value}, cv_accuracy=sm.cv_accuracy)
        print(f"{cfg.model}: {sm.param_name}={sm.param_value}, cv accuracy {sm.cv_accuracy:.3f}")
    else:
        tcfg = cfg.train_config()
        acfg = cfg.augmentation_config()
        if acfg.random_noise:
            acfg = replace(acfg, reference_std=band_std(Xtr))
        torch.manual_seed(cfg.seed)
        model = build_model(cfg.model, Xtr.shape[-1], cfg.model_cfg(Xtr.shape[-1]))
        model, report = train(model, (Xtr, ytr), (Xva, yva), tcfg, acfg)
        save_checkpoint(model, out / "model.npz", extra={"reduction": cfg.reduction, "category": cfg.category})
        plotting.training_curves(report.epochs, out / "training_curves.png")
        val = evaluate(model, Xva, yva)
        meta.update(report=report.to_dict(), param_count=count_parameters(model), val_accuracy=val.accuracy)
        print(f"{cfg.model}: stopped at epoch {report.stopped_epoch}, best epoch {report.best_epoch}, "
              f"val accuracy {val.accuracy:.3f}")
    write_json(out / "train_report.json", meta, h)
    return out


def _score_shallow(model, X, y) -> EvalReport:
    pred = model.predict(np.stack([extract_shallow_features(x) for x in X]))
    return EvalReport.from_predictions(y, pred, tta_views=0)


def cmd_evaluate(cfg, args):
    data_dir = _existing(args.data, "data directory")
    model_dir = _existing(args.model_dir, "model directory")
    model, meta, proj = load_trained(model_dir)
    cfg = replace(cfg, reduction=meta["reduction"], category=meta["category"])
    task, _ = load_task(data_dir, cfg, args.split)
    task = reduce_with(task, meta["reduction"], proj)
    X, y = task.part(args.part)
    if len(y) == 0:
        raise CliError(f"split '{args.part}' is empty")
    views = 1 if args.plain else (args.views or cfg.views)
    out, h = make_run_dir(cfg, "evaluate", {"data": str(data_dir), "model_dir": str(model_dir), "split": args.split,
                                            "part": args.part, "views": views, "plain": args.plain})
    if meta["model"] in SHALLOW_MODELS:
        rep = _score_shallow(model, X, y)
    elif args.plain:
        rep = evaluate(model, X, y)
    else:
        rep = evaluate_tta(model, X, y, views)
    write_json(out / "eval_report.json", {**rep.to_dict(), "model": meta["model"], "part": args.part,
                                          "model_config_hash": meta.get("config_hash")}, h)
    plotting.confusion(rep.confusion, CLASS_NAMES[meta["category"]], out / "confusion.png",
                       f"{meta['model']} / {meta['reduction']}")
    print(f"{meta['model']} on {args.part}: accuracy {rep.accuracy:.4f} ({rep.n} samples, {rep.tta_views} views)")
    return out


def cmd_grid(cfg, args):
    data_dir = _existing(args.data, "data directory")
    task, _ = load_task(data_dir, cfg, args.split)
    for m in args.models:
        if m not in DEEP_MODELS + SHALLOW_MODELS:
            raise ConfigError("model", f"'{m}' is not a known model")
    for r in args.reductions:
        if r not in REDUCTIONS:
            raise ConfigError("reduction", f"'{r}' is not a known reduction")
    out, h = make_run_dir(cfg, "grid", {"data": str(data_dir), "split": args.split, "models": args.models,
                                        "reductions": args.reductions, "seeds": args.seeds})
    rows = run_benchmark_grid(
        {(cfg.camera, cfg.category): task}, [cfg.camera], [cfg.category], args.models, args.reductions,
        cfg.train_config(), cfg.augmentation_config(), cfg.views, args.seeds,
    )
    write_rows_csv(rows, out / "grid.csv")
    write_json(out / "grid.json", {"rows": rows}, h)
    ok = [r for r in rows if r["status"] == "ok"]
    plotting.accuracy_bars([f"{r['model']}/{r['reduction']}/s{r['seed']}" for r in ok],
                           [r["accuracy"] for r in ok], out / "grid.png", f"{cfg.camera} {cfg.category}")
    for r in ok:
        print(f"{r['model']:9s} {r['reduction']:5s} seed {r['seed']}: {r['accuracy']:.4f}")
    return out


def cmd_ablate(cfg, args):
    data_dir = _existing(args.data, "data directory")
    if args.axis not in ABLATIONS:
        raise ConfigError("axis", f"'{args.axis}' not in {sorted(ABLATIONS)}")
    task, _ = load_task(data_dir, cfg, args.split)
    task = reduce_with(task, cfg.reduction, fit_reduction(task, cfg.reduction, cfg.seed))
    out, h = make_run_dir(cfg, "ablate", {"data": str(data_dir), "split": args.split, "axis": args.axis,
                                          "seeds": args.seeds})
    rows = run_ablation(task, args.axis, cfg.train_config(), cfg.augmentation_config(),
                        cfg.model_cfg(task.X.shape[-1]), cfg.views, args.seeds)
    write_rows_csv(rows, out / "ablation.csv", ["axis", "value", "accuracy", "accuracies", "seeds"])
    write_json(out / "ablation.json", {"rows": rows}, h)
    plotting.accuracy_bars([r["value"] for r in rows], [r["accuracy"] for r in rows], out / "ablation.png", args.axis)
    for r in rows:
        print(f"{args.axis}={r['value']}: mean accuracy {r['accuracy']:.4f} over seeds {r['seeds']}")
    return out


def cmd_attribute(cfg, args):
    data_dir = _existing(args.data, "data directory")
    model_dir = _existing(args.model_dir, "model directory")
    model, meta, proj = load_trained(model_dir)
    if meta["model"] in SHALLOW_MODELS:
        raise CliError("attribution needs a differentiable model, got a shallow baseline")
    cfg = replace(cfg, reduction=meta["reduction"], category=meta["category"])
    task, records = load_task(data_dir, cfg, args.split)
    task = reduce_with(task, meta["reduction"], proj)
    ids = [r.recording_id for r in records]
    if args.recording is None:
        test = np.flatnonzero(task.split == "test")
        i = int(test[0]) if len(test) else 0
    elif args.recording in ids:
        i = ids.index(args.recording)
    else:
        raise CliError(f"recording '{args.recording}' not found")
    x = task.X[i]
    with torch.no_grad():
        logits = model(torch.from_numpy(x[None]).permute(0, 3, 1, 2))
    target = int(logits.argmax()) if args.target is None else args.target
    if not 0 <= target < 3:
        raise CliError(f"target class must be 0, 1 or 2, got {target}")
    out, h = make_run_dir(cfg, "attribute", {"data": str(data_dir), "model_dir": str(model_dir),
                                             "recording": ids[i], "target": target, "steps": args.steps,
                                             "baseline": args.baseline})
    base = None
    if args.baseline == "train_mean":
        base = mean_baseline(task.part("train")[0])
    res = integrated_gradients(model, x, target, baseline=base, m=args.steps, baseline_name=args.baseline)
    spatial = spatial_impact(res)
    profile = spectral_impact(res, task.axis)
    np.save(out / "attribution.npy", res.values)
    np.savetxt(out / "spatial_signed.csv", spatial["signed"], delimiter=",")
    write_profile_csv(profile, out / "spectral_profile.csv")
    plotting.spatial_heatmap(spatial["signed"], out / "spatial.png")
    plotting.spectral_profile(profile, out / "spectral.png")
    peak = float(profile["wavelength_nm"][int(np.argmax(profile["absolute"]))])
    write_json(out / "attribution_report.json", {
        "recording": ids[i], "true_class": int(task.y[i]), "target_class": target, "steps": args.steps,
        "baseline": res.baseline, "output_delta": res.output_delta, "completeness_gap": res.completeness_gap,
        "peak_wavelength_nm": peak,
    }, h)
    print(f"{ids[i]} class {target}: output delta {res.output_delta:.4f}, completeness gap "
          f"{res.completeness_gap:.2e}, strongest band {peak:.1f} nm")
    return out


def cmd_falsecolor(cfg, args):
    data_dir = _existing(args.data, "data directory")
    task, records = load_task(data_dir, cfg, args.split)
    out, h = make_run_dir(cfg, "falsecolor", {"data": str(data_dir), "split": args.split,
                                              "ae_epochs": args.ae_epochs, "epochs": args.epochs})
    Xtr, ytr = task.part("train")
    Xva, yva = task.part("val")
    flat = Xtr.reshape(-1, Xtr.shape[-1])
    spectra = flat[flat.any(axis=1)]
    ae = train_autoencoder(spectra, AutoencoderConfig(epochs=args.ae_epochs, seed=cfg.seed, min_spectra=0))
    tuned, clf, acc = train_latent_classifier(ae, (Xtr, ytr), (Xva, yva), cfg.category,
                                              LatentTrainConfig(epochs=args.epochs, seed=cfg.seed), spectra)
    save_bundle(tuned, out / "encoder.npz", clf)
    test = np.flatnonzero(task.split == "test")
    names, imgs = [], []
    for i in test:
        img = render_false_color(tuned, task.X[i])
        plotting.save_image(img, out / "images" / f"{records[i].recording_id}.png")
        names.append(records[i].recording_id)
        imgs.append(img)
    if imgs:
        order = np.argsort(task.y[test], kind="stable")[:8]
        plotting.ripening_strip([imgs[k] for k in order],
                                [CLASS_NAMES[cfg.category][task.y[test][k]] for k in order], out / "overview.png")
    write_json(out / "falsecolor_report.json", {
        "heldout_mse": ae.heldout_mse, "latent_val_accuracy": acc, "rendered": names,
    }, h)
    print(f"autoencoder held-out MSE {ae.heldout_mse:.3e}, latent classifier val accuracy {acc:.3f}, "
          f"{len(names)} images rendered")
    return out


# -- argument parsing --------------------------------------------------------------------


VERBS = {
    "synth": cmd_synth, "calibrate": cmd_calibrate, "preprocess": cmd_preprocess, "split": cmd_split,
    "train": cmd_train, "evaluate": cmd_evaluate, "grid": cmd_grid, "ablate": cmd_ablate,
    "attribute": cmd_attribute, "falsecolor": cmd_falsecolor,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hsfruit", description="Hyperspectral fruit ripeness pipeline.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, dotted for nested fields (repeatable)")
    common.add_argument("--out", help="output root (config field output_dir)")
    common.add_argument("--seed", type=int, help="config field seed")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, help_):
        return sub.add_parser(name, parents=[common], help=help_)

    def data(sp):
        sp.add_argument("--data", default=None, help=f"dataset directory (default: ${DATA_ENV} or config data_root)")

    def with_split(sp):
        data(sp)
        sp.add_argument("--split", help="split.json from 'hsfruit split' (default: recomputed from the seed)")

    verb("synth", "generate a synthetic labelled dataset")
    sp = verb("calibrate", "flat-field calibrate raw ENVI recordings")
    sp.add_argument("--raw", required=True, help="directory of raw ENVI recordings")
    sp.add_argument("--white", nargs="+", required=True, help="white reference recording(s)")
    sp.add_argument("--dark", nargs="+", required=True, help="dark reference recording(s)")
    sp = verb("preprocess", "segment, crop and resize calibrated cubes")
    data(sp)
    sp.add_argument("--size", type=int, default=64)
    sp = verb("split", "fruit-grouped stratified train/val/test split")
    data(sp)
    sp = verb("train", "train the configured model")
    with_split(sp)
    sp = verb("evaluate", "evaluate a trained model")
    with_split(sp)
    sp.add_argument("--model-dir", required=True, help="output directory of 'hsfruit train'")
    sp.add_argument("--part", default="test", choices=SPLITS)
    sp.add_argument("--views", type=int, help="test-time augmentation views (default: config views)")
    sp.add_argument("--plain", action="store_true", help="evaluate without test-time augmentation")
    sp = verb("grid", "model x reduction accuracy table")
    with_split(sp)
    sp.add_argument("--models", nargs="+", default=list(DEEP_MODELS + SHALLOW_MODELS))
    sp.add_argument("--reductions", nargs="+", default=list(REDUCTIONS))
    sp.add_argument("--seeds", nargs="+", type=int, default=[0])
    sp = verb("ablate", "retrain the HS-CNN toggling one design axis")
    with_split(sp)
    sp.add_argument("axis", choices=sorted(ABLATIONS))
    sp.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    sp = verb("attribute", "integrated-gradients attribution for one recording")
    with_split(sp)
    sp.add_argument("--model-dir", required=True)
    sp.add_argument("--recording", help="recording id (default: first test recording)")
    sp.add_argument("--target", type=int, help="class to explain (default: predicted class)")
    sp.add_argument("--steps", type=int, default=128)
    sp.add_argument("--baseline", default="zeros", choices=("zeros", "train_mean"),
                    help="reference input: the all-zero cube or the mean training cube")
    sp = verb("falsecolor", "train the pixel autoencoder and render false-colour images")
    with_split(sp)
    sp.add_argument("--ae-epochs", type=int, default=30)
    sp.add_argument("--epochs", type=int, default=25)
    return p


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(_existing(args.config, "config file")) if args.config else PipelineConfig()
    for assignment in args.set:
        cfg = apply_override(cfg, assignment)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "data", None) is None and hasattr(args, "data"):
        args.data = cfg.data_root
    return cfg.validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = VERBS[args.verb](cfg, args)
    except ConfigError as exc:
        print(f"hsfruit: invalid config: {exc}", file=sys.stderr)
        return 2
    except (CliError, EnviError, ValueError, FileNotFoundError) as exc:
        print(f"hsfruit {args.verb}: {exc}", file=sys.stderr)
        return 1
    print(f"outputs: {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
