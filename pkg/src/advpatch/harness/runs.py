"""Experiment drivers behind the CLI commands.

Every driver takes the validated config, an output directory, and the
effective seed, and returns the report dict it wrote. Randomness is
drawn from per-scene child generators seeded with (seed, scene index),
so two runs with the same config and seed produce the same bytes, and
ablation variants evaluated at the same seed see identical placements
and distortions (paired comparison).
"""

import csv
import dataclasses
import io
import json
import os
import shutil
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ..attack import (AttackConfig, PatchArtifact, PlacementSampling,
                      generate_patch, make_baseline_patch)
from ..dpm import (PlacementParams, composite, placement_mask, planar_map,
                   surface_coords)
from ..metrics import MetricsConfig, MetricsReport, format_value, score_scene
from ..scenegen import (load_scene, render_scene, save_scene, scene_dir_name,
                        split_dataset)
from ..victims import (load_checkpoint, mde_ground_rel_error, save_checkpoint,
                       ss_accuracy, ss_road_iou, train_mde, train_ss)
from . import overlays, schema
from .config import (ABLATION_VARIANTS, ConfigError, ExperimentConfig,
                     GateFailure)

EVAL_SWITCH_WEIGHTS = {
    "no_ld": "alpha",
    "no_lua": "beta_ua",
    "no_lta": "beta_ta",
    "no_ltv": "gamma",
    "no_lc": "delta",
}


def apply_switches(acfg: AttackConfig, switches: set[str]) -> AttackConfig:
    """CLI ablation flags onto an attack config."""
    unknown = switches - set(EVAL_SWITCH_WEIGHTS) \
        - {"no_dpm", "no_at", "no_af", "fixed_offset"}
    if unknown:
        raise ConfigError(f"unknown switches: {sorted(unknown)}")
    zeroed = {field: 0.0 for name, field in EVAL_SWITCH_WEIGHTS.items()
              if name in switches}
    changes = {}
    if zeroed:
        changes["weights"] = dataclasses.replace(acfg.weights, **zeroed)
    if "no_dpm" in switches:
        changes["use_dpm"] = False
    if "no_at" in switches:
        changes["use_texture_augment"] = False
    if "no_af" in switches:
        changes["use_final_augment"] = False
    if "fixed_offset" in switches:
        changes["fixed_offset"] = True
    return dataclasses.replace(acfg, **changes) if changes else acfg


def variant_config(base: AttackConfig, name: str) -> AttackConfig:
    if name == "full":
        return base
    if name == "fixed_t_o":
        # train at one placement, evaluate over the full range
        return dataclasses.replace(
            base, fixed_offset=True,
            sampling=PlacementSampling(2.0, 0.0, (0.0, 0.0), (0.0, 0.0)))
    mapping = {"no_dpm": {"no_dpm"}, "no_at": {"no_at"}, "no_af": {"no_af"},
               "no_ltv": {"no_ltv"}, "no_lc": {"no_lc"}}
    if name not in mapping:
        raise ConfigError(f"unknown ablation variant {name!r}")
    return apply_switches(base, mapping[name])


# ---------------------------------------------------------------------------
# dataset plumbing


def run_gen_scenes(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    ds = cfg.section("dataset")
    scene_cfg = cfg.scene_config()
    out = Path(out)
    if out.exists():
        raise ConfigError(f"dataset directory {out} already exists")
    tmp = out.parent / (out.name + ".building")
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        os.mkdir(tmp)   # doubles as the mutex against concurrent runs
    except FileExistsError:
        raise ConfigError(
            f"{tmp} exists: another run is in progress, or remove the "
            f"leftover directory") from None
    try:
        names = []
        for i in range(ds["count"]):
            scene = render_scene(ds["base_seed"] + i, scene_cfg)
            name = scene_dir_name(i)
            save_scene(scene, str(tmp / name))
            names.append(name)
        train, val, test = split_dataset(names, tuple(ds["split_ratios"]),
                                         seed=ds["split_seed"])
        manifest = {
            "config_hash": cfg.config_hash(),
            "seed": seed,
            "count": ds["count"],
            "base_seed": ds["base_seed"],
            "width": ds["width"],
            "height": ds["height"],
            "scene_seeds": [ds["base_seed"] + i for i in range(ds["count"])],
            "splits": {"train": train, "val": val, "test": test},
        }
        (tmp / "manifest.json").write_text(
            json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, out)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


def load_manifest(cfg: ExperimentConfig) -> dict:
    path = cfg.path("dataset") / "manifest.json"
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(
            f"cannot read {path} (run gen-scenes first): {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is corrupt: {exc}") from exc


def load_split(cfg: ExperimentConfig, which: str) -> tuple[list, list[str]]:
    manifest = load_manifest(cfg)
    names = manifest["splits"][which]
    root = cfg.path("dataset")
    return [load_scene(str(root / n)) for n in names], names


# ---------------------------------------------------------------------------
# victims


def run_train_victims(cfg: ExperimentConfig, out: Path, seed: int,
                      force: bool = False) -> dict:
    vs = cfg.section("victims")
    out = Path(out)
    for name in ("mde.npz", "ss.npz"):
        if (out / name).exists() and not force:
            raise ConfigError(
                f"{out / name} exists; pass --force to overwrite")
    train, _ = load_split(cfg, "train")
    val, _ = load_split(cfg, "val")

    kw = dict(batch_size=vs["batch_size"], width_mult=vs["width_mult"],
              flip=vs["flip"])
    mde = None
    for k, (epochs, lr) in enumerate(vs["mde_train"]):
        mde = train_mde(train, epochs=epochs, lr=lr, seed=seed + k,
                        model=mde, **kw)
    ss = None
    for k, (epochs, lr) in enumerate(vs["ss_train"]):
        ss = train_ss(train, epochs=epochs, lr=lr, seed=seed + 100 + k,
                      model=ss, **kw)

    rel_err = mde_ground_rel_error(mde, val)
    iou = ss_road_iou(ss, val)
    acc = ss_accuracy(ss, val)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(mde, out / "mde.npz")
    save_checkpoint(ss, out / "ss.npz")
    report = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "mde": {
            "rel_err": rel_err,
            "gate": vs["gate_mde_rel_err"],
            "passed": rel_err <= vs["gate_mde_rel_err"],
            "checksum": mde.net.checksum(),
            "params": mde.net.param_count(),
        },
        "ss": {
            "road_iou": iou,
            "accuracy": acc,
            "gate": vs["gate_ss_road_iou"],
            "passed": iou >= vs["gate_ss_road_iou"],
            "checksum": ss.net.checksum(),
            "params": ss.net.param_count(),
        },
    }
    report["passed"] = report["mde"]["passed"] and report["ss"]["passed"]
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    if not report["passed"]:
        raise GateFailure(
            f"victim gates failed: mde rel_err {rel_err:.4f} "
            f"(gate {vs['gate_mde_rel_err']}), ss road IoU {iou:.4f} "
            f"(gate {vs['gate_ss_road_iou']}); report at {out / 'report.json'}")
    return report


def load_victims(cfg: ExperimentConfig):
    root = cfg.path("victims")
    for name in ("mde.npz", "ss.npz"):
        if not (root / name).exists():
            raise ConfigError(
                f"{root / name} missing (run train-victims first)")
    return load_checkpoint(root / "mde.npz"), load_checkpoint(root / "ss.npz")


# ---------------------------------------------------------------------------
# attack


def run_attack(cfg: ExperimentConfig, out: Path, seed: int,
               switches: set[str]) -> PatchArtifact:
    train, _ = load_split(cfg, "train")
    mde, ss = load_victims(cfg)
    acfg = apply_switches(cfg.attack_config(seed), switches)
    result = generate_patch(train, mde, ss, acfg)
    artifact = result.artifact
    artifact.provenance["config_hash"] = cfg.config_hash()
    artifact.provenance["switches"] = sorted(switches)
    artifact.save(out)
    return artifact


def load_patch(cfg: ExperimentConfig, seed: int) -> tuple[np.ndarray, str]:
    """Texture to evaluate plus a short descriptor for the reports."""
    source = cfg.section("evaluation")["patch"]
    if source == "artifact":
        artifact = PatchArtifact.load(cfg.path("patch"))
        return artifact.theta, "artifact"
    res = cfg.attack_config(seed).t_res
    return make_baseline_patch(source, res, seed=seed), source


# ---------------------------------------------------------------------------
# shared evaluation core


def _predict(model_pair, img: np.ndarray):
    """Clean or adversarial frame -> (depth m, disparity, labels)."""
    mde, ss = model_pair
    x = dc.constant(img.transpose(2, 0, 1)[None].astype(mde.net.dtype))
    disp = mde.forward(x).data[0, 0].astype(np.float64)
    depth = mde.convention.depth(disp)
    x = dc.constant(img.transpose(2, 0, 1)[None].astype(ss.net.dtype))
    logits = ss.logits(x).data[0]
    labels = np.argmax(logits, axis=0).astype(np.uint8)
    return depth, disp, labels


def _photometric(img: np.ndarray, b: float, c: float) -> np.ndarray:
    return np.clip((img - 0.5) * (1.0 + c) + 0.5 + b, 0.0, 1.0)


def _scene_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def _draw_offset(rng, sampling: PlacementSampling, coords, acfg: AttackConfig,
                 camera_height: float, tries: int):
    """Sampled placement with a visible mask, or None after `tries` draws."""
    p = None
    for _ in range(tries):
        offset = sampling.sample(rng)
        p = PlacementParams(offset, scale=acfg.t_scale, resolution=acfg.t_res)
        placed_mask = _mask_for(coords, p, camera_height, acfg)
        if placed_mask.sum() > 0:
            return offset
    return None


def _mask_for(coords, p: PlacementParams, camera_height: float,
              acfg: AttackConfig) -> np.ndarray:
    return placement_mask(coords, p, camera_height=camera_height,
                          vertical_band=acfg.vertical_band)


def _eval_scene(theta_t, scene, coords, offset, distortion, models, clean,
                acfg: AttackConfig, mcfg: MetricsConfig, name: str):
    """Metrics plus the rendered frames for overlays; None if invisible."""
    p = PlacementParams(offset, scale=acfg.t_scale, resolution=acfg.t_res)
    placed = planar_map(coords, theta_t, p, camera_height=scene.camera_height,
                        vertical_band=acfg.vertical_band)
    if placed.mask.sum() == 0:
        return None, None
    adv = composite(dc.constant(scene.rgb.astype(np.float64)), placed).data
    if distortion is not None:
        adv = _photometric(adv, *distortion)
    d_clean, disp_clean, lab_clean = clean
    d_adv, disp_adv, lab_adv = _predict(models, adv)
    scores = score_scene(name, d_clean, d_adv, lab_clean, lab_adv,
                         placed.mask > 0.5, mcfg)
    frames = {"adv_rgb": adv, "disp_clean": disp_clean, "disp_adv": disp_adv,
              "lab_clean": lab_clean, "lab_adv": lab_adv,
              "mask": placed.mask}
    return scores, frames


def _stamp(cfg: ExperimentConfig, seed: int) -> str:
    return f"# config={cfg.config_hash()} seed={seed}\n"


def _write_csv(path: Path, stamp: str, header: list[str],
               rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    path.write_text(stamp + buf.getvalue())


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format_value(float(value))


def run_evaluate(cfg: ExperimentConfig, out: Path, seed: int,
                 command: str = "evaluate") -> dict:
    scenes, names = load_split(cfg, "test")
    models = load_victims(cfg)
    theta, desc = load_patch(cfg, seed)
    acfg = cfg.attack_config(seed)
    mcfg = cfg.metrics_config()
    ev = cfg.section("evaluation")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    theta_t = dc.constant(theta)
    report = MetricsReport(mcfg)
    bmax = acfg.augment.brightness_max
    cmax = acfg.augment.contrast_max
    overlay_left = ev["overlay_count"]
    for i, (scene, name) in enumerate(zip(scenes, names)):
        rng = _scene_rng(seed, i)
        coords = surface_coords(scene.depth.astype(np.float64),
                                scene.intrinsics)
        offset = _draw_offset(rng, acfg.sampling, coords, acfg,
                              scene.camera_height, ev["max_resample"])
        if offset is None:
            raise ConfigError(
                f"no visible placement for {name} after {ev['max_resample']} "
                f"draws; the sampling box misses the image")
        distortion = None
        if ev["distort"]:
            distortion = (float(rng.uniform(-bmax, bmax)),
                          float(rng.uniform(-cmax, cmax)))
        clean = _predict(models, scene.rgb.astype(np.float64))
        scores, frames = _eval_scene(theta_t, scene, coords, offset,
                                     distortion, models, clean, acfg, mcfg,
                                     name)
        report.add(scores)
        if overlay_left > 0:
            panel = overlays.prediction_panel(
                scene.rgb, frames["adv_rgb"], frames["disp_clean"],
                frames["disp_adv"], frames["lab_clean"], frames["lab_adv"],
                frames["mask"])
            overlays.save_png(panel, out / f"overlay_{name}.png")
            overlay_left -= 1

    stamp = _stamp(cfg, seed)
    (out / "scenes.csv").write_text(stamp + report.scene_csv())
    envelope = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "command": command,
        "patch": desc,
        "distort": ev["distort"],
        "metrics_config": {
            "rel_ed_threshold": mcfg.rel_ed_threshold,
            "road_class": mcfg.road_class,
            "target_classes": list(mcfg.target_classes),
        },
        "aggregate": report.aggregate(),
    }
    schema.check(envelope, schema.eval_schema(), "aggregate report")
    (out / "aggregate.json").write_text(
        json.dumps(envelope, indent=2, sort_keys=True) + "\n")
    return envelope


# ---------------------------------------------------------------------------
# placement sweep


_SWEEP_METRICS = ("rel_ed", "ra_ed", "asr_ua", "asr_ta", "ra_ua", "ra_ta")


def _cell_mean(scores_list, attr: str):
    vals = [getattr(s, attr) for s in scores_list
            if getattr(s, attr) is not None]
    return float(np.mean(vals)) if vals else None


def run_sweep(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    scenes, names = load_split(cfg, "test")
    models = load_victims(cfg)
    theta, desc = load_patch(cfg, seed)
    acfg = cfg.attack_config(seed)
    mcfg = cfg.metrics_config()
    sw = cfg.section("sweep")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    theta_t = dc.constant(theta)
    per_scene = []
    for scene in scenes:
        coords = surface_coords(scene.depth.astype(np.float64),
                                scene.intrinsics)
        per_scene.append((coords, _predict(models, scene.rgb.astype(np.float64))))

    forwards, laterals = sw["forward"], sw["lateral"]
    rows = []
    grids = {m: np.full((len(forwards), len(laterals)), np.nan)
             for m in _SWEEP_METRICS}
    for fi, fwd in enumerate(forwards):
        for li, lat in enumerate(laterals):
            cell_scores = []
            for (scene, name, (coords, clean)) in zip(scenes, names, per_scene):
                scores, _ = _eval_scene(theta_t, scene, coords, (fwd, lat),
                                        None, models, clean, acfg, mcfg, name)
                if scores is not None:
                    cell_scores.append(scores)
            row = [fwd, lat, len(cell_scores)]
            for metric in _SWEEP_METRICS:
                value = _cell_mean(cell_scores, metric) if cell_scores else None
                row.append(value)
                if value is not None:
                    grids[metric][fi, li] = value
            rows.append(row)

    stamp = _stamp(cfg, seed)
    header = ["forward", "lateral", "visible_scenes", *_SWEEP_METRICS]
    _write_csv(out / "grid.csv", stamp, header,
               [[_fmt(v) for v in row] for row in rows])
    for metric in ("rel_ed", "ra_ed", "asr_ua", "asr_ta"):
        grid = grids[metric]
        vmax = 1.0 if metric.startswith("asr") else \
            float(np.nanmax(grid)) if np.isfinite(grid).any() else 1.0
        overlays.save_png(overlays.heatmap(grid, 0.0, max(vmax, 1e-9)),
                          out / f"heatmap_{metric}.png")

    # forward trend uses the per-forward mean over lateral cells
    fwd_means = [float(np.nanmean(grids["rel_ed"][fi]))
                 if np.isfinite(grids["rel_ed"][fi]).any() else None
                 for fi in range(len(forwards))]
    pairs = [(f, m) for f, m in zip(forwards, fwd_means) if m is not None]
    pairs.sort(key=lambda t: t[0])
    monotone = len(pairs) >= 2 and all(
        pairs[k + 1][1] <= pairs[k][1] + 0.01 for k in range(len(pairs) - 1))

    # lateral edges compared against the center columns
    asr_cols = [float(np.nanmean(grids["asr_ua"][:, li]))
                if np.isfinite(grids["asr_ua"][:, li]).any() else None
                for li in range(len(laterals))]
    edge_flags = {}
    if len(laterals) >= 3:
        center_vals = [v for v in asr_cols[1:-1] if v is not None]
        center = float(np.mean(center_vals)) if center_vals else None
        for li in (0, len(laterals) - 1):
            if center is not None and asr_cols[li] is not None:
                edge_flags[str(laterals[li])] = bool(
                    asr_cols[li] < center - 0.10)
    mean_rel_ed = float(np.nanmean(grids["rel_ed"])) \
        if np.isfinite(grids["rel_ed"]).any() else None
    report = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "patch": desc,
        "cells": len(rows),
        "mean_rel_ed": mean_rel_ed,
        "forward_rel_ed_means": {str(f): m for f, m in zip(forwards, fwd_means)},
        "rel_ed_monotone_decreasing_with_distance": bool(monotone),
        "lateral_asr_ua_means": {str(l): v for l, v in zip(laterals, asr_cols)},
        "edge_lateral_asr_drop": edge_flags,
    }
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# approach sequence


def _rank(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    ranks[order] = np.arange(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(sorted_vals):
        j = i
        while j + 1 < len(sorted_vals) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = 0.5 * (i + j)
        i = j + 1
    return ranks


def spearman(a, b) -> float:
    """Rank correlation with average ranks on ties."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("spearman needs two equal-length 1-d sequences")
    ra, rb = _rank(a) - (len(a) - 1) / 2.0, _rank(b) - (len(b) - 1) / 2.0
    denom = np.sqrt((ra ** 2).sum() * (rb ** 2).sum())
    if denom == 0.0:
        return 0.0
    return float((ra * rb).sum() / denom)


def run_approach(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    models = load_victims(cfg)
    theta, desc = load_patch(cfg, seed)
    acfg = cfg.attack_config(seed)
    mcfg = cfg.metrics_config()
    ap = cfg.section("approach")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    far, near, step = ap["far"], ap["near"], ap["step"]
    count = int(round((far - near) / step)) + 1
    distances = [round(far - k * step, 6) for k in range(count)]
    distances = [d for d in distances if d >= near - 1e-9]

    theta_t = dc.constant(theta)
    rows = []
    strip = []
    rel_eds = []
    for d in distances:
        scene_cfg = cfg.scene_config(camera_shift=far - d,
                                     max_obstacles=ap["max_obstacles"])
        scene = render_scene(ap["scene_seed"], scene_cfg)
        coords = surface_coords(scene.depth.astype(np.float64),
                                scene.intrinsics)
        clean = _predict(models, scene.rgb.astype(np.float64))
        scores, frames = _eval_scene(theta_t, scene, coords,
                                     (d, ap["lateral"]), None, models, clean,
                                     acfg, mcfg, f"d={d:g}")
        if scores is None:
            rows.append([d, 0] + [0.0] * len(_SWEEP_METRICS))
            rel_eds.append(0.0)
            strip.append(overlays.to_u8(scene.rgb))
        else:
            rows.append([d, scores.patch_pixels] + [
                getattr(scores, m) if getattr(scores, m) is not None else 0.0
                for m in _SWEEP_METRICS])
            rel_eds.append(scores.rel_ed)
            strip.append(overlays.mask_outline(
                overlays.to_u8(frames["adv_rgb"]), frames["mask"]))

    stamp = _stamp(cfg, seed)
    header = ["distance", "mask_pixels", *_SWEEP_METRICS]
    _write_csv(out / "frames.csv", stamp, header,
               [[_fmt(v) for v in row] for row in rows])
    overlays.save_png(overlays.filmstrip(strip), out / "filmstrip.png")

    onset = None
    for d, rel in zip(distances, rel_eds):
        if rel >= mcfg.rel_ed_threshold:
            onset = d
            break
    inv = [1.0 / d for d in distances]
    rho = spearman(rel_eds, inv) if len(distances) >= 2 else 0.0
    closest = rows[-1]
    report = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "patch": desc,
        "frames": len(distances),
        "far": far,
        "near": near,
        "onset_distance": onset,
        "spearman_rel_ed_inv_distance": rho,
        "closest_distance": distances[-1],
        "closest_asr_ua": closest[header.index("asr_ua")],
        "closest_rel_ed": closest[header.index("rel_ed")],
    }
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report


# ---------------------------------------------------------------------------
# ablation table


def _evaluate_theta_paired(theta, scenes, names, per_scene, models, acfg_eval,
                           mcfg, seed: int, distort: bool) -> dict:
    """Aggregate metrics at placements drawn only from (seed, scene index)."""
    theta_t = dc.constant(theta)
    report = MetricsReport(mcfg)
    bmax = acfg_eval.augment.brightness_max
    cmax = acfg_eval.augment.contrast_max
    for i, (scene, name, (coords, clean)) in enumerate(
            zip(scenes, names, per_scene)):
        rng = _scene_rng(seed, i)
        offset = _draw_offset(rng, acfg_eval.sampling, coords, acfg_eval,
                              scene.camera_height, 10)
        if offset is None:
            raise ConfigError(
                f"no visible placement for {name}; sampling box misses image")
        distortion = (float(rng.uniform(-bmax, bmax)),
                      float(rng.uniform(-cmax, cmax))) if distort else None
        scores, _ = _eval_scene(theta_t, scene, coords, offset, distortion,
                                models, clean, acfg_eval, mcfg, name)
        report.add(scores)
    return report.aggregate()


def run_ablation(cfg: ExperimentConfig, out: Path, seed: int) -> dict:
    train, _ = load_split(cfg, "train")
    scenes, names = load_split(cfg, "test")
    models = load_victims(cfg)
    mde, ss = models
    base = cfg.attack_config(seed)
    mcfg = cfg.metrics_config()
    ab = cfg.section("ablation")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)

    per_scene = []
    for scene in scenes:
        coords = surface_coords(scene.depth.astype(np.float64),
                                scene.intrinsics)
        per_scene.append((coords, _predict(models, scene.rgb.astype(np.float64))))

    # evaluation placements come from the base sampling box for every
    # variant, regardless of how the variant trained
    variants = [v for v in ABLATION_VARIANTS if v in ab["variants"]]
    results = {}
    for name in variants:
        acfg_v = variant_config(base, name)
        artifact = generate_patch(train, mde, ss, acfg_v).artifact
        artifact.provenance["config_hash"] = cfg.config_hash()
        artifact.provenance["variant"] = name
        artifact.save(out / "variants" / name)
        results[name] = _evaluate_theta_paired(
            artifact.theta, scenes, names, per_scene, models, base, mcfg,
            seed, ab["distort"])

    full = results["full"]
    header = ["variant"]
    for metric in _SWEEP_METRICS:
        header += [metric, f"{metric}_delta"]
    rows = []
    for name in variants:
        agg = results[name]
        row = [name]
        for metric in _SWEEP_METRICS:
            value = agg[metric]
            delta = None
            if value is not None and full[metric] is not None:
                delta = value - full[metric]
            row += [_fmt(value), _fmt(delta)]
        rows.append(row)
    _write_csv(out / "table.csv", _stamp(cfg, seed), header, rows)

    drops = {name: full["asr_ua"] - results[name]["asr_ua"]
             for name in variants
             if name != "full" and results[name]["asr_ua"] is not None
             and full["asr_ua"] is not None}
    report = {
        "config_hash": cfg.config_hash(),
        "seed": seed,
        "variants": variants,
        "distort": ab["distort"],
        "aggregates": results,
        "asr_ua_drops": drops,
        "largest_asr_ua_drop": max(drops, key=drops.get) if drops else None,
    }
    (out / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
