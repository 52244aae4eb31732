"""Command-line pipeline: render, gen-dataset, fit, restore, eval.

Every subcommand reads a flat key-value config (overridable on the command
line), derives all randomness from the run seed, writes its artifacts
atomically under the output directory, and finishes with a machine-readable
``run_summary.json`` listing the produced files.  Exit codes: 0 success,
1 config error, 2 data error, 3 numerical divergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import io as aio
from .config import RunConfig, load_run_config
from .exceptions import (
    AmbiguityError,
    AquarenderError,
    ConfigError,
    ContractViolationError,
    DataError,
    InvalidParameterError,
    NormalizationError,
    TrainingDivergenceError,
    UnderConstrainedError,
)
from .fitting import TrainConfig, fit_direct, train
from .metrics import (
    ColorPatchSet,
    TrackSet,
    baseline_grayworld,
    baseline_histeq,
    color_accuracy,
    color_consistency,
    rmse_rgb,
)
from .physics import CameraParams, RenderModel, WaterParams, normalize_depth, render
from .restoration import invert_render, restore_monocular

_DEFAULT_MODEL_KEYS = {
    "eta": (0.35, 0.2, 0.1),
    "beta": (0.05, 0.1, 0.15),
    "a": 0.1, "b": 0.01, "c": 0.001, "k": 1.0,
}


def _model_from_cfg(cfg: RunConfig, fallback_altitude: float = 2.0) -> RenderModel:
    """Build the model from a checkpoint or from explicit parameter keys."""
    explicit = [k for k in ("eta", "beta", "a", "b", "c", "k") if cfg.has(k)]
    if cfg.has("checkpoint"):
        if explicit:
            raise ConfigError(
                f"config keys {explicit} conflict with 'checkpoint'; give one model source"
            )
        model, _ = aio.load_checkpoint(cfg.require("checkpoint"))
        if cfg.has("noise_sigma") or cfg.has("max_altitude"):
            from dataclasses import replace
            model = replace(
                model,
                noise_sigma=cfg.get_float("noise_sigma", model.noise_sigma),
                max_altitude=cfg.get_float("max_altitude", model.max_altitude),
            )
        return model
    try:
        return RenderModel(
            water=WaterParams(
                eta=cfg.get_vec3("eta", np.asarray(_DEFAULT_MODEL_KEYS["eta"])),
                beta=cfg.get_vec3("beta", np.asarray(_DEFAULT_MODEL_KEYS["beta"])),
            ),
            camera=CameraParams(
                a=cfg.get_float("a", _DEFAULT_MODEL_KEYS["a"]),
                b=cfg.get_float("b", _DEFAULT_MODEL_KEYS["b"]),
                c=cfg.get_float("c", _DEFAULT_MODEL_KEYS["c"]),
                k=cfg.get_float("k", _DEFAULT_MODEL_KEYS["k"]),
            ),
            noise_sigma=cfg.get_float("noise_sigma", 0.0),
            max_altitude=cfg.get_float("max_altitude", fallback_altitude),
        )
    except InvalidParameterError as e:
        raise ConfigError(f"invalid model parameters: {e}") from e


def _model_summary(model: RenderModel) -> Dict[str, object]:
    from .physics import PARAM_NAMES
    vec = model.param_vector()
    out = {name: float(v) for name, v in zip(PARAM_NAMES, vec)}
    out["noise_sigma"] = model.noise_sigma
    out["max_altitude"] = model.max_altitude
    return out


def _finish(cfg: RunConfig, outputs: List[Path], extra: Dict[str, object]) -> None:
    summary = {
        "subcommand": cfg.subcommand,
        "seed": cfg.seed,
        "config": dict(sorted(cfg.values.items())),
        "outputs": sorted(str(p) for p in outputs),
    }
    summary.update(extra)
    aio.write_json_atomic(cfg.out_dir / "run_summary.json", summary)


def _load_render_inputs(cfg: RunConfig) -> Tuple[List[Tuple[np.ndarray, np.ndarray, str]], float]:
    """RGB-D inputs for render/gen-dataset/restore, as (image, depth, stem)."""
    entries: List[Tuple[np.ndarray, np.ndarray, str]] = []
    if cfg.has("manifest"):
        manifest = aio.load_manifest(cfg.require("manifest"))
        if not manifest.pairs:
            raise DataError("manifest lists no RGB-D pairs")
        for i, entry in enumerate(manifest.pairs):
            img, depth, _ = manifest.load_pair(entry)
            if depth is None:
                raise DataError(f"entry '{entry.color}' has no depth map")
            entries.append((img, depth, f"{i:05d}"))
        return entries, manifest.max_altitude
    img = aio.load_image(Path(cfg.require("image")))
    depth = aio.load_depth(Path(cfg.require("depth")),
                           cfg.get_float("depth_scale", 0.001))
    if cfg.get_str("resolution", "source") != "source":
        manifest = aio.DatasetManifest(root=Path("."),
                                       resolution=cfg.get_str("resolution"))
        th, tw = manifest.target_size(*img.shape[:2])
        img = aio.resample_image(img, th, tw)
        depth = aio.resample_depth(depth, th, tw)
    if img.shape[:2] != depth.shape:
        raise DataError(
            f"image grid {img.shape[:2]} does not match depth grid {depth.shape}"
        )
    return [(img, depth, Path(cfg.require("image")).stem)], cfg.get_float("max_altitude", 2.0)


def cmd_render(cfg: RunConfig) -> None:
    """Render one RGB-D pair or a whole manifest through the model."""
    entries, alt = _load_render_inputs(cfg)
    model = _model_from_cfg(cfg, fallback_altitude=alt)
    zero_missing = cfg.get_bool("zero_is_missing", False)
    out_dir = cfg.out_dir
    outputs: List[Path] = []
    for i, (img, depth, stem) in enumerate(entries):
        uw = render(img, depth, model, seed=cfg.seed + i,
                    zero_is_missing=zero_missing)
        path = out_dir / f"uw_{stem}.png"
        aio.save_image(uw, path)
        outputs.append(path)
    _finish(cfg, outputs, {"model": _model_summary(model), "rendered": len(entries)})


def cmd_gen_dataset(cfg: RunConfig) -> None:
    """Batch-generate an aligned synthetic underwater dataset."""
    manifest = aio.load_manifest(cfg.require("manifest"))
    if not manifest.pairs:
        raise DataError("manifest lists no RGB-D pairs")
    model = _model_from_cfg(cfg, fallback_altitude=manifest.max_altitude)
    zero_missing = cfg.get_bool("zero_is_missing", False)
    count = cfg.get_int("count", len(manifest.pairs))
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    out_dir = cfg.out_dir
    outputs: List[Path] = []
    out = aio.DatasetManifest(root=out_dir, depth_scale=manifest.depth_scale,
                              max_altitude=manifest.max_altitude)
    for i in range(count):
        img, depth, _ = manifest.load_pair(manifest.pairs[i % len(manifest.pairs)])
        if depth is None:
            raise DataError(f"entry {i % len(manifest.pairs)} has no depth map")
        uw = render(img, depth, model, seed=cfg.seed + i,
                    zero_is_missing=zero_missing)
        names = {
            "color": Path("inair") / f"{i:05d}.png",
            "depth": Path("depth") / f"{i:05d}.png",
            "underwater": Path("underwater") / f"{i:05d}.png",
        }
        aio.save_image(img, out_dir / names["color"])
        aio.save_depth(depth, out_dir / names["depth"], manifest.depth_scale)
        aio.save_image(uw, out_dir / names["underwater"])
        outputs.extend(out_dir / p for p in names.values())
        out.pairs.append(aio.ManifestEntry(**names))
    manifest_path = out_dir / "dataset.manifest"
    aio.save_manifest(out, manifest_path)
    outputs.append(manifest_path)
    _finish(cfg, outputs, {"model": _model_summary(model), "generated": count})


def _to_fit_resolution(img: np.ndarray,
                       depth: Optional[np.ndarray]) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    img = aio.resample_image(img, aio.FIT_HEIGHT, aio.FIT_WIDTH)
    if depth is not None:
        depth = aio.resample_depth(depth, aio.FIT_HEIGHT, aio.FIT_WIDTH)
    return img, depth


def cmd_fit(cfg: RunConfig) -> None:
    """Fit the model directly (paired data) or adversarially (unpaired)."""
    mode = cfg.get_str("mode", "direct")
    out_dir = cfg.out_dir
    outputs: List[Path] = []
    zero_missing = cfg.get_bool("zero_is_missing", False)
    if mode == "direct":
        manifest = aio.load_manifest(cfg.require("manifest"))
        pairs = []
        for entry in manifest.pairs:
            img, depth, uw = manifest.load_pair(entry)
            if depth is None or uw is None:
                raise DataError(
                    f"direct fit needs 'pair = color depth underwater' entries; "
                    f"'{entry.color}' is incomplete"
                )
            img, depth = _to_fit_resolution(img, depth)
            uw, _ = _to_fit_resolution(uw, None)
            pairs.append((img, depth, uw))
        result = fit_direct(
            pairs,
            noise_sigma=cfg.get_float("noise_sigma", 0.0),
            max_altitude=cfg.get_float("max_altitude", manifest.max_altitude),
            zero_is_missing=zero_missing,
        )
        ckpt = out_dir / "model.ckpt"
        aio.save_checkpoint(ckpt, result.model)
        outputs.append(ckpt)
        _finish(cfg, outputs, {
            "mode": mode,
            "model": _model_summary(result.model),
            "residual_rms": result.residual_rms,
            "n_residuals": result.n_residuals,
        })
        return
    if mode != "adversarial":
        raise ConfigError(f"fit mode must be 'direct' or 'adversarial', got '{mode}'")
    scenes_manifest = aio.load_manifest(cfg.require("scenes_manifest"))
    real_manifest = aio.load_manifest(cfg.require("real_manifest"))
    scenes = []
    for entry in scenes_manifest.pairs:
        img, depth, _ = scenes_manifest.load_pair(entry)
        if depth is None:
            raise DataError(f"scene entry '{entry.color}' has no depth map")
        scenes.append(_to_fit_resolution(img, depth))
    reals = []
    real_paths = list(real_manifest.images) + [e.color for e in real_manifest.pairs]
    for p in real_paths:
        img = aio.load_image(real_manifest.resolve(p))
        reals.append(aio.resample_image(img, aio.FIT_HEIGHT, aio.FIT_WIDTH))
    train_cfg = TrainConfig(
        batch_size=cfg.get_int("batch_size", 64),
        learning_rate=cfg.get_float("learning_rate", 0.0002),
        epochs=cfg.get_int("epochs", 10),
        seed=cfg.seed,
        beta1=cfg.get_float("beta1", 0.9),
        beta2=cfg.get_float("beta2", 0.999),
        holdout_fraction=cfg.get_float("holdout_fraction", 0.1),
    )
    model, disc, report = train(
        train_cfg, reals, scenes,
        max_altitude=cfg.get_float("max_altitude", scenes_manifest.max_altitude),
        noise_sigma=cfg.get_float("noise_sigma", 0.0),
        zero_is_missing=zero_missing,
    )
    ckpt = out_dir / "model.ckpt"
    aio.save_checkpoint(ckpt, model, disc)
    report_path = out_dir / "train_report.csv"
    aio.save_train_report(report, report_path)
    outputs.extend([ckpt, report_path])
    last = report.epochs[-1]
    _finish(cfg, outputs, {
        "mode": mode,
        "model": _model_summary(model),
        "final_disc_loss": last.disc_loss,
        "final_gen_loss": last.gen_loss,
        "final_disc_accuracy": last.disc_accuracy,
    })


def cmd_restore(cfg: RunConfig) -> None:
    """Restore underwater images, monocularly or with known depth."""
    mode = cfg.get_str("mode", "monocular")
    if mode not in ("monocular", "known_depth"):
        raise ConfigError(f"restore mode must be 'monocular' or 'known_depth', got '{mode}'")
    out_dir = cfg.out_dir
    outputs: List[Path] = []
    depth_scale = cfg.get_float("depth_scale", 0.001)
    inputs: List[Tuple[np.ndarray, Optional[np.ndarray], str]] = []
    alt = cfg.get_float("max_altitude", 2.0)
    if cfg.has("manifest"):
        manifest = aio.load_manifest(cfg.require("manifest"))
        depth_scale = manifest.depth_scale
        if not cfg.has("max_altitude"):
            alt = manifest.max_altitude
        for i, entry in enumerate(manifest.pairs):
            img, depth, _ = manifest.load_pair(entry)
            inputs.append((img, depth, f"{i:05d}"))
        for i, p in enumerate(manifest.images):
            img = aio.load_image(manifest.resolve(p))
            th, tw = manifest.target_size(*img.shape[:2])
            inputs.append((aio.resample_image(img, th, tw), None,
                           f"{len(manifest.pairs) + i:05d}"))
    else:
        img = aio.load_image(Path(cfg.require("image")))
        depth = None
        if cfg.has("depth"):
            depth = aio.load_depth(Path(cfg.require("depth")), depth_scale)
        inputs.append((img, depth, Path(cfg.require("image")).stem))
    model = _model_from_cfg(cfg, fallback_altitude=alt)
    zero_missing = cfg.get_bool("zero_is_missing", False)
    stats = []
    for img, depth, stem in inputs:
        if mode == "known_depth":
            if depth is None:
                raise DataError(f"known-depth restore needs a depth map for '{stem}'")
            restored = invert_render(img, depth, model, zero_is_missing=zero_missing)
            rel = normalize_depth(depth, model.max_altitude)
            residual_mean = 0.0
        else:
            result = restore_monocular(
                img, model,
                grid_size=cfg.get_int("grid_size", 64),
                refine_tol=cfg.get_float("refine_tol", 1e-4),
                median_pass=cfg.get_bool("median_pass", True),
            )
            restored = result.restored
            rel = result.depth_rel
            residual_mean = float(result.residual.mean())
        rpath = out_dir / f"restored_{stem}.png"
        dpath = out_dir / f"depth_{stem}.png"
        aio.save_image(restored, rpath)
        aio.save_depth(rel * model.max_altitude, dpath, depth_scale)
        outputs.extend([rpath, dpath])
        stats.append({"input": stem, "mean_residual": residual_mean})
    _finish(cfg, outputs, {
        "mode": mode,
        "model": _model_summary(model),
        "images": stats,
    })


def _load_board_layout(path: Path) -> List[Tuple[str, Tuple[int, int, int, int], np.ndarray]]:
    if not path.is_file():
        raise DataError(f"board layout file not found: {path}")
    rows = []
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise DataError(
                f"{path}:{line_no}: expected 'name x0 y0 x1 y1 r g b', got '{line}'"
            )
        name = parts[0]
        box = tuple(int(v) for v in parts[1:5])
        ref = np.array([float(v) for v in parts[5:8]])
        rows.append((name, box, ref))
    if not rows:
        raise DataError(f"{path}: board layout lists no patches")
    return rows


def _sample_patches(img: np.ndarray, layout) -> ColorPatchSet:
    patches = {}
    references = {}
    for name, (x0, y0, x1, y1), ref in layout:
        region = img[y0:y1, x0:x1, :]
        if region.size == 0:
            raise DataError(f"patch '{name}' box [{x0},{y0},{x1},{y1}] is empty")
        patches[name] = region.reshape(-1, 3)
        references[name] = ref
    return ColorPatchSet(patches=patches, references=references)


def _eval_rmse(cfg: RunConfig, outputs: List[Path]) -> Dict[str, object]:
    man_a = aio.load_manifest(cfg.require("rmse_a"))
    man_b = aio.load_manifest(cfg.require("rmse_b"))
    if len(man_a.pairs) != len(man_b.pairs):
        raise DataError(
            f"rmse manifests pair counts differ: {len(man_a.pairs)} vs {len(man_b.pairs)}"
        )
    if not man_a.pairs:
        raise DataError("rmse manifests list no pairs")
    sq_sum = np.zeros(3)
    n_px = 0
    d_sq_sum = 0.0
    d_n = 0
    for ea, eb in zip(man_a.pairs, man_b.pairs):
        img_a, depth_a, _ = man_a.load_pair(ea)
        img_b, depth_b, _ = man_b.load_pair(eb)
        if img_a.shape != img_b.shape:
            raise DataError(
                f"rmse pair grids differ: {img_a.shape} vs {img_b.shape}"
            )
        sq_sum += np.sum((img_a - img_b) ** 2, axis=(0, 1))
        n_px += img_a.shape[0] * img_a.shape[1]
        if depth_a is not None and depth_b is not None:
            na = normalize_depth(depth_a, man_a.max_altitude)
            nb = normalize_depth(depth_b, man_b.max_altitude)
            valid = (depth_a > 0) & (depth_b > 0)
            d_sq_sum += float(np.sum((na[valid] - nb[valid]) ** 2))
            d_n += int(valid.sum())
    rmse = np.sqrt(sq_sum / n_px)
    rows: List[List[object]] = [["channel", "rmse"]]
    for name, v in zip(("red", "green", "blue"), rmse):
        rows.append([name, repr(float(v))])
    result: Dict[str, object] = {
        "red": float(rmse[0]), "green": float(rmse[1]), "blue": float(rmse[2]),
    }
    if d_n > 0:
        depth_rmse = float(np.sqrt(d_sq_sum / d_n))
        rows.append(["depth", repr(depth_rmse)])
        result["depth"] = depth_rmse
    path = cfg.out_dir / "rmse.csv"
    aio.save_table(rows, path)
    outputs.append(path)
    return result


def _eval_board(cfg: RunConfig, outputs: List[Path]) -> Dict[str, object]:
    layout = _load_board_layout(Path(cfg.require("board_layout")))
    img = aio.load_image(Path(cfg.require("board_image")))
    mode = cfg.get_str("normalization", "euclidean")
    methods = [("input", img)]
    if cfg.get_bool("include_baselines", False):
        methods.append(("histeq", baseline_histeq(img)))
        methods.append(("grayworld", baseline_grayworld(img)))
    per_method = {
        label: color_accuracy(_sample_patches(image, layout), mode)
        for label, image in methods
    }
    rows: List[List[object]] = [["patch", *per_method.keys()]]
    for name, _, _ in layout:
        rows.append([name, *[repr(per_method[m][name]) for m in per_method]])
    path = cfg.out_dir / "color_accuracy.csv"
    aio.save_table(rows, path)
    outputs.append(path)
    return {m: {k: float(v) for k, v in d.items()} for m, d in per_method.items()}


def _eval_tracks(cfg: RunConfig, outputs: List[Path]) -> Dict[str, object]:
    tracks_path = Path(cfg.require("tracks"))
    if not tracks_path.is_file():
        raise DataError(f"tracks file not found: {tracks_path}")
    rows = list(csv.DictReader(tracks_path.open()))
    if not rows or not {"track_id", "image", "x", "y"} <= set(rows[0].keys()):
        raise DataError(f"{tracks_path}: need CSV columns track_id,image,x,y")
    image_paths = sorted({r["image"] for r in rows})
    mode = cfg.get_str("normalization", "euclidean")
    methods: List[Tuple[str, Dict[str, np.ndarray]]] = []
    raw_images = {
        p: aio.load_image(p if Path(p).is_absolute() else tracks_path.parent / p)
        for p in image_paths
    }
    methods.append(("input", raw_images))
    if cfg.get_bool("include_baselines", False):
        methods.append(("histeq", {p: baseline_histeq(im) for p, im in raw_images.items()}))
        methods.append(("grayworld", {p: baseline_grayworld(im) for p, im in raw_images.items()}))
    result: Dict[str, object] = {}
    table: List[List[object]] = [["channel", *[m for m, _ in methods]]]
    per_method_values = {}
    for label, images in methods:
        grouped: Dict[str, List[np.ndarray]] = {}
        for r in rows:
            img = images[r["image"]]
            y, x = int(r["y"]), int(r["x"])
            if not (0 <= y < img.shape[0] and 0 <= x < img.shape[1]):
                raise DataError(
                    f"track '{r['track_id']}' point ({x}, {y}) outside image '{r['image']}'"
                )
            grouped.setdefault(r["track_id"], []).append(img[y, x, :])
        variance = color_consistency(
            TrackSet(tracks=[np.stack(obs) for obs in grouped.values()]), mode
        )
        per_method_values[label] = variance
        result[label] = {ch: float(v) for ch, v in zip(("red", "green", "blue"), variance)}
    for i, ch in enumerate(("red", "green", "blue")):
        table.append([ch, *[repr(float(per_method_values[m][i])) for m, _ in methods]])
    path = cfg.out_dir / "color_consistency.csv"
    aio.save_table(table, path)
    outputs.append(path)
    return result


def cmd_eval(cfg: RunConfig) -> None:
    """Compute color accuracy, color consistency, and RMSE validation tables."""
    outputs: List[Path] = []
    summary: Dict[str, object] = {}
    ran_any = False
    if cfg.has("rmse_a") or cfg.has("rmse_b"):
        summary["rmse"] = _eval_rmse(cfg, outputs)
        ran_any = True
    if cfg.has("board_image") or cfg.has("board_layout"):
        summary["color_accuracy"] = _eval_board(cfg, outputs)
        ran_any = True
    if cfg.has("tracks"):
        summary["color_consistency"] = _eval_tracks(cfg, outputs)
        ran_any = True
    if not ran_any:
        raise ConfigError(
            "eval needs at least one task: rmse_a/rmse_b, board_image/board_layout, or tracks"
        )
    _finish(cfg, outputs, summary)


_HANDLERS = {
    "render": cmd_render,
    "gen-dataset": cmd_gen_dataset,
    "fit": cmd_fit,
    "restore": cmd_restore,
    "eval": cmd_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aquarender",
        description="Underwater image synthesis, water-column fitting, and restoration.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, handler in _HANDLERS.items():
        p = sub.add_parser(name, help=handler.__doc__)
        p.add_argument("--config", help="flat key-value config file")
        p.add_argument("--seed", type=int, help="run seed (overrides config)")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("overrides", nargs="*", metavar="key=value",
                       help="config overrides; flags win over these")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args.command, args.config, args.overrides,
                              seed=args.seed, out=args.out)
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        _HANDLERS[args.command](cfg)
    except (ConfigError, InvalidParameterError, ContractViolationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DataError, UnderConstrainedError, AmbiguityError, NormalizationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except TrainingDivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except AquarenderError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
