"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error, 3 data error.
Every command writes deterministic CSV/JSON; wall-clock timings go to a
separate ``timings.json`` so reruns can be compared byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from .bench import BenchConfig, run_benchmark
from .fusion import DenoiserConfig, run_two_stage
from .metrics import AffineAligner, AlignmentError, compute_metrics, region_split_metrics
from .model import DepthModelError, LoadError, read_container, write_container
from .registration import RegistrationError, read_pair_graph, write_pair_graph
from .schedule import SCHEDULE_KINDS, SPACING_MODES, build_schedule, make_spacing
from .spectral import (ERROR_METRICS, amplitude_ratio, band_table, band_table_csv,
                       band_table_json, make_band_partition, ratio_csv, spectrum_csv)
from .synth import (CORR_DTYPE, EstimatorSurrogateSpec, SceneError, SceneSpec, corrupt,
                    correspondence_pairs, make_pairwise, read_correspondences, render_gt,
                    resolve_spec_path, static_correspondences, write_correspondences)
from .tempcons import NoPairsError, temporal_consistency

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# --------------------------------------------------------------------------
# helpers

def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    return doc


_DENOISER_FIELDS = {
    "cutoff_hz": float, "alpha": float, "window_length": int, "overlap": int, "blend": bool,
    "inference_steps": int, "spacing_mode": str, "inject_step_index": int,
    "jump_threshold": (float, type(None)), "tau": float, "null_noise": bool,
}


def _typed(name: str, value, kind):
    kinds = kind if isinstance(kind, tuple) else (kind,)
    if value is None and type(None) in kinds:
        return None
    if bool in kinds:
        if not isinstance(value, bool):
            raise ConfigError(f"field '{name}' must be true or false, got {value!r}")
        return value
    if int in kinds and float not in kinds:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field '{name}' must be an integer, got {value!r}")
        return value
    if float in kinds:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{name}' must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"field '{name}' must be a string, got {value!r}")
    return value


def _denoiser_settings(args, file_cfg: dict) -> dict:
    """Defaults, then the config file (``denoiser`` section or top level), then flags."""
    section = file_cfg.get("denoiser", {k: v for k, v in file_cfg.items() if k in _DENOISER_FIELDS})
    if not isinstance(section, dict):
        raise ConfigError("field 'denoiser' must be an object")
    for key in section:
        if key not in _DENOISER_FIELDS:
            raise ConfigError(f"unknown denoiser field '{key}'")
    eff = {"cutoff_hz": 0.05, "alpha": 0.02, "window_length": 110, "overlap": 25, "blend": True,
           "inference_steps": 4, "spacing_mode": "trailing", "inject_step_index": 2,
           "jump_threshold": None, "tau": 0.0, "null_noise": False}
    for key, value in section.items():
        eff[key] = _typed(key, value, _DENOISER_FIELDS[key])
    for key in ("cutoff_hz", "alpha", "window_length", "overlap", "jump_threshold"):
        v = getattr(args, key, None)
        if v is not None:
            eff[key] = v
    if getattr(args, "no_blend", False):
        eff["blend"] = False
    return eff


def _denoiser_config(eff: dict) -> DenoiserConfig:
    try:
        spacing = make_spacing(1000, eff["inference_steps"], eff["spacing_mode"])
        return DenoiserConfig(cutoff_hz=eff["cutoff_hz"], alpha=eff["alpha"], spacing=spacing,
                              inject_step_index=eff["inject_step_index"],
                              window_length=eff["window_length"], overlap=eff["overlap"],
                              blend=eff["blend"], jump_threshold=eff["jump_threshold"],
                              null_noise=eff["null_noise"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid denoiser configuration: {exc}") from None


def _seed(args, file_cfg: dict, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    s = file_cfg.get("seed", default)
    return _typed("seed", s, int)


def _read(path, what: str):
    p = Path(path)
    if not p.is_dir():
        raise DataError(f"{what} directory not found: {path}")
    return read_container(p)


def _aligned(pred, gt, per_frame: bool):
    if pred.shape != gt.shape:
        raise DataError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    return AffineAligner(per_frame=per_frame).fit(pred, gt).transform(pred)


def _scene_and_bench(path) -> tuple[SceneSpec, BenchConfig, str]:
    try:
        p = resolve_spec_path(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    raw = p.read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if "scene" in doc:
        bench = BenchConfig.from_dict(doc, p.parent.parent)
    else:
        scene = SceneSpec.from_dict(doc)
        base = json.loads(resolve_spec_path("bench/default.json").read_text(encoding="utf-8"))
        base["scene"] = doc
        bench = BenchConfig.from_dict(base)
        bench.scene = scene
    return bench.scene, bench, hashlib.sha256(raw).hexdigest()


# --------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    file_cfg = _load_config(args.config)
    scene, bench, digest = _scene_and_bench(args.spec)
    seed = _seed(args, file_cfg, bench.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    gt = render_gt(scene, args.delta if args.delta is not None else scene.corr_delta)
    write_container(gt.depth, out / "gt", gt.track, gt.masks)
    write_correspondences(gt.correspondences, out / "gt" / "correspondences.bin")

    surrogates = {}
    for name, spec in (("stereo_jitter", bench.stereo), ("window_drift", bench.drift)):
        spec = EstimatorSurrogateSpec(**{**spec.as_dict(), "seed": seed,
                                         "jitter_band": tuple(spec.jitter_band)})
        write_container(corrupt(gt.depth, gt.masks, spec), out / name, gt.track)
        surrogates[name] = spec.as_dict()
    stereo = EstimatorSurrogateSpec(**{**bench.stereo.as_dict(), "seed": seed,
                                       "jitter_band": tuple(bench.stereo.jitter_band)})
    graph = make_pairwise(gt.depth, gt.track, gt.masks, bench.n, stereo, bench.pair_scale_jitter,
                          seed, dtype=np.float32)
    write_pair_graph(graph, out / "pairs")
    _dump_json(out / "manifest.json", {
        "spec": str(args.spec), "spec_sha256": digest, "seed": seed,
        "frame_count": scene.frame_count, "width": scene.width, "height": scene.height,
        "pairs": {"n": bench.n, "pair_scale_jitter": bench.pair_scale_jitter,
                  "edges": len(graph.pairs)},
        "surrogates": surrogates, "correspondences": int(gt.correspondences.size),
    })
    return EXIT_OK


def cmd_evaluate(args) -> int:
    pred, _, _ = _read(args.pred, "prediction")
    gt, _, masks = _read(args.gt, "ground truth")
    aligned = _aligned(pred, gt, args.per_frame)
    kw = {"absrel_denominator": args.absrel_denominator,
          "rmse_paper_literal": args.rmse_paper_literal}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = compute_metrics(aligned, gt, **kw)
    _write(out / "metrics.json", report.to_json())
    _write(out / "metrics.csv", report.to_csv())
    if masks is not None:
        dyn, sta, _ = region_split_metrics(aligned, gt, masks, **kw)
        for name, rep in (("dynamic", dyn), ("static", sta)):
            _write(out / f"metrics_{name}.json", rep.to_json())
            _write(out / f"metrics_{name}.csv", rep.to_csv())
    return EXIT_OK


def _metric_sequence(pred_dir, gt, args):
    pred, _, _ = _read(pred_dir, "prediction")
    aligned = _aligned(pred, gt, args.per_frame)
    rep = compute_metrics(aligned, gt, absrel_denominator=args.absrel_denominator,
                          rmse_paper_literal=args.rmse_paper_literal)
    seq = rep.sequence(args.metric)
    if not np.all(np.isfinite(seq)):
        raise DataError("some frames have no valid pixel; the metric sequence has gaps")
    return seq


def cmd_spectrum(args) -> int:
    if args.metric not in ERROR_METRICS:
        raise ConfigError(f"unknown metric {args.metric!r}; choose from {ERROR_METRICS}")
    gt, track, _ = _read(args.gt, "ground truth")
    seq = _metric_sequence(args.pred, gt, args)
    fps = 1.0 if args.fps is None else args.fps
    try:
        part = make_band_partition(seq.size, args.bands)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = {"pred": band_table(seq, part)}
    _write(out / "spectrum.csv", spectrum_csv(seq, fps))
    if args.compare:
        other = _metric_sequence(args.compare, gt, args)
        rows["compare"] = band_table(other, part)
        _write(out / "ratio.csv", ratio_csv(amplitude_ratio(seq, other), seq.size, fps))
    _write(out / "bands.csv", band_table_csv(rows))
    _write(out / "bands.json", band_table_json(rows, part))
    return EXIT_OK


def cmd_fuse(args) -> int:
    file_cfg = _load_config(args.config)
    eff = _denoiser_settings(args, file_cfg)
    cfg = _denoiser_config(eff)
    seed = _seed(args, file_cfg)
    graph = read_pair_graph(args.pairs)
    result = run_two_stage(graph, cfg, seed, args.threads, eff["tau"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_container(result.stage1, out / "stage1", result.track)
    write_container(result.fused, out / "fused", result.track)
    manifest = result.manifest(cfg, seed)
    manifest["effective_config"] = eff
    manifest["pairs"] = str(args.pairs)
    _dump_json(out / "run_manifest.json", manifest)
    T = result.fused.frame_count
    _dump_json(out / "timings.json", {
        "stage1_s": result.timings["stage1_s"], "stage2_s": result.timings["stage2_s"],
        "stage1_s_per_frame": result.timings["stage1_s"] / T,
        "stage2_s_per_frame": result.timings["stage2_s"] / T,
        "threads": args.threads,
    })
    return EXIT_OK


def _derive_correspondences(gt, track, masks, delta):
    # geometry only: static pixels form one surface class, dynamic ones another
    ids = np.where(gt.valid, 0, -1).astype(np.int32)
    dyn_ids = set()
    if masks is not None:
        ids[masks.dynamic & gt.valid] = 1
        dyn_ids = {1}
    depth = np.where(gt.valid, gt.frames, np.inf).astype(np.float64)
    tables = [static_correspondences(depth, ids, dyn_ids, track, i, j)
              for i, j in correspondence_pairs(gt.frame_count, delta)]
    return np.concatenate(tables) if tables else np.empty(0, dtype=CORR_DTYPE)


def cmd_tempcons(args) -> int:
    pred, _, _ = _read(args.pred, "prediction")
    gt, track, masks = _read(args.gt, "ground truth")
    if track is None:
        raise DataError("ground-truth container has no camera track")
    delta = args.delta
    if delta >= gt.frame_count:
        raise NoPairsError(f"delta={delta} leaves no frame pairs in a {gt.frame_count}-frame video")
    corr_path = Path(args.gt) / "correspondences.bin"
    if corr_path.exists():
        corr = read_correspondences(corr_path)
    else:
        corr = _derive_correspondences(gt, track, masks, delta)
    aligned = _aligned(pred, gt, False)
    report = temporal_consistency(aligned, track, corr, delta=delta, masks=masks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "tempcons.json", report.to_json())
    _write(out / "tempcons.csv", report.to_csv())
    return EXIT_OK


def cmd_schedule(args) -> int:
    try:
        table = build_schedule(args.kind, train_steps=args.train_steps)
        spacing = make_spacing(args.train_steps, args.inference_steps, args.spacing)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "schedule.csv", table.to_csv())
    _write(out / "spacing.json", spacing.to_json())
    return EXIT_OK


def cmd_bench(args) -> int:
    file_cfg = _load_config(args.config) if args.config else None
    try:
        bench = (BenchConfig.from_dict(file_cfg) if file_cfg is not None
                 else BenchConfig.load(args.bench))
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    if any(v is not None for v in (args.alpha, args.cutoff_hz, args.window_length, args.overlap,
                                   args.jump_threshold)) or args.no_blend:
        eff = _denoiser_settings(args, {"denoiser": _denoiser_fields(bench.denoiser)})
        bench.denoiser = _denoiser_config(eff)
    if args.bands is not None:
        bench.bands = args.bands
    if args.delta is not None:
        bench.delta = args.delta
    t0 = time.perf_counter()
    result = run_benchmark(bench, args.seed, args.threads)
    elapsed = time.perf_counter() - t0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "summary.json", result.summary_json())
    rows = {name: getattr(result, name).band_values for name in ("stereo", "fused", "drift")}
    _write(out / "bands.csv", band_table_csv(rows))
    _write(out / "bands.json", band_table_json(rows, result.partition))
    _dump_json(out / "timings.json", {"total_s": elapsed, "threads": args.threads})
    return EXIT_OK


def _denoiser_fields(cfg: DenoiserConfig) -> dict:
    return {"cutoff_hz": cfg.cutoff_hz, "alpha": cfg.alpha, "window_length": cfg.window_length,
            "overlap": cfg.overlap, "blend": cfg.blend, "inference_steps": cfg.spacing.inference_steps,
            "spacing_mode": cfg.spacing.mode, "inject_step_index": cfg.inject_step_index,
            "jump_threshold": cfg.jump_threshold, "null_noise": cfg.null_noise}


# --------------------------------------------------------------------------
# parser

def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    p.add_argument("--threads", type=int, default=1, help="worker thread budget")
    p.add_argument("--config", default=None, help="JSON config file; flags override its values")


def _metric_flags(p: argparse.ArgumentParser):
    p.add_argument("--absrel-denominator", choices=("gt", "pred"), default="gt")
    p.add_argument("--rmse-paper-literal", action="store_true",
                   help="use sqrt(sum d^2) / N instead of sqrt(mean d^2)")
    p.add_argument("--per-frame", action="store_true", help="fit scale and shift per frame")


def _denoiser_flags(p: argparse.ArgumentParser):
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--cutoff-hz", type=float, default=None)
    p.add_argument("--window-length", type=int, default=None)
    p.add_argument("--overlap", type=int, default=None)
    p.add_argument("--jump-threshold", type=float, default=None)
    p.add_argument("--no-blend", action="store_true", help="hard cuts instead of cross-fades")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="depthcons", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render ground truth, surrogates and a pair graph")
    p.add_argument("spec", help="scene JSON or benchmark JSON (bundled names accepted)")
    p.add_argument("out")
    p.add_argument("--delta", type=int, default=None, help="correspondence spacing")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evaluate", help="affine-align and compute metrics")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out", required=True)
    _metric_flags(p)
    _common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("spectrum", help="spectrum, band table and amplitude ratio of an error sequence")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out", required=True)
    p.add_argument("--compare", default=None, help="second prediction for the amplitude ratio")
    p.add_argument("--metric", default="absrel")
    p.add_argument("--bands", type=int, default=11)
    p.add_argument("--fps", type=float, default=None)
    _metric_flags(p)
    _common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("fuse", help="run stage 1 and stage 2 on a pair graph")
    p.add_argument("pairs")
    p.add_argument("out")
    _denoiser_flags(p)
    _common(p)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("tempcons", help="temporal consistency after shared affine alignment")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--out", required=True)
    p.add_argument("--delta", type=int, default=10)
    _common(p)
    p.set_defaults(func=cmd_tempcons)

    p = sub.add_parser("schedule", help="dump a diffusion schedule and timestep spacing")
    p.add_argument("out")
    p.add_argument("--kind", choices=SCHEDULE_KINDS, default="linear")
    p.add_argument("--train-steps", type=int, default=1000)
    p.add_argument("--inference-steps", type=int, default=4)
    p.add_argument("--spacing", choices=SPACING_MODES, default="trailing")
    _common(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("bench", help="run the synthetic benchmark end to end")
    p.add_argument("out")
    p.add_argument("--bench", default="bench/default.json")
    p.add_argument("--bands", type=int, default=None)
    p.add_argument("--delta", type=int, default=None)
    _denoiser_flags(p)
    _common(p)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (ConfigError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, LoadError, DepthModelError, NoPairsError, AlignmentError,
            RegistrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
