"""Batch command-line interface.

Stages share an output directory.  Each stage writes a ``<stage>.manifest.json``
recording the config it used, the SHA-256 of every input and output file and
its elapsed time; downstream stages refuse outputs whose hashes or grid no
longer match the manifest that produced them.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .arrangement import pattern_report
from .config import (CLASSIFIED_CSV, CLASSIFIED_JSONL, HOTSPOTS_CSV, HOTSPOTS_JSONL, LEVEL_TABLE,
                     PATTERN_JSON, ROADS, STOPS, TRUTH, PipelineConfig)
from .detection import _detect
from .exceptions import HotspotError, InputError, ManifestMismatchError, PreconditionError, SimulationError
from .io import (file_sha256, read_hotspots, read_roads, read_stops_csv, write_csv, write_hotspots,
                 write_json)
from .levels import LoubarClassifier, level_table
from .rng import run_seed_sequence
from .simulation import mechanism_experiment, simulate_cascade
from .spatial_core import CellPointSet, bin_points
from .svg import Band, Series, write_svg
from .synth import synth_city, write_city

logger = logging.getLogger("hotspot_hierarchy")


def _f(v) -> str:
    return f"{float(v):.12g}"


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def _file_entry(path: Path, root: Path) -> dict:
    try:
        name = str(path.relative_to(root))
    except ValueError:
        name = str(path)
    return {"file": name, "sha256": file_sha256(path)}


def _write_manifest(cfg: PipelineConfig, stage: str, inputs: dict, outputs: dict, params: dict,
                    counts: dict, t0: float, extra: dict | None = None) -> Path:
    root = cfg.output_dir
    manifest = {
        "stage": stage,
        "version": __version__,
        "master_seed": cfg.master_seed,
        "grid": cfg.grid.to_dict() if cfg.grid is not None else None,
        "params": params,
        "counts": counts,
        "inputs": {k: _file_entry(Path(p), root) for k, p in sorted(inputs.items())},
        "outputs": {k: _file_entry(Path(p), root) for k, p in sorted(outputs.items())},
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
    }
    manifest.update(extra or {})
    path = cfg.out(f"{stage}.manifest.json")
    write_json(path, manifest)
    return path


def _upstream(cfg: PipelineConfig, stage: str, keys) -> dict:
    """Load the manifest of ``stage`` and check the files this stage consumes."""
    path = cfg.out(f"{stage}.manifest.json")
    if not path.exists():
        raise PreconditionError(f"missing {path.name}; run the '{stage}' stage first")
    manifest = json.loads(path.read_text())
    grid = cfg.require_grid()
    if manifest.get("grid") != grid.to_dict():
        raise ManifestMismatchError(f"grid in {path.name} differs from the current config grid")
    for key in keys:
        entry = manifest["outputs"].get(key)
        if entry is None:
            raise ManifestMismatchError(f"{path.name} does not list output {key!r}")
        f = cfg.output_dir / entry["file"]
        if not f.exists():
            raise PreconditionError(f"{f} listed in {path.name} is missing")
        if file_sha256(f) != entry["sha256"]:
            raise ManifestMismatchError(f"{f.name} changed since the '{stage}' stage wrote it")
    return manifest


def _roads_path(cfg: PipelineConfig, required: bool) -> Path | None:
    p = cfg.input_path("roads", ROADS)
    if p.exists():
        return p
    if required or cfg.inputs.get("roads"):
        raise InputError(f"roads file not found: {p}")
    return None


def _check_roads_match(manifest: dict, roads_path: Path) -> None:
    entry = manifest["inputs"].get("roads")
    if entry is not None and entry["sha256"] != file_sha256(roads_path):
        raise ManifestMismatchError(f"{roads_path.name} differs from the roads used by the '{manifest['stage']}' stage")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    spec = cfg.synth_spec()
    city = synth_city(spec)
    paths = write_city(city, cfg.output_dir)
    sizes = [len(lv) for lv in city.levels]
    _write_manifest(cfg, "synth", {}, paths, spec.to_dict(),
                    {"levels": sizes, "n_stops": int(len(city.stops_xy)), "road_cells": len(city.roads)}, t0)
    logger.info("synthetic city: %s hotspots per level, %d stops", sizes, len(city.stops_xy))
    return 0


def _recall_precision(hotspots, truth_path: Path) -> dict:
    truth = json.loads(truth_path.read_text())
    planted = {(h["row"], h["col"]) for h in truth.get("hotspots", [])}
    found = {h.center for h in hotspots}
    hit = len(planted & found)
    return {"planted": len(planted), "matched": hit,
            "recall": hit / len(planted) if planted else None,
            "precision": hit / len(found) if found else None}


def cmd_detect(cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    grid = cfg.require_grid()
    stops_path = cfg.input_path("stops", STOPS)
    cfg.require(stops_path)
    roads_path = _roads_path(cfg, required=False)
    params = cfg.detection_params()
    stops = read_stops_csv(stops_path)
    raster = bin_points(stops, grid)
    if raster.n_out_of_bounds:
        logger.warning("%d of %d stops fall outside the grid and are ignored", raster.n_out_of_bounds, len(stops))
    road = None
    if roads_path is not None and cfg.restrict_to_roads:
        road = read_roads(roads_path, grid, int(cfg.inputs.get("road_buffer_cells", 0)))
    if len(stops) == 0:
        logger.warning("stops file %s is empty; writing empty hotspot outputs", stops_path)
    hotspots, radius = _detect(raster, road, params)
    if len(stops) and not hotspots:
        logger.warning("no hotspots detected")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    outputs = {"hotspots": cfg.out(HOTSPOTS_JSONL), "hotspots_csv": cfg.out(HOTSPOTS_CSV)}
    write_hotspots(outputs["hotspots"], outputs["hotspots_csv"], hotspots, grid)
    counts = {"n_stops": int(len(stops)), "n_out_of_bounds": int(raster.n_out_of_bounds),
              "n_hotspots": len(hotspots)}
    truth_path = cfg.input_path("truth", TRUTH)
    if truth_path.exists():
        counts["ground_truth"] = _recall_precision(hotspots, truth_path)
    inputs = {"stops": stops_path}
    if road is not None:
        inputs["roads"] = roads_path
    p = dict(cfg.detection)
    p["radius_cells_used"] = radius
    _write_manifest(cfg, "detect", inputs, outputs, p, counts, t0)
    logger.info("detected %d hotspots (radius %s)", len(hotspots), radius)
    return 0


def cmd_classify(cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    _upstream(cfg, "detect", ["hotspots"])
    hotspots = read_hotspots(cfg.out(HOTSPOTS_JSONL))
    if not hotspots:
        raise PreconditionError("classification requires at least one hotspot")
    stops = np.array([h.stops for h in hotspots], dtype=float)
    max_levels = cfg.classification.get("max_levels")
    clf = LoubarClassifier(max_levels=None if max_levels is None else int(max_levels)).fit(stops)
    labeled = [h.with_level(int(lv) if lv else None) for h, lv in zip(hotspots, clf.labels_)]
    rows = level_table(stops, clf.partition_)
    if max_levels is not None:
        rows = rows[:int(max_levels)]
    outputs = {"classified": cfg.out(CLASSIFIED_JSONL), "classified_csv": cfg.out(CLASSIFIED_CSV),
               "level_table": cfg.out(LEVEL_TABLE)}
    write_hotspots(outputs["classified"], outputs["classified_csv"], labeled, cfg.grid)
    header = ["level", "n_hotspots", "stop_fraction_lo", "stop_fraction_hi", "max_stops", "min_stops",
              "median_stops", "loubar_threshold"]
    write_csv(outputs["level_table"], header,
              [[r["level"], r["n_hotspots"], _f(r["stop_fraction_lo"]), _f(r["stop_fraction_hi"]),
                _f(r["max_stops"]), _f(r["min_stops"]), _f(r["median_stops"]),
                _f(clf.partition_.thresholds[r["level"] - 1])] for r in rows])
    _write_manifest(cfg, "classify", {"hotspots": cfg.out(HOTSPOTS_JSONL)}, outputs, dict(cfg.classification),
                    {"n_hotspots": len(hotspots), "levels": [r["n_hotspots"] for r in rows]}, t0)
    return 0


def _observed_levels(path: Path, cell_size: float) -> list[CellPointSet]:
    by_level: dict[int, list] = {}
    for h in read_hotspots(path):
        if h.level:
            by_level.setdefault(int(h.level), []).append(h.center)
    return [CellPointSet(sorted(by_level[k]), cell_size) for k in sorted(by_level)]


def _pair_tag(p: dict) -> str:
    return f"L{p['upper_level']}-L{p['lower_level']}"


def _write_pattern_csvs(cfg: PipelineConfig, report: dict) -> dict:
    outputs = {}
    for curve, xkey in (("knn", "k"), ("coverage", "r")):
        header = ["upper_level", "lower_level", xkey, "observed"]
        for m in ("random1", "random2"):
            header += [f"{m}_q10", f"{m}_q50", f"{m}_q90"]
        rows = []
        for p in report["pairs"]:
            c = p[curve]
            for j, x in enumerate(c[xkey]):
                row = [p["upper_level"], p["lower_level"], _f(x), _f(c["observed"][j])]
                for m in ("random1", "random2"):
                    b = p["bands"][m][curve]
                    row += [_f(b["q10"][j]), _f(b["q50"][j]), _f(b["q90"][j])]
                rows.append(row)
        path = cfg.out(f"{curve}.csv")
        write_csv(path, header, rows)
        outputs[curve] = path
    for kind in ("curve", "pairs"):
        rows = []
        for p in report["pairs"]:
            for d, v in p["inhibit"].items():
                rows += [[p["upper_level"], p["lower_level"], d, _f(a), _f(b)] for a, b in v[kind]]
        name = "inhibit" if kind == "curve" else "density_pairs"
        path = cfg.out(f"{name}.csv")
        write_csv(path, ["upper_level", "lower_level", "d_count", "same_level", "next_level"], rows)
        outputs[name] = path
    return outputs


def cmd_metrics(cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    up = _upstream(cfg, "classify", ["classified"])
    det = _upstream(cfg, "detect", [])
    roads_path = _roads_path(cfg, required=True)
    _check_roads_match(det, roads_path)
    grid = cfg.grid
    road = read_roads(roads_path, grid, int(cfg.inputs.get("road_buffer_cells", 0)))
    levels = _observed_levels(cfg.out(CLASSIFIED_JSONL), grid.cell_size)
    if len(levels) < 2:
        raise PreconditionError(f"metrics requires at least 2 levels, found {len(levels)}")
    pcfg = cfg.pattern_config()
    report = pattern_report(levels, road, pcfg).to_dict()
    outputs = {"pattern_report": cfg.out(PATTERN_JSON)}
    write_json(outputs["pattern_report"], report)
    outputs.update(_write_pattern_csvs(cfg, report))
    _write_manifest(cfg, "metrics", {"classified": cfg.out(CLASSIFIED_JSONL), "roads": roads_path}, outputs,
                    pcfg.to_dict(), {"levels": [len(lv) for lv in levels], "pairs": len(report["pairs"])}, t0,
                    {"upstream": {"classify": up["outputs"]["classified"]["sha256"]}})
    return 0


def cmd_simulate(cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    up = _upstream(cfg, "classify", ["classified"])
    det = _upstream(cfg, "detect", [])
    roads_path = _roads_path(cfg, required=True)
    _check_roads_match(det, roads_path)
    grid = cfg.grid
    road = read_roads(roads_path, grid, int(cfg.inputs.get("road_buffer_cells", 0)))
    levels = _observed_levels(cfg.out(CLASSIFIED_JSONL), grid.cell_size)
    if len(levels) < 2:
        raise PreconditionError(f"simulate requires at least 2 levels, found {len(levels)}")
    radius = det["params"].get("radius_cells_used") or 4
    params = cfg.mechanism_params(int(radius))
    mechanisms = cfg.mechanisms()
    result = mechanism_experiment(levels, road, params, mechanisms, cfg.n_sims, cfg.d_rmse,
                                  cfg.master_seed, cfg.n_jobs)
    outputs, partial = {}, False
    for mech in mechanisms:
        path = cfg.out(f"rmse_{mech}.csv")
        write_csv(path, ["mechanism", "level", "d_rmse", "q10", "q50", "q90", "n_runs"],
                  [[c.mechanism, c.level, _f(d), _f(c.q10[j]), _f(c.q50[j]), _f(c.q90[j]), c.n_runs]
                   for c in result.curves if c.mechanism == mech for j, d in enumerate(c.d_rmse)])
        outputs[f"rmse_{mech}"] = path
        # run 0 of the experiment, kept in full as the example cascade
        try:
            run = simulate_cascade(levels, road, replace(params, mechanism=mech), run_seed_sequence(cfg.master_seed, 0))
        except SimulationError as exc:
            run = exc.partial_run
        run_path = cfg.out(f"simulation_{mech}.json")
        write_json(run_path, run.to_dict())
        outputs[f"simulation_{mech}"] = run_path
        if result.failed_runs[mech]:
            partial = True
    sim_params = params.to_dict()
    sim_params.update(mechanisms=list(mechanisms), n_sims=cfg.n_sims, d_rmse=list(cfg.d_rmse))
    _write_manifest(cfg, "simulate", {"classified": cfg.out(CLASSIFIED_JSONL), "roads": roads_path}, outputs,
                    sim_params, {"levels": [len(lv) for lv in levels],
                                 "failed_runs": {m: len(v) for m, v in result.failed_runs.items()}}, t0,
                    {"upstream": {"classify": up["outputs"]["classified"]["sha256"]}})
    if partial:
        logger.error("some cascades exhausted their candidates; RMSE summaries cover completed runs only")
        return SimulationError.exit_code
    return 0


def _read_rmse_csv(path: Path) -> dict:
    out: dict[int, dict] = {}
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            d = out.setdefault(int(row["level"]), {"d": [], "q10": [], "q50": [], "q90": []})
            d["d"].append(float(row["d_rmse"]))
            for q in ("q10", "q50", "q90"):
                d[q].append(float(row[q]))
    return out


def cmd_report(cfg: PipelineConfig) -> int:
    t0 = time.perf_counter()
    cfg.require_grid()
    inputs, outputs = {}, {}
    styles = {"random1": "#c0392b", "random2": "#27ae60"}
    if cfg.out("metrics.manifest.json").exists():
        _upstream(cfg, "metrics", ["pattern_report"])
        inputs["pattern_report"] = cfg.out(PATTERN_JSON)
        report = json.loads(cfg.out(PATTERN_JSON).read_text())
        for p in report["pairs"]:
            tag = _pair_tag(p)
            for curve, xkey, xlab, ylab in (("knn", "k", "k (nearest lower-level hotspots)", "mean KNN distance (m)"),
                                            ("coverage", "r", "r (m)", "coverage ratio")):
                c = p[curve]
                series = [Series("observed", c[xkey], c["observed"], color="#1f4e79")]
                bands = []
                for m, color in styles.items():
                    b = p["bands"][m][curve]
                    bands.append(Band(f"{m} 10-90%", b["grid"], b["q10"], b["q90"], color=color))
                    series.append(Series(f"{m} median", b["grid"], b["q50"], dashed=True, color=color))
                name = f"{curve}_{tag}"
                outputs[name] = write_svg(cfg.out(f"{name}.svg"), f"{curve} L{p['upper_level']} vs L{p['lower_level']}",
                                          xlab, ylab, series, bands)
            series = [Series("y = x", [0.0, 1.0], [0.0, 1.0], dashed=True, color="#7f8c8d")]
            for i, (d, v) in enumerate(sorted(p["inhibit"].items(), key=lambda kv: float(kv[0]))):
                xs, ys = zip(*v["curve"])
                series.append(Series(f"d_count {d} m", list(xs), list(ys), color=("#1f4e79", "#c0392b", "#27ae60",
                                                                               "#8e44ad")[i % 4]))
            name = f"inhibit_{tag}"
            outputs[name] = write_svg(cfg.out(f"{name}.svg"), f"inhibit L{p['upper_level']} vs L{p['lower_level']}",
                                      "same-level normalized density", "next-level normalized density",
                                      series, y_range=(0.0, 1.05))
    if cfg.out("simulate.manifest.json").exists():
        man = _upstream(cfg, "simulate", [])
        mechs = [k[len("rmse_"):] for k in sorted(man["outputs"]) if k.startswith("rmse_")]
        _upstream(cfg, "simulate", [f"rmse_{m}" for m in mechs])
        curves = {}
        for m in mechs:
            inputs[f"rmse_{m}"] = cfg.out(f"rmse_{m}.csv")
            curves[m] = _read_rmse_csv(cfg.out(f"rmse_{m}.csv"))
        colors = {"knn": "#1f4e79", "global": "#c0392b", "random": "#27ae60"}
        for lvl in sorted({lv for c in curves.values() for lv in c}):
            series, bands = [], []
            for m in mechs:
                c = curves[m].get(lvl)
                if c is None:
                    continue
                bands.append(Band(f"{m} 10-90%", c["d"], c["q10"], c["q90"], color=colors.get(m)))
                series.append(Series(f"{m} median", c["d"], c["q50"], dashed=True, color=colors.get(m)))
            name = f"rmse_L{lvl}"
            outputs[name] = write_svg(cfg.out(f"{name}.svg"), f"RMSE of simulated level {lvl}",
                                      "d_rmse (m)", "RMSE of normalized density", series, bands)
    if not outputs:
        raise PreconditionError("nothing to report; run 'metrics' or 'simulate' first")
    _write_manifest(cfg, "report", inputs, outputs, {}, {"figures": len(outputs)}, t0)
    return 0


COMMANDS = {"synth": cmd_synth, "detect": cmd_detect, "classify": cmd_classify, "metrics": cmd_metrics,
            "simulate": cmd_simulate, "report": cmd_report}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hotspot-hierarchy", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "generate a synthetic city (stops, roads, grid, ground truth)",
        "detect": "detect local hotspots from stops",
        "classify": "assign Loubar popularity levels",
        "metrics": "arrangement curves with null-model bands",
        "simulate": "cascade simulation and RMSE per mechanism",
        "report": "render SVG figures from metrics and simulation outputs",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("config", type=Path, help="pipeline JSON config")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--n-jobs", type=int, help="parallel workers for null models and simulations")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "detect":
            p.add_argument("--stops", type=Path, help="stops CSV (lon,lat)")
            p.add_argument("--roads", type=Path, help="roads GeoJSON or row,col CSV")
            p.add_argument("--radius", type=int, help="detection radius in cells (default: elbow rule)")
        if name == "metrics":
            p.add_argument("--n-runs", type=int, help="null-model runs")
        if name == "simulate":
            p.add_argument("--n-runs", type=int, help="simulation runs per mechanism")
            p.add_argument("--mechanism", help="one mechanism or a comma list (knn, global, random)")
            p.add_argument("--k", type=int, help="K nearest higher-level hotspots")
            p.add_argument("--alpha", type=float, help="distance-decay exponent")
            p.add_argument("--d-cut", type=float, help="cutoff distance in meters")
    return parser


def _overrides(args) -> dict:
    o = {"master_seed": args.seed, "n_jobs": args.n_jobs}
    if args.command == "detect":
        o.update({"detection.radius_cells": args.radius,
                  "inputs.stops": str(args.stops.resolve()) if args.stops else None,
                  "inputs.roads": str(args.roads.resolve()) if args.roads else None})
    if args.command == "metrics":
        o["metrics.n_runs"] = args.n_runs
    if args.command == "simulate":
        o.update({"simulation.n_sims": args.n_runs, "simulation.K": args.k, "simulation.alpha": args.alpha,
                  "simulation.d_cut": args.d_cut,
                  "simulation.mechanisms": args.mechanism.split(",") if args.mechanism else None})
    return o


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    try:
        cfg = PipelineConfig.load(args.config, _overrides(args))
        if args.out is not None:
            cfg.output_dir = args.out
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except HotspotError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        logger.error("%s", exc)
        return InputError.exit_code


if __name__ == "__main__":
    sys.exit(main())
