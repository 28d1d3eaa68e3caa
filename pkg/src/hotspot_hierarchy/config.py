"""Pipeline configuration: one JSON file plus command-line overrides."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .arrangement import DEFAULT_D_COUNTS, DEFAULT_R_GRID, PatternConfig
from .detection import DetectionParams
from .exceptions import InputError
from .io import read_grid
from .simulation import DEFAULT_D_RMSE, MECHANISMS, MechanismParams
from .spatial_core import GridSpec
from .synth import SyntheticCitySpec

# default file names inside the output directory
STOPS, ROADS, GRID, TRUTH = "stops.csv", "roads.geojson", "grid.json", "truth.json"
HOTSPOTS_JSONL, HOTSPOTS_CSV = "hotspots.jsonl", "hotspots.csv"
CLASSIFIED_JSONL, CLASSIFIED_CSV, LEVEL_TABLE = "classified.jsonl", "classified.csv", "level_table.csv"
PATTERN_JSON = "pattern_report.json"

_TOP_KEYS = {"master_seed", "output_dir", "n_jobs", "grid", "inputs", "detection", "classification",
             "metrics", "simulation", "synth"}
_DETECT_KEYS = {"radius_cells", "radius_search_range", "min_stops", "gravity_exponent", "gravity_mass",
                "restrict_to_roads"}
_METRIC_KEYS = {"k_max", "r_grid", "d_counts", "n_runs"}
_SIM_KEYS = {"mechanisms", "K", "alpha", "d_cut", "x_radius_cells", "n_sims", "d_rmse"}


def _unknown(section: str, d: dict, allowed: set) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise InputError(f"config: unknown key(s) in {section}: {extra}")


def _r_grid(v) -> tuple[float, ...]:
    if isinstance(v, dict):
        start, stop, step = float(v["start"]), float(v["stop"]), float(v["step"])
        if step <= 0 or stop < start:
            raise InputError("config: metrics.r_grid needs step > 0 and stop >= start")
        n = int(round((stop - start) / step))
        return tuple(start + i * step for i in range(n + 1))
    return tuple(float(r) for r in v)


@dataclass
class PipelineConfig:
    master_seed: int
    output_dir: Path
    base_dir: Path
    n_jobs: int = 1
    grid: GridSpec | None = None
    inputs: dict = field(default_factory=dict)
    detection: dict = field(default_factory=dict)
    classification: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    synth: dict | None = None

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except FileNotFoundError:
            raise InputError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InputError(f"{path}: top level must be an object")
        return cls.from_dict(data, path.parent, overrides)

    @classmethod
    def from_dict(cls, data: dict, base_dir=".", overrides: dict | None = None) -> "PipelineConfig":
        data = json.loads(json.dumps(data))
        _unknown("top level", data, _TOP_KEYS)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            (data.setdefault(section, {}) if section else data)[name] = value
        if data.get("master_seed") is None:
            raise InputError("config: master_seed is required (no clock-based default)")
        base = Path(base_dir)
        sections = {k: dict(data.get(k) or {}) for k in ("inputs", "detection", "classification",
                                                        "metrics", "simulation")}
        _unknown("detection", sections["detection"], _DETECT_KEYS)
        _unknown("metrics", sections["metrics"], _METRIC_KEYS)
        _unknown("simulation", sections["simulation"], _SIM_KEYS)
        _unknown("classification", sections["classification"], {"max_levels"})
        _unknown("inputs", sections["inputs"], {"stops", "roads", "grid", "truth", "road_buffer_cells"})
        cfg = cls(master_seed=int(data["master_seed"]),
                  output_dir=base / data.get("output_dir", "out"),
                  base_dir=base, n_jobs=int(data.get("n_jobs", 1)),
                  synth=data.get("synth"), **sections)
        if cfg.n_jobs == 0:
            raise InputError("config: n_jobs must be nonzero")
        grid = data.get("grid", cfg.inputs.get("grid"))
        if isinstance(grid, dict):
            cfg.grid = GridSpec.from_dict(grid)
        elif isinstance(grid, str):
            gpath = base / grid
            if not gpath.exists():
                raise InputError(f"config: grid file not found: {gpath}")
            cfg.grid = read_grid(gpath)
        elif cfg.synth is not None:
            cfg.grid = cfg.synth_spec().grid
        # validate eagerly so bad parameters fail before any work
        cfg.detection_params()
        cfg.pattern_config()
        cfg.mechanism_params(4)
        return cfg

    # -- resolved paths ------------------------------------------------------

    def input_path(self, name: str, default: str) -> Path:
        given = self.inputs.get(name)
        return self.base_dir / given if given else self.output_dir / default

    def out(self, name: str) -> Path:
        return self.output_dir / name

    def require(self, *paths) -> None:
        for p in paths:
            if not Path(p).exists():
                raise InputError(f"required file not found: {p}")

    def require_grid(self) -> GridSpec:
        if self.grid is None:
            gpath = self.output_dir / GRID
            if not gpath.exists():
                raise InputError("config: no grid given (set 'grid', 'inputs.grid' or 'synth')")
            self.grid = read_grid(gpath)
        return self.grid

    # -- typed sections ------------------------------------------------------

    def detection_params(self) -> DetectionParams:
        d = {k: v for k, v in self.detection.items() if k != "restrict_to_roads"}
        if "radius_search_range" in d:
            d["radius_search_range"] = tuple(int(v) for v in d["radius_search_range"])
        return DetectionParams(**d)

    @property
    def restrict_to_roads(self) -> bool:
        return bool(self.detection.get("restrict_to_roads", True))

    def pattern_config(self) -> PatternConfig:
        m = self.metrics
        return PatternConfig(
            master_seed=self.master_seed, k_max=int(m.get("k_max", 20)),
            r_grid=_r_grid(m.get("r_grid", DEFAULT_R_GRID)),
            d_counts=tuple(float(d) for d in m.get("d_counts", DEFAULT_D_COUNTS)),
            n_runs=int(m.get("n_runs", 100)), n_jobs=self.n_jobs)

    def mechanisms(self) -> tuple[str, ...]:
        mech = self.simulation.get("mechanisms", MECHANISMS)
        mech = (mech,) if isinstance(mech, str) else tuple(mech)
        bad = [m for m in mech if m not in MECHANISMS]
        if bad or not mech:
            raise InputError(f"config: mechanisms must be a nonempty subset of {MECHANISMS}, got {list(mech)}")
        return mech

    def mechanism_params(self, default_radius: int) -> MechanismParams:
        s = self.simulation
        xr = s.get("x_radius_cells")
        return MechanismParams(mechanism=self.mechanisms()[0], K=int(s.get("K", 3)),
                               alpha=float(s.get("alpha", 1.0)), d_cut=float(s.get("d_cut", 1000.0)),
                               x_radius_cells=int(default_radius if xr is None else xr))

    @property
    def n_sims(self) -> int:
        return int(self.simulation.get("n_sims", 100))

    @property
    def d_rmse(self) -> tuple[float, ...]:
        return tuple(float(d) for d in self.simulation.get("d_rmse", DEFAULT_D_RMSE))

    def synth_spec(self) -> SyntheticCitySpec:
        if self.synth is None:
            raise InputError("config: no 'synth' section")
        d = dict(self.synth)
        d.setdefault("seed", self.master_seed)
        try:
            return SyntheticCitySpec.from_dict(d)
        except TypeError as exc:
            raise InputError(f"config: bad synth section: {exc}") from None
