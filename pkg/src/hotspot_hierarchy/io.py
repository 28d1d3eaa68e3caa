"""File formats: stops CSV, roads (GeoJSON or cell CSV), grid JSON, hotspot outputs, manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from pathlib import Path

import numpy as np

from .detection import Hotspot
from .exceptions import InputError
from .spatial_core import GridSpec, RoadMask, rasterize_roads, unproject_from_meters

logger = logging.getLogger(__name__)


def _float(value: str, path, lineno: int, column: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise InputError(f"{path}: line {lineno}: column {column!r} is not a number: {value!r}") from None
    if not math.isfinite(v):
        raise InputError(f"{path}: line {lineno}: column {column!r} is not finite: {value!r}")
    return v


def read_stops_csv(path) -> np.ndarray:
    """Read ``lon,lat`` columns (extra columns ignored) into an (n, 2) array."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            return np.empty((0, 2))
        if "lon" not in header or "lat" not in header:
            raise InputError(f"{path}: header must contain 'lon' and 'lat' columns, got {header}")
        i_lon, i_lat = header.index("lon"), header.index("lat")
        out = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not v.strip() for v in row):
                continue
            if len(row) <= max(i_lon, i_lat):
                raise InputError(f"{path}: line {lineno}: expected at least {max(i_lon, i_lat) + 1} fields, got {len(row)}")
            out.append((_float(row[i_lon], path, lineno, "lon"), _float(row[i_lat], path, lineno, "lat")))
    return np.asarray(out, dtype=float).reshape(-1, 2)


def write_stops_csv(path, lonlat) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lon", "lat"])
        for lon, lat in np.asarray(lonlat, dtype=float).reshape(-1, 2):
            w.writerow([f"{lon:.8f}", f"{lat:.8f}"])


def read_grid(path) -> GridSpec:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    return GridSpec.from_dict(data.get("grid", data))


def write_grid(path, grid: GridSpec) -> None:
    write_json(path, grid.to_dict())


def write_geojson_lines(path, lines) -> None:
    features = [
        {"type": "Feature", "properties": {},
         "geometry": {"type": "LineString", "coordinates": [[round(float(x), 9), round(float(y), 9)] for x, y in line]}}
        for line in lines
    ]
    write_json(path, {"type": "FeatureCollection", "features": features})


def _geojson_lines(data) -> list:
    if data.get("type") == "FeatureCollection":
        geoms = [f.get("geometry") for f in data.get("features", [])]
    elif data.get("type") == "Feature":
        geoms = [data.get("geometry")]
    else:
        geoms = [data]
    lines = []
    for g in geoms:
        if not g:
            continue
        if g["type"] == "LineString":
            lines.append(g["coordinates"])
        elif g["type"] == "MultiLineString":
            lines.extend(g["coordinates"])
        else:
            logger.warning("ignoring %s geometry in roads file", g["type"])
    return lines


def read_roads(path, grid: GridSpec, buffer_cells: int = 0) -> RoadMask:
    """Road mask from GeoJSON lines (rasterized) or a ``row,col`` CSV of cells."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        cells = []
        with path.open(newline="") as fh:
            reader = csv.DictReader(fh)
            if not reader.fieldnames or not {"row", "col"} <= {f.strip() for f in reader.fieldnames}:
                raise InputError(f"{path}: road CSV needs 'row' and 'col' columns")
            for lineno, row in enumerate(reader, start=2):
                try:
                    cells.append((int(row["row"]), int(row["col"])))
                except (TypeError, ValueError):
                    raise InputError(f"{path}: line {lineno}: row/col must be integers") from None
        try:
            return RoadMask(grid, cells)
        except InputError as exc:
            raise InputError(f"{path}: {exc}") from None
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    return rasterize_roads(_geojson_lines(data), grid, buffer_cells)


def write_road_cells_csv(path, road: RoadMask) -> None:
    write_csv(path, ["row", "col"], road.road_cells.tolist())


# ---------------------------------------------------------------------------
# hotspots
# ---------------------------------------------------------------------------


def hotspot_record(i: int, h: Hotspot, grid: GridSpec) -> dict:
    r, c = h.center
    x, y = grid.cell_center(r, c)
    lon, lat = unproject_from_meters(float(x), float(y), grid)
    return {"id": i, "center": {"row": r, "col": c, "lon": lon, "lat": lat},
            "members": [list(m) for m in h.members], "stops": h.stops, "level": h.level}


def write_hotspots(jsonl_path, csv_path, hotspots, grid: GridSpec) -> None:
    records = [hotspot_record(i, h, grid) for i, h in enumerate(hotspots)]
    with Path(jsonl_path).open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    write_csv(csv_path, ["id", "center_lon", "center_lat", "stops", "level"],
              [[r["id"], f"{r['center']['lon']:.8f}", f"{r['center']['lat']:.8f}", r["stops"],
                "" if r["level"] is None else r["level"]] for r in records])


def read_hotspots(jsonl_path) -> list[Hotspot]:
    out = []
    path = Path(jsonl_path)
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(Hotspot(center=(int(rec["center"]["row"]), int(rec["center"]["col"])),
                                   members=tuple((int(a), int(b)) for a, b in rec["members"]),
                                   stops=int(rec["stops"]), level=rec.get("level")))
            except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
                raise InputError(f"{path}: line {lineno}: malformed hotspot record ({exc})") from None
    return out


# ---------------------------------------------------------------------------
# generic writers and manifests
# ---------------------------------------------------------------------------


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_csv(path, header, rows) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
