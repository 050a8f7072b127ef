"""Grid fields over the observation area: per-cell route means, quartic-kernel densities, export."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

NODATA = -9999.0


@dataclass(frozen=True)
class GridSpec:
    """Cell (col, row) spans ``[ox + col*cell, ox + (col+1)*cell] x [oy + row*cell, ...]``; row 0 is southmost."""

    origin: tuple[float, float]
    cell: float
    ncols: int
    nrows: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "cell", float(self.cell))
        if self.cell <= 0:
            raise ValueError("cell size must be positive")
        if self.ncols < 1 or self.nrows < 1:
            raise ValueError("grid needs at least one row and one column")

    @classmethod
    def covering(cls, bounds: tuple[float, float, float, float], cell: float, origin: tuple[float, float] | None = None) -> "GridSpec":
        minx, miny, maxx, maxy = bounds
        ox, oy = origin if origin is not None else (minx, miny)
        ncols = max(1, math.ceil((maxx - ox) / cell - 1e-9))
        nrows = max(1, math.ceil((maxy - oy) / cell - 1e-9))
        return cls((float(ox), float(oy)), float(cell), ncols, nrows)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinate arrays of shape (nrows, ncols)."""
        ox, oy = self.origin
        xs = ox + (np.arange(self.ncols) + 0.5) * self.cell
        ys = oy + (np.arange(self.nrows) + 0.5) * self.cell
        return np.meshgrid(xs, ys)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        ox, oy = self.origin
        return int(math.floor((x - ox) / self.cell)), int(math.floor((y - oy) / self.cell))

    def cell_box(self, col: int, row: int) -> tuple[float, float, float, float]:
        ox, oy = self.origin
        return (ox + col * self.cell, oy + row * self.cell, ox + (col + 1) * self.cell, oy + (row + 1) * self.cell)


@dataclass(frozen=True)
class GridField:
    grid: GridSpec
    data: np.ndarray  # (nrows, ncols); NaN marks nodata
    nodata: float = NODATA

    def __post_init__(self) -> None:
        if self.data.shape != (self.grid.nrows, self.grid.ncols):
            raise ValueError(f"data shape {self.data.shape} does not match grid {(self.grid.nrows, self.grid.ncols)}")

    @property
    def values(self) -> np.ndarray:
        """Row-major values, southmost row first."""
        return self.data.reshape(-1)

    def valid_cells(self) -> list[tuple[int, int, float]]:
        return [(c, r, float(self.data[r, c])) for r, c in zip(*np.nonzero(~np.isnan(self.data)))]


@dataclass(frozen=True)
class KernelSpec:
    bandwidth: float = 2.0
    shape: str = "quartic"
    normalization: str = "normalized"  # or "raw"

    def __post_init__(self) -> None:
        if self.bandwidth <= 0:
            raise ValueError("bandwidth must be positive")
        if self.shape != "quartic":
            raise ValueError(f"unsupported kernel shape {self.shape!r}")
        if self.normalization not in ("normalized", "raw"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def constant(self) -> float:
        return 3.0 / math.pi if self.normalization == "normalized" else 1.0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= 1.0, self.constant * (1.0 - u * u) ** 2, 0.0)


def quartic_1d(u: np.ndarray | float) -> np.ndarray:
    """One-dimensional quartic (biweight) kernel, integrating to 1."""
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) <= 1.0, 15.0 / 16.0 * (1.0 - u * u) ** 2, 0.0)


def _segment_hits_box(x0, y0, x1, y1, box) -> bool:
    """Liang-Barsky clipping against a closed rectangle; touching counts."""
    xmin, ymin, xmax, ymax = box
    dx, dy = x1 - x0, y1 - y0
    t0, t1 = 0.0, 1.0
    for p, q in ((-dx, x0 - xmin), (dx, xmax - x0), (-dy, y0 - ymin), (dy, ymax - y0)):
        if p == 0:
            if q < 0:
                return False
            continue
        r = q / p
        if p < 0:
            if r > t1:
                return False
            t0 = max(t0, r)
        else:
            if r < t0:
                return False
            t1 = min(t1, r)
    return t0 <= t1


def cells_touched(polyline: np.ndarray, grid: GridSpec) -> set[tuple[int, int]]:
    """Grid cells (col, row) intersected by a polyline; edge contact counts."""
    pts = np.asarray(polyline, dtype=float).reshape(-1, 2)
    if len(pts) == 1:
        pts = np.vstack([pts, pts])
    ox, oy = grid.origin
    c = grid.cell
    hit: set[tuple[int, int]] = set()
    for (x0, y0), (x1, y1) in zip(pts[:-1], pts[1:]):
        c_lo = max(0, int(math.floor((min(x0, x1) - ox) / c)) - 1)
        c_hi = min(grid.ncols - 1, int(math.floor((max(x0, x1) - ox) / c)) + 1)
        r_lo = max(0, int(math.floor((min(y0, y1) - oy) / c)) - 1)
        r_hi = min(grid.nrows - 1, int(math.floor((max(y0, y1) - oy) / c)) + 1)
        for row in range(r_lo, r_hi + 1):
            for col in range(c_lo, c_hi + 1):
                if (col, row) not in hit and _segment_hits_box(x0, y0, x1, y1, grid.cell_box(col, row)):
                    hit.add((col, row))
    return hit


def rasterize_mean(routes: Iterable[tuple[np.ndarray, float]], grid: GridSpec) -> GridField:
    """Per cell, the mean attribute of distinct routes crossing it; untouched cells are nodata.

    A route that re-enters a cell still contributes once.
    """
    total = np.zeros((grid.nrows, grid.ncols))
    count = np.zeros((grid.nrows, grid.ncols), dtype=int)
    for polyline, value in routes:
        if value is None or (isinstance(value, float) and math.isnan(value)):
            continue
        for col, row in cells_touched(polyline, grid):
            total[row, col] += value
            count[row, col] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        data = np.where(count > 0, total / np.maximum(count, 1), np.nan)
    return GridField(grid, data)


def route_counts(routes: Iterable[np.ndarray], grid: GridSpec) -> GridField:
    """Number of distinct routes crossing each cell (0 where none)."""
    count = np.zeros((grid.nrows, grid.ncols))
    for polyline in routes:
        for col, row in cells_touched(polyline, grid):
            count[row, col] += 1
    return GridField(grid, count)


def kde(
    points: Sequence[Sequence[float]] | np.ndarray,
    weights: Sequence[float] | np.ndarray | None,
    grid: GridSpec,
    kernel: KernelSpec = KernelSpec(),
) -> GridField:
    """Weighted quartic kernel density at cell centers: sum_i w_i K(|c - p_i| / h) / h^2."""
    P = np.asarray(points, dtype=float).reshape(-1, 2)
    w = np.ones(len(P)) if weights is None else np.asarray(weights, dtype=float)
    if len(w) != len(P):
        raise ValueError("weights and points differ in length")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    h = kernel.bandwidth
    out = np.zeros((grid.nrows, grid.ncols))
    ox, oy = grid.origin
    c = grid.cell
    xs = ox + (np.arange(grid.ncols) + 0.5) * c
    ys = oy + (np.arange(grid.nrows) + 0.5) * c
    for (px, py), wi in zip(P, w):
        c0 = max(0, int(math.floor((px - h - ox) / c)))
        c1 = min(grid.ncols - 1, int(math.ceil((px + h - ox) / c)))
        r0 = max(0, int(math.floor((py - h - oy) / c)))
        r1 = min(grid.nrows - 1, int(math.ceil((py + h - oy) / c)))
        if c0 > c1 or r0 > r1:
            continue
        gx, gy = np.meshgrid(xs[c0 : c1 + 1], ys[r0 : r1 + 1])
        u = np.hypot(gx - px, gy - py) / h
        out[r0 : r1 + 1, c0 : c1 + 1] += wi * kernel(u) / (h * h)
    return GridField(grid, out)


def _fmt_nodata(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def to_ascii_grid(field: GridField) -> str:
    """ESRI ASCII grid text; rows written north to south."""
    g = field.grid
    lines = [
        f"ncols {g.ncols}",
        f"nrows {g.nrows}",
        f"xllcorner {g.origin[0]!r}",
        f"yllcorner {g.origin[1]!r}",
        f"cellsize {g.cell!r}",
        f"NODATA_value {_fmt_nodata(field.nodata)}",
    ]
    nd = _fmt_nodata(field.nodata)
    for row in field.data[::-1]:
        lines.append(" ".join(nd if math.isnan(v) else repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_ascii_grid(text: str) -> GridField:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header: dict[str, str] = {}
    keys = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")
    for ln in lines[:6]:
        k, v = ln.split(None, 1)
        header[k.lower()] = v.strip()
    missing = [k for k in keys if k not in header]
    if missing:
        raise ValueError(f"ASCII grid header missing {', '.join(missing)}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    nodata = float(header["nodata_value"])
    body = [[float(v) for v in ln.split()] for ln in lines[6:]]
    if len(body) != nrows or any(len(r) != ncols for r in body):
        raise ValueError("ASCII grid body does not match ncols/nrows")
    data = np.array(body[::-1], dtype=float)
    data[data == nodata] = np.nan
    grid = GridSpec((float(header["xllcorner"]), float(header["yllcorner"])), float(header["cellsize"]), ncols, nrows)
    return GridField(grid, data, nodata)


def to_geojson(field: GridField, name: str | None = None) -> dict:
    """One square polygon feature per cell holding data."""
    feats = []
    for col, row, value in sorted(field.valid_cells(), key=lambda t: (t[1], t[0])):
        x0, y0, x1, y1 = field.grid.cell_box(col, row)
        feats.append(
            {
                "type": "Feature",
                "properties": {"value": value, "col": int(col), "row": int(row)},
                "geometry": {"type": "Polygon", "coordinates": [[[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]},
            }
        )
    doc: dict = {"type": "FeatureCollection", "features": feats}
    if name:
        doc["name"] = name
    return doc


def export_raster(field: GridField, path: str | Path, format: str = "ascii_grid") -> Path:
    if format != "ascii_grid":
        raise ValueError(f"unsupported raster format {format!r}")
    path = Path(path)
    try:
        path.write_text(to_ascii_grid(field))
    except OSError as exc:
        raise OSError(f"cannot write raster to {path}: {exc.strerror or exc}") from exc
    return path


def export_geojson(field: GridField, path: str | Path, name: str | None = None) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(to_geojson(field, name), separators=(",", ":")) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write GeoJSON to {path}: {exc.strerror or exc}") from exc
    return path


def read_raster(path: str | Path) -> GridField:
    path = Path(path)
    try:
        return parse_ascii_grid(path.read_text())
    except OSError as exc:
        raise OSError(f"cannot read raster {path}: {exc.strerror or exc}") from exc


def top_fraction_cells(field: GridField, fraction: float = 0.1) -> list[tuple[int, int]]:
    """Cells holding the highest ``fraction`` of valid values (ties at the cutoff included)."""
    cells = field.valid_cells()
    if not cells:
        return []
    vals = np.array([v for _, _, v in cells])
    cutoff = np.quantile(vals, 1.0 - fraction, method="higher")
    return [(c, r) for c, r, v in cells if v >= cutoff]
