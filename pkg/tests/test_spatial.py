import json
import math

import numpy as np
import pytest
from scipy.integrate import quad
from shapely.geometry import LineString, box

from gazewalk.spatial import (
    GridField,
    GridSpec,
    KernelSpec,
    cells_touched,
    export_geojson,
    export_raster,
    kde,
    parse_ascii_grid,
    quartic_1d,
    rasterize_mean,
    read_raster,
    route_counts,
    to_ascii_grid,
    to_geojson,
    top_fraction_cells,
)

GRID = GridSpec((0.0, 0.0), 1.0, 10, 10)


def test_single_route_value():
    f = rasterize_mean([(np.array([[0.5, 0.5], [0.5, 2.5]]), 0.4)], GRID)
    assert f.data[0, 0] == 0.4 and f.data[2, 0] == 0.4
    assert math.isnan(f.data[0, 5])


def test_two_routes_mean():
    routes = [(np.array([[0.2, 3.5], [9.8, 3.5]]), 0.2), (np.array([[4.5, 0.2], [4.5, 9.8]]), 0.6)]
    f = rasterize_mean(routes, GRID)
    assert f.data[3, 4] == pytest.approx(0.4)
    assert f.data[3, 0] == 0.2 and f.data[0, 4] == 0.6


def test_reentry_counts_once():
    back_and_forth = np.array([[0.5, 0.5], [2.5, 0.5], [0.5, 0.5], [2.5, 0.5]])
    f = rasterize_mean([(back_and_forth, 1.0), (np.array([[1.5, 0.2], [1.5, 0.8]]), 0.0)], GRID)
    assert f.data[0, 1] == 0.5
    assert route_counts([back_and_forth], GRID).data[0, 1] == 1


def test_rasterized_values_within_contributor_range(corpus, corpus_features):
    grid = GridSpec((0.0, 0.0), 0.5, 48, 44)
    vals = {v.record_id: v.pct_screen_walk for v in corpus_features}
    routes = [(r.positions(), vals[r.id]) for r in corpus[:60]]
    f = rasterize_mean(routes, grid)
    lo, hi = min(v for _, v in routes), max(v for _, v in routes)
    valid = f.data[~np.isnan(f.data)]
    assert valid.size and valid.min() >= lo - 1e-12 and valid.max() <= hi + 1e-12


def test_edge_contact_counts():
    # a segment running along the shared edge x = 2 touches both columns
    hit = cells_touched(np.array([[2.0, 0.2], [2.0, 0.8]]), GRID)
    assert {(1, 0), (2, 0)} <= hit


def test_cells_touched_agree_with_shapely():
    r = np.random.default_rng(5)
    for _ in range(20):
        pts = r.uniform(0, 10, size=(4, 2))
        line = LineString(pts)
        expect = {(c, rr) for c in range(10) for rr in range(10) if line.intersects(box(*GRID.cell_box(c, rr)))}
        assert cells_touched(pts, GRID) == expect


# --------------------------------------------------------------------------- kernel density


def test_kernel_constants():
    k = KernelSpec(2.0)
    assert k(np.array(0.0)) == pytest.approx(3 / math.pi)
    assert KernelSpec(2.0, normalization="raw")(np.array(0.0)) == 1.0
    assert quartic_1d(0.0) == pytest.approx(15 / 16)
    assert quad(lambda u: float(quartic_1d(u)), -1, 1)[0] == pytest.approx(1.0, abs=1e-12)
    radial = quad(lambda r: 2 * math.pi * r * float(k(np.array(r))), 0, 1)[0]
    assert radial == pytest.approx(1.0, abs=1e-12)
    for bad in ({"bandwidth": 0}, {"shape": "gaussian"}, {"normalization": "other"}):
        with pytest.raises(ValueError):
            KernelSpec(**bad)


def test_point_at_cell_center():
    f = kde([(4.5, 4.5)], [3.0], GRID, KernelSpec(2.0))
    assert f.data[4, 4] == pytest.approx(3.0 * (3 / math.pi) / 4.0)


def test_compact_support():
    f = kde([(50.0, 50.0)], [1.0], GRID, KernelSpec(2.0))
    assert np.all(f.data == 0.0)
    g = kde([(4.5, 4.5)], [1.0], GRID, KernelSpec(2.0))
    X, Y = GRID.centers()
    far = np.hypot(X - 4.5, Y - 4.5) >= 2.0
    assert np.all(g.data[far] == 0.0)
    assert np.all(g.data[~far] > 0.0)


@pytest.mark.parametrize("h", [1.0, 2.0, 3.5])
def test_mass_conserved(h):
    cell = h / 10
    n = int(math.ceil(4 * h / cell)) + 4
    grid = GridSpec((0.0, 0.0), cell, n, n)
    w = 2.5
    f = kde([(n * cell / 2 + 0.013, n * cell / 2 - 0.021)], [w], grid, KernelSpec(h))
    assert f.data.sum() * cell * cell == pytest.approx(w, rel=0.01)


def test_kde_linear_in_weights():
    r = np.random.default_rng(1)
    pts = r.uniform(0, 10, size=(15, 2))
    w1, w2 = r.uniform(0, 5, 15), r.uniform(0, 5, 15)
    a = kde(pts, w1, GRID).data + kde(pts, w2, GRID).data
    b = kde(pts, w1 + w2, GRID).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_kde_rejects_bad_weights():
    with pytest.raises(ValueError):
        kde([(1, 1)], [-1.0], GRID)
    with pytest.raises(ValueError):
        kde([(1, 1), (2, 2)], [1.0], GRID)


def test_translation_equivariance():
    r = np.random.default_rng(2)
    pts = r.uniform(0, 10, size=(10, 2))
    shift = np.array([3.25, -7.5])
    moved = GridSpec(tuple(np.add(GRID.origin, shift)), GRID.cell, GRID.ncols, GRID.nrows)
    np.testing.assert_allclose(kde(pts + shift, None, moved).data, kde(pts, None, GRID).data, atol=1e-12)
    routes = [(pts[:4], 0.3), (pts[4:9], 0.9)]
    a = rasterize_mean(routes, GRID).data
    b = rasterize_mean([(p + shift, v) for p, v in routes], moved).data
    np.testing.assert_array_equal(np.isnan(a), np.isnan(b))
    np.testing.assert_allclose(a[~np.isnan(a)], b[~np.isnan(b)], atol=1e-12)


# --------------------------------------------------------------------------- export


def test_one_cell_ascii():
    f = GridField(GridSpec((0.0, 0.0), 0.5, 1, 1), np.array([[3.5]]))
    text = to_ascii_grid(f)
    lines = text.splitlines()
    assert [ln.split()[0] for ln in lines[:6]] == ["ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "NODATA_value"]
    assert lines[6] == "3.5"


def test_ascii_rows_top_to_bottom():
    f = GridField(GridSpec((0.0, 0.0), 1.0, 2, 2), np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert to_ascii_grid(f).splitlines()[6:] == ["3.0 4.0", "1.0 2.0"]


def test_ascii_round_trip(tmp_path):
    r = np.random.default_rng(3)
    data = r.normal(size=(5, 7))
    data[1, 2] = np.nan
    f = GridField(GridSpec((12.5, -3.0), 0.25, 7, 5), data)
    g = parse_ascii_grid(to_ascii_grid(f))
    assert g.grid == f.grid
    np.testing.assert_array_equal(g.data, f.data)
    path = export_raster(f, tmp_path / "f.asc")
    np.testing.assert_array_equal(read_raster(path).data, f.data)


def test_geojson_omits_nodata(tmp_path):
    f = GridField(GridSpec((0.0, 0.0), 1.0, 2, 2), np.array([[1.0, np.nan], [2.0, 3.0]]))
    doc = to_geojson(f, "demo")
    assert len(doc["features"]) == 3
    assert {ft["properties"]["value"] for ft in doc["features"]} == {1.0, 2.0, 3.0}
    assert doc["features"][0]["geometry"]["coordinates"][0][0] == [0.0, 0.0]
    path = export_geojson(f, tmp_path / "f.geojson", "demo")
    assert json.loads(path.read_text()) == doc


def test_export_errors_name_path(tmp_path):
    f = GridField(GridSpec((0.0, 0.0), 1.0, 1, 1), np.array([[1.0]]))
    missing = tmp_path / "no" / "such" / "f.asc"
    with pytest.raises(OSError, match="no/such"):
        export_raster(f, missing)
    with pytest.raises(OSError, match="no/such"):
        export_geojson(f, tmp_path / "no" / "such" / "f.geojson")
    with pytest.raises(ValueError):
        export_raster(f, tmp_path / "x", format="tiff")


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec((0, 0), 0.0, 1, 1)
    with pytest.raises(ValueError):
        GridField(GRID, np.zeros((3, 3)))
    g = GridSpec.covering((0, 0, 24, 22), 0.5)
    assert (g.ncols, g.nrows) == (48, 44)
    assert g.cell_of(23.99, 0.01) == (47, 0)


def test_top_fraction_cells():
    data = np.arange(100, dtype=float).reshape(10, 10)
    data[0, 0] = np.nan
    top = top_fraction_cells(GridField(GRID, data), 0.1)
    assert len(top) == 10
    assert all(data[r, c] >= 90 for c, r in top)
    assert top_fraction_cells(GridField(GRID, np.full((10, 10), np.nan))) == []
