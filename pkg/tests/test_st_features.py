import numpy as np
import pytest

from riskfusion.errors import DimensionMismatchError
from riskfusion.geogrid import BoundingBox, CellId, cell_center, make_grid
from riskfusion.ingest import GpsPoint, OsmGraph, PoiRecord
from riskfusion.st_features import (D_TRA, HOURS, assemble_xu, node_connectivity, node_degrees,
                                    poi_bow, road_width, split_xu, traffic_patterns, width_level)

GRID = make_grid(BoundingBox(31.0, 31.03, 121.0, 121.04), rows=3, cols=4)
A, B, C = CellId(0, 0), CellId(0, 1), CellId(1, 1)
NINE = 9 * 3600.0


def at(cell):
    return cell_center(GRID, cell)


def test_transition_counts_in_next_point_hour():
    pts = [GpsPoint("t", NINE, *at(A)), GpsPoint("t", NINE + 300, *at(B))]
    tra = traffic_patterns(pts, GRID)
    # bucket I_10 (1-based) covers 09:00-09:59 and is column 9
    assert tra[GRID.linear(A), HOURS + 9] == 1 and tra[GRID.linear(B), 9] == 1
    assert tra.sum() == 2


def test_stationary_taxi_has_no_flow():
    pts = [GpsPoint("t", NINE + 60 * k, *at(A)) for k in range(30)]
    np.testing.assert_array_equal(traffic_patterns(pts, GRID), 0.0)


def test_three_cell_trajectory_conserves_flow():
    pts = [GpsPoint("t", NINE + 100 * k, *at(c)) for k, c in enumerate([A, B, C])]
    tra = traffic_patterns(pts, GRID)
    assert tra[:, :HOURS].sum() == tra[:, HOURS:].sum() == 2


def test_gaps_other_taxis_and_outside_points():
    far = (40.0, 100.0)
    pts = [GpsPoint("a", NINE, *at(A)), GpsPoint("a", NINE + 5000, *at(B)),  # gap break
           GpsPoint("b", NINE, *at(A)), GpsPoint("c", NINE + 60, *at(B)),  # different taxis
           GpsPoint("d", NINE, *at(A)), GpsPoint("d", NINE + 60, *far)]
    np.testing.assert_array_equal(traffic_patterns(pts, GRID), 0.0)


def test_unsorted_input_is_sorted_per_taxi():
    pts = [GpsPoint("t", NINE + 300, *at(B)), GpsPoint("t", NINE, *at(A))]
    tra = traffic_patterns(pts, GRID)
    assert tra[GRID.linear(A), HOURS + 9] == 1


def test_poi_counts_and_conservation():
    pois = [PoiRecord(*at(A), 0), PoiRecord(*at(A), 0), PoiRecord(*at(A), 3),
            PoiRecord(40.0, 100.0, 1)]
    bow = poi_bow(pois, GRID)
    np.testing.assert_array_equal(bow[GRID.linear(A), :5], [2, 0, 0, 1, 0])
    assert bow[GRID.linear(B)].sum() == 0
    assert bow.sum() == 3


def _graph(nodes, ways):
    return OsmGraph(nodes=dict(nodes), ways=dict(ways))


def test_plus_intersection_and_straight_way():
    lat, lon = at(C)
    d = 0.001
    nodes = {0: (lat, lon), 1: (lat + d, lon), 2: (lat - d, lon), 3: (lat, lon + d),
             4: (lat, lon - d)}
    plus = _graph(nodes, {1: ((1, 0, 2), "primary"), 2: ((3, 0, 4), "primary")})
    con = node_connectivity(plus, GRID)[GRID.linear(C)]
    np.testing.assert_array_equal(con, [1, 0, 4])
    line = _graph(nodes, {1: ((1, 0, 2), "primary")})
    assert node_degrees(line) == {1: 1, 0: 2, 2: 1}
    np.testing.assert_array_equal(node_connectivity(line, GRID)[GRID.linear(C)], [0, 0, 3])


def test_grid_graph_matches_degree_oracle():
    # 4x4 lattice of nodes spread over the grid, rows and columns as ways
    lats = np.linspace(31.002, 31.028, 4)
    lons = np.linspace(121.002, 121.038, 4)
    nodes = {4 * i + j: (lats[i], lons[j]) for i in range(4) for j in range(4)}
    ways = {}
    for i in range(4):
        ways[i] = (tuple(4 * i + j for j in range(4)), "residential")
        ways[10 + i] = (tuple(4 * j + i for j in range(4)), "residential")
    edges = set()
    for refs, _ in ways.values():
        edges |= {frozenset(e) for e in zip(refs[:-1], refs[1:])}
    expected = np.zeros((GRID.n_cells, 3))
    for n, (la, lo) in nodes.items():
        deg = sum(n in e for e in edges)
        level = 0 if deg >= 4 else 1 if deg == 3 else 2
        r = min(int((la - 31.0) / 0.01), 2)
        c = min(int((lo - 121.0) / 0.01), 3)
        expected[r * 4 + c, level] += 1
    np.testing.assert_array_equal(node_connectivity(_graph(nodes, ways), GRID), expected)


def test_width_levels():
    assert width_level("motorway") == 4 and width_level("trunk") == 4
    assert width_level("residential") == 2 and width_level("service") == 2
    assert width_level("primary") == 3 and width_level("footway") == 1
    assert width_level("made_up") == 2


def test_way_spanning_two_cells_counts_once_each():
    (la, lo), (lb, lb_lon) = at(A), at(B)
    mid = ((la + lb) / 2, lo + 0.001)
    g = _graph({1: (la, lo), 2: (la, lo + 0.001), 3: (lb, lb_lon)},
               {7: ((1, 2, 3), "motorway"), 8: ((1, 2), None)})
    wid = road_width(g, GRID)
    np.testing.assert_array_equal(wid[GRID.linear(A)], [0, 0, 0, 1])
    np.testing.assert_array_equal(wid[GRID.linear(B)], [0, 0, 0, 1])
    assert wid.sum() == 2


def test_assemble_and_split():
    n = GRID.n_cells
    blocks = [np.full((n, d), float(k)) for k, d in enumerate((48, 16, 3, 4))]
    xu = assemble_xu(*blocks)
    assert xu.shape == (n, 71)
    for got, want in zip(split_xu(xu), blocks):
        np.testing.assert_array_equal(got, want)
    zeros = assemble_xu(*(np.zeros((n, d)) for d in (48, 16, 3, 4)))
    np.testing.assert_array_equal(zeros, 0.0)
    with pytest.raises(DimensionMismatchError):
        assemble_xu(np.zeros((n, 47)), *blocks[1:])
