import math

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ditree.dynamics import CarParams
from ditree.expert import (
    DataGenerationError,
    Dataset,
    DatasetFormatError,
    ExpertConfig,
    ExpertTrajectory,
    action_normalization,
    astar,
    dump_dataset,
    filter_dataset,
    generate_dataset,
    load_dataset,
    map_id_for,
    path_cost,
    read_dataset,
    replay_states,
    save_dataset,
    track_path,
    window_starts,
)
from ditree.workspace import OccupancyGrid, RobotGeometry, inflate, states_free
from helpers import box_distance, boundary_distance, grid_from_rows, open_grid, walled_grid


def dijkstra_cost(occ, start, goal):
    """Shortest 8-connected path cost with the no-corner-cutting rule, via networkx."""
    h, w = occ.shape
    g = nx.Graph()
    for y in range(h):
        for x in range(w):
            if occ[y, x]:
                continue
            g.add_node((x, y))
            for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
                nx_, ny_ = x + dx, y + dy
                if not (0 <= nx_ < w and 0 <= ny_ < h) or occ[ny_, nx_]:
                    continue
                if dx and dy and (occ[y, nx_] or occ[ny_, x]):
                    continue
                g.add_edge((x, y), (nx_, ny_), weight=math.sqrt(2) if dx and dy else 1.0)
    try:
        return nx.dijkstra_path_length(g, start, goal)
    except (nx.NetworkXNoPath, nx.NodeNotFound):
        return None


def is_valid_cell_path(occ, path):
    for (x0, y0), (x1, y1) in zip(path, path[1:]):
        dx, dy = x1 - x0, y1 - y0
        if max(abs(dx), abs(dy)) != 1 or occ[y1, x1]:
            return False
        if dx and dy and (occ[y0, x1] or occ[y1, x0]):
            return False
    return True


# ---------------------------------------------------------------- astar


def test_astar_start_is_goal():
    assert astar(open_grid(4, 4), (1, 2), (1, 2)) == [(1, 2)]


def test_astar_open_grid_diagonal():
    g = open_grid(10, 10)
    path = astar(g, (0, 0), (9, 9))
    assert path_cost(path) == pytest.approx(9 * math.sqrt(2))
    assert dijkstra_cost(g.occupancy, (0, 0), (9, 9)) == pytest.approx(9 * math.sqrt(2))


def test_astar_walled_off_goal():
    g = grid_from_rows(["..#..", "..#..", "..#.."])
    assert astar(g, (0, 0), (4, 0)) is None
    assert astar(g, (0, 0), (2, 1)) is None  # occupied goal


def test_astar_forbids_corner_cutting():
    g = grid_from_rows([".#", "#."])
    assert astar(g, (0, 0), (1, 1)) is None


def test_astar_matches_dijkstra_on_random_instances():
    rng = np.random.default_rng(0)
    compared = unreachable = 0
    for _ in range(200):
        w, h = rng.integers(4, 16, 2)
        occ = rng.random((h, w)) < rng.uniform(0.1, 0.4)
        free = np.argwhere(~occ)
        if len(free) < 2:
            continue
        i, j = rng.choice(len(free), 2, replace=False)
        s = (int(free[i][1]), int(free[i][0]))
        t = (int(free[j][1]), int(free[j][0]))
        path = astar(OccupancyGrid(occ), s, t)
        ref = dijkstra_cost(occ, s, t)
        if ref is None:
            assert path is None
            unreachable += 1
            continue
        assert path[0] == s and path[-1] == t and is_valid_cell_path(occ, path)
        assert path_cost(path) == pytest.approx(ref, abs=1e-9)
        compared += 1
    assert compared >= 120 and unreachable > 0


# ---------------------------------------------------------------- tracking


def lateral_deviation(points, line_pts):
    """Largest distance from ``points`` to the polyline, by dense sampling of the polyline."""
    dense = np.vstack([np.linspace(a, b, 200) for a, b in zip(line_pts[:-1], line_pts[1:])])
    d = np.hypot(points[:, None, 0] - dense[None, :, 0], points[:, None, 1] - dense[None, :, 1])
    return d.min(axis=1).max()


def test_track_straight_corridor(geom, params):
    g = grid_from_rows(["#" * 14, "." * 14, "." * 14, "." * 14, "#" * 14], cell_size=0.5)
    path = [(ix, 2) for ix in range(2, 12)]
    tr = track_path(path, g, geom, params, ExpertConfig(), 0.1, "corridor")
    assert tr is not None and tr.n_actions > 0
    pts = np.array([g.cell_center(*c) for c in path])
    assert lateral_deviation(tr.states[:, :2], pts) < 0.5 * g.cell_size
    assert math.hypot(*(tr.states[-1, :2] - pts[-1])) <= ExpertConfig().goal_tolerance
    assert tr.goal == tuple(pts[-1])
    assert states_free(g, geom, tr.states).all()
    assert replay_states(tr, params).tobytes() == tr.states.tobytes()


def test_track_single_cell_path(geom, params):
    g = open_grid(6, 6, 0.5)
    tr = track_path([(3, 3)], g, geom, params)
    assert tr.n_actions == 0 and tr.states.shape == (1, 6)


def test_track_through_narrow_gap_fails(geom, params):
    # a one-cell (0.3 m) gap is narrower than the 0.4 m wide body
    occ = np.zeros((9, 20), dtype=bool)
    occ[:, 10] = True
    occ[4, 10] = False
    g = OccupancyGrid(occ, 0.3)
    path = astar(g, (3, 4), (17, 4))
    assert path is not None
    assert track_path(path, g, geom, params) is None


def test_track_curved_path_replays_exactly(geom, params):
    g = grid_from_rows([
        "##############",
        "#............#",
        "#............#",
        "#............#",
        "#............#",
        "#.......######",
        "#.......######",
        "#............#",
        "#............#",
        "#............#",
        "#............#",
        "##############",
    ], cell_size=0.5)
    path = astar(inflate(g, ExpertConfig().inflation), (11, 9), (11, 2))
    assert path is not None
    tr = track_path(path, g, geom, params, ExpertConfig(), 0.1, "s")
    assert tr is not None
    assert replay_states(tr, params).tobytes() == tr.states.tobytes()
    assert states_free(g, geom, tr.states).all()
    assert (np.abs(tr.actions) <= params.action_high + 1e-6).all()


# ---------------------------------------------------------------- filtering


def synthetic_trajectories(grid, geom, params, n, seed):
    rng = np.random.default_rng(seed)

    cspace = inflate(grid, 0.3)  # tight inflation so some windows pass close to walls
    free = np.argwhere(~cspace.occupancy)
    out = []
    while len(out) < n:
        i, j = rng.choice(len(free), 2, replace=False)
        path = astar(cspace, (free[i][1], free[i][0]), (free[j][1], free[j][0]))
        if path is None or len(path) < 8:
            continue
        tr = track_path(path, grid, geom, params)
        if tr is not None and tr.n_actions >= 20:
            out.append(tr)
    return out


@pytest.fixture(scope="module")
def mixed_map():
    return grid_from_rows([
        "################",
        "#..............#",
        "#..............#",
        "#....##........#",
        "#....##....#...#",
        "#..........#...#",
        "#..........#...#",
        "#..............#",
        "#..............#",
        "################",
    ], cell_size=0.5)


@pytest.fixture(scope="module")
def mixed_trajs(mixed_map):
    return synthetic_trajectories(mixed_map, RobotGeometry(), CarParams(), 8, 1)


def clearance_ok(grid, geom, state, clearance):
    c, s = math.cos(state[2]), math.sin(state[2])
    for ox, oy, r in geom.spheres:
        x = state[0] + c * ox - s * oy
        y = state[1] + s * ox + c * oy
        if min(box_distance(grid, x, y), boundary_distance(grid, x, y)) <= r + clearance:
            return False
    return True


def test_filter_zero_clearance_keeps_everything(mixed_map, mixed_trajs, geom):
    kept = filter_dataset(mixed_trajs, 0.0, mixed_map, geom)
    assert len(kept) == len(mixed_trajs)
    for a, b in zip(kept, mixed_trajs):
        assert a.states.tobytes() == b.states.tobytes() and a.actions.tobytes() == b.actions.tobytes()


def test_filter_huge_clearance_removes_everything(mixed_map, mixed_trajs, geom):
    assert filter_dataset(mixed_trajs, 5.0, mixed_map, geom) == []


def test_filter_window_count_matches_distance_recheck(mixed_map, mixed_trajs, geom):
    h, stride = 16, 4
    kept = filter_dataset(mixed_trajs, 0.2, mixed_map, geom, h, stride)
    expected = sum(
        clearance_ok(mixed_map, geom, tr.states[k], 0.2)
        for tr in mixed_trajs for k in window_starts(tr.n_actions, h, stride)
    )
    got = sum(len(window_starts(tr.n_actions, h, stride)) for tr in kept)
    assert got == expected
    assert 0 < got < sum(len(window_starts(t.n_actions, h, stride)) for t in mixed_trajs)
    for tr in kept:
        assert len(tr.states) >= h + 1
        for k in window_starts(tr.n_actions, h, stride):
            assert clearance_ok(mixed_map, geom, tr.states[k], 0.2)


def test_filter_rejects_negative_clearance(mixed_map, geom):
    with pytest.raises(ValueError):
        filter_dataset([], -0.1, mixed_map, geom)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.6))
def test_filter_soundness(mixed_map, mixed_trajs, clearance):
    geom = RobotGeometry()
    for tr in filter_dataset(mixed_trajs, clearance, mixed_map, geom):
        for k in window_starts(tr.n_actions, 16, 4):
            assert clearance_ok(mixed_map, geom, tr.states[k], clearance - 1e-9)


# ---------------------------------------------------------------- dataset


@pytest.fixture(scope="module")
def open_dataset():
    g = walled_grid(40, 40, 0.5)
    return g, generate_dataset(g, 10, seed=4)


def test_generate_on_open_map(open_dataset):
    g, ds = open_dataset
    assert ds.stats["tracked"] >= 8
    mid = map_id_for(g)
    params, geom = CarParams(), RobotGeometry()
    for tr in ds.trajectories:
        assert tr.map_id == mid and tr.dt == np.float32(0.1)
        assert replay_states(tr, params).tobytes() == tr.states.tobytes()
        assert states_free(g, geom, tr.states).all()


def test_dataset_file_round_trip(open_dataset, tmp_path):
    _, ds = open_dataset
    path = tmp_path / "d.dkd"
    save_dataset(ds, path)
    back = read_dataset(path)
    assert len(back) == len(ds) and back.seed == 4
    np.testing.assert_array_equal(back.action_offset, ds.action_offset)
    np.testing.assert_array_equal(back.action_scale, ds.action_scale)
    params = CarParams()
    for a, b in zip(back.trajectories, ds.trajectories):
        assert a.states.tobytes() == b.states.tobytes()
        assert a.actions.tobytes() == b.actions.tobytes()
        assert a.goal == b.goal and a.map_id == b.map_id
        assert replay_states(a, params).tobytes() == a.states.tobytes()
    assert dump_dataset(back) == path.read_bytes()


def test_dataset_layout(open_dataset):
    _, ds = open_dataset
    blob = dump_dataset(ds)
    assert blob[:4] == b"DKD1"
    assert int.from_bytes(blob[4:8], "little") == len(ds)
    assert int.from_bytes(blob[-8:], "little") == 4
    footer = np.frombuffer(blob[-24:-8], "<f4").reshape(2, 2)
    np.testing.assert_array_equal(footer[:, 0], ds.action_offset)
    np.testing.assert_array_equal(footer[:, 1], ds.action_scale)


def test_generation_is_byte_deterministic():
    g = walled_grid(24, 24, 0.5)
    a = dump_dataset(generate_dataset(g, 6, seed=9))
    b = dump_dataset(generate_dataset(g, 6, seed=9))
    c = dump_dataset(generate_dataset(g, 6, seed=10))
    assert a == b and a != c


def test_blocked_map_raises():
    g = OccupancyGrid(np.ones((10, 10), dtype=bool), 0.5)
    with pytest.raises(DataGenerationError):
        generate_dataset(g, 5, seed=0)
    with pytest.raises(ValueError):
        generate_dataset(walled_grid(10, 10), 0, seed=0)


@pytest.mark.parametrize("blob", [b"XXXX", b"DKD1\x01\x00\x00\x00", b"DKD1\x00\x00\x00\x00" + b"\x00" * 23])
def test_bad_dataset_files(blob):
    with pytest.raises(DatasetFormatError):
        load_dataset(blob)


def test_trailing_bytes_rejected(open_dataset):
    with pytest.raises(DatasetFormatError):
        load_dataset(dump_dataset(open_dataset[1]) + b"\x00")


def test_action_normalization():
    p = CarParams()
    rng = np.random.default_rng(0)
    acts = np.column_stack([rng.normal(0, 0.05, 10_000), rng.normal(0, 0.2, 10_000)])
    off, scale = action_normalization(acts, p)
    assert (off == 0).all()
    np.testing.assert_allclose(scale, np.percentile(np.abs(acts), 99, axis=0), rtol=1e-6)
    assert scale.dtype == np.float64 and (scale.astype(np.float32) == scale).all()
    _, tiny = action_normalization(np.zeros((5, 2)), p)
    np.testing.assert_allclose(tiny, [4e-3, 2e-3], rtol=1e-6)


def test_empty_dataset_round_trip():
    ds = Dataset([ExpertTrajectory("m", (1.0, 2.0), np.zeros((1, 6)), np.zeros((0, 2)), 0.1)], seed=3)
    back = load_dataset(dump_dataset(ds))
    assert back.trajectories[0].n_actions == 0 and back.seed == 3
