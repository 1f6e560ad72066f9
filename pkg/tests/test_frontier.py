import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from fmnav.core import GridIndex, ObjectLabel
from fmnav.frontier import Frontier, FrontierConfig, describe, frontier_alive, frontier_mask, sample_frontiers
from fmnav.mapping import VSSM, MapGeometry

L = ObjectLabel


def room_map(n=30):
    """Room between walls at columns 4 and 25, explored down to row 9."""
    m = VSSM(MapGeometry(0.05, n, n, (0.0, 0.0)))
    m.explored[0:10, 4:26] = 1.0
    m.occupied[0:10, 4] = m.occupied[0:10, 25] = 1.0
    m._recompute_box()
    return m


def test_fully_explored_map_has_no_frontier():
    m = room_map()
    m.explored[:] = 1.0
    m._recompute_box()
    assert sample_frontiers(m) == []


def test_straight_boundary_gives_one_frontier():
    fs = sample_frontiers(room_map())
    assert len(fs) == 1 and fs[0].size == 20
    assert fs[0].cell_set() == {GridIndex(9, c) for c in range(5, 25)}
    assert fs[0].centroid in fs[0].cell_set()


def test_small_segment_dropped():
    m = room_map()
    m.occupied[9, 17:22] = 1.0
    fs = sample_frontiers(m)
    assert [f.size for f in fs] == [12]
    assert sample_frontiers(m, FrontierConfig(min_size=3))[1].size == 3


def test_unreachable_frontier_filtered():
    m = room_map()
    m.occupied[5, 5:25] = 1.0  # seal the room off from the boundary
    assert len(sample_frontiers(m)) == 1
    assert sample_frontiers(m, agent_cell=GridIndex(2, 10)) == []
    assert len(sample_frontiers(m, agent_cell=GridIndex(7, 10))) == 1


def test_nearby_objects_and_summary():
    m = room_map()
    m.write_semantic(L("bed"), np.array([[7, 14]]), 0.9)
    m.write_semantic(L("lamp"), np.array([[8, 15]]), 0.7)
    m.write_semantic(L("sofa"), np.array([[8, 16]]), 0.3)
    f = sample_frontiers(m)[0]
    assert [lab.name for lab, _ in f.nearby_objects] == ["bed", "lamp"]
    assert f.summary == "This area contains bed and lamp."


def test_describe_templates():
    assert describe([]) == "This area contains nothing recognizable."
    assert describe([(L("bed"), 0.9)]) == "This area contains bed."
    assert describe([(L("bed"), 0.9), (L("lamp"), 0.7)]) == "This area contains bed and lamp."
    nearby = [(L("bathtub"), 0.6), (L("sink"), 0.8), (L("towel"), 0.7)]
    assert describe(nearby) == "This area contains sink, towel and bathtub."
    assert describe(Frontier(GridIndex(0, 0), np.zeros((0, 2), int), nearby)) == describe(nearby)


def test_frontier_alive_tracks_exploration():
    m = room_map()
    f = sample_frontiers(m)[0]
    assert frontier_alive(m, f.cells)
    m.explored[10:, :] = 1.0
    assert not frontier_alive(m, f.cells)
    assert not frontier_alive(m, np.zeros((0, 2), int))


def test_cap_and_ordering():
    m = VSSM(MapGeometry(0.05, 60, 60, (0.0, 0.0)))
    for k, w in enumerate((6, 9, 7)):
        m.explored[k * 15:k * 15 + 3, 10:10 + w] = 1.0
    m._recompute_box()
    fs = sample_frontiers(m, FrontierConfig(max_frontiers=2))
    assert len(fs) == 2 and fs[0].size >= fs[1].size


@given(st.integers(0, 2**31 - 1), st.floats(0.3, 0.8))
@settings(max_examples=40, deadline=None)
def test_frontier_invariants_on_random_maps(seed, p):
    rng = np.random.default_rng(seed)
    m = VSSM(MapGeometry(0.05, 40, 40, (0.0, 0.0)))
    m.explored[:] = (rng.random((40, 40)) < p).astype(np.float32)
    m.occupied[:] = ((rng.random((40, 40)) < 0.15) & (m.explored > 0)).astype(np.float32)
    m._recompute_box()
    cfg = FrontierConfig(min_size=3)
    fs = sample_frontiers(m, cfg)
    full, _ = frontier_mask(m, cfg, (0, 40, 0, 40))
    for f in fs:
        assert f.size >= cfg.min_size
        assert (m.occupied[f.cells[:, 0], f.cells[:, 1]] < 0.5).all()
        assert full[f.cells[:, 0], f.cells[:, 1]].all()
        mean = f.cells.mean(axis=0)
        d = ((f.cells - mean) ** 2).sum(axis=1)
        assert ((f.centroid.row - mean[0]) ** 2 + (f.centroid.col - mean[1]) ** 2) == d.min()
    again = sample_frontiers(m.copy(), cfg)
    assert [(f.centroid, f.size) for f in fs] == [(f.centroid, f.size) for f in again]
    assert [f.size for f in fs] == sorted((f.size for f in fs), reverse=True)
