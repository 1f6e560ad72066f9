import numpy as np
import pytest

from fmnav.core import ObjectLabel, Pose
from fmnav.simulator import SceneObject, SceneSpec


def box_room(h=100, w=100, res=0.05, wall=1):
    """Boolean occupancy with a `wall`-cell border."""
    occ = np.zeros((h, w), dtype=bool)
    occ[:wall, :] = occ[-wall:, :] = True
    occ[:, :wall] = occ[:, -wall:] = True
    return occ


def make_scene(occ=None, objects=(), start=(2.5, 2.5), yaw=0.0, goals=("bed",), res=0.05, ceiling=2.5):
    occ = box_room() if occ is None else occ
    objs = []
    for name, cells, height in objects:
        lab = name if isinstance(name, ObjectLabel) else ObjectLabel(name)
        objs.append(SceneObject(lab, tuple((int(r), int(c)) for r, c in cells), float(height)))
    return SceneSpec(res, occ, ceiling, objs, Pose(start[0], start[1], 0.88, yaw),
                     [g if isinstance(g, ObjectLabel) else ObjectLabel(g) for g in goals])


def block(r0, r1, c0, c1):
    return [(r, c) for r in range(r0, r1) for c in range(c0, c1)]


@pytest.fixture
def bed_room():
    """5 m square room with a 0.5 m bed in the far corner region."""
    return make_scene(objects=[("bed", block(70, 80, 70, 80), 0.5)])


# -- acceptance criteria summary ---------------------------------------------------------

_criteria: dict[str, bool] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): test belongs to the named acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped:
        return
    if rep.when == "call" or rep.failed:
        name = marker.args[0]
        _criteria[name] = _criteria.get(name, True) and rep.passed


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok in _criteria.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")
