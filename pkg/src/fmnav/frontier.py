"""Frontier extraction from the score map and their one-line semantic summaries."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import GridIndex, ObjectLabel
from .mapping import OCCUPIED_THRESHOLD, VSSM

_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass
class FrontierConfig:
    min_size: int = 5
    radius: float = 2.0
    threshold: float = 0.55
    max_frontiers: int = 8
    occupied_threshold: float = OCCUPIED_THRESHOLD
    explored_threshold: float = 0.5


@dataclass(eq=False)
class Frontier:
    centroid: GridIndex
    cells: np.ndarray  # (n, 2) map cells in raster order
    nearby_objects: list[tuple[ObjectLabel, float]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.cells)

    @property
    def summary(self) -> str:
        return describe(self)

    def cell_set(self) -> set[GridIndex]:
        return {GridIndex(int(r), int(c)) for r, c in self.cells}

    def to_dict(self) -> dict:
        return {"centroid": [self.centroid.row, self.centroid.col], "size": self.size,
                "nearby": [[lab.phrase, round(float(s), 6)] for lab, s in self.nearby_objects],
                "summary": self.summary}


def _join(names: list[str]) -> str:
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def describe(frontier_or_nearby) -> str:
    """"This area contains A, B and C." with labels in descending score order."""
    nearby = getattr(frontier_or_nearby, "nearby_objects", frontier_or_nearby)
    ranked = sorted(nearby, key=lambda t: -t[1])
    if not ranked:
        return "This area contains nothing recognizable."
    return f"This area contains {_join([lab.phrase for lab, _ in ranked])}."


def frontier_mask(vssm: VSSM, cfg: FrontierConfig | None = None, bbox=None) -> tuple[np.ndarray, tuple]:
    """Boolean frontier predicate over `bbox` (r0, r1, c0, c1); returns (mask, bbox)."""
    cfg = cfg or FrontierConfig()
    H, W = vssm.shape
    if bbox is None:
        bbox = vssm.explored_bbox(margin=1) or (0, 0, 0, 0)
    r0, r1, c0, c1 = bbox
    explored = vssm.explored[r0:r1, c0:c1] >= cfg.explored_threshold
    free = vssm.occupied[r0:r1, c0:c1] < cfg.occupied_threshold
    unexplored = ~explored
    # 4-neighbour test; cells beyond the map edge do not count as unexplored
    touch = np.zeros_like(explored)
    touch[1:, :] |= unexplored[:-1, :]
    touch[:-1, :] |= unexplored[1:, :]
    touch[:, 1:] |= unexplored[:, :-1]
    touch[:, :-1] |= unexplored[:, 1:]
    # the crop may cut through unexplored space; rows/cols outside it are unexplored too
    if r0 > 0:
        touch[0, :] |= vssm.explored[r0 - 1, c0:c1] < cfg.explored_threshold
    if r1 < H:
        touch[-1, :] |= vssm.explored[r1, c0:c1] < cfg.explored_threshold
    if c0 > 0:
        touch[:, 0] |= vssm.explored[r0:r1, c0 - 1] < cfg.explored_threshold
    if c1 < W:
        touch[:, -1] |= vssm.explored[r0:r1, c1] < cfg.explored_threshold
    return explored & free & touch, bbox


def sample_frontiers(vssm: VSSM, cfg: FrontierConfig | None = None, agent_cell=None) -> list[Frontier]:
    """Clustered frontiers, largest first, capped at ``cfg.max_frontiers``.

    With `agent_cell` given, only cells connected to it through explored free
    space are kept.
    """
    cfg = cfg or FrontierConfig()
    box = vssm.explored_bbox(margin=1)
    if box is None:
        return []
    mask, (r0, r1, c0, c1) = frontier_mask(vssm, cfg, box)
    if agent_cell is not None:
        ar, ac = (agent_cell.row, agent_cell.col) if isinstance(agent_cell, GridIndex) else agent_cell
        passable = ((vssm.explored[r0:r1, c0:c1] >= cfg.explored_threshold)
                    & (vssm.occupied[r0:r1, c0:c1] < cfg.occupied_threshold))
        lr, lc = ar - r0, ac - c0
        if 0 <= lr < r1 - r0 and 0 <= lc < c1 - c0:
            passable[lr, lc] = True
            lab, _ = ndimage.label(passable, structure=_EIGHT)
            mask &= lab == lab[lr, lc]
        else:
            mask[:] = False
    lab, n = ndimage.label(mask, structure=_EIGHT)
    if n == 0:
        return []
    sizes = np.bincount(lab.ravel(), minlength=n + 1)
    keep = [k for k in range(1, n + 1) if sizes[k] >= cfg.min_size]
    # size descending; equal sizes keep raster order of their first cell
    keep.sort(key=lambda k: -sizes[k])
    keep = keep[:cfg.max_frontiers]
    objs = ndimage.find_objects(lab)
    out = []
    for k in keep:
        sl = objs[k - 1]
        local = np.argwhere(lab[sl] == k)
        cells = local + np.array([sl[0].start + r0, sl[1].start + c0])
        mean = cells.mean(axis=0)
        i = int(np.argmin(((cells - mean) ** 2).sum(axis=1)))
        centroid = GridIndex(int(cells[i, 0]), int(cells[i, 1]))
        nearby = vssm.objects_near(centroid, cfg.radius, cfg.threshold)
        out.append(Frontier(centroid, cells, nearby))
    return out


def frontier_alive(vssm: VSSM, cells: np.ndarray, cfg: FrontierConfig | None = None) -> bool:
    """True while at least one of `cells` still satisfies the frontier predicate."""
    cfg = cfg or FrontierConfig()
    if cells is None or not len(cells):
        return False
    H, W = vssm.shape
    r0 = max(0, int(cells[:, 0].min()) - 1)
    r1 = min(H, int(cells[:, 0].max()) + 2)
    c0 = max(0, int(cells[:, 1].min()) - 1)
    c1 = min(W, int(cells[:, 1].max()) + 2)
    mask, _ = frontier_mask(vssm, cfg, (r0, r1, c0, c1))
    return bool(mask[cells[:, 0] - r0, cells[:, 1] - c0].any())
