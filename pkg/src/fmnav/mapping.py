"""Top-down semantic score map: per-label score channels plus occupied and explored layers."""
from __future__ import annotations

import json
import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import DEFAULT_RESOLUTION, CameraIntrinsics, GridIndex, ObjectLabel, Pose, camera_rays
from .kernels import mark_rays

MAGIC = b"VSSM"
MAP_VERSION = 1
OCCUPIED_THRESHOLD = 0.5
_EIGHT = np.ones((3, 3), dtype=bool)
# Face hits land exactly on a cell boundary; push them this far along the ray so
# they bin into the column that was hit rather than the free cell in front.
_FACE_NUDGE = 1e-4


class MapFormatError(ValueError):
    pass


@dataclass(frozen=True)
class MapGeometry:
    resolution: float
    height: int
    width: int
    origin: tuple[float, float]  # world (x, y) of the corner of cell (0, 0)

    @classmethod
    def centered(cls, center_xy, size_m: float = 48.0, resolution: float = DEFAULT_RESOLUTION):
        n = int(round(size_m / resolution))
        # snap the origin to the resolution lattice so map cells coincide with world cells
        ox = math.floor(center_xy[0] / resolution) * resolution - (n // 2) * resolution
        oy = math.floor(center_xy[1] / resolution) * resolution - (n // 2) * resolution
        return cls(resolution, n, n, (ox, oy))

    def world_to_cell(self, x, y):
        r = np.floor((np.asarray(x) - self.origin[0]) / self.resolution).astype(np.int64)
        c = np.floor((np.asarray(y) - self.origin[1]) / self.resolution).astype(np.int64)
        return r, c

    def cell_center(self, r, c):
        return (self.origin[0] + (np.asarray(r) + 0.5) * self.resolution,
                self.origin[1] + (np.asarray(c) + 0.5) * self.resolution)

    def in_bounds(self, r, c):
        return (r >= 0) & (r < self.height) & (c >= 0) & (c < self.width)


def back_project(depth: np.ndarray, pose: Pose, K: CameraIntrinsics, pixels=None, nudge: float = 0.0):
    """World points for pixels with finite depth. Returns (points (n, 3), pixel index (n,))."""
    if pixels is None:
        flat = np.flatnonzero(np.isfinite(depth.ravel()))
    else:
        flat = np.asarray(pixels, dtype=np.int64)
        flat = flat[np.isfinite(depth.ravel()[flat])]
    vs, us = np.divmod(flat, K.width)
    rays = camera_rays(pose, K, us, vs)
    d = depth.ravel()[flat]
    if nudge:
        d = d + nudge / np.linalg.norm(rays, axis=1)
    pts = np.array([pose.x, pose.y, pose.z]) + rays * d[:, None]
    return pts, flat


def project_mask(depth: np.ndarray, mask: np.ndarray, pose: Pose, K: CameraIntrinsics, geom: MapGeometry,
                 max_range: float = 10.0) -> np.ndarray:
    """Deduplicated (n, 2) map cells under the floor projection of a pixel mask."""
    pix = np.flatnonzero(np.asarray(mask, dtype=bool).ravel())
    pix = pix[depth.ravel()[pix] <= max_range]
    pts, _ = back_project(depth, pose, K, pix, nudge=_FACE_NUDGE)
    r, c = geom.world_to_cell(pts[:, 0], pts[:, 1])
    ok = geom.in_bounds(r, c)
    flat = np.unique(r[ok] * geom.width + c[ok])
    return np.stack(np.divmod(flat, geom.width), axis=1)


class VSSM:
    """Score map of shape H x W x (C + 2).

    Semantic channels are keyed by label (name plus attributes) and created on
    first sight. Scores are float32 in [0, 1] and fused by per-cell max unless
    `fusion` is "ema".
    """

    def __init__(self, geom: MapGeometry, obstacle_band: tuple[float, float | None] = (0.1, None),
                 fusion: str = "max", ema_alpha: float = 0.5):
        if fusion not in ("max", "ema"):
            raise ValueError(f"unknown fusion rule {fusion!r}")
        self.geom = geom
        self.obstacle_band = obstacle_band
        self.fusion = fusion
        self.ema_alpha = ema_alpha
        H, W = geom.height, geom.width
        self.labels: list[ObjectLabel] = []
        self._index: dict = {}
        self._sem = np.zeros((0, H, W), dtype=np.float32)
        self.occupied = np.zeros((H, W), dtype=np.float32)
        self.explored = np.zeros((H, W), dtype=np.float32)
        self._box = None  # (r0, r1, c0, c1) covering every written cell

    # -- structure ----------------------------------------------------------------------
    @property
    def shape(self) -> tuple[int, int]:
        return self.geom.height, self.geom.width

    @property
    def resolution(self) -> float:
        return self.geom.resolution

    @property
    def num_channels(self) -> int:
        return len(self.labels)

    @property
    def semantic(self) -> np.ndarray:
        """H x W x C view of the semantic scores."""
        return np.moveaxis(self._sem, 0, -1)

    def channel(self, label: ObjectLabel) -> int | None:
        return self._index.get(label.key)

    def channel_scores(self, idx: int) -> np.ndarray:
        return self._sem[idx]

    def add_channel(self, label: ObjectLabel) -> int:
        if label.key in self._index:
            raise ValueError(f"channel for {label.phrase!r} already exists")
        idx = len(self.labels)
        self._sem = np.concatenate([self._sem, np.zeros((1, *self.shape), dtype=np.float32)])
        self.labels.append(label)
        self._index[label.key] = idx
        return idx

    def copy(self) -> "VSSM":
        return deserialize(serialize(self))

    def _grow_box(self, r, c) -> None:
        r = np.asarray(r)
        c = np.asarray(c)
        if not r.size:
            return
        H, W = self.shape
        b = (max(0, int(r.min())), min(H, int(r.max()) + 1), max(0, int(c.min())), min(W, int(c.max()) + 1))
        if b[0] >= b[1] or b[2] >= b[3]:
            return
        if self._box is None:
            self._box = b
        else:
            o = self._box
            self._box = (min(o[0], b[0]), max(o[1], b[1]), min(o[2], b[2]), max(o[3], b[3]))

    def _recompute_box(self) -> None:
        any_ = (self.explored > 0) | (self.occupied > 0) | (self._sem > 0).any(axis=0)
        rows = np.flatnonzero(any_.any(axis=1))
        cols = np.flatnonzero(any_.any(axis=0))
        self._box = (int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1) if rows.size else None

    def explored_bbox(self, margin: int = 0):
        """(r0, r1, c0, c1) half-open bounds of all non-zero cells, grown by `margin`."""
        if self._box is None:
            return None
        H, W = self.shape
        r0, r1, c0, c1 = self._box
        return (max(0, r0 - margin), min(H, r1 + margin), max(0, c0 - margin), min(W, c1 + margin))

    # -- writes -------------------------------------------------------------------------
    def _fuse(self, grid: np.ndarray, r, c, score: float) -> None:
        if self.fusion == "max":
            grid[r, c] = np.maximum(grid[r, c], np.float32(score))
        else:
            a = np.float32(self.ema_alpha)
            grid[r, c] = (1 - a) * grid[r, c] + a * np.float32(score)

    def write_semantic(self, label: ObjectLabel, cells: np.ndarray, score: float) -> int:
        idx = self.channel(label)
        if idx is None:
            idx = self.add_channel(label)
        if len(cells):
            self._fuse(self._sem[idx], cells[:, 0], cells[:, 1], score)
            self._grow_box(cells[:, 0], cells[:, 1])
        return idx

    def mark_occupied(self, cells: np.ndarray, score: float = 1.0) -> None:
        if len(cells):
            self._fuse(self.occupied, cells[:, 0], cells[:, 1], score)
            self._grow_box(cells[:, 0], cells[:, 1])

    def update(self, detections, obs, K: CameraIntrinsics, max_range: float = 10.0) -> "VSSM":
        """Fuse one observation and its (already filtered) detections into the map."""
        depth, pose, geom = obs.depth, obs.pose, self.geom
        for det in detections:
            cells = project_mask(depth, det.mask, pose, K, geom, max_range)
            self.write_semantic(det.label, cells, det.confidence)

        finite = np.isfinite(depth) & (depth <= max_range)
        pts, flat = back_project(depth, pose, K, np.flatnonzero(finite.ravel()), nudge=_FACE_NUDGE)
        lo, hi = self.obstacle_band
        hi = pose.z if hi is None else hi
        band = (pts[:, 2] >= lo) & (pts[:, 2] <= hi)
        r, c = geom.world_to_cell(pts[band, 0], pts[band, 1])
        ok = geom.in_bounds(r, c)
        if ok.any():
            self.mark_occupied(np.stack([r[ok], c[ok]], axis=1))

        # explored: every cell a ray crosses on its way to the hit, or to max range
        ends = pts[:, :2]
        far = np.flatnonzero(~finite.ravel())
        if far.size:
            vs, us = np.divmod(far, K.width)
            rays = camera_rays(pose, K, us, vs)
            ends = np.concatenate([ends, np.array([pose.x, pose.y]) + rays[:, :2] * max_range])
        res = geom.resolution
        grid_ends = (ends - np.array(geom.origin)) / res
        origin = ((pose.x - geom.origin[0]) / res, (pose.y - geom.origin[1]) / res)
        mark_rays(origin, grid_ends, self.explored)
        pts_rc = np.floor(np.concatenate([grid_ends, [origin]])).astype(np.int64)
        self._grow_box(pts_rc[:, 0], pts_rc[:, 1])
        return self

    # -- queries ------------------------------------------------------------------------
    def goal_component(self, goals, threshold: float):
        """(label, component mask, centroid GridIndex) of the best goal blob, or None.

        The label with the highest peak score wins (ties go to the earlier goal);
        within it, the largest 8-connected component above `threshold`.
        """
        best = None
        for g in goals:
            idx = self.channel(g)
            if idx is None:
                continue
            peak = float(self._sem[idx].max())
            if peak >= threshold and (best is None or peak > best[0]):
                best = (peak, g, idx)
        if best is None:
            return None
        _, label, idx = best
        hot = self._sem[idx] >= threshold
        lab, n = ndimage.label(hot, structure=_EIGHT)
        sizes = np.bincount(lab.ravel(), minlength=n + 1)
        sizes[0] = 0
        k = int(np.argmax(sizes))  # first (lowest-label, i.e. raster-first) among equals
        comp = lab == k
        return label, comp, _member_nearest_mean(comp)

    def locate_goal(self, goals, threshold: float) -> GridIndex | None:
        hit = self.goal_component(goals, threshold)
        return None if hit is None else hit[2]

    def objects_near(self, cell, radius: float, threshold: float) -> list[tuple[ObjectLabel, float]]:
        r0, c0 = (cell.row, cell.col) if isinstance(cell, GridIndex) else cell
        k = int(math.floor(radius / self.resolution))
        H, W = self.shape
        ra, rb = max(0, r0 - k), min(H, r0 + k + 1)
        ca, cb = max(0, c0 - k), min(W, c0 + k + 1)
        rr, cc = np.mgrid[ra:rb, ca:cb]
        disc = np.hypot(rr - r0, cc - c0) * self.resolution <= radius + 1e-9
        out = []
        for i, lab in enumerate(self.labels):
            m = float(self._sem[i, ra:rb, ca:cb][disc].max(initial=0.0))
            if m >= threshold:
                out.append((lab, m))
        out.sort(key=lambda t: -t[1])  # stable: channel order among equal scores
        return out


def _member_nearest_mean(mask: np.ndarray) -> GridIndex:
    cells = np.argwhere(mask)
    mean = cells.mean(axis=0)
    d = ((cells - mean) ** 2).sum(axis=1)
    i = int(np.argmin(d))
    return GridIndex(int(cells[i, 0]), int(cells[i, 1]))


def update_map(vssm: VSSM, detections, obs, K, max_range: float = 10.0) -> VSSM:
    return vssm.update(detections, obs, K, max_range)


# -- persistence ---------------------------------------------------------------------------


def serialize(vssm: VSSM) -> bytes:
    """Versioned binary dump: magic, version, JSON header, raw float32 grids, CRC32."""
    g = vssm.geom
    header = {
        "resolution": g.resolution, "height": g.height, "width": g.width, "origin": list(g.origin),
        "channels": [lab.to_dict() for lab in vssm.labels],
        "obstacle_band": list(vssm.obstacle_band), "fusion": vssm.fusion, "ema_alpha": vssm.ema_alpha,
        "dtype": "<f4", "box": list(vssm._box) if vssm._box else None,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = b"".join([
        MAGIC, struct.pack("<HI", MAP_VERSION, len(hb)), hb,
        vssm.occupied.astype("<f4").tobytes(), vssm.explored.astype("<f4").tobytes(),
        vssm._sem.astype("<f4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize(data: bytes) -> VSSM:
    if len(data) < 14 or data[:4] != MAGIC:
        raise MapFormatError("not a map dump")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != MAP_VERSION:
        raise MapFormatError(f"unsupported map version {version}")
    (crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise MapFormatError("checksum mismatch (truncated or corrupt)")
    try:
        header = json.loads(data[10:10 + hlen])
        H, W = int(header["height"]), int(header["width"])
        geom = MapGeometry(float(header["resolution"]), H, W, tuple(header["origin"]))
        labels = [ObjectLabel.from_dict(d) for d in header["channels"]]
        band = header["obstacle_band"]
        vssm = VSSM(geom, (band[0], band[1]), header["fusion"], header["ema_alpha"])
    except (KeyError, TypeError, ValueError) as e:
        raise MapFormatError(f"bad map header: {e}") from e
    n = H * W
    payload = np.frombuffer(data, dtype="<f4", offset=10 + hlen, count=(len(data) - 14 - hlen) // 4)
    if payload.size != n * (2 + len(labels)):
        raise MapFormatError("payload size does not match header")
    vssm.occupied = payload[:n].reshape(H, W).astype(np.float32)
    vssm.explored = payload[n:2 * n].reshape(H, W).astype(np.float32)
    vssm._sem = payload[2 * n:].reshape(len(labels), H, W).astype(np.float32)
    vssm.labels = labels
    vssm._index = {lab.key: i for i, lab in enumerate(labels)}
    box = header.get("box")
    if box is not None:
        vssm._box = tuple(int(v) for v in box)
    else:
        vssm._recompute_box()
    return vssm


def save_map(vssm: VSSM, path) -> None:
    with open(path, "wb") as f:
        f.write(serialize(vssm))


def load_map(path) -> VSSM:
    with open(path, "rb") as f:
        return deserialize(f.read())


def export_images(vssm: VSSM, out_dir, crop: bool = True) -> list:
    """One grayscale PNG per layer plus a colour composite. Returns the written paths."""
    from pathlib import Path

    import matplotlib.image as mpimg

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    box = vssm.explored_bbox(margin=10) if crop else None
    sl = (slice(box[0], box[1]), slice(box[2], box[3])) if box else (slice(None), slice(None))
    written = []

    def save(name, img, **kw):
        p = out / f"{name}.png"
        mpimg.imsave(p, img, origin="upper", **kw)
        written.append(p)

    save("occupied", vssm.occupied[sl], cmap="gray", vmin=0, vmax=1)
    save("explored", vssm.explored[sl], cmap="gray", vmin=0, vmax=1)
    for i, lab in enumerate(vssm.labels):
        save("channel_" + lab.phrase.replace(" ", "_"), vssm._sem[i][sl], cmap="gray", vmin=0, vmax=1)
    save("composite", composite_rgb(vssm)[sl])
    return written


def composite_rgb(vssm: VSSM) -> np.ndarray:
    from matplotlib import colormaps

    H, W = vssm.shape
    img = np.ones((H, W, 3), dtype=np.float32)
    img[vssm.explored > 0] = (0.85, 0.92, 1.0)
    img[vssm.occupied >= OCCUPIED_THRESHOLD] = (0.35, 0.35, 0.35)
    cmap = colormaps["tab20"]
    for i in range(vssm.num_channels):
        m = vssm._sem[i] > 0
        if m.any():
            img[m] = cmap(i % 20)[:3]
    return img
