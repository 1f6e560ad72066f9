"""Shared geometric and domain vocabulary."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

FORWARD_M = 0.25
TURN_RAD = math.radians(30.0)
TILT_RAD = math.radians(30.0)
DEFAULT_CAMERA_HEIGHT = 0.88
DEFAULT_RESOLUTION = 0.05
PROMPT_SEPARATOR = "."


# Yaw lives on a 2**-40 rad lattice so that additive turns are exactly invertible.
_YAW_Q = 2.0 ** 40


def quantize_angle(a: float) -> float:
    return round(a * _YAW_Q) / _YAW_Q


_PI = quantize_angle(math.pi)
_TWO_PI = 2.0 * _PI


def normalize_angle(a: float) -> float:
    """Quantize and wrap an angle to (-pi, pi]."""
    a = math.fmod(quantize_angle(a), _TWO_PI)
    if a <= -_PI:
        a += _TWO_PI
    elif a > _PI:
        a -= _TWO_PI
    return a


class Action(str, enum.Enum):
    STOP = "stop"
    MOVE_FORWARD = "move_forward"
    TURN_LEFT = "turn_left"
    TURN_RIGHT = "turn_right"
    LOOK_UP = "look_up"
    LOOK_DOWN = "look_down"


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    z: float = DEFAULT_CAMERA_HEIGHT
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        for f in ("x", "y", "z"):
            object.__setattr__(self, f, float(getattr(self, f)))
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))
        p = min(max(float(self.pitch), -math.pi / 2), math.pi / 2)
        object.__setattr__(self, "pitch", p)

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "z": self.z, "yaw": self.yaw, "pitch": self.pitch}

    @classmethod
    def from_dict(cls, d: dict) -> "Pose":
        return cls(float(d["x"]), float(d["y"]), float(d["z"]), float(d["yaw"]), float(d["pitch"]))


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    @classmethod
    def from_hfov(cls, width: int = 640, height: int = 480, hfov_deg: float = 79.0) -> "CameraIntrinsics":
        """Square-pixel pinhole camera with the principal point at the image center."""
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(width, height, fx, fx, width / 2.0, height / 2.0)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "fx": self.fx, "fy": self.fy,
                "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class ObjectLabel:
    name: str
    attributes: tuple[str, ...] = ()

    def __post_init__(self):
        name = " ".join(self.name.lower().split())
        if not name:
            raise ValueError("object label name must be non-empty")
        attrs = tuple(" ".join(a.lower().split()) for a in self.attributes)
        for a in (name, *attrs):
            if PROMPT_SEPARATOR in a:
                raise ValueError(f"label text may not contain {PROMPT_SEPARATOR!r}: {a!r}")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "attributes", tuple(a for a in attrs if a))

    @property
    def phrase(self) -> str:
        """Prompt phrase: attributes then name, e.g. ``red chair``."""
        return " ".join((*self.attributes, self.name))

    @property
    def key(self) -> tuple[str, frozenset[str]]:
        return (self.name, frozenset(self.attributes))

    def matches(self, instance: "ObjectLabel") -> bool:
        """True if `instance` is a `self`: same name, attributes a superset."""
        return instance.name == self.name and set(self.attributes) <= set(instance.attributes)

    def to_dict(self) -> dict:
        return {"name": self.name, "attributes": list(self.attributes)}

    @classmethod
    def from_dict(cls, d) -> "ObjectLabel":
        if isinstance(d, str):
            return cls(d)
        return cls(d["name"], tuple(d.get("attributes", ())))

    def __str__(self) -> str:
        return self.phrase


@dataclass(frozen=True)
class Instruction:
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("instruction must be non-empty")


@dataclass(frozen=True, order=True)
class GridIndex:
    row: int
    col: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.row, self.col)


def dedup_labels(*groups) -> list[ObjectLabel]:
    """Stable, case-insensitive union of label groups."""
    seen = set()
    out = []
    for group in groups:
        for lab in group or ():
            if lab.key not in seen:
                seen.add(lab.key)
                out.append(lab)
    return out


def pose_step(pose: Pose, action: Action, forward_m: float = FORWARD_M,
              turn_rad: float = TURN_RAD, tilt_rad: float = TILT_RAD) -> Pose:
    """Kinematic update for one action, without collision handling."""
    action = Action(action)
    if action is Action.STOP:
        raise ValueError("stop has no kinematic effect")
    if action is Action.MOVE_FORWARD:
        return replace(pose, x=pose.x + forward_m * math.cos(pose.yaw),
                       y=pose.y + forward_m * math.sin(pose.yaw))
    if action is Action.TURN_LEFT:
        return replace(pose, yaw=pose.yaw + quantize_angle(turn_rad))
    if action is Action.TURN_RIGHT:
        return replace(pose, yaw=pose.yaw - quantize_angle(turn_rad))
    if action is Action.LOOK_UP:
        return replace(pose, pitch=pose.pitch + tilt_rad)
    return replace(pose, pitch=pose.pitch - tilt_rad)


def camera_rays(pose: Pose, K: CameraIntrinsics, us=None, vs=None) -> np.ndarray:
    """World-frame ray directions for pixels, scaled so the optical-axis component is 1.

    A point at planar depth ``d`` along pixel (u, v) sits at ``camera + d * ray``.
    Returns an array of shape (..., 3).
    """
    if us is None:
        vs, us = np.mgrid[0:K.height, 0:K.width]
    us = np.asarray(us, dtype=np.float64)
    vs = np.asarray(vs, dtype=np.float64)
    right = (us - K.cx) / K.fx
    down = (vs - K.cy) / K.fy
    cy_, sy_ = math.cos(pose.yaw), math.sin(pose.yaw)
    cp, sp = math.cos(pose.pitch), math.sin(pose.pitch)
    # camera axes in world coordinates
    fwd = np.array([cp * cy_, cp * sy_, sp])
    rgt = np.array([sy_, -cy_, 0.0])
    dwn = np.array([sp * cy_, sp * sy_, -cp])
    return fwd + right[..., None] * rgt + down[..., None] * dwn
