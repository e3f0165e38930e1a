"""Canonical data model: the 61-channel ARKit registry, coefficient vectors,
scripts and keyframe containers.

Every ``CoeffVector`` that exists has been validated, so downstream code never
re-checks ranges.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InvalidScript,
    LengthMismatch,
    NoKeyframes,
    NonFinite,
    OutOfRange,
    UnknownChannel,
    WrongDimension,
)

REGISTRY_VERSION = "arkit61-v1"

# Live Link Face column order: 52 expression blendshapes, then 9 pose channels.
_BLENDSHAPES = (
    "EyeBlinkLeft", "EyeLookDownLeft", "EyeLookInLeft", "EyeLookOutLeft",
    "EyeLookUpLeft", "EyeSquintLeft", "EyeWideLeft",
    "EyeBlinkRight", "EyeLookDownRight", "EyeLookInRight", "EyeLookOutRight",
    "EyeLookUpRight", "EyeSquintRight", "EyeWideRight",
    "JawForward", "JawRight", "JawLeft", "JawOpen",
    "MouthClose", "MouthFunnel", "MouthPucker", "MouthRight", "MouthLeft",
    "MouthSmileLeft", "MouthSmileRight", "MouthFrownLeft", "MouthFrownRight",
    "MouthDimpleLeft", "MouthDimpleRight", "MouthStretchLeft", "MouthStretchRight",
    "MouthRollLower", "MouthRollUpper", "MouthShrugLower", "MouthShrugUpper",
    "MouthPressLeft", "MouthPressRight", "MouthLowerDownLeft", "MouthLowerDownRight",
    "MouthUpperUpLeft", "MouthUpperUpRight",
    "BrowDownLeft", "BrowDownRight", "BrowInnerUp", "BrowOuterUpLeft", "BrowOuterUpRight",
    "CheekPuff", "CheekSquintLeft", "CheekSquintRight",
    "NoseSneerLeft", "NoseSneerRight", "TongueOut",
)
_POSE = (
    "HeadYaw", "HeadPitch", "HeadRoll",
    "LeftEyeYaw", "LeftEyePitch", "LeftEyeRoll",
    "RightEyeYaw", "RightEyePitch", "RightEyeRoll",
)

NUM_CHANNELS = 61
NUM_BLENDSHAPES = 52
NUM_POSE = 9


@dataclass(frozen=True)
class ChannelRegistry:
    names: tuple[str, ...]
    version: str
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.names) != NUM_CHANNELS:
            raise ValueError(f"registry needs {NUM_CHANNELS} names, got {len(self.names)}")
        index = {name: i for i, name in enumerate(self.names)}
        if len(index) != len(self.names):
            raise ValueError("registry names must be unique")
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __contains__(self, name):
        return name in self._index

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise UnknownChannel(f"unknown channel {name!r}") from None

    @property
    def blendshapes(self) -> tuple[str, ...]:
        return self.names[:NUM_BLENDSHAPES]

    @property
    def pose(self) -> tuple[str, ...]:
        return self.names[NUM_BLENDSHAPES:]


_REGISTRY = ChannelRegistry(_BLENDSHAPES + _POSE, REGISTRY_VERSION)


def registry() -> ChannelRegistry:
    """Return the pinned version-1 channel registry."""
    return _REGISTRY


@dataclass(frozen=True)
class CoeffVector:
    """One validated 61-channel frame. Build it through ``validate_coeffs``."""

    values: tuple[float, ...]
    registry_version: str = REGISTRY_VERSION

    def __post_init__(self):
        if len(self.values) != NUM_CHANNELS:
            raise WrongDimension(f"expected {NUM_CHANNELS} values, got {len(self.values)}")
        for i, v in enumerate(self.values):
            if not math.isfinite(v):
                raise NonFinite(f"channel {i} is not finite: {v!r}")
            if v < -1.0 or v > 1.0:
                raise OutOfRange(f"channel {i} = {v!r} outside [-1, 1]")

    def __len__(self):
        return NUM_CHANNELS

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.values[_REGISTRY.index_of(key)]
        return self.values[key]

    def __iter__(self):
        return iter(self.values)

    def array(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)

    def to_json(self) -> dict:
        return {"registry_version": self.registry_version, "values": list(self.values)}

    @classmethod
    def neutral(cls) -> "CoeffVector":
        return cls((0.0,) * NUM_CHANNELS)


def validate_coeffs(raw: Iterable[float], policy: str = "strict") -> CoeffVector:
    """Check length, finiteness and range; ``policy="clamp"`` clips to [-1, 1]."""
    if policy not in ("strict", "clamp"):
        raise ValueError(f"unknown policy {policy!r}")
    if isinstance(raw, CoeffVector):
        return raw
    values = []
    for v in raw:
        if isinstance(v, bool) or not isinstance(v, (int, float, np.integer, np.floating)):
            raise TypeError(f"coefficient must be a real number, got {type(v).__name__}")
        values.append(float(v))
    if len(values) != NUM_CHANNELS:
        raise WrongDimension(f"expected {NUM_CHANNELS} values, got {len(values)}")
    for i, v in enumerate(values):
        if not math.isfinite(v):
            raise NonFinite(f"channel {_REGISTRY.names[i]} is not finite: {v!r}")
    if policy == "clamp":
        values = [min(1.0, max(-1.0, v)) for v in values]
    return CoeffVector(tuple(values))


def from_semantic_map(mapping: Mapping[str, float], policy: str = "strict") -> CoeffVector:
    values = [0.0] * NUM_CHANNELS
    for name, v in mapping.items():
        values[_REGISTRY.index_of(name)] = v
    return validate_coeffs(values, policy)


def to_semantic_map(v: CoeffVector, omit_zeros: bool = False) -> dict[str, float]:
    return {
        name: x for name, x in zip(_REGISTRY.names, v.values)
        if not (omit_zeros and x == 0.0)
    }


def coeffs_from_json(obj) -> CoeffVector:
    """Read either a dense 61-array, a semantic map, or ``{"values": [...]}``."""
    if isinstance(obj, Mapping):
        if "values" in obj:
            version = obj.get("registry_version", REGISTRY_VERSION)
            if version != REGISTRY_VERSION:
                raise ValueError(f"unsupported registry version {version!r}")
            return validate_coeffs(obj["values"])
        return from_semantic_map(obj)
    if isinstance(obj, (list, tuple)):
        return validate_coeffs(obj)
    raise TypeError(f"cannot read coefficients from {type(obj).__name__}")


@dataclass(frozen=True)
class KeyframeSpec:
    index: int
    description: str

    def __post_init__(self):
        if isinstance(self.index, bool) or not isinstance(self.index, int) or self.index < 1:
            raise InvalidScript(f"keyframe index must be an integer >= 1, got {self.index!r}")
        if not self.description or not self.description.strip():
            raise InvalidScript(f"keyframe {self.index} has an empty description")


@dataclass(frozen=True)
class Script:
    background: str
    emotion: str
    keyframes: tuple[KeyframeSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple(self.keyframes))
        if not self.keyframes:
            raise NoKeyframes("script has no keyframes")
        for expected, kf in enumerate(self.keyframes, start=1):
            if kf.index != expected:
                raise InvalidScript(
                    f"keyframe indices must be 1..n contiguous; position {expected} has index {kf.index}"
                )

    def __len__(self):
        return len(self.keyframes)

    def to_dict(self) -> dict:
        return {
            "background": self.background,
            "emotion": self.emotion,
            "keyframes": [{"index": k.index, "description": k.description} for k in self.keyframes],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, **kwargs)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "Script":
        if not isinstance(obj, Mapping):
            raise InvalidScript("script JSON must be an object")
        kfs = obj.get("keyframes")
        if not isinstance(kfs, list):
            raise NoKeyframes("script JSON has no 'keyframes' list")
        specs = []
        for i, k in enumerate(kfs, start=1):
            if isinstance(k, str):
                specs.append(KeyframeSpec(i, k))
            elif isinstance(k, Mapping):
                specs.append(KeyframeSpec(k.get("index", i), k.get("description", "")))
            else:
                raise InvalidScript(f"keyframe entry {i} is neither a string nor an object")
        background = obj.get("background", "")
        emotion = obj.get("emotion", "")
        if not isinstance(background, str) or not isinstance(emotion, str):
            raise InvalidScript("background and emotion must be strings")
        return cls(background, emotion, tuple(specs))


@dataclass(frozen=True)
class MotionKeyframeSet:
    frames: tuple[CoeffVector, ...]
    source_script_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("keyframe set must be non-empty")
        versions = {f.registry_version for f in self.frames}
        if len(versions) != 1:
            raise ValueError(f"mixed registry versions: {sorted(versions)}")

    def __len__(self):
        return len(self.frames)

    def array(self) -> np.ndarray:
        return np.array([f.values for f in self.frames], dtype=np.float64)


@dataclass(frozen=True)
class DatasetKeyframeRecord:
    frame_index: int
    coeffs: CoeffVector
    description_original: str = ""
    description_arkit: str = ""
    description_image: str = ""

    def __post_init__(self):
        if isinstance(self.frame_index, bool) or not isinstance(self.frame_index, int) or self.frame_index < 0:
            raise ValueError(f"frame_index must be a non-negative integer, got {self.frame_index!r}")


def frame_errors(pred: MotionKeyframeSet | Sequence[CoeffVector],
                 gt: MotionKeyframeSet | Sequence[CoeffVector]) -> dict[str, float]:
    """Element-wise MSE / MAE / RMSE averaged over all 61*n entries."""
    p = _frames_array(pred)
    g = _frames_array(gt)
    if p.shape != g.shape:
        raise LengthMismatch(f"frame count mismatch: pred has {p.shape[0]}, gt has {g.shape[0]}")
    diff = p - g
    mse = float(np.mean(diff * diff))
    return {"mse": mse, "mae": float(np.mean(np.abs(diff))), "rmse": math.sqrt(mse)}


def _frames_array(frames) -> np.ndarray:
    if isinstance(frames, MotionKeyframeSet):
        return frames.array()
    if isinstance(frames, np.ndarray):
        return frames.astype(np.float64, copy=False).reshape(-1, NUM_CHANNELS)
    return np.array([validate_coeffs(f).values for f in frames], dtype=np.float64).reshape(-1, NUM_CHANNELS)
