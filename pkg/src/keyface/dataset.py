"""Dataset records (JSONL), splits, LLM re-annotation and corpus statistics."""
from __future__ import annotations

import base64
import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .core import CoeffVector, DatasetKeyframeRecord, Script, coeffs_from_json, registry
from .errors import (
    CoeffError,
    CoeffInvalid,
    EmptyDataset,
    InvalidScript,
    MissingEmotions,
    SchemaViolation,
    TooFewRecords,
    Unparseable,
)
from .gateway import ChatClient, EndpointConfig, find_json, strip_code_fences

EMOTIONS = ("sadness", "surprise", "anger", "happiness", "disgust", "fear")


@dataclass(frozen=True)
class EmotionProfile:
    sadness: float = 0.0
    surprise: float = 0.0
    anger: float = 0.0
    happiness: float = 0.0
    disgust: float = 0.0
    fear: float = 0.0

    def __post_init__(self):
        for name in EMOTIONS:
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} intensity must be in [0, 1], got {v!r}")

    def as_tuple(self) -> tuple[float, ...]:
        return tuple(getattr(self, e) for e in EMOTIONS)

    def dominant(self) -> str:
        values = self.as_tuple()
        return EMOTIONS[values.index(max(values))]  # first max wins

    def to_dict(self) -> dict:
        return dict(zip(EMOTIONS, self.as_tuple()))


@dataclass(frozen=True)
class DatasetRecord:
    clip_id: str
    actor_id: str
    script: Script
    keyframes: tuple[DatasetKeyframeRecord, ...]
    duration: float
    emotions: tuple[EmotionProfile, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "keyframes", tuple(self.keyframes))
        if self.emotions is not None:
            object.__setattr__(self, "emotions", tuple(self.emotions))
        if self.keyframes and len(self.keyframes) != len(self.script):
            raise SchemaViolation(
                f"clip {self.clip_id}: {len(self.keyframes)} keyframe records for a "
                f"{len(self.script)}-keyframe script"
            )
        if not (isinstance(self.duration, (int, float)) and self.duration > 0):
            raise SchemaViolation(f"clip {self.clip_id}: duration must be > 0")
        if self.emotions is not None and len(self.emotions) != len(self.script):
            raise SchemaViolation(f"clip {self.clip_id}: need one emotion profile per keyframe")

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "actor_id": self.actor_id,
            "script": self.script.to_dict(),
            "keyframes": [
                {
                    "frame_index": k.frame_index,
                    "coeffs": list(k.coeffs.values),
                    "description_original": k.description_original,
                    "description_arkit": k.description_arkit,
                    "description_image": k.description_image,
                }
                for k in self.keyframes
            ],
            "duration": self.duration,
            "emotions": None if self.emotions is None else [e.to_dict() for e in self.emotions],
        }


def record_from_dict(obj: dict, line: int | None = None) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise SchemaViolation("record must be a JSON object", line)
    try:
        clip_id = str(obj["clip_id"])
        actor_id = str(obj["actor_id"])
        script = Script.from_dict(obj["script"])
        duration = obj["duration"]
        raw_kfs = obj.get("keyframes", [])
    except KeyError as exc:
        raise SchemaViolation(f"missing field {exc.args[0]!r}", line) from None
    except InvalidScript as exc:
        raise SchemaViolation(f"invalid script: {exc}", line) from None
    if isinstance(duration, bool) or not isinstance(duration, (int, float)):
        raise SchemaViolation("duration must be a number", line)
    kfs = []
    for i, k in enumerate(raw_kfs):
        if not isinstance(k, dict) or "coeffs" not in k or "frame_index" not in k:
            raise SchemaViolation(f"keyframe {i + 1} needs frame_index and coeffs", line)
        try:
            coeffs = coeffs_from_json(k["coeffs"])
        except (CoeffError, TypeError) as exc:
            raise CoeffInvalid(f"keyframe {i + 1}: {exc}", line) from None
        try:
            kfs.append(DatasetKeyframeRecord(
                k["frame_index"], coeffs,
                k.get("description_original", ""), k.get("description_arkit", ""),
                k.get("description_image", ""),
            ))
        except ValueError as exc:
            raise SchemaViolation(f"keyframe {i + 1}: {exc}", line) from None
    emotions = obj.get("emotions")
    try:
        if emotions is not None:
            emotions = tuple(EmotionProfile(**e) for e in emotions)
        return DatasetRecord(clip_id, actor_id, script, tuple(kfs), float(duration), emotions)
    except SchemaViolation as exc:
        raise SchemaViolation(str(exc), line) from None
    except (TypeError, ValueError) as exc:
        raise SchemaViolation(str(exc), line) from None


def load_dataset(path) -> list[DatasetRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"invalid JSON: {exc.msg}", lineno) from None
            records.append(record_from_dict(obj, lineno))
    return records


def dump_dataset(records: Iterable[DatasetRecord], fh) -> None:
    for r in records:
        fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class SplitSpec:
    train_ratio: float = 0.8
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError("train_ratio must be in (0, 1)")


def split_train_test(records: Sequence[DatasetRecord], spec: SplitSpec = SplitSpec()):
    """Seeded shuffle of clip ids; the first ceil(ratio * n) go to train."""
    n = len(records)
    if n < 2:
        raise TooFewRecords("need at least 2 records to split")
    ordered = sorted(records, key=lambda r: r.clip_id)
    perm = np.random.default_rng(spec.seed).permutation(n)
    n_train = math.ceil(spec.train_ratio * n - 1e-9)
    train = [ordered[i] for i in perm[:n_train]]
    test = [ordered[i] for i in perm[n_train:]]
    return train, test


# -- LLM annotation -----------------------------------------------------------

ANNOTATE_SYSTEM = (
    "You are a professional facial-expression expert proficient in the ARKit "
    "blendshape parameter system. Given ARKit parameter names and activation values "
    "for one keyframe, describe the facial expression they produce."
)
ANNOTATE_INSTRUCTION = (
    "Write a concise, English-only description of this keyframe's facial expression "
    "without explicitly mentioning parameter names or values."
)

EMOTION_INSTRUCTION = (
    "Rate the intensity of each of the six basic emotions (sadness, surprise, anger, "
    "happiness, disgust, fear) shown by this keyframe on a scale from 0 to 1. Respond "
    "with a single JSON object with exactly those six keys and nothing else."
)


def _fmt(v: float) -> str:
    return f"{round(v, 3):g}"


def active_channels(k: CoeffVector) -> str:
    return ", ".join(f"{name}:{_fmt(v)}" for name, v in zip(registry().names, k.values) if v != 0.0)


def annotation_prompt(k: CoeffVector) -> list[dict]:
    active = active_channels(k)
    listing = active if active else "(no active channels: the face is neutral)"
    return [
        {"role": "system", "content": ANNOTATE_SYSTEM},
        {"role": "user", "content": f"ARKit parameters: {listing}\n\n{ANNOTATE_INSTRUCTION}"},
    ]


def annotate_from_coeffs(k: CoeffVector, cfg: EndpointConfig, client: ChatClient | None = None) -> str:
    owned = client is None
    c = client or ChatClient(cfg)
    try:
        raw = c.chat(annotation_prompt(k))
    finally:
        if owned:
            c.close()
    return strip_code_fences(raw)[0].strip()


def score_emotions(k: CoeffVector, context: str, cfg: EndpointConfig,
                   client: ChatClient | None = None) -> EmotionProfile:
    """Optional hook: ask the LLM for a six-emotion intensity profile."""
    msgs = annotation_prompt(k)
    msgs[1]["content"] = (f"Context: {context}\n\nARKit parameters: {active_channels(k) or '(neutral)'}"
                          f"\n\n{EMOTION_INSTRUCTION}")
    owned = client is None
    c = client or ChatClient(cfg)
    try:
        raw = c.chat(msgs)
    finally:
        if owned:
            c.close()
    found = find_json(strip_code_fences(raw)[0], dict)
    if found is None:
        raise Unparseable("no JSON object in emotion scoring output")
    try:
        return EmotionProfile(**{e: float(found[0].get(e, 0.0)) for e in EMOTIONS})
    except (TypeError, ValueError) as exc:
        raise Unparseable(str(exc)) from None


def annotate_image(image: bytes, mime: str, prompt: str, cfg: EndpointConfig,
                   client: ChatClient | None = None) -> str:
    """Forward an opaque image plus prompt to a multimodal chat endpoint."""
    url = f"data:{mime};base64," + base64.b64encode(image).decode("ascii")
    msgs = [{"role": "user", "content": [
        {"type": "text", "text": prompt},
        {"type": "image_url", "image_url": {"url": url}},
    ]}]
    owned = client is None
    c = client or ChatClient(cfg)
    try:
        return strip_code_fences(c.chat(msgs))[0].strip()
    finally:
        if owned:
            c.close()


# -- statistics ---------------------------------------------------------------

@dataclass
class StatsReport:
    total_clips: int
    keyframe_histogram: dict[int, int]
    keyframe_fractions: dict[int, float]
    actor_clip_counts: dict[str, int]
    actor_durations: dict[str, float]
    duration: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "total_clips": self.total_clips,
            "keyframe_histogram": {str(k): v for k, v in self.keyframe_histogram.items()},
            "keyframe_fractions": {str(k): v for k, v in self.keyframe_fractions.items()},
            "actor_clip_counts": self.actor_clip_counts,
            "actor_durations": self.actor_durations,
            "duration": self.duration,
        }


def dataset_stats(records: Sequence[DatasetRecord]) -> StatsReport:
    if not records:
        raise EmptyDataset("no records")
    counts = Counter(len(r.script) for r in records)
    n = len(records)
    actors: dict[str, int] = defaultdict(int)
    actor_dur: dict[str, float] = defaultdict(float)
    for r in records:
        actors[r.actor_id] += 1
        actor_dur[r.actor_id] += r.duration
    d = np.array([r.duration for r in records], dtype=np.float64)
    q1, med, q3 = np.percentile(d, [25, 50, 75])
    return StatsReport(
        total_clips=n,
        keyframe_histogram=dict(sorted(counts.items())),
        keyframe_fractions={k: v / n for k, v in sorted(counts.items())},
        actor_clip_counts=dict(sorted(actors.items())),
        actor_durations=dict(sorted(actor_dur.items())),
        duration={"min": float(d.min()), "q1": float(q1), "median": float(med),
                  "q3": float(q3), "max": float(d.max())},
    )


def emotion_distribution(records: Sequence[DatasetRecord]) -> dict[str, float]:
    """Share of keyframes whose dominant emotion is each of the six categories."""
    tally = dict.fromkeys(EMOTIONS, 0)
    total = 0
    for r in records:
        if r.emotions is None:
            raise MissingEmotions(f"clip {r.clip_id} has no emotion profiles")
        for profile in r.emotions:
            tally[profile.dominant()] += 1
            total += 1
    if total == 0:
        raise MissingEmotions("no emotion profiles found")
    return {e: tally[e] / total for e in EMOTIONS}


def retrieval_pairs(records: Sequence[DatasetRecord], field_name: str = "description_arkit"):
    """(text, coeffs) pairs for encoder training; falls back to the script
    keyframe description when the annotation field is empty."""
    pairs = []
    for r in records:
        for spec, k in zip(r.script.keyframes, r.keyframes):
            text = getattr(k, field_name) or k.description_original or spec.description
            pairs.append((text, k.coeffs))
    return pairs
