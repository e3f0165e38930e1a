"""Two-stage text-to-keyframe pipeline: input standardization, then per-keyframe
coefficient generation."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping

from .core import MotionKeyframeSet, Script, coeffs_from_json
from .errors import (
    Aborted,
    InvalidDraft,
    InvalidEdit,
    InvalidScript,
    KeyfaceError,
    KeyframeGenerationError,
)
from .gateway import ChatClient, EndpointConfig, ParseReport, find_json, generate_keyframe, strip_code_fences
from .prompts import MODES, SEMANTIC, build_system_prompt, extract_keyframes, parse_script, prompt_for_keyframe

log = logging.getLogger(__name__)

STANDARDIZE_SYSTEM = (
    "You turn free-form descriptions of facial performances into structured scripts. "
    "Identify the situational background, the emotion, and the ordered keyframes: the "
    "moments where an expression peaks or changes. Describe each keyframe's visible "
    "facial appearance in one or two English sentences."
)
STANDARDIZE_FORMAT = (
    'Respond with a single JSON object of the form {"background": str, "emotion": str, '
    '"keyframes": [{"index": 1, "description": str}, ...]} containing at least one '
    "keyframe and nothing else."
)


@dataclass(frozen=True)
class FreeTextInput:
    text: str

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise ValueError("input text must be non-empty")


@dataclass(frozen=True)
class GenerationRun:
    script: Script
    mode: str
    outputs: MotionKeyframeSet
    per_keyframe_reports: tuple[ParseReport, ...]
    model_name: str

    def __post_init__(self):
        if len(self.outputs) != len(self.script):
            raise ValueError("one output frame per script keyframe is required")

    def to_dict(self) -> dict:
        return {
            "script": self.script.to_dict(),
            "mode": self.mode,
            "model_name": self.model_name,
            "frames": [list(f.values) for f in self.outputs.frames],
            "reports": [r.to_dict() for r in self.per_keyframe_reports],
        }

    @classmethod
    def from_dict(cls, obj: Mapping) -> "GenerationRun":
        reports = tuple(ParseReport(list(r.get("repairs_applied", [])), bool(r.get("ok", True)))
                        for r in obj.get("reports", []))
        frames = tuple(coeffs_from_json(f) for f in obj["frames"])
        if not reports:
            reports = tuple(ParseReport([], True) for _ in frames)
        return cls(
            script=Script.from_dict(obj["script"]),
            mode=obj.get("mode", SEMANTIC),
            outputs=MotionKeyframeSet(frames),
            per_keyframe_reports=reports,
            model_name=obj.get("model_name", ""),
        )


def _draft_from_text(raw: str) -> Script:
    body, _ = strip_code_fences(raw)
    found = find_json(body, dict)
    if found is None:
        return parse_script(body)
    return Script.from_dict(found[0])


def standardize(inp: FreeTextInput | str, cfg: EndpointConfig,
                client: ChatClient | None = None) -> Script:
    """Rewrite free text into a draft script through the LLM (inference only).

    Input that already parses as a script is returned as is without any request.
    """
    if isinstance(inp, str):
        inp = FreeTextInput(inp)
    try:
        return parse_script(inp.text)
    except (InvalidScript, ValueError):
        pass

    owned = client is None
    c = client or ChatClient(cfg)
    messages = [
        {"role": "system", "content": STANDARDIZE_SYSTEM},
        {"role": "user", "content": inp.text.strip() + "\n\n" + STANDARDIZE_FORMAT},
    ]
    try:
        raw = c.chat(messages)
        try:
            return _draft_from_text(raw)
        except (InvalidScript, ValueError) as exc:
            log.info("draft rejected (%s); re-asking once", exc)
        messages += [
            {"role": "assistant", "content": raw},
            {"role": "user", "content": "That draft was not a valid script. " + STANDARDIZE_FORMAT},
        ]
        raw = c.chat(messages)
        try:
            return _draft_from_text(raw)
        except (InvalidScript, ValueError) as exc:
            raise InvalidDraft(f"model did not produce a valid script: {exc}") from None
    finally:
        if owned:
            c.close()


def confirm_script(draft: Script, decision: str, edited=None) -> Script:
    """Apply the user's verdict on a draft: ``accept``, ``edit`` or ``reject``."""
    if decision == "accept":
        return draft
    if decision == "reject":
        raise Aborted("script rejected by user")
    if decision == "edit":
        try:
            if isinstance(edited, Script):
                return Script(edited.background, edited.emotion, edited.keyframes)
            if isinstance(edited, Mapping):
                return Script.from_dict(edited)
            if isinstance(edited, (str, bytes)):
                return parse_script(edited)
        except (InvalidScript, ValueError) as exc:
            raise InvalidEdit(f"edited script is invalid: {exc}") from None
        raise InvalidEdit("edit requires a replacement script")
    raise ValueError(f"unknown decision {decision!r}")


def generate_sequence(script: Script, mode: str, cfg: EndpointConfig,
                      client: ChatClient | None = None, concurrent: bool = False,
                      max_workers: int | None = None) -> GenerationRun:
    """Generate one coefficient vector per keyframe, ordered by keyframe index.

    Each keyframe prompt depends only on the system prompt, the script and the
    index, so keyframes can be requested concurrently without changing results.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    system = build_system_prompt() if mode == SEMANTIC else None
    keyframes = extract_keyframes(script)
    prompts = [prompt_for_keyframe(script, k.index, mode, system) for k in keyframes]

    owned = client is None
    c = client or ChatClient(cfg)

    def run_one(i):
        try:
            return generate_keyframe(prompts[i], cfg, c, with_report=True)
        except KeyfaceError as exc:
            raise KeyframeGenerationError(keyframes[i].index, exc) from exc

    try:
        if concurrent and len(prompts) > 1:
            with ThreadPoolExecutor(max_workers=max_workers or len(prompts)) as pool:
                futures = [pool.submit(run_one, i) for i in range(len(prompts))]
                results = [f.result() for f in futures]
        else:
            results = [run_one(i) for i in range(len(prompts))]
    finally:
        if owned:
            c.close()

    return GenerationRun(
        script=script,
        mode=mode,
        outputs=MotionKeyframeSet(tuple(v for v, _ in results)),
        per_keyframe_reports=tuple(r for _, r in results),
        model_name=cfg.model_name,
    )


def save_run(run: GenerationRun, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run.to_dict(), fh, indent=2)
        fh.write("\n")
