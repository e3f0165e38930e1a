"""Prompt construction for keyframe generation.

A full prompt is the system prompt (semantic mode only), the rendered script,
and a per-keyframe target instruction, joined by blank lines in that order.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    ChannelRegistry,
    CoeffVector,
    KeyframeSpec,
    Script,
    registry,
    to_semantic_map,
)
from .errors import (
    IndexOutOfRange,
    InvalidScript,
    KeyframeCountMismatch,
    MalformedSection,
    MissingSystemPrompt,
    NoKeyframes,
)

PROMPT_ASSET_VERSION = "sysprompt-v1"
SEMANTIC = "semantic"
NON_SEMANTIC = "non_semantic"
MODES = (SEMANTIC, NON_SEMANTIC)

ORDINALS = ("One", "Two", "Three", "Four", "Five", "Six", "Seven", "Eight", "Nine", "Ten")
_ORDINAL_LOOKUP = {w.lower(): i for i, w in enumerate(ORDINALS, start=1)}

SECTION_SEP = "\n\n"

# One muscle-group explanation per registry channel. Pinned with PROMPT_ASSET_VERSION.
CHANNEL_EXPLANATIONS = {
    "EyeBlinkLeft": "closes the left eyelid (orbicularis oculi); 1 = fully shut",
    "EyeLookDownLeft": "rotates the left eye gaze downward",
    "EyeLookInLeft": "rotates the left eye gaze inward toward the nose",
    "EyeLookOutLeft": "rotates the left eye gaze outward toward the temple",
    "EyeLookUpLeft": "rotates the left eye gaze upward",
    "EyeSquintLeft": "tightens the lower left eyelid and surrounding skin into a squint",
    "EyeWideLeft": "widens the left eye by raising the upper lid (levator palpebrae)",
    "EyeBlinkRight": "closes the right eyelid (orbicularis oculi); 1 = fully shut",
    "EyeLookDownRight": "rotates the right eye gaze downward",
    "EyeLookInRight": "rotates the right eye gaze inward toward the nose",
    "EyeLookOutRight": "rotates the right eye gaze outward toward the temple",
    "EyeLookUpRight": "rotates the right eye gaze upward",
    "EyeSquintRight": "tightens the lower right eyelid and surrounding skin into a squint",
    "EyeWideRight": "widens the right eye by raising the upper lid (levator palpebrae)",
    "JawForward": "pushes the lower jaw forward",
    "JawRight": "shifts the lower jaw to the right",
    "JawLeft": "shifts the lower jaw to the left",
    "JawOpen": "drops the lower jaw, opening the mouth (jaw and mouth opening)",
    "MouthClose": "presses the lips closed while the jaw is open",
    "MouthFunnel": "rounds the lips into a funnel shape as for an 'oo' sound",
    "MouthPucker": "purses and protrudes the lips as in a kiss (orbicularis oris)",
    "MouthRight": "pulls both lips toward the right",
    "MouthLeft": "pulls both lips toward the left",
    "MouthSmileLeft": "raises the left mouth corner into a smile (zygomaticus major)",
    "MouthSmileRight": "raises the right mouth corner into a smile (zygomaticus major)",
    "MouthFrownLeft": "pulls the left mouth corner downward (depressor anguli oris)",
    "MouthFrownRight": "pulls the right mouth corner downward (depressor anguli oris)",
    "MouthDimpleLeft": "draws the left mouth corner backward, forming a dimple (buccinator)",
    "MouthDimpleRight": "draws the right mouth corner backward, forming a dimple (buccinator)",
    "MouthStretchLeft": "stretches the left mouth corner sideways and down (risorius)",
    "MouthStretchRight": "stretches the right mouth corner sideways and down (risorius)",
    "MouthRollLower": "rolls the lower lip inward over the teeth",
    "MouthRollUpper": "rolls the upper lip inward over the teeth",
    "MouthShrugLower": "pushes the lower lip upward (mentalis)",
    "MouthShrugUpper": "raises the upper lip as the lower lip pushes up",
    "MouthPressLeft": "presses the left side of the lips together",
    "MouthPressRight": "presses the right side of the lips together",
    "MouthLowerDownLeft": "pulls the left lower lip downward, exposing lower teeth",
    "MouthLowerDownRight": "pulls the right lower lip downward, exposing lower teeth",
    "MouthUpperUpLeft": "raises the left upper lip (levator labii superioris)",
    "MouthUpperUpRight": "raises the right upper lip (levator labii superioris)",
    "BrowDownLeft": "lowers and knits the left brow (corrugator, procerus)",
    "BrowDownRight": "lowers and knits the right brow (corrugator, procerus)",
    "BrowInnerUp": "raises the inner ends of both brows (frontalis, medial part)",
    "BrowOuterUpLeft": "raises the outer end of the left brow (frontalis, lateral part)",
    "BrowOuterUpRight": "raises the outer end of the right brow (frontalis, lateral part)",
    "CheekPuff": "inflates both cheeks outward with air",
    "CheekSquintLeft": "raises the left cheek toward the eye (orbicularis oculi, outer ring)",
    "CheekSquintRight": "raises the right cheek toward the eye (orbicularis oculi, outer ring)",
    "NoseSneerLeft": "wrinkles the left side of the nose upward (levator labii alaeque nasi)",
    "NoseSneerRight": "wrinkles the right side of the nose upward (levator labii alaeque nasi)",
    "TongueOut": "extends the tongue out of the mouth",
    "HeadYaw": "turns the head left or right; sign gives direction",
    "HeadPitch": "tilts the head up or down (nodding); sign gives direction",
    "HeadRoll": "tilts the head toward either shoulder; sign gives direction",
    "LeftEyeYaw": "horizontal rotation of the left eyeball; sign gives direction",
    "LeftEyePitch": "vertical rotation of the left eyeball; sign gives direction",
    "LeftEyeRoll": "torsional roll of the left eyeball",
    "RightEyeYaw": "horizontal rotation of the right eyeball; sign gives direction",
    "RightEyePitch": "vertical rotation of the right eyeball; sign gives direction",
    "RightEyeRoll": "torsional roll of the right eyeball",
}

SYSTEM_OVERVIEW = (
    "You are a facial animation assistant that converts keyframe descriptions of a "
    "performance into ARKit facial expression parameters. Each keyframe is described "
    "by a script with background context, an emotion, and an ordered sequence of "
    "keyframe descriptions. For the requested keyframe, output the 61 ARKit "
    "coefficients (52 expression blendshapes and 9 head and eye pose channels) that "
    "reproduce the described expression."
)

SEMANTIC_OUTPUT_SPEC = (
    "Output a single JSON object whose keys are the parameter names listed above and "
    "whose values are numbers in [-1, 1]. Parameters you omit are treated as 0 "
    "(neutral). Do not write any prose, explanation or markdown outside the JSON object."
)

NON_SEMANTIC_OUTPUT_SPEC = (
    "Output a single JSON array of exactly 61 numbers in [-1, 1] and nothing else."
)

INSTRUCTION_TEMPLATE = (
    "Based on the above descriptions, please generate the facial expression "
    "parameters for Keyframe {ordinal}."
)


def ordinal_word(i: int) -> str:
    return ORDINALS[i - 1] if 1 <= i <= len(ORDINALS) else str(i)


@dataclass(frozen=True)
class SystemPrompt:
    overview: str
    parameter_explanations: tuple[tuple[str, str], ...]
    output_spec: str
    version: str = PROMPT_ASSET_VERSION

    def render(self) -> str:
        lines = [f"- {name}: {text}" for name, text in self.parameter_explanations]
        return SECTION_SEP.join([
            "System Overview:\n" + self.overview,
            "Parameter Explanation:\n" + "\n".join(lines),
            "Output Specification:\n" + self.output_spec,
        ])


@dataclass(frozen=True)
class TargetInstruction:
    keyframe_index: int
    text: str


@dataclass(frozen=True)
class FullPrompt:
    mode: str
    system: SystemPrompt | None
    script: Script
    instruction: TargetInstruction

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == SEMANTIC and self.system is None:
            raise MissingSystemPrompt("semantic mode requires a system prompt")
        if self.mode == NON_SEMANTIC and self.system is not None:
            raise ValueError("non_semantic prompts carry no system prompt")

    @property
    def user_text(self) -> str:
        """Script followed by the target instruction."""
        return render_script(self.script) + SECTION_SEP + self.instruction.text

    @property
    def system_text(self) -> str | None:
        return self.system.render() if self.system is not None else None

    @property
    def output_spec(self) -> str:
        return self.system.output_spec if self.system is not None else NON_SEMANTIC_OUTPUT_SPEC

    def render(self) -> str:
        if self.system is None:
            return self.user_text
        return self.system_text + SECTION_SEP + self.user_text

    def messages(self) -> list[dict]:
        msgs = []
        if self.system is not None:
            msgs.append({"role": "system", "content": self.system_text})
        msgs.append({"role": "user", "content": self.user_text})
        return msgs


@dataclass(frozen=True)
class FinetuneRecord:
    mode: str
    prompt_text: str
    completion_text: str
    system_text: str | None
    user_text: str

    def to_chat(self) -> dict:
        msgs = []
        if self.system_text is not None:
            msgs.append({"role": "system", "content": self.system_text})
        msgs.append({"role": "user", "content": self.user_text})
        msgs.append({"role": "assistant", "content": self.completion_text})
        return {"messages": msgs}


# -- scripts ---------------------------------------------------------------

_SECTION_RE = re.compile(
    r"^\s*(?:[-*•]+\s*)?(?:\*\*)?\s*"
    r"(background|emotion|keyframe\s+([A-Za-z]+|\d+))"
    r"\s*(?:\*\*)?\s*:\s*(?:\*\*)?\s*(.*)$",
    re.IGNORECASE,
)


def _keyframe_number(token: str) -> int:
    if token.isdigit():
        return int(token)
    try:
        return _ORDINAL_LOOKUP[token.lower()]
    except KeyError:
        raise MalformedSection(f"unrecognised keyframe label {token!r}") from None


def parse_script(source: str | bytes | dict) -> Script:
    """Parse a script from labeled text ("Background:", "Keyframe One:") or JSON."""
    if isinstance(source, dict):
        return Script.from_dict(source)
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    text = source.strip()
    if not text:
        raise NoKeyframes("empty script input")
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise MalformedSection(f"invalid script JSON: {exc}") from None
        return Script.from_dict(obj)
    return _parse_labeled(text)


def _parse_labeled(text: str) -> Script:
    sections: list[list] = []  # [kind, label, lines]
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _SECTION_RE.match(line)
        if m:
            head = m.group(1).lower()
            if head.startswith("keyframe"):
                sections.append(["keyframe", _keyframe_number(m.group(2)), [m.group(3).strip()]])
            else:
                sections.append([head, None, [m.group(3).strip()]])
        elif line.strip():
            if not sections:
                raise MalformedSection(f"line {lineno}: text before the first labeled section")
            sections[-1][2].append(line.strip())

    background = emotion = None
    descriptions = []
    for kind, label, lines in sections:
        body = " ".join(s for s in lines if s).strip().rstrip("*").strip()
        if kind == "keyframe":
            if not body:
                raise MalformedSection(f"Keyframe {label} has no description")
            descriptions.append(body)
        elif kind == "background":
            if background is not None:
                raise MalformedSection("duplicate Background section")
            background = body
        else:
            if emotion is not None:
                raise MalformedSection("duplicate Emotion section")
            emotion = body
    if not descriptions:
        raise NoKeyframes("script has no keyframe sections")
    specs = tuple(KeyframeSpec(i, d) for i, d in enumerate(descriptions, start=1))
    return Script(background or "", emotion or "", specs)


def render_script(s: Script) -> str:
    lines = [f"Background: {s.background}"]
    if s.emotion:
        lines.append(f"Emotion: {s.emotion}")
    for k in s.keyframes:
        lines.append(f"Keyframe {ordinal_word(k.index)}: {k.description}")
    return "\n".join(lines)


def extract_keyframes(s: Script) -> list[KeyframeSpec]:
    return list(s.keyframes)


# -- prompt pieces ---------------------------------------------------------

def build_target_instruction(i: int, n: int) -> TargetInstruction:
    if not 1 <= i <= n:
        raise IndexOutOfRange(f"keyframe index {i} outside 1..{n}")
    return TargetInstruction(i, INSTRUCTION_TEMPLATE.format(ordinal=ordinal_word(i)))


def build_system_prompt(reg: ChannelRegistry | None = None) -> SystemPrompt:
    reg = reg or registry()
    explanations = tuple((name, CHANNEL_EXPLANATIONS[name]) for name in reg.names)
    return SystemPrompt(SYSTEM_OVERVIEW, explanations, SEMANTIC_OUTPUT_SPEC)


def compose_prompt(system: SystemPrompt | None, script: Script,
                   instruction: TargetInstruction, mode: str) -> FullPrompt:
    if mode == SEMANTIC and system is None:
        raise MissingSystemPrompt("semantic mode requires a system prompt")
    if mode == NON_SEMANTIC:
        system = None
    return FullPrompt(mode, system, script, instruction)


def prompt_for_keyframe(script: Script, i: int, mode: str,
                        system: SystemPrompt | None = None) -> FullPrompt:
    if mode == SEMANTIC and system is None:
        system = build_system_prompt()
    return compose_prompt(system, script, build_target_instruction(i, len(script)), mode)


# -- fine-tune corpus ------------------------------------------------------

def render_completion(v: CoeffVector, mode: str) -> str:
    if mode == SEMANTIC:
        return json.dumps(to_semantic_map(v, omit_zeros=False))
    return json.dumps(list(v.values))


def export_finetune_records(records: Iterable[tuple[Script, Sequence[CoeffVector]]],
                            mode: str) -> list[FinetuneRecord]:
    """One record per (script, keyframe) pair."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    system = build_system_prompt() if mode == SEMANTIC else None
    out = []
    for n, (script, vectors) in enumerate(records):
        vectors = list(vectors)
        if len(vectors) != len(script):
            raise KeyframeCountMismatch(
                f"record {n}: script has {len(script)} keyframes but {len(vectors)} vectors were given"
            )
        for kf, vec in zip(extract_keyframes(script), vectors):
            prompt = compose_prompt(system, script, build_target_instruction(kf.index, len(script)), mode)
            out.append(FinetuneRecord(
                mode=mode,
                prompt_text=prompt.render(),
                completion_text=render_completion(vec, mode),
                system_text=prompt.system_text,
                user_text=prompt.user_text,
            ))
    return out


def write_finetune_jsonl(records: Iterable[FinetuneRecord], fh) -> int:
    count = 0
    for r in records:
        fh.write(json.dumps(r.to_chat(), ensure_ascii=False) + "\n")
        count += 1
    return count


__all__ = [
    "CHANNEL_EXPLANATIONS", "FinetuneRecord", "FullPrompt", "InvalidScript", "MODES",
    "NON_SEMANTIC", "SEMANTIC", "SystemPrompt", "TargetInstruction",
    "build_system_prompt", "build_target_instruction", "compose_prompt",
    "export_finetune_records", "extract_keyframes", "ordinal_word", "parse_script",
    "prompt_for_keyframe", "render_completion", "render_script", "write_finetune_jsonl",
]
