"""keyface: script-driven ARKit facial keyframe generation with LLMs."""
from .core import (
    NUM_CHANNELS,
    REGISTRY_VERSION,
    CoeffVector,
    KeyframeSpec,
    MotionKeyframeSet,
    Script,
    from_semantic_map,
    registry,
    to_semantic_map,
    validate_coeffs,
)
from .prompts import NON_SEMANTIC, SEMANTIC, compose_prompt, parse_script, prompt_for_keyframe

__version__ = "0.1.0"

__all__ = [
    "NUM_CHANNELS", "REGISTRY_VERSION", "CoeffVector", "KeyframeSpec", "MotionKeyframeSet",
    "Script", "from_semantic_map", "registry", "to_semantic_map", "validate_coeffs",
    "NON_SEMANTIC", "SEMANTIC", "compose_prompt", "parse_script", "prompt_for_keyframe",
]
