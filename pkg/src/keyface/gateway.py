"""OpenAI-compatible chat-completions client and model-output parsing."""
from __future__ import annotations

import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Mapping

import httpx

from .core import NUM_CHANNELS, CoeffVector, from_semantic_map, registry, validate_coeffs
from .errors import (
    AuthRejected,
    CoeffError,
    EmptyResponse,
    OutputWrongDimension,
    RateLimited,
    Transport,
    UnknownChannel,
    Unparseable,
)
from .prompts import SEMANTIC, FullPrompt

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

ENV_BASE = "KEYFACE_API_BASE"
ENV_KEY = "KEYFACE_API_KEY"
ENV_MODEL = "KEYFACE_MODEL"
CONFIG_FILENAME = "keyface.toml"

REPAIR_TAGS = ("code_fence_strip", "json_extract", "clamp", "fill_missing")


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    api_key: str = field(default="", repr=False)
    model_name: str = "default"
    timeout: float = 60.0
    max_retries: int = 2
    temperature: float = 0.0
    backoff: float = 0.5

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.backoff < 0:
            raise ValueError("backoff must be >= 0")


def load_config(path: str | os.PathLike | None = None, env: Mapping[str, str] | None = None,
                section: str = "endpoint", **overrides) -> EndpointConfig:
    """Resolve endpoint settings: overrides > env vars > config file > defaults.

    ``section`` picks a table from the TOML file; a stage-specific table such as
    ``[standardize]`` is layered over ``[endpoint]``.
    """
    env = os.environ if env is None else env
    values: dict = {}
    if path is None and Path(CONFIG_FILENAME).is_file():
        path = CONFIG_FILENAME
    if path is not None:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        values.update(doc.get("endpoint", {}))
        if section != "endpoint":
            values.update(doc.get(section, {}))
    for var, key in ((ENV_BASE, "base_url"), (ENV_KEY, "api_key"), (ENV_MODEL, "model_name")):
        if env.get(var):
            values[key] = env[var]
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name for f in fields(EndpointConfig)}
    return EndpointConfig(**{k: v for k, v in values.items() if k in known})


class _RetryBudget:
    """Retries shared by every request of one logical invocation."""

    def __init__(self, retries: int):
        self.remaining = retries

    def take(self) -> bool:
        if self.remaining <= 0:
            return False
        self.remaining -= 1
        return True


class ChatClient:
    """Thin synchronous client for ``POST <base_url>/chat/completions``.

    Safe to share between threads; retry state lives per call.
    """

    def __init__(self, cfg: EndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep=time.sleep):
        self.cfg = cfg
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        self._http = httpx.Client(
            base_url=cfg.base_url.rstrip("/") + "/",
            headers=headers,
            timeout=cfg.timeout,
            transport=transport,
        )

    def close(self):
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def chat(self, messages: list[dict], budget: _RetryBudget | None = None, **extra) -> str:
        if budget is None:
            budget = _RetryBudget(self.cfg.max_retries)
        payload = {
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
            **extra,
        }
        attempt = 0
        while True:
            try:
                resp = self._http.post("chat/completions", json=payload)
            except httpx.TransportError as exc:
                err: Exception = Transport(f"{type(exc).__name__}: {exc}")
            else:
                if resp.status_code in (401, 403):
                    raise AuthRejected(f"endpoint rejected credentials (HTTP {resp.status_code})")
                if resp.status_code == 429:
                    err = RateLimited("rate limited (HTTP 429)")
                elif resp.status_code >= 500:
                    err = Transport(f"server error (HTTP {resp.status_code})")
                elif resp.status_code >= 400:
                    raise Transport(f"request failed (HTTP {resp.status_code}): {resp.text[:200]}")
                else:
                    return _first_choice(resp)
            if not budget.take():
                raise err
            delay = self.cfg.backoff * (2 ** attempt)
            attempt += 1
            log.warning("%s; retrying in %.2fs", err, delay)
            if delay:
                self._sleep(delay)


def _first_choice(resp: httpx.Response) -> str:
    try:
        body = resp.json()
        content = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise EmptyResponse("response carries no choices[0].message.content") from None
    if not isinstance(content, str) or not content.strip():
        raise EmptyResponse("model returned empty content")
    return content


def _client_for(cfg: EndpointConfig, client: ChatClient | None) -> tuple[ChatClient, bool]:
    if client is not None:
        return client, False
    return ChatClient(cfg), True


def complete(prompt: FullPrompt, cfg: EndpointConfig, client: ChatClient | None = None) -> str:
    """Send one prompt and return the first choice's text."""
    c, owned = _client_for(cfg, client)
    try:
        return c.chat(prompt.messages())
    finally:
        if owned:
            c.close()


# -- parsing ---------------------------------------------------------------

@dataclass
class ParseReport:
    repairs_applied: list[str] = field(default_factory=list)
    ok: bool = False

    def to_dict(self) -> dict:
        return {"repairs_applied": list(self.repairs_applied), "ok": self.ok}


_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?(.*?)```", re.DOTALL)
_decoder = json.JSONDecoder(parse_constant=lambda name: _reject_constant(name))


def _reject_constant(name):
    raise ValueError(f"non-finite constant {name}")


def strip_code_fences(text: str) -> tuple[str, bool]:
    m = _FENCE_RE.search(text)
    if m:
        return m.group(1), True
    return text, False


def find_json(text: str, kind: type) -> tuple[object, bool] | None:
    """First decodable JSON value of ``kind`` (dict or list) in ``text``.

    Returns ``(value, extracted)`` where ``extracted`` says there was other text
    around it.
    """
    opener = "{" if kind is dict else "["
    stripped = text.strip()
    pos = text.find(opener)
    while pos != -1:
        try:
            value, end = _decoder.raw_decode(text, pos)
        except (ValueError, RecursionError):
            pass
        else:
            if isinstance(value, kind):
                extracted = text[pos:end].strip() != stripped
                return value, extracted
        pos = text.find(opener, pos + 1)
    return None


def _finite_number(x) -> bool:
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        return False
    try:
        return math.isfinite(x)
    except OverflowError:
        return False


def parse_generation(raw: str | bytes, mode: str) -> tuple[CoeffVector, ParseReport]:
    """Turn model output into a coefficient vector, logging every repair.

    Repairs run in a fixed order: fence strip, JSON extraction, clamp,
    fill-missing. Anything that cannot be repaired raises ``Unparseable``.
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    report = ParseReport()
    text, fenced = strip_code_fences(raw)
    if fenced:
        report.repairs_applied.append("code_fence_strip")

    if mode == SEMANTIC:
        found = find_json(text, dict)
        if found is None:
            raise Unparseable("no JSON object found in model output")
        obj, extracted = found
        if extracted:
            report.repairs_applied.append("json_extract")
        reg = registry()
        for k, v in obj.items():
            if k not in reg:
                raise Unparseable(f"unknown channel {k!r} in model output")
            if not _finite_number(v):
                raise Unparseable(f"channel {k!r} has a non-numeric value {v!r}")
        clamped = any(abs(v) > 1.0 for v in obj.values())
        try:
            vec = from_semantic_map(obj, policy="clamp")
        except (CoeffError, UnknownChannel) as exc:
            raise Unparseable(str(exc)) from None
        if clamped:
            report.repairs_applied.append("clamp")
        if len(obj) < NUM_CHANNELS:
            report.repairs_applied.append("fill_missing")
    else:
        found = find_json(text, list)
        if found is None:
            raise Unparseable("no JSON array found in model output")
        arr, extracted = found
        if extracted:
            report.repairs_applied.append("json_extract")
        if not all(_finite_number(v) for v in arr):
            raise Unparseable("array contains non-numeric or non-finite entries")
        if len(arr) != NUM_CHANNELS:
            raise OutputWrongDimension(f"expected {NUM_CHANNELS} numbers, got {len(arr)}")
        clamped = any(abs(v) > 1.0 for v in arr)
        vec = validate_coeffs(arr, policy="clamp")
        if clamped:
            report.repairs_applied.append("clamp")
    report.ok = True
    return vec, report


def format_reminder(prompt: FullPrompt) -> str:
    return "Your previous reply could not be parsed. " + prompt.output_spec


def generate_keyframe(prompt: FullPrompt, cfg: EndpointConfig, client: ChatClient | None = None,
                      with_report: bool = False):
    """complete -> parse; re-asks once with a format reminder when unparseable.

    All requests of one call share ``cfg.max_retries``, so at most
    ``max_retries + 2`` requests are sent.
    """
    c, owned = _client_for(cfg, client)
    budget = _RetryBudget(cfg.max_retries)
    try:
        messages = prompt.messages()
        raw = c.chat(messages, budget)
        try:
            vec, report = parse_generation(raw, prompt.mode)
        except Unparseable as exc:
            log.info("unparseable output (%s); re-asking once", exc)
            messages = messages + [
                {"role": "assistant", "content": raw},
                {"role": "user", "content": format_reminder(prompt)},
            ]
            raw = c.chat(messages, budget)
            vec, report = parse_generation(raw, prompt.mode)
            report.repairs_applied.insert(0, "reask")
    finally:
        if owned:
            c.close()
    return (vec, report) if with_report else vec


def with_overrides(cfg: EndpointConfig, **kw) -> EndpointConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
