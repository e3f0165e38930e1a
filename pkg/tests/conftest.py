import json
import re
import threading

import httpx
import numpy as np
import pytest

from keyface.core import NUM_CHANNELS, KeyframeSpec, Script, registry
from keyface.gateway import ChatClient, EndpointConfig

ORDINAL_RE = re.compile(r"for Keyframe (\w+)\.")
WORDS = {"One": 1, "Two": 2, "Three": 3, "Four": 4, "Five": 5, "Six": 6, "Seven": 7,
         "Eight": 8, "Nine": 9, "Ten": 10}


def make_script(n, background="A quiet office late at night.", emotion="tired"):
    kfs = tuple(KeyframeSpec(i, f"Description of moment {i}: brows {'raise' if i % 2 else 'drop'}.")
                for i in range(1, n + 1))
    return Script(background, emotion, kfs)


def chat_body(content):
    return {"choices": [{"index": 0, "message": {"role": "assistant", "content": content}}]}


class MockLLM:
    """Counting chat-completions handler for httpx.MockTransport.

    ``responder`` maps the decoded request payload to either a content string,
    an ``httpx.Response`` or an exception instance to raise.
    """

    def __init__(self, responder):
        self.responder = responder
        self.requests = []
        self._lock = threading.Lock()

    @property
    def calls(self):
        return len(self.requests)

    def __call__(self, request: httpx.Request):
        payload = json.loads(request.content)
        with self._lock:
            self.requests.append(payload)
        out = self.responder(payload)
        if isinstance(out, Exception):
            raise out
        if isinstance(out, httpx.Response):
            return out
        return httpx.Response(200, json=chat_body(out))

    def client(self, **cfg):
        cfg.setdefault("backoff", 0.0)
        config = EndpointConfig(base_url="http://mock.local/v1", api_key="k", **cfg)
        return ChatClient(config, transport=httpx.MockTransport(self), sleep=lambda s: None), config


def sequence_responder(items):
    it = iter(items)
    return lambda payload: next(it)


def keyframe_index(payload):
    user = [m for m in payload["messages"] if m["role"] == "user"][0]["content"]
    word = ORDINAL_RE.search(user).group(1)
    return WORDS.get(word) or int(word)


def indexed_semantic(payload):
    """Deterministic semantic reply keyed on the requested keyframe."""
    i = keyframe_index(payload)
    return json.dumps({"JawOpen": round(0.1 * i, 3), "BrowInnerUp": -0.05 * i})


def indexed_dense(payload):
    i = keyframe_index(payload)
    vals = [0.0] * NUM_CHANNELS
    vals[i] = 0.5
    return "Here you go: " + json.dumps(vals)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def reg():
    return registry()


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS = []


def record_acceptance(name, passed, detail):
    line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
