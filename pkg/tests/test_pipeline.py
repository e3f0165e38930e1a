import json
import random
import time

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import MockLLM, indexed_dense, indexed_semantic, keyframe_index, make_script, sequence_responder
from keyface.core import CoeffVector, KeyframeSpec, Script
from keyface.errors import Aborted, InvalidDraft, InvalidEdit, KeyframeGenerationError, Transport
from keyface.pipeline import GenerationRun, confirm_script, generate_sequence, save_run, standardize
from keyface.prompts import NON_SEMANTIC, SEMANTIC, prompt_for_keyframe

FORCED_SMILE_JSON = json.dumps({
    "background": "The subject is ill but does not want their family to worry.",
    "emotion": "forced cheerfulness",
    "keyframes": [
        {"index": 1, "description": "Eyes appear slightly fatigued; lips remain flat."},
        {"index": 2, "description": "Mouth corners lift into a forced smile."},
    ],
})


# -- standardize ------------------------------------------------------------------

def test_standardize_free_text():
    mock = MockLLM(lambda p: "```json\n" + FORCED_SMILE_JSON + "\n```")
    client, cfg = mock.client()
    draft = standardize("a forced smile hiding illness", cfg, client)
    assert len(draft) == 2
    assert mock.calls == 1
    assert "a forced smile hiding illness" in mock.requests[0]["messages"][-1]["content"]


def test_standardize_background_only_is_invalid():
    mock = MockLLM(lambda p: json.dumps({"background": "just context", "keyframes": []}))
    client, cfg = mock.client()
    with pytest.raises(InvalidDraft):
        standardize("something sad", cfg, client)
    assert mock.calls == 2


def test_standardize_reask_recovers():
    mock = MockLLM(sequence_responder(["I cannot do that.", FORCED_SMILE_JSON]))
    client, cfg = mock.client()
    assert len(standardize("something", cfg, client)) == 2
    assert mock.calls == 2


def test_standardize_bypass_structured_input():
    s = make_script(3)
    mock = MockLLM(lambda p: pytest.fail("no request expected"))
    client, cfg = mock.client()
    assert standardize(s.to_json(), cfg, client) == s
    assert mock.calls == 0


# -- confirm ----------------------------------------------------------------------

def test_confirm_accept_edit_reject():
    draft = make_script(2)
    assert confirm_script(draft, "accept") is draft
    repl = make_script(3)
    assert confirm_script(draft, "edit", repl) == repl
    assert confirm_script(draft, "edit", repl.to_json()) == repl
    assert confirm_script(draft, "edit", repl.to_dict()) == repl
    with pytest.raises(Aborted):
        confirm_script(draft, "reject")


def test_confirm_invalid_edit():
    draft = make_script(2)
    with pytest.raises(InvalidEdit):
        confirm_script(draft, "edit", {"background": "b", "keyframes": []})
    with pytest.raises(InvalidEdit):
        confirm_script(draft, "edit", None)
    with pytest.raises(InvalidEdit):
        confirm_script(draft, "edit", "Background: only")


# -- generate_sequence ---------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("mode", [SEMANTIC, NON_SEMANTIC])
def test_call_count_and_order(n, mode):
    mock = MockLLM(indexed_semantic if mode == SEMANTIC else indexed_dense)
    client, cfg = mock.client()
    run = generate_sequence(make_script(n), mode, cfg, client)
    assert mock.calls == n
    assert len(run.outputs) == n
    if mode == SEMANTIC:
        assert [f["JawOpen"] for f in run.outputs.frames] == [round(0.1 * i, 3) for i in range(1, n + 1)]
    else:
        assert [f.values[i] for i, f in enumerate(run.outputs.frames, 1)] == [0.5] * n


def test_neutral_maps():
    mock = MockLLM(lambda p: "{}")
    client, cfg = mock.client()
    run = generate_sequence(make_script(2), SEMANTIC, cfg, client)
    assert run.outputs.frames == (CoeffVector.neutral(), CoeffVector.neutral())
    assert [r.repairs_applied for r in run.per_keyframe_reports] == [["fill_missing"]] * 2


def test_prompts_match_independent_regeneration():
    mock = MockLLM(indexed_semantic)
    client, cfg = mock.client()
    s = make_script(4)
    generate_sequence(s, SEMANTIC, cfg, client)
    for i, req in enumerate(mock.requests, 1):
        assert req["messages"] == prompt_for_keyframe(s, i, SEMANTIC).messages()


def test_concurrent_matches_sequential_under_jitter():
    def jittery(payload):
        time.sleep(random.uniform(0, 0.02))
        return indexed_semantic(payload)

    s = make_script(5)
    seq_mock, con_mock = MockLLM(indexed_semantic), MockLLM(jittery)
    c1, cfg = seq_mock.client()
    c2, _ = con_mock.client()
    seq = generate_sequence(s, SEMANTIC, cfg, c1)
    con = generate_sequence(s, SEMANTIC, cfg, c2, concurrent=True)
    assert seq.outputs == con.outputs
    assert seq.to_dict() == con.to_dict()
    assert con_mock.calls == 5


@pytest.mark.parametrize("concurrent", [False, True])
def test_failure_names_keyframe(concurrent):
    def responder(payload):
        if keyframe_index(payload) == 2:
            return httpx.Response(500)
        return indexed_semantic(payload)

    mock = MockLLM(responder)
    client, cfg = mock.client(max_retries=0)
    with pytest.raises(KeyframeGenerationError) as err:
        generate_sequence(make_script(3), SEMANTIC, cfg, client, concurrent=concurrent)
    assert err.value.index == 2
    assert "keyframe 2" in str(err.value).lower()
    assert isinstance(err.value.cause, Transport)


def test_unknown_mode():
    with pytest.raises(ValueError):
        generate_sequence(make_script(1), "bogus", None)


def test_run_serialization(tmp_path):
    mock = MockLLM(indexed_semantic)
    client, cfg = mock.client(model_name="mock-model")
    run = generate_sequence(make_script(2), SEMANTIC, cfg, client)
    path = tmp_path / "kf.json"
    save_run(run, path)
    obj = json.loads(path.read_text())
    assert set(obj) == {"script", "mode", "model_name", "frames", "reports"}
    assert obj["model_name"] == "mock-model"
    assert all(len(f) == 61 for f in obj["frames"])
    back = GenerationRun.from_dict(obj)
    assert back.outputs == run.outputs and back.script == run.script


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=1, max_value=8), st.sampled_from([SEMANTIC, NON_SEMANTIC]))
def test_call_count_law(n, mode):
    mock = MockLLM(indexed_semantic if mode == SEMANTIC else indexed_dense)
    client, cfg = mock.client()
    run = generate_sequence(make_script(n), mode, cfg, client, concurrent=n % 2 == 0)
    assert mock.calls == n == len(run.outputs) == len(run.per_keyframe_reports)
