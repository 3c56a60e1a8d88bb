"""Tests for the HTTP, scripted and fault-injecting backends"""

import base64
import json

import httpx
import pytest

from memory_vqa.backend_class import BackendRequest, DecodingParams, DecodingStrategy
from memory_vqa.errors import ConfigError, MockMissError, RunError
from memory_vqa.http_backend import HttpBackend
from memory_vqa.prompting import PromptTask, render_prompt
from memory_vqa.scripted_backend import (
    ChaosBackend,
    MockScript,
    ScriptedBackend,
    mock_from_annotations,
    question_key,
)
from memory_vqa.testing.testing_shr import PLACEHOLDER_PNG

FRAME = ("seq_1", "frame080")
QUESTION = "What is the state of prograsp_forceps?"
NO_WAIT = {"backoff_seconds": 0.0, "backoff_max_seconds": 0.0}


def _request(task=PromptTask.DIRECT_MEMORY, params=None, request_id="s000000-dm"):
    return BackendRequest(
        request_id=request_id,
        image_bytes=PLACEHOLDER_PNG,
        media_type="image/png",
        prompt=render_prompt(task, question=QUESTION).rendered_text
        if task is not PromptTask.INDIRECT_MEMORY
        else render_prompt(task).rendered_text,
        params=params or DecodingParams.greedy(12),
        task=task,
        frame=FRAME,
        question=QUESTION,
    )


def _completion(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def _backend(handler, **kwargs):
    return HttpBackend(
        "http://model.test/v1/chat/completions",
        model="surgical-vlm",
        transport=httpx.MockTransport(handler),
        **{**NO_WAIT, **kwargs},
    )


def test_http_payload_and_response():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=_completion("[Idle, Tissue Manipulation]"))

    backend = _backend(handler, api_key="")
    response = backend.complete(_request())

    assert response.text == "[Idle, Tissue Manipulation]"
    assert response.attempts == 1
    assert response.backend_id == "http"

    (payload,) = seen
    assert payload["model"] == "surgical-vlm"
    assert payload["max_tokens"] == 12
    assert payload["temperature"] == 0.0
    assert "use_beam_search" not in payload
    image_part, text_part = payload["messages"][0]["content"]
    b64 = base64.b64encode(PLACEHOLDER_PNG).decode("ascii")
    assert image_part["image_url"]["url"] == f"data:image/png;base64,{b64}"
    assert text_part["text"].startswith("<|user|>\n<image>\n" + QUESTION)


def test_beam_search_is_sent_as_extension():
    seen = []

    def handler(request):
        seen.append(json.loads(request.content))
        return httpx.Response(200, json=_completion(""))

    backend = _backend(handler)
    response = backend.complete(
        _request(PromptTask.INDIRECT_MEMORY, DecodingParams.beam(160, 3), "fseq_1/frame080-im")
    )

    assert response.text == ""
    assert seen[0]["use_beam_search"] is True
    assert seen[0]["best_of"] == 3
    assert seen[0]["max_tokens"] == 160


def test_list_content_is_joined():
    def handler(request):
        content = [{"type": "text", "text": "[Idle, "}, {"type": "text", "text": "Cutting]"}]
        return httpx.Response(200, json=_completion(content))

    assert _backend(handler).complete(_request()).text == "[Idle, Cutting]"


def test_server_error_is_retried():
    statuses = iter([503, 429, 200])

    def handler(request):
        status = next(statuses)
        if status != 200:
            return httpx.Response(status)
        return httpx.Response(200, json=_completion("Idle"))

    response = _backend(handler).complete(_request())

    assert response.text == "Idle"
    assert response.attempts == 3


def test_retries_exhausted_raise_run_error():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(500)

    with pytest.raises(RunError, match="after 3 attempts"):
        _backend(handler, max_attempts=3).complete(_request())
    assert len(calls) == 3


def test_client_error_is_a_config_error_without_retry():
    calls = []

    def handler(request):
        calls.append(request)
        return httpx.Response(400, text="bad model")

    with pytest.raises(ConfigError, match="400"):
        _backend(handler).complete(_request())
    assert len(calls) == 1


def test_timeout_is_retried():
    outcomes = iter(["timeout", "ok"])

    def handler(request):
        if next(outcomes) == "timeout":
            raise httpx.ReadTimeout("slow", request=request)
        return httpx.Response(200, json=_completion("Idle"))

    response = _backend(handler).complete(_request())
    assert response.attempts == 2


def test_unreadable_payload_is_retried_then_fails():
    def handler(request):
        return httpx.Response(200, json={"unexpected": True})

    with pytest.raises(RunError):
        _backend(handler, max_attempts=2).complete(_request())


def test_bearer_token_header(monkeypatch):
    headers = []

    def handler(request):
        headers.append(request.headers.get("Authorization"))
        return httpx.Response(200, json=_completion("Idle"))

    _backend(handler, api_key="secret").complete(_request())
    monkeypatch.setenv("MEMORY_VQA_API_KEY", "from-env")
    _backend(handler).complete(_request())
    monkeypatch.delenv("MEMORY_VQA_API_KEY")
    _backend(handler).complete(_request())

    assert headers == ["Bearer secret", "Bearer from-env", None]


def test_endpoint_is_required():
    with pytest.raises(ConfigError):
        HttpBackend("")


def test_decoding_params_validation():
    with pytest.raises(ConfigError):
        DecodingParams.greedy(0)
    with pytest.raises(ConfigError):
        DecodingParams(max_new_tokens=16, beam_width=3)
    with pytest.raises(ConfigError):
        DecodingParams.beam(160, 0)
    assert DecodingParams.beam(160, 3).strategy is DecodingStrategy.BEAM
    assert DecodingParams.beam(160, 3).to_dict() == {
        "max_new_tokens": 160,
        "strategy": "beam",
        "beam_width": 3,
    }


def test_request_needs_an_image():
    with pytest.raises(ValueError):
        BackendRequest("r", b"", "image/png", "p", DecodingParams.greedy(1), PromptTask.VANILLA_VQA)


def _script():
    key = question_key(FRAME, QUESTION)
    return MockScript(
        dm={key: "[Idle, Tissue Manipulation]"},
        im={"seq_1/frame080": "Where is prograsp_forceps located? [left-top]"},
        answers={key: "Tissue Manipulation"},
    )


def test_scripted_backend_replays_script():
    backend = ScriptedBackend(_script())

    assert backend.complete(_request()).text == "[Idle, Tissue Manipulation]"
    assert backend.complete(_request(PromptTask.MEMORY_VQA)).text == "Tissue Manipulation"
    assert backend.complete(_request(PromptTask.INDIRECT_MEMORY)).text.startswith("Where is")
    assert backend.calls[PromptTask.DIRECT_MEMORY] == 1
    assert backend.calls[PromptTask.INDIRECT_MEMORY] == 1


def test_scripted_backend_miss_raises():
    backend = ScriptedBackend(MockScript())
    with pytest.raises(MockMissError):
        backend.complete(_request())


def test_scripted_latency_is_reported():
    response = ScriptedBackend(_script(), latency_ms=50).complete(_request())
    assert response.latency_ms >= 50


def test_script_json_round_trip(tmp_path):
    path = tmp_path / "mock.json"
    _script().to_json(path)
    assert MockScript.from_json(path) == _script()


def test_oracle_backend_serves_annotations(endovis_oracle):
    backend = mock_from_annotations(endovis_oracle.test_store, endovis_oracle.test_dm)
    sample = endovis_oracle.test[0]
    request = BackendRequest(
        request_id="s000000-dm",
        image_bytes=PLACEHOLDER_PNG,
        media_type="image/png",
        prompt="p",
        params=DecodingParams.greedy(12),
        task=PromptTask.DIRECT_MEMORY,
        frame=sample.frame_key,
        question=sample.question,
    )
    assert backend.complete(request).text == endovis_oracle.test_dm.hints[sample.key].serialize()


def test_chaos_backend_faults_exhaust_retries():
    backend = ChaosBackend(_script(), malformed_rate=0.0, fault_rate=1.0, max_attempts=2, **NO_WAIT)
    with pytest.raises(RunError):
        backend.complete(_request())
    assert backend.faults == 2


def test_chaos_backend_corrupts_memory_lines():
    backend = ChaosBackend(_script(), malformed_rate=1.0, fault_rate=0.0)

    text = backend.complete(_request()).text
    answer = backend.complete(_request(PromptTask.MEMORY_VQA)).text

    assert "[" not in text
    assert answer == "Tissue Manipulation"
    assert backend.corrupted_lines == 1


def test_chaos_injection_is_reproducible():
    def run(seed):
        backend = ChaosBackend(_script(), malformed_rate=0.5, fault_rate=0.3, seed=seed, **NO_WAIT)
        out = []
        for i in range(50):
            try:
                out.append(backend.complete(_request(request_id=f"s{i:06d}-dm")).text)
            except RunError:
                out.append(None)
        return out

    assert run(1) == run(1)
