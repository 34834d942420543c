from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rustport.gateway import (
    BACKEND_ERROR_SENTINEL,
    TRUNCATED_SENTINEL,
    BackendConfigError,
    BackendSpec,
    FinishReason,
    GenerationError,
    GenerationParams,
    RawResponse,
    ScriptedBackend,
    TransportError,
    complete,
    extract_code,
    load_backends,
    wrap_in_fence,
)

PARAMS = GenerationParams(temperature=0.2, max_tokens=512)


class FlakyBackend:
    """Refuses the first `failures` sends, then succeeds; counts attempts."""

    def __init__(self, failures: int, retries: int):
        self.spec = BackendSpec(name="flaky", retries=retries, backoff_base_s=0.001)
        self.failures = failures
        self.attempts = 0

    def send(self, prompt, params, tag=None):
        self.attempts += 1
        if self.attempts <= self.failures:
            raise TransportError("connection refused")
        return RawResponse("ok", FinishReason.complete)


# ---------------------------------------------------------------------------
# complete()
# ---------------------------------------------------------------------------


def test_scripted_digest_lookup(scripted):
    scripted.digest("translate this", "```rust\nfn main() {}\n```")
    backend = ScriptedBackend(scripted.root)
    raw = complete(backend, "translate this", PARAMS)
    assert raw.finish_reason is FinishReason.complete
    assert "fn main() {}" in raw.text


def test_scripted_backend_is_pure(scripted):
    scripted.digest("p", "resp")
    backend = ScriptedBackend(scripted.root)
    first = complete(backend, "p", PARAMS)
    second = complete(backend, "p", PARAMS)
    assert first == second


def test_playlist_advances_per_tag(scripted):
    scripted.playlist("prog", ["one", "two"])
    backend = ScriptedBackend(scripted.root)
    assert complete(backend, "x", PARAMS, tag="prog").text == "one"
    assert complete(backend, "y", PARAMS, tag="prog").text == "two"
    # exhausted playlist degrades to a backend error
    assert complete(backend, "z", PARAMS, tag="prog").finish_reason is FinishReason.backend_error


def test_scripted_sentinels(scripted):
    scripted.playlist("p", [BACKEND_ERROR_SENTINEL, TRUNCATED_SENTINEL + "partial text"])
    backend = ScriptedBackend(scripted.root)
    assert complete(backend, "a", PARAMS, tag="p").finish_reason is FinishReason.backend_error
    second = complete(backend, "b", PARAMS, tag="p")
    assert second.finish_reason is FinishReason.length_truncated
    assert second.text == "partial text"


def test_two_refusals_then_success_with_three_retries():
    # fault-injection oracle: 2 failures + 1 success = 3 attempts total
    backend = FlakyBackend(failures=2, retries=3)
    raw = complete(backend, "p", PARAMS)
    assert raw.finish_reason is FinishReason.complete
    assert backend.attempts == 3


def test_retries_exhausted_degrades_to_backend_error():
    backend = FlakyBackend(failures=10, retries=2)
    raw = complete(backend, "p", PARAMS)
    assert raw.finish_reason is FinishReason.backend_error
    assert backend.attempts == 3  # retries + 1, never more


def test_context_limit_precheck_skips_network():
    backend = FlakyBackend(failures=0, retries=0)
    backend.spec = BackendSpec(name="small", retries=0, context_limit=10)
    raw = complete(backend, "x" * 11, PARAMS)
    assert raw.finish_reason is FinishReason.backend_error
    assert backend.attempts == 0


def test_generation_params_bounds():
    with pytest.raises(ValueError):
        GenerationParams(temperature=2.5)
    with pytest.raises(ValueError):
        GenerationParams(temperature=0.2, top_p=0.0)
    with pytest.raises(ValueError):
        BackendSpec(name="x", rate_limit=0)


# ---------------------------------------------------------------------------
# extract_code()
# ---------------------------------------------------------------------------


def _resp(text: str, finish=FinishReason.complete) -> RawResponse:
    return RawResponse(text, finish)


def test_extract_exact_fence():
    assert extract_code(_resp("```rust\nfn main(){}\n```")) == "fn main(){}"


def test_extract_prose_only_is_generation_error():
    with pytest.raises(GenerationError):
        extract_code(_resp("I am sorry, here is a description of the program instead."))


def test_extract_takes_first_of_two_blocks():
    text = "```rust\nfirst\n```\nsome prose\n```rust\nsecond\n```"
    assert extract_code(_resp(text)) == "first"


def test_extract_unterminated_fence_is_generation_error():
    with pytest.raises(GenerationError):
        extract_code(_resp("```rust\nfn main(){}"))


def test_extract_untagged_fallback():
    assert extract_code(_resp("prose\n```\ncode here\n```")) == "code here"


def test_extract_other_language_fence_is_generation_error():
    with pytest.raises(GenerationError):
        extract_code(_resp("```python\nprint('no')\n```"))


def test_extract_prefers_rust_fence_over_untagged():
    text = "```\nnot this\n```\n```rust\nthis\n```"
    assert extract_code(_resp(text)) == "this"


def test_truncated_response_is_generation_error():
    with pytest.raises(GenerationError):
        extract_code(_resp("```rust\nfn main(){}\n```", FinishReason.length_truncated))
    with pytest.raises(GenerationError):
        extract_code(_resp("", FinishReason.backend_error))


@settings(max_examples=200)
@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=300))
def test_fence_round_trip(code):
    if "```" in code:
        return
    assert extract_code(_resp(wrap_in_fence(code))) == code


# ---------------------------------------------------------------------------
# backend config loading
# ---------------------------------------------------------------------------


def test_load_backends_scripted(tmp_path, scripted):
    scripted.digest("q", "a")
    cfg = tmp_path / "backends.json"
    cfg.write_text(json.dumps({
        "backends": [{"kind": "scripted", "name": "replay", "dir": str(scripted.root)}]
    }))
    backends = load_backends(cfg)
    assert complete(backends["replay"], "q", PARAMS).text == "a"


def test_load_backends_http_requires_auth_env(tmp_path, monkeypatch):
    monkeypatch.delenv("MISSING_KEY_VAR", raising=False)
    cfg = tmp_path / "backends.json"
    cfg.write_text(json.dumps({
        "backends": [{
            "kind": "http", "name": "api", "endpoint": "https://example.invalid/v1",
            "model": "m", "auth_env": "MISSING_KEY_VAR",
        }]
    }))
    with pytest.raises(BackendConfigError):
        load_backends(cfg)


def test_load_backends_rejects_unknown_kind(tmp_path):
    cfg = tmp_path / "backends.json"
    cfg.write_text(json.dumps({"backends": [{"kind": "carrier-pigeon", "name": "x"}]}))
    with pytest.raises(BackendConfigError):
        load_backends(cfg)


def test_load_backends_rejects_empty(tmp_path):
    cfg = tmp_path / "backends.json"
    cfg.write_text(json.dumps({"backends": []}))
    with pytest.raises(BackendConfigError):
        load_backends(cfg)
