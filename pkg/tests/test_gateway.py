"""Provider plumbing: scripted playback, retries, audit, proposal parsing."""
from __future__ import annotations

import json

import pytest

from intentloop.errors import (
    PathEscape,
    ProviderUnavailable,
    ResponseTooLarge,
    UnparseableResponse,
)
from intentloop.gateway import (
    AgentGateway,
    AgentRole,
    AuditLog,
    MockProvider,
    ModificationProposal,
    context_key,
    propose_modification,
    render_template,
    validate_edit_path,
)

from conftest import proposal_json


def test_mock_keyed_playback():
    prompt = "tell me about run three"
    provider = MockProvider([
        {"key": context_key(prompt), "role": "*", "response": "keyed"},
        {"key": "*", "role": "*", "response": "fallback"},
    ])
    assert provider.complete("semantic_parser", prompt) == "keyed"
    assert provider.complete("semantic_parser", "anything else") == "fallback"


def test_mock_unscripted_raises_nontransient():
    provider = MockProvider([])
    with pytest.raises(ProviderUnavailable) as err:
        provider.complete("semantic_parser", "hello")
    assert err.value.transient is False


def test_mock_role_filter():
    provider = MockProvider([
        {"key": "*", "role": "task_initializer", "response": "scaffold"},
        {"key": "*", "role": "*", "response": "anything"},
    ])
    assert provider.complete("semantic_parser", "x") == "anything"
    assert provider.complete("task_initializer", "x") == "scaffold"


def test_mock_records_consumed_in_order():
    provider = MockProvider.from_responses(["one", "two", "three"])
    got = [provider.complete("autonomous_developer", "same prompt")
           for _ in range(3)]
    assert got == ["one", "two", "three"]


def test_mock_skip_fast_forwards():
    provider = MockProvider.from_responses(["one", "two", "three"])
    provider.skip(2)
    assert provider.complete("autonomous_developer", "p") == "three"


class FlakyProvider:
    """Fails transiently n times, then answers."""

    def __init__(self, failures: int):
        self.failures = failures
        self.calls = 0

    def complete(self, role, context):
        self.calls += 1
        if self.calls <= self.failures:
            raise ProviderUnavailable("blip", transient=True)
        return f"ok on attempt {self.calls}"


def test_gateway_retries_transient_then_succeeds():
    gw = AgentGateway(FlakyProvider(failures=1), backoff_base=0.0)
    assert gw.complete(AgentRole.SEMANTIC_PARSER, "x") == "ok on attempt 2"
    # audit holds the failed attempt and the success
    assert len(gw.audit) == 2
    assert gw.audit.entries[0].error is not None
    assert gw.audit.entries[0].attempt == 1
    assert gw.audit.entries[1].attempt == 2


def test_gateway_gives_up_after_max_attempts():
    provider = FlakyProvider(failures=99)
    gw = AgentGateway(provider, backoff_base=0.0, max_attempts=3)
    with pytest.raises(ProviderUnavailable):
        gw.complete(AgentRole.SEMANTIC_PARSER, "x")
    assert provider.calls == 3
    assert len(gw.audit) == 3


def test_gateway_nontransient_fails_fast():
    gw = AgentGateway(MockProvider([]), backoff_base=0.0)
    with pytest.raises(ProviderUnavailable):
        gw.complete(AgentRole.SEMANTIC_PARSER, "x")
    assert len(gw.audit) == 1


def test_gateway_response_cap():
    gw = AgentGateway(MockProvider.from_responses(["y" * 100]), response_cap=10)
    with pytest.raises(ResponseTooLarge):
        gw.complete(AgentRole.SEMANTIC_PARSER, "x")
    assert gw.audit.entries[-1].error == "response_too_large"


def test_audit_log_persists_ndjson(tmp_path):
    path = tmp_path / "audit.ndjson"
    gw = AgentGateway(MockProvider.from_responses(["a", "b"]),
                      audit=AuditLog(path))
    gw.complete(AgentRole.SEMANTIC_PARSER, "one")
    gw.complete(AgentRole.SEMANTIC_PARSER, "two")
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert [l["response"] for l in lines] == ["a", "b"]
    assert all(l["role"] == "semantic_parser" for l in lines)


def test_render_template_substitutes():
    text = render_template("semantic_parser", request_text="walk the dog",
                           correction="")
    assert "walk the dog" in text
    dev = render_template("autonomous_developer", spec_json="{}",
                          results_table="(no runs yet)", correction="")
    assert "(no runs yet)" in dev


def test_validate_edit_path():
    assert validate_edit_path("model/train.py") == "model/train.py"
    for bad in ("/etc/passwd", "../up", "a/../../b", ""):
        with pytest.raises(PathEscape):
            validate_edit_path(bad)


def test_proposal_is_empty():
    assert ModificationProposal(summary="s", rationale="r").is_empty()
    assert not ModificationProposal(summary="s", rationale="r",
                                    config_updates={"lr": 0.1}).is_empty()


def _dev_gateway(responses):
    return AgentGateway(MockProvider.from_responses(responses))


def test_propose_modification_sequence_in_order():
    gw = _dev_gateway([proposal_json(f"step {i}", {"lr": i}) for i in (1, 2, 3)])
    got = [propose_modification(gw, "{}", "(table)") for _ in range(3)]
    assert [p.summary for p in got] == ["step 1", "step 2", "step 3"]
    assert got[1].config_updates == {"lr": 2}


def test_propose_modification_path_escape_reprompts():
    bad = json.dumps({"summary": "evil", "rationale": "",
                      "edits": [{"path": "../../etc/passwd", "content": "x"}],
                      "config_updates": {}})
    gw = _dev_gateway([bad, proposal_json("good", {"lr": 1})])
    got = propose_modification(gw, "{}", "(table)")
    assert got.summary == "good"


def test_propose_modification_empty_patch_rejected():
    empty = json.dumps({"summary": "does nothing", "rationale": "",
                        "edits": [], "config_updates": {}})
    gw = _dev_gateway([empty] * 4)
    with pytest.raises(UnparseableResponse):
        propose_modification(gw, "{}", "(table)")


def test_propose_modification_missing_summary_rejected():
    anon = json.dumps({"rationale": "no summary", "edits": [],
                       "config_updates": {"lr": 2}})
    gw = _dev_gateway([anon] * 4)
    with pytest.raises(UnparseableResponse):
        propose_modification(gw, "{}", "(table)")


def test_propose_modification_json_embedded_in_prose():
    wrapped = "Sure! Here is my change:\n" + proposal_json("wrapped", {"x": 1})
    gw = _dev_gateway([wrapped])
    assert propose_modification(gw, "{}", "(table)").summary == "wrapped"
