"""Access to the coding agent: providers, retries, audit, proposals.

Everything the system asks of an agent flows through AgentGateway.complete,
which wraps a provider with bounded retries (transient failures only), a
response size cap, and an append-only audit log recording one entry per
provider invocation, including failed attempts.

Two providers ship here: an HTTP chat provider for live use, and a scripted
provider that replays canned exchanges from an NDJSON table for offline and
deterministic runs.
"""

from __future__ import annotations

import hashlib
import json
import os
import string
import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

import httpx

from .errors import PathEscape, ProviderUnavailable, ResponseTooLarge, UnparseableResponse


class AgentRole(str, Enum):
    SEMANTIC_PARSER = "semantic_parser"
    TASK_INITIALIZER = "task_initializer"
    AUTONOMOUS_DEVELOPER = "autonomous_developer"


@dataclass(frozen=True)
class AgentExchange:
    """One provider invocation, successful or not."""

    exchange_id: str
    role: str
    prompt: str
    response: str | None
    attempt: int
    wall_time: float
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "exchange_id": self.exchange_id,
            "role": self.role,
            "prompt": self.prompt,
            "response": self.response,
            "attempt": self.attempt,
            "wall_time": self.wall_time,
            "error": self.error,
        }


class AuditLog:
    """Append-only NDJSON log of agent exchanges.

    With no path the log is memory-only (handy for tests and one-shot use).
    """

    def __init__(self, path: Path | None = None):
        self.path = Path(path) if path is not None else None
        self.entries: list[AgentExchange] = []

    def append(self, exchange: AgentExchange) -> None:
        self.entries.append(exchange)
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(exchange.to_dict()) + "\n")

    def __len__(self) -> int:
        return len(self.entries)


def context_key(context: str) -> str:
    """Stable short key for a prompt context, used by scripted tables."""
    return hashlib.sha256(context.encode("utf-8")).hexdigest()[:16]


class MockProvider:
    """Scripted provider: replays an ordered NDJSON exchange table.

    Each record is {"key": ..., "response": ..., "role": ...}. ``key`` is
    either the context hash from :func:`context_key` or "*" (match anything);
    ``role`` likewise narrows a record to one agent role or stays "*".
    Records are consumed first-match in file order, so sequential proposal
    scripts are simply wildcard records in order. An unscripted context
    raises ProviderUnavailable (non-transient).
    """

    def __init__(self, records: list[dict]):
        self._records = [dict(r) for r in records]
        self._used = [False] * len(self._records)

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return cls(records)

    @classmethod
    def from_responses(cls, responses: list[str], role: str = "*") -> "MockProvider":
        return cls([{"key": "*", "role": role, "response": r} for r in responses])

    def skip(self, n: int, role: str | None = None) -> None:
        """Mark the first n unconsumed (matching) records as used.

        Resuming a half-finished loop replays the ledger instead of the
        provider, so already-delivered scripted records must be skipped.
        """
        remaining = n
        for i, rec in enumerate(self._records):
            if remaining == 0:
                break
            if self._used[i]:
                continue
            rec_role = rec.get("role", "*")
            if role is not None and rec_role not in ("*", role):
                continue
            self._used[i] = True
            remaining -= 1

    def complete(self, role: str, context: str) -> str:
        key = context_key(context)
        for i, rec in enumerate(self._records):
            if self._used[i]:
                continue
            rec_role = rec.get("role", "*")
            if rec_role not in ("*", role):
                continue
            rec_key = rec.get("key", "*")
            if rec_key in ("*", key):
                self._used[i] = True
                return str(rec["response"])
        raise ProviderUnavailable(
            f"no scripted response for role={role} key={key}", transient=False)


class HttpChatProvider:
    """Chat-completion HTTP provider.

    Reads AGENT_API_URL and AGENT_API_KEY from the environment unless given
    explicitly. Transport errors and 5xx responses raise transient
    ProviderUnavailable so the gateway retries them; 4xx responses do not.
    """

    def __init__(self, url: str | None = None, api_key: str | None = None,
                 model: str | None = None, client: httpx.Client | None = None,
                 timeout: float = 120.0):
        self.url = url or os.environ.get("AGENT_API_URL", "")
        self.api_key = api_key or os.environ.get("AGENT_API_KEY", "")
        self.model = model or os.environ.get("AGENT_API_MODEL", "default")
        self._client = client
        self._timeout = timeout
        if not self.url:
            raise ProviderUnavailable("AGENT_API_URL is not set", transient=False)

    def complete(self, role: str, context: str) -> str:
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": context}],
            "metadata": {"agent_role": role},
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        client = self._client or httpx
        try:
            resp = client.post(self.url, json=payload, headers=headers,
                               timeout=self._timeout)
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"transport failure: {exc}", transient=True)
        if resp.status_code >= 500:
            raise ProviderUnavailable(f"provider returned {resp.status_code}",
                                      transient=True)
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"provider returned {resp.status_code}",
                                      transient=False)
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise UnparseableResponse(f"malformed completion payload: {exc}")


def render_template(name: str, **values: str) -> str:
    text = resources.files("intentloop").joinpath(f"templates/{name}.txt").read_text(
        encoding="utf-8")
    return string.Template(text).safe_substitute(**values)


class AgentGateway:
    """Provider wrapper adding retries, size caps and audit logging."""

    def __init__(self, provider, audit: AuditLog | None = None, *,
                 max_attempts: int = 3, backoff_base: float = 0.25,
                 response_cap: int = 1_000_000):
        self.provider = provider
        self.audit = audit if audit is not None else AuditLog()
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.response_cap = response_cap

    def complete(self, role: AgentRole | str, context: str) -> str:
        role_value = role.value if isinstance(role, AgentRole) else str(role)
        last: Exception = ProviderUnavailable("no attempt made")
        for attempt in range(1, self.max_attempts + 1):
            t0 = time.monotonic()
            try:
                response = self.provider.complete(role_value, context)
            except ProviderUnavailable as exc:
                self.audit.append(AgentExchange(
                    exchange_id=uuid.uuid4().hex[:12], role=role_value,
                    prompt=context, response=None, attempt=attempt,
                    wall_time=time.monotonic() - t0, error=str(exc) or exc.code))
                last = exc
                if exc.transient and attempt < self.max_attempts:
                    time.sleep(self.backoff_base * (2 ** (attempt - 1)))
                    continue
                raise
            wall = time.monotonic() - t0
            if len(response) > self.response_cap:
                self.audit.append(AgentExchange(
                    exchange_id=uuid.uuid4().hex[:12], role=role_value,
                    prompt=context, response=response[:1024], attempt=attempt,
                    wall_time=wall, error="response_too_large"))
                raise ResponseTooLarge(
                    f"{len(response)} chars exceeds cap {self.response_cap}")
            self.audit.append(AgentExchange(
                exchange_id=uuid.uuid4().hex[:12], role=role_value,
                prompt=context, response=response, attempt=attempt,
                wall_time=wall))
            return response
        raise last  # pragma: no cover - loop always returns or raises

    def skip_scripted(self, n: int, role: str | None = None) -> None:
        if hasattr(self.provider, "skip"):
            self.provider.skip(n, role)


# --- modification proposals -------------------------------------------------------

@dataclass(frozen=True)
class FileEdit:
    path: str
    content: str


@dataclass(frozen=True)
class ModificationProposal:
    """One proposed change to the working codebase.

    ``edits`` replace whole files (paths relative to the workspace working
    directory); ``config_updates`` assign dotted paths inside the workspace
    config document. A proposal must change something and say what it does.
    """

    summary: str
    rationale: str
    edits: tuple[FileEdit, ...] = ()
    config_updates: dict = field(default_factory=dict)

    def is_empty(self) -> bool:
        return not self.edits and not self.config_updates


def validate_edit_path(path: str) -> str:
    """Reject absolute paths and parent-directory escapes."""
    p = Path(path)
    if p.is_absolute() or any(part == ".." for part in p.parts) or not p.parts:
        raise PathEscape(f"edit path escapes the workspace: {path!r}")
    return str(p)


def _parse_proposal(text: str) -> ModificationProposal:
    from .task_model import _extract_json_object  # shared JSON extraction

    payload = _extract_json_object(text)
    summary = str(payload.get("summary", "")).strip()
    rationale = str(payload.get("rationale", "")).strip()
    edits_raw = payload.get("edits", [])
    updates = payload.get("config_updates", {})
    if not summary:
        raise UnparseableResponse("proposal summary must be non-empty")
    if not isinstance(edits_raw, list) or not isinstance(updates, dict):
        raise UnparseableResponse("proposal edits/config_updates malformed")
    edits = tuple(
        FileEdit(path=validate_edit_path(str(e["path"])), content=str(e["content"]))
        for e in edits_raw
    )
    proposal = ModificationProposal(summary=summary, rationale=rationale,
                                    edits=edits, config_updates=dict(updates))
    if proposal.is_empty():
        raise UnparseableResponse("proposal changes nothing")
    return proposal


_MAX_PROPOSAL_REPROMPTS = 3


def propose_modification(gateway: AgentGateway, spec_json: str,
                         results_table: str) -> ModificationProposal:
    """Ask the developer agent for the next change.

    The prompt carries the task spec and a results table of every prior run
    (the agent sees outcomes, not hidden state). Schema-invalid replies are
    re-prompted up to three times, then UnparseableResponse propagates; a
    path escaping the workspace counts as schema-invalid.
    """
    correction = ""
    last: Exception = UnparseableResponse("provider produced no proposal")
    for _ in range(1 + _MAX_PROPOSAL_REPROMPTS):
        prompt = render_template("autonomous_developer", spec_json=spec_json,
                                 results_table=results_table, correction=correction)
        response = gateway.complete(AgentRole.AUTONOMOUS_DEVELOPER, prompt)
        try:
            return _parse_proposal(response)
        except (UnparseableResponse, PathEscape, KeyError, TypeError, ValueError) as exc:
            last = exc if isinstance(exc, UnparseableResponse) else \
                UnparseableResponse(str(exc))
            correction = ("\nYour previous reply was rejected: "
                          f"{exc}. Reply with exactly one valid proposal object.")
    raise last
