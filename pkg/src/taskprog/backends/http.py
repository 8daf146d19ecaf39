"""HTTP chat-completion backend.

Speaks the common chat-completion JSON wire shape: POST a ``messages`` list
(the purpose's static prefix as the system part, the dynamic payload as the
user part) and read ``choices[0].message.content`` plus the ``usage`` object.
Structured answers must arrive inside the first fenced code block of the
response; the client parses that block strictly and rejects anything else.

Wire format, byte-exactly:

    request:  {"model": "<id>", "messages": [
                 {"role": "system", "content": "<static prefix>"},
                 {"role": "user", "content": "<dynamic payload>"}],
               "temperature": 0.0}
    response: {"choices": [{"message": {"role": "assistant",
                 "content": "<text>"}}],
               "usage": {"prompt_tokens": <int>, "completion_tokens": <int>}}
"""

from __future__ import annotations

import json
import os
import re
import time
from dataclasses import dataclass
from decimal import Decimal

import requests

from ..actions import ActionScript, Command, MalformedScript, parse_command
from ..belief import Proposal
from ..cfg import EdgeKind, PCMove
from ..values import canonical_json, from_jsonable
from .base import Backend, BackendRequest, BackendError, Purpose, TokenUsage


class Timeout(BackendError):
    pass


class AuthError(BackendError):
    pass


class RateLimited(BackendError):
    pass


class MalformedResponse(BackendError):
    pass


@dataclass
class HttpBackendConfig:
    endpoint: str
    model: str
    credential_env: str = "TASKPROG_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    temperature: float = 0.0


_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def extract_fenced_block(text: str) -> str:
    """The first fenced code block's body; strict about its presence."""
    m = _FENCE_RE.search(text)
    if m is None:
        raise MalformedResponse("response carries no fenced code block")
    return m.group(1).strip()


def http_call(request: BackendRequest, config: HttpBackendConfig, *, sleep=time.sleep):
    """One chat-completion exchange with bounded retries.

    Returns (response_text, TokenUsage | None).  Transient failures (HTTP
    429/5xx, timeouts) back off exponentially for up to ``max_retries``
    attempts; auth problems fail immediately, before any network traffic in
    the missing-credential case.
    """
    credential = os.environ.get(config.credential_env)
    if not credential:
        raise AuthError(f"credential env var {config.credential_env} is not set")
    payload = {
        "model": config.model,
        "messages": [
            {"role": "system", "content": request.static_prefix},
            {"role": "user", "content": request.dynamic_payload},
        ],
        "temperature": config.temperature,
    }
    headers = {
        "Content-Type": "application/json",
        "Authorization": f"Bearer {credential}",
    }
    last_error: Exception | None = None
    for attempt in range(config.max_retries + 1):
        if attempt:
            sleep(config.backoff_s * (2 ** (attempt - 1)))
        try:
            response = requests.post(
                config.endpoint, json=payload, headers=headers, timeout=config.timeout_s
            )
        except requests.Timeout as e:
            last_error = Timeout(str(e))
            continue
        except requests.RequestException as e:
            last_error = BackendError(str(e))
            continue
        if response.status_code in (401, 403):
            raise AuthError(f"endpoint rejected the credential (HTTP {response.status_code})")
        if response.status_code == 429:
            last_error = RateLimited("rate limited (HTTP 429)")
            continue
        if response.status_code >= 500:
            last_error = BackendError(f"server error (HTTP {response.status_code})")
            continue
        if response.status_code != 200:
            raise MalformedResponse(f"unexpected HTTP {response.status_code}: {response.text[:200]}")
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as e:
            raise MalformedResponse(f"cannot read chat response: {e}") from e
        usage = None
        if isinstance(data.get("usage"), dict):
            u = data["usage"]
            if "prompt_tokens" in u and "completion_tokens" in u:
                usage = TokenUsage(int(u["prompt_tokens"]), int(u["completion_tokens"]))
        return text, usage
    raise last_error if last_error is not None else BackendError("no attempts made")


class HttpBackend(Backend):
    """Backend over a chat-completion endpoint; structured answers are parsed
    from the first fenced block and re-validated by the caller."""

    name = "http"

    def __init__(self, config: HttpBackendConfig):
        self.config = config

    def _ask(self, request: BackendRequest):
        return http_call(request, self.config)

    def generate_program(self, request: BackendRequest):
        text, usage = self._ask(request)
        return extract_fenced_block(text), usage

    def ground_instruction(self, request: BackendRequest):
        text, usage = self._ask(request)
        return _parse_script_block(extract_fenced_block(text)), usage

    def update_pc(self, request: BackendRequest):
        text, usage = self._ask(request)
        block = extract_fenced_block(text)
        try:
            data = json.loads(block, parse_float=Decimal)
            move = PCMove(
                edge=EdgeKind(data["edge"]),
                target=data.get("target"),
                variable_updates=[
                    (str(name), from_jsonable(value))
                    for name, value in data.get("variable_updates", [])
                ],
                note=str(data.get("note", "")),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedResponse(f"bad move payload: {e}") from e
        return move, usage

    def propose_beliefs(self, request: BackendRequest):
        text, usage = self._ask(request)
        block = extract_fenced_block(text)
        try:
            data = json.loads(block)
            proposals = [
                Proposal(
                    subject=str(p["subject"]),
                    claim=str(p["claim"]),
                    supersedes=p.get("supersedes"),
                )
                for p in data
            ]
        except (ValueError, KeyError, TypeError) as e:
            raise MalformedResponse(f"bad belief payload: {e}") from e
        return proposals, usage

    def check_beliefs(self, request: BackendRequest):
        text, usage = self._ask(request)
        block = extract_fenced_block(text)
        try:
            data = json.loads(block)
            verdicts = {int(k): str(v) for k, v in data.items()}
        except (ValueError, TypeError, AttributeError) as e:
            raise MalformedResponse(f"bad verdict payload: {e}") from e
        return verdicts, usage

    def recover(self, request: BackendRequest):
        text, usage = self._ask(request)
        return _parse_script_block(extract_fenced_block(text)), usage


def _parse_script_block(block: str) -> ActionScript:
    commands: list[Command] = []
    for line in block.splitlines():
        line = line.strip().rstrip(";")
        if not line or line.startswith("#"):
            continue
        commands.append(parse_command(line))
    script = ActionScript(commands=commands, rationale="model plan")
    try:
        script.validate()
    except MalformedScript as e:
        raise MalformedResponse(str(e)) from e
    return script


