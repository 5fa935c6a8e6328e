"""Candidate-selection policies standing in for a finetuned language model.

Every backend maps an instruction sample to either one candidate index or
an abstention. Free-text outputs (scripted fixtures, remote completions)
are grounded strictly within the sample's candidate list: exact normalized
match first, then earliest candidate whose name occurs inside the output,
otherwise abstain. Abstention keeps evaluation total: the base ranking is
simply left unchanged.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import requests

from .instructions import InstructionSample, render_prompt

logger = logging.getLogger(__name__)


class BackendError(Exception):
    """Backend setup or transport failure."""


@dataclass(frozen=True)
class Selection:
    index: int | None  # candidate position, or None for abstain

    @property
    def chosen(self) -> bool:
        return self.index is not None


ABSTAIN = Selection(None)


def normalize_answer(text: str) -> str:
    return " ".join(text.split()).casefold()


def ground(output_text: str, sample: InstructionSample) -> Selection:
    """Map free text onto the candidate list; abstain when nothing matches."""
    out = normalize_answer(output_text)
    names = [normalize_answer(n) for n in sample.candidate_names]
    for i, name in enumerate(names):
        if name == out:
            return Selection(i)
    for i, name in enumerate(names):
        if name and name in out:
            return Selection(i)
    return ABSTAIN


class OracleBackend:
    """Selects the gold answer whenever it appears among the candidates."""

    name = "oracle"

    def select(self, sample: InstructionSample) -> Selection:
        if sample.gold_id in sample.candidate_ids:
            return Selection(sample.candidate_ids.index(sample.gold_id))
        return ABSTAIN


class FirstCandidateBackend:
    """Always selects the top-ranked candidate (a no-op under reranking)."""

    name = "first_candidate"

    def select(self, sample: InstructionSample) -> Selection:
        return Selection(0)


class ScriptedBackend:
    """Replays fixture outputs keyed by sample id; missing ids abstain."""

    name = "scripted"

    def __init__(self, outputs: dict[str, str]):
        self.outputs = outputs

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        if not os.path.isfile(path):
            raise BackendError(f"scripted fixture file not found: {path}")
        outputs = {}
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                if "\t" not in line:
                    raise BackendError(f"{path}:{lineno}: expected '<sample_id>\\t<output>'")
                sample_id, text = line.split("\t", 1)
                outputs[sample_id] = text
        return cls(outputs)

    def select(self, sample: InstructionSample) -> Selection:
        text = self.outputs.get(sample.sample_id)
        if text is None:
            return ABSTAIN
        return ground(text, sample)


@dataclass
class RemoteConfig:
    endpoint: str
    model: str
    timeout: float = 30.0
    retries: int = 2
    backoff: float = 0.5
    auth_token_env: str = "KGRERANK_API_TOKEN"
    in_flight: int = 4


def remote_request(sample: InstructionSample, config: RemoteConfig) -> str:
    """Single-turn chat-completion request; returns the first message text.

    Transport errors, 5xx responses, and rate limits are retried with
    exponential backoff up to ``config.retries`` extra attempts, then
    surfaced as :class:`BackendError`.
    """
    if not config.endpoint:
        raise BackendError("remote backend requires an endpoint URL")
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(config.auth_token_env, "")
    if token:
        headers["Authorization"] = f"Bearer {token}"
    payload = {
        "model": config.model,
        "messages": [{"role": "user", "content": render_prompt(sample)}],
    }
    last_error: Exception | None = None
    for attempt in range(config.retries + 1):
        if attempt:
            time.sleep(config.backoff * 2 ** (attempt - 1))
        try:
            resp = requests.post(
                config.endpoint, json=payload, headers=headers, timeout=config.timeout
            )
        except requests.RequestException as exc:
            last_error = exc
            continue
        if resp.status_code == 429 or resp.status_code >= 500:
            last_error = BackendError(f"server returned {resp.status_code}")
            continue
        if resp.status_code != 200:
            raise BackendError(f"server returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
    raise BackendError(
        f"request failed after {config.retries + 1} attempt(s): {last_error}"
    ) from last_error


class RemoteBackend:
    """Grounds completions from an HTTP generation service; abstains on failure."""

    name = "remote"

    def __init__(self, config: RemoteConfig):
        if not config.endpoint:
            raise BackendError("remote backend requires an endpoint URL")
        self.config = config

    def select(self, sample: InstructionSample) -> Selection:
        try:
            text = remote_request(sample, self.config)
        except BackendError as exc:
            logger.warning("sample %s: remote request failed: %s", sample.sample_id, exc)
            return ABSTAIN
        return ground(text, sample)


def make_backend(
    kind: str,
    scripted_file: str | None = None,
    remote: RemoteConfig | None = None,
):
    if kind == "oracle":
        return OracleBackend()
    if kind == "first_candidate":
        return FirstCandidateBackend()
    if kind == "scripted":
        if not scripted_file:
            raise BackendError("scripted backend requires a fixture file")
        return ScriptedBackend.from_file(scripted_file)
    if kind == "remote":
        if remote is None:
            raise BackendError("remote backend requires remote settings")
        return RemoteBackend(remote)
    raise BackendError(f"unknown backend kind {kind!r}")
