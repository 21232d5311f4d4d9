"""Judge backends: a deterministic mock and a chat-completions client.

Both return the judge's raw text alongside the parsed verdict, so the mock
exercises the same marker parsing as a real judge.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import httpx

from ..errors import ConfigurationError, JudgePartialResult
from .prompts import (
    FAITHFULNESS_TEMPLATE,
    SIMILARITY_TEMPLATE,
    JudgePrompt,
    Response,
    faithfulness_request,
    parse_faithfulness,
    parse_similarity,
    similarity_request,
)

logger = logging.getLogger(__name__)

SimilarityItem = tuple[JudgePrompt, Response, Response]
FaithfulnessItem = tuple[JudgePrompt, Response]


class JudgeBackend:
    kind = "abstract"

    def similarity(self, items: Sequence[SimilarityItem]) -> list[tuple[bool | None, str]]:
        raise NotImplementedError

    def faithfulness(self, items: Sequence[FaithfulnessItem]) -> list[tuple[float | None, str]]:
        raise NotImplementedError


class MockJudge(JudgeBackend):
    """Fixed rules over the synthetic rollout structure.

    Two responses share a strategy iff they have the same final answer and the
    same reasoning template (first trace token). A response is faithful (1) if
    its trace mentions the true answer token, partial (0.5) if it mentions some
    other answer token only, and unfaithful (0) otherwise.
    """

    kind = "mock"

    def __init__(self, answer_tokens: Sequence[int]):
        self.answer_tokens = frozenset(int(a) for a in answer_tokens)

    def similarity(self, items):
        out = []
        for _, a, b in items:
            same = a.answer == b.answer and a.template == b.template
            marker = "||no||" if same else "||yes||"
            out.append((parse_similarity(marker), f"answers {a.answer}/{b.answer}, templates {a.template}/{b.template} {marker}"))
        return out

    def faithfulness(self, items):
        out = []
        for prompt, r in items:
            trace = set(r.trace)
            if prompt.truth is not None and prompt.truth in trace:
                marker = "||1||"
            elif trace & self.answer_tokens:
                marker = "||0.5||"
            else:
                marker = "||0||"
            out.append((parse_faithfulness(marker), f"trace {list(r.trace)} {marker}"))
        return out


# -- remote -------------------------------------------------------------------

ENV_ENDPOINT = "RLVRLAB_JUDGE_ENDPOINT"
ENV_MODEL = "RLVRLAB_JUDGE_MODEL"
ENV_CREDENTIAL = "RLVRLAB_JUDGE_CREDENTIAL_ENV"
DEFAULT_CREDENTIAL_ENV = "RLVRLAB_JUDGE_API_KEY"


@dataclass(frozen=True)
class RemoteConfig:
    endpoint: str
    model: str
    credential_env: str = DEFAULT_CREDENTIAL_ENV  # name of the variable holding the key, never the key
    timeout: float = 60.0
    max_in_flight: int = 4
    retries: int = 3
    backoff: float = 1.0

    def __post_init__(self):
        if not self.endpoint or not self.model:
            raise ConfigurationError("remote judge needs an endpoint and a model name")
        if self.max_in_flight < 1 or self.retries < 0 or self.timeout <= 0:
            raise ConfigurationError("need max_in_flight >= 1, retries >= 0 and a positive timeout")

    @classmethod
    def from_env(cls, env=None, **overrides) -> "RemoteConfig":
        env = os.environ if env is None else env
        endpoint = overrides.pop("endpoint", None) or env.get(ENV_ENDPOINT)
        model = overrides.pop("model", None) or env.get(ENV_MODEL)
        if not endpoint or not model:
            raise ConfigurationError(f"set {ENV_ENDPOINT} and {ENV_MODEL} to use the remote judge")
        cred = overrides.pop("credential_env", None) or env.get(ENV_CREDENTIAL, DEFAULT_CREDENTIAL_ENV)
        return cls(endpoint, model, cred, **overrides)


class RemoteJudge(JudgeBackend):
    """Chat-completions judge with caching, bounded concurrency and an audit log.

    Every request is keyed by a hash of (model, request text). A key seen
    before, in this session or in a replayed audit log, is answered from the
    cache, so retries and repeated pairs never change a verdict.
    """

    kind = "remote"

    def __init__(
        self,
        config: RemoteConfig,
        *,
        audit_log: str | Path | None = None,
        client: httpx.Client | None = None,
        similarity_template: str = SIMILARITY_TEMPLATE,
        faithfulness_template: str = FAITHFULNESS_TEMPLATE,
        sleep=time.sleep,
    ):
        self.config = config
        self.audit_log = Path(audit_log) if audit_log else None
        self.client = client or httpx.Client(timeout=config.timeout)
        self.similarity_template = similarity_template
        self.faithfulness_template = faithfulness_template
        self._sleep = sleep
        self._cache: dict[str, str] = {}
        self._lock = threading.Lock()
        self.calls = 0
        if self.audit_log is not None and self.audit_log.exists():
            self._replay(self.audit_log)

    def _replay(self, path: Path) -> None:
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                self._cache[rec["key"]] = rec["response"]

    def key(self, text: str) -> str:
        return hashlib.sha256(f"{self.config.model}\n{text}".encode()).hexdigest()

    def _post(self, text: str) -> str:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.credential_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": text}],
            "temperature": 0,
        }
        resp = self.client.post(self.config.endpoint, json=body, headers=headers, timeout=self.config.timeout)
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]

    def complete(self, text: str, kind: str) -> str:
        k = self.key(text)
        with self._lock:
            if k in self._cache:
                return self._cache[k]
        last = None
        for attempt in range(self.config.retries + 1):
            try:
                with self._lock:
                    self.calls += 1
                out = self._post(text)
                break
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = exc
                logger.warning("judge request failed (attempt %d): %s", attempt + 1, exc)
                if attempt < self.config.retries:
                    self._sleep(self.config.backoff * 2**attempt)
        else:
            raise last
        with self._lock:
            self._cache.setdefault(k, out)
            out = self._cache[k]
            if self.audit_log is not None:
                self.audit_log.parent.mkdir(parents=True, exist_ok=True)
                with self.audit_log.open("a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": k, "kind": kind, "model": self.config.model,
                                         "request": text, "response": out}) + "\n")
        return out

    def _run(self, texts: list[str], kind: str, parse) -> list:
        results: list = [None] * len(texts)
        errors = []
        with ThreadPoolExecutor(max_workers=self.config.max_in_flight) as pool:
            futures = [pool.submit(self.complete, t, kind) for t in texts]
            for i, fut in enumerate(futures):
                try:
                    raw = fut.result()
                    results[i] = (parse(raw), raw)
                except Exception as exc:  # collected and reported below
                    errors.append((i, exc))
        if errors:
            done = [(i, r) for i, r in enumerate(results) if r is not None]
            i, exc = errors[0]
            raise JudgePartialResult(f"{len(errors)} of {len(texts)} judge requests failed; first: {exc}", done)
        return results

    def similarity(self, items):
        texts = [similarity_request(p, a, b, self.similarity_template) for p, a, b in items]
        return self._run(texts, "similarity", parse_similarity)

    def faithfulness(self, items):
        texts = [faithfulness_request(p, r, self.faithfulness_template) for p, r in items]
        return self._run(texts, "faithfulness", parse_faithfulness)


def make_backend(kind: str, *, answer_tokens: Sequence[int] = (), audit_log=None, **remote) -> JudgeBackend:
    if kind == "mock":
        return MockJudge(answer_tokens)
    if kind == "remote":
        return RemoteJudge(RemoteConfig.from_env(**remote), audit_log=audit_log)
    raise ConfigurationError(f"unknown judge backend {kind!r}; expected 'mock' or 'remote'")
