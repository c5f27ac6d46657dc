"""Chat-completion backends: remote API, deterministic mocks, a disk replay
cache, a sliding-window rate limiter, and usage/cost accounting.

All backends (remote teachers, the locally served student, mocks) speak the
same shape: a single user message carrying the full prompt, temperature, and
a token cap. The cache key covers model, prompt, temperature and max_output —
but not the endpoint, so a cached teacher run can be replayed against a
different server for A/B checks.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import AuthError, BackendError, ConfigError, FormatError
from .promptkit import extract_numbered_block

log = logging.getLogger("bioelink.teacher")

API_KEY_ENV = "BIOELINK_API_KEY"


@dataclass
class CompletionRequest:
    model: str
    prompt_text: str
    temperature: float = 0.0
    max_output: int = 512
    tags: dict = field(default_factory=dict)  # out-of-band hints; never sent on the wire

    def __post_init__(self):
        if self.temperature < 0:
            raise ConfigError(f"temperature must be >= 0, got {self.temperature}")


@dataclass
class CompletionResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    source: str  # "remote" | "cache" | "mock"

    @property
    def usage(self) -> tuple[int, int]:
        return (self.prompt_tokens, self.completion_tokens)


@dataclass
class CallRecord:
    model: str
    source: str
    prompt_tokens: int
    completion_tokens: int
    seconds: float


class UsageLedger:
    """Running per-call accounting. Cache hits are recorded (usage copied from
    the original call) but never add cost."""

    def __init__(self):
        self.records: list[CallRecord] = []
        self._lock = threading.Lock()

    def add(self, record: CallRecord) -> None:
        with self._lock:
            self.records.append(record)

    @property
    def backend_calls(self) -> int:
        return sum(1 for r in self.records if r.source != "cache")

    @property
    def remote_calls(self) -> int:
        return sum(1 for r in self.records if r.source == "remote")

    @property
    def cache_hits(self) -> int:
        return sum(1 for r in self.records if r.source == "cache")

    def by_model(self) -> dict[str, dict]:
        out: dict[str, dict] = {}
        for r in self.records:
            row = out.setdefault(r.model, {
                "calls": 0, "cached": 0, "prompt_tokens": 0, "completion_tokens": 0,
                "billable_prompt_tokens": 0, "billable_completion_tokens": 0, "seconds": 0.0,
            })
            row["calls"] += 1
            row["prompt_tokens"] += r.prompt_tokens
            row["completion_tokens"] += r.completion_tokens
            if r.source == "cache":
                row["cached"] += 1
            else:
                row["billable_prompt_tokens"] += r.prompt_tokens
                row["billable_completion_tokens"] += r.completion_tokens
                row["seconds"] += r.seconds
        return out

    def to_dict(self) -> dict:
        return {
            "records": [
                {"model": r.model, "source": r.source, "prompt_tokens": r.prompt_tokens,
                 "completion_tokens": r.completion_tokens, "seconds": r.seconds}
                for r in self.records
            ],
            "summary": {
                "backend_calls": self.backend_calls,
                "remote_calls": self.remote_calls,
                "cache_hits": self.cache_hits,
            },
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, ensure_ascii=False, indent=2)
            f.write("\n")

    @classmethod
    def load(cls, path) -> "UsageLedger":
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise FormatError(f"cannot read ledger {path}: {exc}") from exc
        ledger = cls()
        for r in raw.get("records", []):
            ledger.add(CallRecord(
                model=r["model"], source=r.get("source", "remote"),
                prompt_tokens=int(r.get("prompt_tokens", 0)),
                completion_tokens=int(r.get("completion_tokens", 0)),
                seconds=float(r.get("seconds", 0.0)),
            ))
        return ledger


class RateLimiter:
    """At most ``limit`` dispatches in any sliding 1-second window. The clock
    and sleep functions are injectable so tests can drive a fake clock."""

    def __init__(self, limit: int, window: float = 1.0, clock=time.monotonic, sleep=time.sleep):
        if limit < 1:
            raise ConfigError(f"rate limit must be >= 1, got {limit}")
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and self._stamps[0] <= now - self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + self.window - now
            self._sleep(max(wait, 0.0))


def _estimate_tokens(text: str) -> int:
    return max(1, len(text) // 4)


class MockBackend:
    """Deterministic offline reranker. Subclasses decide the order; the
    candidate list is read back from the final numbered block of the prompt."""

    source = "mock"
    name = "mock"

    def _order(self, labels: list[str], request: CompletionRequest) -> list[str]:
        raise NotImplementedError

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        labels = extract_numbered_block(request.prompt_text)
        if not labels:
            raise BackendError(f"{self.name}: prompt contains no numbered candidate block")
        ordered = self._order(labels, request)
        text = "\n".join(f"{i}. {label}" for i, label in enumerate(ordered, start=1))
        return CompletionResponse(
            text=text,
            prompt_tokens=_estimate_tokens(request.prompt_text),
            completion_tokens=_estimate_tokens(text),
            source="mock",
        )


class IdentityMockBackend(MockBackend):
    """Echoes the candidates in input order."""

    name = "mock:identity"

    def _order(self, labels, request):
        return list(labels)


class ReverseMockBackend(MockBackend):
    """Worst-case adversary: reverses the input order."""

    name = "mock:reverse"

    def _order(self, labels, request):
        return list(reversed(labels))


class OracleMockBackend(MockBackend):
    """Test-only backend that sees gold: puts the gold candidate first when it
    was retrieved, leaves the rest in input order."""

    name = "mock:oracle"

    def __init__(self, gold_by_uid: dict[str, tuple[str, str]]):
        self.gold_by_uid = gold_by_uid  # uid -> (gold_id, gold_name)

    @classmethod
    def from_mentions(cls, mentions, kb) -> "OracleMockBackend":
        gold = {}
        for m in mentions:
            if m.gold_id is not None and m.gold_id in kb:
                gold[m.uid] = (m.gold_id, kb.get(m.gold_id).name)
        return cls(gold)

    def _order(self, labels, request):
        uid = request.tags.get("mention_uid", "")
        if uid not in self.gold_by_uid:
            return list(labels)
        gold_id, gold_name = self.gold_by_uid[uid]
        for target in (gold_name, f"{gold_name} ({gold_id})"):
            if target in labels:
                return [target] + [lab for lab in labels if lab != target]
        return list(labels)


class ScriptedBackend:
    """Plays back a fixed prompt -> reply script; unknown prompts fail."""

    source = "mock"
    name = "mock:scripted"

    def __init__(self, script: dict[str, str]):
        self.script = dict(script)

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        if request.prompt_text not in self.script:
            raise BackendError("scripted backend has no reply for this prompt")
        text = self.script[request.prompt_text]
        return CompletionResponse(
            text=text,
            prompt_tokens=_estimate_tokens(request.prompt_text),
            completion_tokens=_estimate_tokens(text),
            source="mock",
        )


_RETRYABLE_STATUS = {408, 409, 429, 500, 502, 503, 504}


class RemoteBackend:
    """Chat-completion JSON over HTTP(S) with exponential backoff on transient
    failures. Auth failures and malformed responses are not retried."""

    source = "remote"

    def __init__(
        self,
        endpoint: str,
        model: str = "",
        api_key: str | None = None,
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_factor: float = 2.0,
        jitter: float = 0.1,
        sleep=time.sleep,
        rng: random.Random | None = None,
        name: str = "remote",
    ):
        if not endpoint:
            raise ConfigError("remote backend needs an endpoint URL")
        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_factor = backoff_factor
        self.jitter = jitter
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.name = name

    def build_payload(self, request: CompletionRequest) -> dict:
        return {
            "model": request.model,
            "messages": [{"role": "user", "content": request.prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output,
        }

    def complete(self, request: CompletionRequest) -> CompletionResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self.build_payload(request)

        last_error: Exception | None = None
        for attempt in range(self.max_attempts):
            if attempt:
                delay = self.backoff_base * self.backoff_factor ** (attempt - 1)
                delay += self._rng.uniform(0, self.jitter * delay)
                self._sleep(delay)
            try:
                resp = requests.post(self.endpoint, json=payload, headers=headers, timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                log.warning("remote attempt %d/%d failed: %s", attempt + 1, self.max_attempts, exc)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"authentication rejected by {self.endpoint} (HTTP {resp.status_code})")
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = BackendError(f"HTTP {resp.status_code} from {self.endpoint}")
                log.warning("remote attempt %d/%d: HTTP %d", attempt + 1, self.max_attempts, resp.status_code)
                continue
            if resp.status_code != 200:
                raise BackendError(f"HTTP {resp.status_code} from {self.endpoint}: {resp.text[:200]}")
            try:
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"malformed wire response from {self.endpoint}: {exc}") from exc
            return CompletionResponse(
                text=text,
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                source="remote",
            )
        raise BackendError(f"retry budget exhausted after {self.max_attempts} attempts: {last_error}")


class CompletionCache:
    """One file per key on disk. The key hashes (model, prompt, temperature,
    max_output). Writes are atomic and serialized per key; an attempt to store
    different bytes under an existing key keeps the original and is flagged."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.conflicts = 0
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def key(self, request: CompletionRequest) -> str:
        material = json.dumps(
            {
                "model": request.model,
                "prompt": request.prompt_text,
                "temperature": request.temperature,
                "max_output": request.max_output,
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return hashlib.sha256(material.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def _lock_for(self, key: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(key, threading.Lock())

    def get(self, request: CompletionRequest) -> CompletionResponse | None:
        path = self._path(self.key(request))
        if not path.exists():
            return None
        try:
            record = json.loads(path.read_text(encoding="utf-8"))
            return CompletionResponse(
                text=record["text"],
                prompt_tokens=int(record["prompt_tokens"]),
                completion_tokens=int(record["completion_tokens"]),
                source="cache",
            )
        except (OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
            log.warning("cache entry %s is corrupt (%s); treating as miss", path.name, exc)
            return None

    def store(self, request: CompletionRequest, response: CompletionResponse) -> None:
        key = self.key(request)
        path = self._path(key)
        record = {
            "model": request.model,
            "temperature": request.temperature,
            "max_output": request.max_output,
            "prompt_text": request.prompt_text,
            "text": response.text,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
            "source_original": response.source,
        }
        with self._lock_for(key):
            if path.exists():
                try:
                    existing = json.loads(path.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError):
                    existing = None
                if existing is not None:
                    if existing.get("text") != response.text:
                        self.conflicts += 1
                        log.warning("cache conflict under key %s: keeping first-written response", key[:12])
                    return  # first writer wins
            tmp = path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as f:
                json.dump(record, f, ensure_ascii=False, indent=2)
                f.write("\n")
            os.replace(tmp, path)


def complete(backend, request: CompletionRequest, ledger: UsageLedger | None = None,
             rate_limiter: RateLimiter | None = None) -> CompletionResponse:
    if rate_limiter is not None:
        rate_limiter.acquire()
    started = time.monotonic()
    response = backend.complete(request)
    elapsed = time.monotonic() - started
    if ledger is not None:
        ledger.add(CallRecord(
            model=request.model, source=response.source,
            prompt_tokens=response.prompt_tokens, completion_tokens=response.completion_tokens,
            seconds=elapsed,
        ))
    return response


def cached_complete(cache: CompletionCache | None, backend, request: CompletionRequest,
                    ledger: UsageLedger | None = None, rate_limiter: RateLimiter | None = None) -> CompletionResponse:
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            if ledger is not None:
                ledger.add(CallRecord(
                    model=request.model, source="cache",
                    prompt_tokens=hit.prompt_tokens, completion_tokens=hit.completion_tokens,
                    seconds=0.0,
                ))
            return hit
    response = complete(backend, request, ledger=ledger, rate_limiter=rate_limiter)
    if cache is not None:
        cache.store(request, response)
    return response


def make_backend(spec: str, *, mentions=None, kb=None, endpoint: str | None = None,
                 api_key: str | None = None, api_key_env: str = API_KEY_ENV, **remote_kwargs):
    """Backend factory for the CLI spec strings: mock:identity, mock:oracle,
    mock:reverse, remote, student."""
    if spec == "mock:identity":
        return IdentityMockBackend()
    if spec == "mock:reverse":
        return ReverseMockBackend()
    if spec == "mock:oracle":
        if mentions is None or kb is None:
            raise ConfigError("mock:oracle needs the mentions and knowledge base to look up gold")
        return OracleMockBackend.from_mentions(mentions, kb)
    if spec in ("remote", "student"):
        if not endpoint:
            raise ConfigError(f"backend {spec!r} needs an endpoint URL")
        key = api_key if api_key is not None else os.environ.get(api_key_env)
        return RemoteBackend(endpoint=endpoint, api_key=key, name=spec, **remote_kwargs)
    raise ConfigError(f"unknown backend {spec!r} (expected mock:identity|mock:oracle|mock:reverse|remote|student)")


def load_price_table(path) -> dict:
    """JSON map: model -> {prompt_per_1k, completion_per_1k} or {per_gpu_second}."""
    try:
        table = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read price table {path}: {exc}") from exc
    if not isinstance(table, dict):
        raise FormatError(f"price table {path} must be a JSON object")
    return table


@dataclass
class CostRow:
    model: str
    calls: int
    cached: int
    prompt_tokens: int
    completion_tokens: int
    seconds: float
    cost_usd: float | None  # None = unpriced


def cost_report(ledger: UsageLedger, price_table: dict) -> list[CostRow]:
    rows = []
    for model, agg in sorted(ledger.by_model().items()):
        prices = price_table.get(model)
        if prices is None:
            cost = None
        elif "per_gpu_second" in prices:
            cost = agg["seconds"] * float(prices["per_gpu_second"])
        else:
            cost = (
                agg["billable_prompt_tokens"] / 1000.0 * float(prices.get("prompt_per_1k", 0.0))
                + agg["billable_completion_tokens"] / 1000.0 * float(prices.get("completion_per_1k", 0.0))
            )
        rows.append(CostRow(
            model=model, calls=agg["calls"], cached=agg["cached"],
            prompt_tokens=agg["prompt_tokens"], completion_tokens=agg["completion_tokens"],
            seconds=agg["seconds"], cost_usd=cost,
        ))
    return rows


def render_cost_report(rows: list[CostRow]) -> str:
    if not rows:
        return "no calls recorded\n"
    header = f"{'model':<28} {'calls':>6} {'cached':>6} {'prompt_tok':>11} {'compl_tok':>10} {'cost ($)':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        cost = "unpriced" if r.cost_usd is None else f"{r.cost_usd:.3f}"
        lines.append(
            f"{r.model:<28} {r.calls:>6} {r.cached:>6} {r.prompt_tokens:>11} {r.completion_tokens:>10} {cost:>9}"
        )
    return "\n".join(lines) + "\n"
