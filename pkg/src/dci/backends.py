"""Model backends: one image plus one prompt in, raw text out.

Two real implementations live here: :class:`DilutionOracle`, a seeded
simulator whose answers follow a softmax with a logit boost on the true
label, and :class:`HttpBackend`, a chat-completions client for live
vision-language endpoints.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import math
import mimetypes
import os
import random
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Union

import httpx

from .label_space import LabelSet
from .prompting import NONE_TOKEN

logger = logging.getLogger(__name__)

ImageRef = Union[str, Path, bytes]


class BackendError(RuntimeError):
    """Transport-level failure (timeout, bad status, malformed reply).

    Distinct from an unparseable answer, which is a value handled by the
    prompting layer.
    """

    def __init__(self, message: str, *, attempts: int = 1, retryable: bool = True):
        super().__init__(message)
        self.attempts = attempts
        self.retryable = retryable


class BackendTimeout(BackendError):
    pass


@dataclass(frozen=True)
class Query:
    image_ref: ImageRef
    prompt: str
    group: LabelSet
    iteration: int = 1
    group_index: int = 1

    def __post_init__(self) -> None:
        if len(self.group) == 0:
            raise ValueError("query group must be non-empty")
        if self.iteration < 1 or self.group_index < 1:
            raise ValueError("iteration and group_index are 1-based")


@dataclass(frozen=True)
class BackendResult:
    raw_text: str
    latency_s: float
    token_estimate: int = 0
    attempts: int = 1

    def __post_init__(self) -> None:
        if self.latency_s < 0:
            raise ValueError("latency_s must be >= 0")


class Backend(Protocol):
    def infer(self, q: Query) -> BackendResult: ...


def estimate_tokens(text: str) -> int:
    return max(1, len(text) // 4) if text else 0


def image_key(image_ref: ImageRef) -> str:
    """Stable string identity for an image handle."""
    if isinstance(image_ref, bytes):
        return "sha256:" + hashlib.sha256(image_ref).hexdigest()
    return str(image_ref)


# -- simulated oracle ------------------------------------------------------


@dataclass(frozen=True)
class DilutionOracleParams:
    true_label: str
    signal_boost_delta: float = math.log(99)
    p_none_when_absent: float = 1.0
    latency_c0: float = 0.0
    latency_c2: float = 0.0
    seed: int = 0
    # chance of answering None although the true label is in the group
    p_none_when_present: float = 0.0

    def __post_init__(self) -> None:
        for name in ("p_none_when_absent", "p_none_when_present"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.signal_boost_delta < 0 or math.isnan(self.signal_boost_delta):
            raise ValueError("signal_boost_delta must be >= 0")
        if self.latency_c0 < 0 or self.latency_c2 < 0:
            raise ValueError("latency coefficients must be >= 0")


def true_label_probability(delta: float, k: int) -> float:
    """Softmax weight of a label with logit ``delta`` among ``k - 1`` zeros."""
    if math.isinf(delta):
        return 1.0
    r = math.exp(delta)
    return r / (r + k - 1)


def query_uniforms(seed: int, image_ref: ImageRef, iteration: int, group_index: int,
                   group: LabelSet) -> tuple[float, float, float]:
    """Three uniforms in [0, 1) derived from a BLAKE2b digest of the query identity.

    The group enters in sorted order, so its presentation order is irrelevant.
    """
    key = "\x1f".join((
        str(seed), image_key(image_ref), str(iteration), str(group_index),
        "\x1e".join(sorted(group.labels)),
    ))
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=24).digest()
    return (
        int.from_bytes(digest[0:8], "big") / 2**64,
        int.from_bytes(digest[8:16], "big") / 2**64,
        int.from_bytes(digest[16:24], "big") / 2**64,
    )


def oracle_answer(params: DilutionOracleParams, group: LabelSet,
                  rng: random.Random | None = None, *,
                  image_ref: ImageRef = "", iteration: int = 1,
                  group_index: int = 1) -> str:
    """Sample one simulated model answer for ``group``.

    Without an explicit ``rng`` the draws come from :func:`query_uniforms`,
    so the same query always gets the same answer regardless of scheduling
    order.
    """
    labels = group.labels
    if not labels:
        raise ValueError("group must be non-empty")
    truth = params.true_label
    present = truth in labels
    if not present and params.p_none_when_absent >= 1.0:
        return NONE_TOKEN
    if rng is None:
        u_none, u_true, u_pick = query_uniforms(
            params.seed, image_ref, iteration, group_index, group)
    else:
        u_none, u_true, u_pick = rng.random(), rng.random(), rng.random()
    # distractors are indexed in sorted order so group ordering cannot matter
    distractors = sorted(x for x in labels if x != truth)
    if present:
        if u_none < params.p_none_when_present:
            return NONE_TOKEN
        if not distractors or u_true < true_label_probability(
                params.signal_boost_delta, len(labels)):
            return truth
    elif u_none < params.p_none_when_absent:
        return NONE_TOKEN
    return distractors[int(u_pick * len(distractors))]


def oracle_latency(params: DilutionOracleParams, k: int) -> float:
    """Simulated seconds for one call over ``k`` candidates: c0 + c2 k^2."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return params.latency_c0 + params.latency_c2 * k * k


class DilutionOracle:
    """Deterministic simulated backend; safe to call from many threads."""

    def __init__(self, params: DilutionOracleParams):
        self.params = params

    def with_truth(self, true_label: str) -> DilutionOracle:
        return DilutionOracle(replace(self.params, true_label=true_label))

    def infer(self, q: Query) -> BackendResult:
        text = oracle_answer(
            self.params, q.group,
            image_ref=q.image_ref, iteration=q.iteration, group_index=q.group_index,
        )
        return BackendResult(
            raw_text=text,
            latency_s=oracle_latency(self.params, len(q.group)),
            token_estimate=estimate_tokens(q.prompt),
        )


class CallableBackend:
    """Adapter turning ``fn(query) -> str`` into a backend with zero latency.

    Handy for scripted adversaries such as an all-survive backend that
    always returns the first label of its group.
    """

    def __init__(self, fn: Callable[[Query], str], latency_s: float = 0.0):
        self.fn = fn
        self.latency_s = latency_s

    def infer(self, q: Query) -> BackendResult:
        text = self.fn(q)
        return BackendResult(text, self.latency_s, estimate_tokens(q.prompt))


def all_survive_backend() -> CallableBackend:
    return CallableBackend(lambda q: q.group[0])


# -- live HTTP backend -----------------------------------------------------


@dataclass
class HttpBackendConfig:
    base_url: str = "http://localhost:8000/v1"
    model: str = "qwen3-vl-8b"
    api_key_env: str = "DCI_API_KEY"
    timeout_s: float = 120.0
    max_in_flight: int = 8
    max_attempts: int = 3
    backoff_base_s: float = 1.0
    backoff_max_s: float = 30.0
    temperature: float | None = None
    max_tokens: int = 64
    extra_headers: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")


def image_content_part(image_ref: ImageRef) -> dict:
    """Chat content part for an image: URLs pass through, files are inlined."""
    if isinstance(image_ref, bytes):
        b64 = base64.b64encode(image_ref).decode("ascii")
        return {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
    ref = str(image_ref)
    if ref.startswith(("http://", "https://", "data:")):
        return {"type": "image_url", "image_url": {"url": ref}}
    path = Path(ref)
    mime = mimetypes.guess_type(path.name)[0] or "image/png"
    b64 = base64.b64encode(path.read_bytes()).decode("ascii")
    return {"type": "image_url", "image_url": {"url": f"data:{mime};base64,{b64}"}}


def build_chat_request(q: Query, cfg: HttpBackendConfig) -> dict:
    body: dict = {
        "model": cfg.model,
        "messages": [
            {
                "role": "user",
                "content": [
                    image_content_part(q.image_ref),
                    {"type": "text", "text": q.prompt},
                ],
            }
        ],
        "max_tokens": cfg.max_tokens,
    }
    if cfg.temperature is not None:
        body["temperature"] = cfg.temperature
    return body


def extract_text(payload: dict) -> str:
    try:
        content = payload["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"reply has no text choice: {exc!r}") from exc
    if isinstance(content, list):
        content = "".join(
            part.get("text", "") for part in content if isinstance(part, dict)
        )
    if not isinstance(content, str):
        raise BackendError("reply content is not text")
    return content


class HttpBackend:
    """Chat-completions client with bounded in-flight requests and retries."""

    def __init__(self, cfg: HttpBackendConfig, *, client: httpx.Client | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._client = client or httpx.Client(timeout=cfg.timeout_s)
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._sleep = sleep

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> HttpBackend:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json", **self.cfg.extra_headers}
        key = os.environ.get(self.cfg.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_once(self, body: dict) -> str:
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        try:
            resp = self._client.post(
                url, json=body, headers=self._headers(), timeout=self.cfg.timeout_s
            )
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"timed out after {self.cfg.timeout_s}s") from exc
        except httpx.HTTPError as exc:
            raise BackendError(f"transport error: {exc!r}") from exc
        if resp.status_code >= 400:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
        except json.JSONDecodeError as exc:
            raise BackendError("reply is not JSON") from exc
        return extract_text(payload)

    def infer(self, q: Query) -> BackendResult:
        body = build_chat_request(q, self.cfg)
        last: BackendError | None = None
        for attempt in range(1, self.cfg.max_attempts + 1):
            if attempt > 1:
                delay = min(self.cfg.backoff_max_s,
                            self.cfg.backoff_base_s * 2 ** (attempt - 2))
                logger.warning("retrying %s (attempt %d) after %.1fs: %s",
                               self.cfg.model, attempt, delay, last)
                self._sleep(delay)
            with self._slots:
                start = time.perf_counter()
                try:
                    text = self._post_once(body)
                except BackendError as exc:
                    last = exc
                    continue
                elapsed = time.perf_counter() - start
            return BackendResult(
                raw_text=text,
                latency_s=elapsed,
                token_estimate=estimate_tokens(q.prompt) + estimate_tokens(text),
                attempts=attempt,
            )
        assert last is not None
        err_cls = type(last)
        raise err_cls(f"{last} (gave up after {self.cfg.max_attempts} attempts)",
                      attempts=self.cfg.max_attempts)
