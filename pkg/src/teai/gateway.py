"""Chat-endpoint plumbing: prompt building, querying with retry + cache, reply parsing.

Each task is rated by three judge models behind OpenAI-compatible chat
endpoints. Prompts are rendered from a versioned five-shot template;
replies are cached on disk keyed by (model id, template version, prompt
hash) so interrupted runs resume for free; the ``[rating, "motivation"]``
reply format is parsed tolerantly. A seeded mock transport stands in for
the endpoints in hermetic runs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import requests

from .errors import (
    ConfigError,
    ResponseParseError,
    TransientTransportFailure,
    TransportError,
)
from .onet import TaskRecord

logger = logging.getLogger(__name__)

RATING_MIN = 1
RATING_MAX = 5
TECHNOLOGY_FAMILIES = (
    "large language models",
    "image processing systems",
    "robotic systems",
)


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = 42

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """One judge model: endpoint location, key reference, decoding knobs.

    ``api_key_ref`` names an environment variable; the key itself is never
    written to config, cache, or output files.
    """

    model_id: str
    endpoint_url: str
    api_key_ref: str = ""
    decoding: Decoding = field(default_factory=Decoding)


@dataclass(frozen=True)
class Shot:
    task: str
    rating: int
    motivation: str


@dataclass(frozen=True)
class PromptTemplate:
    """Versioned five-shot assessment prompt.

    The version participates in every cache key and output row, so editing
    a template without bumping the version is the one way to corrupt a
    cache; ``validate()`` runs at load time.
    """

    version: str
    instruction: str
    shots: tuple[Shot, ...]
    output_format_clause: str

    def validate(self) -> None:
        if len(self.shots) != 5:
            raise ConfigError(f"template {self.version!r}: expected exactly 5 shots, found {len(self.shots)}")
        lowered = self.instruction.lower()
        for anchor in ("1", "5", "poor", "excellent"):
            if anchor not in lowered:
                raise ConfigError(f"template {self.version!r}: instruction missing scale anchor {anchor!r}")
        for family, keys in (("text models", ("language model", "llm")),
                             ("image processing", ("image",)),
                             ("robotics", ("robot",))):
            if not any(key in lowered for key in keys):
                raise ConfigError(f"template {self.version!r}: instruction does not name {family}")
        for shot in self.shots:
            if not RATING_MIN <= shot.rating <= RATING_MAX:
                raise ConfigError(f"template {self.version!r}: shot rating {shot.rating} outside 1-5")

    def content_hash(self) -> str:
        payload = json.dumps(
            [self.version, self.instruction, [(s.task, s.rating, s.motivation) for s in self.shots],
             self.output_format_clause],
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


DEFAULT_TEMPLATE = PromptTemplate(
    version="v1",
    instruction=(
        "You assess how well a combination of current AI technologies could perform a job task. "
        "Consider three technology families: large language models (LLMs) for understanding and "
        "producing text, image processing systems for decisions based on visual data, and robotic "
        "systems for physical execution. Rate how well these technologies, alone or combined, could "
        "perform the task on a scale of 1 to 5, where 1 stands for poor and 5 stands for excellent, "
        "and give a short motivation for the rating."
    ),
    shots=(
        Shot(
            task="Provide grief counseling to families after the loss of a loved one.",
            rating=1,
            motivation=(
                "Empathy and trust built in person are beyond current systems. LLMs can draft "
                "supporting materials, but the core of the task is an emotional human interaction, "
                "and neither image processing nor robotics contributes meaningfully."
            ),
        ),
        Shot(
            task="Negotiate contract terms with suppliers during on-site visits.",
            rating=2,
            motivation=(
                "LLMs can prepare positions and summarize terms, yet live negotiation depends on "
                "reading the counterpart and building rapport. Image processing and robotic systems "
                "play no real part, so the technologies together cover only a small share of the task."
            ),
        ),
        Shot(
            task="Inspect returned merchandise and decide whether a refund is justified.",
            rating=3,
            motivation=(
                "Image processing systems can detect visible damage and LLMs can apply the refund "
                "policy to the evidence, but ambiguous cases still need human judgment. Robotic "
                "systems could move items through the inspection station."
            ),
        ),
        Shot(
            task="Prepare monthly summaries of account activity for clients.",
            rating=4,
            motivation=(
                "LLMs can draft the summaries directly from transaction data and tailor the wording "
                "per client, with image processing systems handling scanned documents. Human review "
                "remains only for unusual accounts, so the technologies cover most of the task."
            ),
        ),
        Shot(
            task="Sort packages by destination code on a conveyor line.",
            rating=5,
            motivation=(
                "Robotic systems combined with image processing already perform this task at scale: "
                "codes are read visually and parcels are routed mechanically. LLM support is not "
                "needed, and human involvement is limited to supervision."
            ),
        ),
    ),
    output_format_clause=(
        'Answer only with a list whose first element is the rate and whose second element is the '
        'motivation, like [rate, "motivation"].'
    ),
)

BUILTIN_TEMPLATES = {DEFAULT_TEMPLATE.version: DEFAULT_TEMPLATE}


def build_prompt(template: PromptTemplate, task: TaskRecord | str) -> str:
    """Render the assessment prompt; identical inputs give identical bytes."""
    description = task if isinstance(task, str) else task.description
    if not description:
        raise ValueError("task description must be non-empty")
    parts = [template.instruction, "", "Examples:"]
    for number, shot in enumerate(template.shots, start=1):
        parts.append(f"{number}. Task: {shot.task}")
        parts.append(f'   Answer: [{shot.rating}, "{shot.motivation}"]')
    parts.extend(["", template.output_format_clause, "", f"Task: {description}", "Answer:"])
    return "\n".join(parts)


_LIST_RE = re.compile(r"\[\s*[\"']?\s*(\d+)\s*[\"']?\s*,\s*(.*?)\s*\]", re.DOTALL)


def parse_response(raw: str) -> tuple[int, str]:
    """Extract (rating, motivation) from the first list-like reply structure.

    Tolerates surrounding prose, quoted or bare integers, and single or
    double quotes around the motivation. A missing list, an empty
    motivation, or a rating outside 1-5 all raise ResponseParseError.
    """
    match = _LIST_RE.search(raw or "")
    if not match:
        raise ResponseParseError(f"no [rate, motivation] list in reply: {raw[:120]!r}")
    rating = int(match.group(1))
    if not RATING_MIN <= rating <= RATING_MAX:
        raise ResponseParseError(f"rating {rating} outside {RATING_MIN}-{RATING_MAX}")
    motivation = match.group(2).strip()
    if len(motivation) >= 2 and motivation[0] == motivation[-1] and motivation[0] in "\"'":
        motivation = motivation[1:-1].strip()
    if not motivation:
        raise ResponseParseError("empty motivation")
    return rating, motivation


@dataclass(frozen=True)
class ModelVerdict:
    """One model's judgment of one task; the raw reply is kept for audit."""

    model_id: str
    rating: int
    motivation: str
    raw_reply: str
    attempt_count: int = 1

    def __post_init__(self) -> None:
        if not RATING_MIN <= self.rating <= RATING_MAX:
            raise ValueError(f"rating {self.rating} outside {RATING_MIN}-{RATING_MAX}")
        if not self.motivation:
            raise ValueError("motivation must be non-empty")
        if self.attempt_count < 1:
            raise ValueError("attempt_count must be positive")


class ChatTransport(Protocol):
    """Transport returning the assistant message text for a prompt."""

    fingerprint: str

    def complete(self, spec: ModelSpec, prompt: str) -> str: ...


class HttpChatTransport:
    """OpenAI-compatible ``POST /v1/chat/completions`` client."""

    fingerprint = "live"

    def __init__(self, timeout: float = 120.0):
        self.timeout = timeout
        self._session = requests.Session()

    @staticmethod
    def _url(endpoint_url: str) -> str:
        base = endpoint_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        if base.endswith("/v1"):
            return f"{base}/chat/completions"
        return f"{base}/v1/chat/completions"

    def complete(self, spec: ModelSpec, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if spec.api_key_ref:
            key = os.environ.get(spec.api_key_ref)
            if not key:
                raise ConfigError(f"environment variable {spec.api_key_ref} is not set for {spec.model_id}")
            headers["Authorization"] = f"Bearer {key}"
        body: dict = {
            "model": spec.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": spec.decoding.temperature,
            "max_tokens": spec.decoding.max_tokens,
        }
        if spec.decoding.seed is not None:
            body["seed"] = spec.decoding.seed
        try:
            response = self._session.post(self._url(spec.endpoint_url), json=body, headers=headers,
                                          timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransientTransportFailure(f"{spec.model_id}: {exc}") from exc
        if response.status_code in (401, 403):
            raise ConfigError(f"{spec.model_id}: authentication failed ({response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportFailure(f"{spec.model_id}: HTTP {response.status_code}")
        if response.status_code != 200:
            raise TransportError(f"{spec.model_id}: HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"{spec.model_id}: malformed completion payload: {exc}") from exc


class MockChatTransport:
    """Deterministic stand-in for a chat endpoint (hermetic CI runs).

    Ratings and motivations derive from a hash of (seed, model id, prompt),
    so different models disagree realistically and re-runs are identical.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.fingerprint = f"mock-{seed}"
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, spec: ModelSpec, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        digest = hashlib.sha256(f"{self.seed}\x00{spec.model_id}\x00{prompt}".encode()).digest()
        rating = RATING_MIN + digest[0] % (RATING_MAX - RATING_MIN + 1)
        family = TECHNOLOGY_FAMILIES[digest[1] % len(TECHNOLOGY_FAMILIES)]
        motivation = (
            f"Deterministic mock assessment: {family} cover the dominant requirements of this task "
            f"at level {rating} of 5."
        )
        return f'[{rating}, "{motivation}"]'


class HttpEmbeddingEndpoint:
    """OpenAI-compatible ``POST /v1/embeddings`` client with retries."""

    def __init__(self, model_id: str, endpoint_url: str, api_key_ref: str = "",
                 timeout: float = 60.0, max_retries: int = 3, backoff: float = 0.5):
        self.model_id = model_id
        self.endpoint_url = endpoint_url
        self.api_key_ref = api_key_ref
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._session = requests.Session()

    def _url(self) -> str:
        base = self.endpoint_url.rstrip("/")
        if base.endswith("/embeddings"):
            return base
        if base.endswith("/v1"):
            return f"{base}/embeddings"
        return f"{base}/v1/embeddings"

    def _fetch_once(self, text: str) -> Sequence[float]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_ref:
            key = os.environ.get(self.api_key_ref)
            if not key:
                raise ConfigError(f"environment variable {self.api_key_ref} is not set for {self.model_id}")
            headers["Authorization"] = f"Bearer {key}"
        try:
            response = self._session.post(self._url(), json={"model": self.model_id, "input": [text]},
                                          headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransientTransportFailure(f"{self.model_id}: {exc}") from exc
        if response.status_code in (401, 403):
            raise ConfigError(f"{self.model_id}: authentication failed ({response.status_code})")
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientTransportFailure(f"{self.model_id}: HTTP {response.status_code}")
        if response.status_code != 200:
            raise TransportError(f"{self.model_id}: HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["data"][0]["embedding"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"{self.model_id}: malformed embedding payload: {exc}") from exc

    def fetch(self, text: str) -> Sequence[float]:
        return _with_retries(lambda: self._fetch_once(text), self.max_retries, self.backoff)[0]


class MockEmbeddingEndpoint:
    """Deterministic 16-dimensional embedding derived from the text hash."""

    def __init__(self, model_id: str = "mock-embedding-16d"):
        self.model_id = model_id

    def fetch(self, text: str) -> Sequence[float]:
        digest = hashlib.sha256(text.encode()).digest()
        return [(b - 127.5) / 127.5 for b in digest[:16]]


def _with_retries(fn, max_retries: int, backoff: float):
    """Run ``fn`` with exponential backoff; returns (result, attempts_used)."""
    last: Exception | None = None
    for attempt in range(1, max_retries + 1):
        try:
            return fn(), attempt
        except TransientTransportFailure as exc:
            last = exc
            if attempt < max_retries:
                time.sleep(backoff * 2 ** (attempt - 1))
    raise TransportError(f"retries exhausted after {max_retries} attempt(s): {last}") from last


class ReplyCache:
    """Content-addressed JSON reply store; writes are serialized and atomic."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(*parts: object) -> str:
        return hashlib.sha256("\x00".join(str(p) for p in parts).encode()).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict | None:
        path = self._path(key)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put(self, key: str, record: dict) -> None:
        path = self._path(key)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(record, sort_keys=True), encoding="utf-8")
            tmp.replace(path)


class LlmGateway:
    """Queries the judge ensemble for one task at a time.

    Verdict slots always come back in config order regardless of completion
    timing. A model that keeps failing (transport exhausted, or replies
    that never parse within the re-query budget) yields ``None`` in its
    slot; tasks with fewer than two usable verdicts are excluded downstream.
    """

    def __init__(
        self,
        specs: Sequence[ModelSpec],
        template: PromptTemplate,
        transport: ChatTransport,
        cache: ReplyCache | None = None,
        *,
        max_retries: int = 3,
        requery_budget: int = 2,
        max_in_flight: int = 4,
        backoff: float = 0.5,
    ):
        ids = [spec.model_id for spec in specs]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"model ids must be distinct, got {ids}")
        template.validate()
        self.specs = list(specs)
        self.template = template
        self.transport = transport
        self.cache = cache
        self.max_retries = max_retries
        self.requery_budget = requery_budget
        self.backoff = backoff
        self._gates = {
            spec.endpoint_url: threading.Semaphore(max_in_flight) for spec in specs
        }

    def _fetch_reply(self, spec: ModelSpec, prompt: str, attempt_index: int) -> tuple[str, int]:
        """Return (reply text, transport attempts), via cache when possible."""
        key = None
        if self.cache is not None:
            key = ReplyCache.key(
                "chat", self.transport.fingerprint, spec.model_id,
                self.template.version, hashlib.sha256(prompt.encode()).hexdigest(), attempt_index,
            )
            cached = self.cache.get(key)
            if cached is not None:
                return cached["reply"], int(cached.get("attempts", 1))
        gate = self._gates[spec.endpoint_url]
        with gate:
            reply, attempts = _with_retries(
                lambda: self.transport.complete(spec, prompt), self.max_retries, self.backoff
            )
        if self.cache is not None and key is not None:
            self.cache.put(key, {
                "model_id": spec.model_id,
                "template_version": self.template.version,
                "attempt_index": attempt_index,
                "reply": reply,
                "attempts": attempts,
            })
        return reply, attempts

    def _verdict_for(self, spec: ModelSpec, prompt: str, task_id: int) -> ModelVerdict | None:
        for attempt_index in range(self.requery_budget + 1):
            try:
                reply, attempts = self._fetch_reply(spec, prompt, attempt_index)
            except TransportError as exc:
                logger.warning("task %d: %s unavailable (%s)", task_id, spec.model_id, exc)
                return None
            try:
                rating, motivation = parse_response(reply)
            except ResponseParseError as exc:
                logger.warning("task %d: %s reply unparseable on attempt %d (%s)",
                               task_id, spec.model_id, attempt_index, exc)
                continue
            return ModelVerdict(spec.model_id, rating, motivation, reply, attempts)
        return None

    def assess_task(self, task: TaskRecord) -> list[ModelVerdict | None]:
        """Judge one task with every configured model; slots in config order."""
        prompt = build_prompt(self.template, task)
        return [self._verdict_for(spec, prompt, task.task_id) for spec in self.specs]
