"""Pluggable foundation-model providers.

Four roles back the pipeline: captioner (image -> text), chat
(prompt -> text), embedder (text/image -> unit vector), and panorama
generator (prompt -> 2:1 image). Each role has a deterministic mock and
an HTTP gateway client; config selects per role.

Every call is journaled as a :class:`~vlnaug.corpus.ProvenanceRecord`
through a :class:`CallRecorder` so the owning rewrite bundle can carry
provider identities, parameters, attempt counts, and durations.
"""

from __future__ import annotations

import base64
import hashlib
import os
import re
import threading
import time
import warnings
from dataclasses import dataclass
from typing import Any, Callable, Protocol

import numpy as np

from .corpus import (
    Panorama,
    ProvenanceRecord,
    decode_png,
    encode_png,
    sha256_hex,
    stable_hash,
)
from .errors import ConfigError, ProtocolError, ProviderError, ValidationError

DEFAULT_TEMPERATURE = 0.8
DEFAULT_PRESENCE_PENALTY = 0.0
DEFAULT_MAX_TOKENS = 512
DEFAULT_INFERENCE_STEPS = 30
DEFAULT_PANO_WIDTH = 1024
DEFAULT_PANO_HEIGHT = 512

RETRY_BASE_DELAY_S = 1.0
RETRY_FACTOR = 2.0
RETRY_MAX_ATTEMPTS = 5

EPOCH_TIMESTAMP = "1970-01-01T00:00:00Z"


# ---------------------------------------------------------------------------
# Request / result envelopes


@dataclass(frozen=True)
class ChatRequest:
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    presence_penalty: float = DEFAULT_PRESENCE_PENALTY
    max_tokens: int = DEFAULT_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.user_text.strip():
            raise ValidationError("chat request needs non-empty user text")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens must be positive")


@dataclass(frozen=True)
class EmbedResult:
    vector: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-6:
            raise ProtocolError(f"embedding norm {norm} deviates from 1")
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def cosine(self, other: "EmbedResult") -> float:
        return float(np.dot(self.vector, other.vector))


@dataclass(frozen=True)
class PanoramaRequest:
    prompt_text: str
    width: int = DEFAULT_PANO_WIDTH
    height: int = DEFAULT_PANO_HEIGHT
    num_inference_steps: int = DEFAULT_INFERENCE_STEPS
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.prompt_text.strip():
            raise ValidationError("panorama request needs a prompt")
        if self.width != 2 * self.height or self.height <= 0:
            raise ValidationError(f"panorama aspect must be 2:1, got {self.width}x{self.height}")
        if self.num_inference_steps <= 0:
            raise ValidationError("num_inference_steps must be positive")


# ---------------------------------------------------------------------------
# Provenance journaling


class CallRecorder:
    """Thread-safe journal of provider calls for one unit of work."""

    def __init__(self) -> None:
        self._records: list[ProvenanceRecord] = []
        self._lock = threading.Lock()

    def add(self, record: ProvenanceRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> list[ProvenanceRecord]:
        with self._lock:
            return list(self._records)


def _record(
    recorder: CallRecorder | None,
    provider_id: str,
    role: str,
    params: dict[str, Any],
    attempts: int,
    started: float | None,
    deterministic: bool,
    cached: bool = False,
) -> None:
    if recorder is None:
        return
    if deterministic:
        duration_ms = 0.0
        timestamp = EPOCH_TIMESTAMP
    else:
        duration_ms = (time.perf_counter() - started) * 1000.0 if started is not None else 0.0
        timestamp = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    recorder.add(
        ProvenanceRecord(
            provider_id=provider_id,
            role=role,
            params=params,
            attempts=attempts,
            duration_ms=duration_ms,
            timestamp=timestamp,
            cached=cached,
        )
    )


# ---------------------------------------------------------------------------
# Role protocols


class Captioner(Protocol):
    provider_id: str

    def caption(self, image: np.ndarray, recorder: CallRecorder | None = None) -> str: ...


class ChatProvider(Protocol):
    provider_id: str

    def chat(self, req: ChatRequest, recorder: CallRecorder | None = None) -> str: ...


class Embedder(Protocol):
    provider_id: str

    def embed_text(self, text: str, recorder: CallRecorder | None = None) -> EmbedResult: ...

    def embed_image(self, image: np.ndarray, recorder: CallRecorder | None = None) -> EmbedResult: ...


class PanoramaGenerator(Protocol):
    provider_id: str

    def generate_panorama(
        self, req: PanoramaRequest, recorder: CallRecorder | None = None
    ) -> Panorama: ...


# ---------------------------------------------------------------------------
# Deterministic helpers shared by the mocks


def image_checksum(image: np.ndarray) -> str:
    arr = np.ascontiguousarray(image)
    return hashlib.sha256(arr.tobytes() + str(arr.shape).encode()).hexdigest()


def unit_vector_from_key(key: str, dim: int) -> np.ndarray:
    rng = np.random.default_rng(stable_hash("embed", key))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


_WORD_BANK = (
    "armchair", "bookshelf", "floor lamp", "potted plant", "coffee table",
    "wall mirror", "area rug", "ceiling fan", "side table", "ottoman",
    "pendant lamp", "bar stool", "picture frame", "vase", "bench",
    "chandelier", "fireplace", "curtains", "sculpture", "console table",
)

_ACTION_SYNONYMS = (
    {"walk": "stroll", "go": "head", "turn": "swing", "stop": "halt",
     "exit": "leave", "enter": "step into", "wait": "pause", "head": "move"},
    {"walk": "move", "go": "proceed", "turn": "pivot", "stop": "stand",
     "exit": "depart", "enter": "go into", "wait": "stay", "head": "advance"},
    {"walk": "wander", "go": "travel", "turn": "rotate", "stop": "wait",
     "exit": "step out of", "enter": "walk into", "wait": "linger", "head": "stride"},
)

_STOPWORDS = frozenset(
    "the a an and or to of at in on by with into from past then until till your "
    "you left right straight ahead up down out over under through toward towards "
    "it its is are be near beside stop walk go turn head exit enter wait around".split()
)


def extract_noun_phrases(text: str) -> list[str]:
    """Heuristic landmark extraction: word runs following an article."""
    tokens = re.findall(r"[a-z]+", text.lower())
    out: list[str] = []
    i = 0
    while i < len(tokens):
        if tokens[i] in ("the", "a", "an"):
            phrase = []
            j = i + 1
            while j < len(tokens) and tokens[j] not in _STOPWORDS:
                phrase.append(tokens[j])
                j += 1
            if phrase:
                candidate = " ".join(phrase)
                if candidate not in out:
                    out.append(candidate)
            i = j
        else:
            i += 1
    return out


def synthesize_chat_reply(user_text: str, seed: int | None) -> str:
    """Deterministic grammar-conforming reply keyed by hash(user, seed).

    Inspects the prompt for the labeled fields it demands and fills them
    from a fixed word bank; unknown prompts get an opaque tagged line.
    """
    h = stable_hash(seed, user_text)
    rng = np.random.default_rng(h)

    if "Rewritten instruction:" in user_text:
        original = _last_labeled_line(user_text, "Original instruction:")
        synonyms = _ACTION_SYNONYMS[h % len(_ACTION_SYNONYMS)]
        words = original.split()
        rewritten = []
        for w in words:
            bare = w.strip(".,;").lower()
            if bare in synonyms:
                repl = synonyms[bare]
                if w[:1].isupper():
                    repl = repl.capitalize()
                rewritten.append(w.replace(w.strip(".,;"), repl))
            else:
                rewritten.append(w)
        text = " ".join(rewritten)
        if text == original:
            text = "Then " + text
        return f"Rewritten instruction: {text}"

    if "Added objects:" in user_text and "Rewritten description:" in user_text:
        scene = _last_labeled_line(user_text, "Scene description:")
        count = 2 + int(h % 3)
        picks = list(rng.choice(len(_WORD_BANK), size=count, replace=False))
        objects = [_WORD_BANK[int(p)] for p in picks]
        tail = objects[0] if len(objects) == 1 else ", ".join(objects[:-1]) + " and " + objects[-1]
        return (
            f"Added objects: {', '.join(objects)}\n"
            f"Rewritten description: {scene} with {tail} arranged around the space"
        )

    if "Landmarks:" in user_text:
        instruction = _last_labeled_line(user_text, "Instruction:")
        nouns = extract_noun_phrases(instruction)
        if not nouns:
            nouns = [_WORD_BANK[h % len(_WORD_BANK)]]
        return "Landmarks: " + ", ".join(nouns)

    return f"mock-chat-{h:016x}"


def _last_labeled_line(text: str, label: str) -> str:
    hits = [ln[len(label):].strip() for ln in text.splitlines() if ln.strip().startswith(label)]
    return hits[-1] if hits else ""


def procedural_panorama(prompt: str, width: int, height: int, seed: int | None) -> np.ndarray:
    """Seeded gradient background plus one labeled color block per prompt noun."""
    rng = np.random.default_rng(stable_hash("pano", seed, prompt))
    c0 = rng.integers(20, 120, size=3).astype(np.float64)
    c1 = rng.integers(130, 235, size=3).astype(np.float64)
    ys = np.linspace(0.0, 1.0, height)[:, None, None]
    xs = np.linspace(0.0, 1.0, width, endpoint=False)[None, :, None]
    px = c0 + (c1 - c0) * (0.6 * ys + 0.4 * np.sin(2 * np.pi * xs) ** 2)
    nouns = extract_noun_phrases(prompt)[:6]
    for noun in nouns:
        nh = stable_hash("block", noun, seed)
        bw = max(4, width // 10)
        bh = max(4, height // 6)
        x0 = nh % max(1, width - bw)
        y0 = (nh // 7) % max(1, height - bh)
        color = np.array([(nh >> 16) % 256, (nh >> 24) % 256, (nh >> 32) % 256], dtype=np.float64)
        px[y0 : y0 + bh, x0 : x0 + bw] = color
    return np.clip(px, 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# Mock providers


class MockCaptioner:
    provider_id = "mock-captioner"

    def caption(self, image: np.ndarray, recorder: CallRecorder | None = None) -> str:
        if image.size == 0:
            raise ValidationError("cannot caption an empty image")
        checksum = image_checksum(image)
        _record(recorder, self.provider_id, "caption",
                {"image_sha": checksum[:16]}, 1, None, deterministic=True)
        return f"mock-caption-{checksum[:8]}"


class MockChat:
    provider_id = "mock-chat"

    def chat(self, req: ChatRequest, recorder: CallRecorder | None = None) -> str:
        reply = synthesize_chat_reply(req.user_text, req.seed)
        _record(recorder, self.provider_id, "chat",
                {"temperature": req.temperature, "presence_penalty": req.presence_penalty,
                 "max_tokens": req.max_tokens, "seed": req.seed,
                 "prompt_sha": sha256_hex(req.user_text.encode())[:16]},
                1, None, deterministic=True)
        return reply


class MockEmbedder:
    """Hash-seeded unit embeddings with an optional landmark registry.

    Registered landmark labels embed to one-hot basis vectors; images can
    be tagged to a registered label so their embedding matches it exactly.
    """

    provider_id = "mock-embedder"

    def __init__(self, dim: int = 64):
        self.dim = dim
        self._labels: dict[str, int] = {}
        self._image_tags: dict[str, str] = {}

    def register_landmark(self, label: str) -> int:
        if label not in self._labels:
            if len(self._labels) >= self.dim:
                raise ConfigError(f"landmark registry full (dim={self.dim})")
            self._labels[label] = len(self._labels)
        return self._labels[label]

    def tag_image(self, image: np.ndarray, label: str) -> None:
        self.register_landmark(label)
        self._image_tags[image_checksum(image)] = label

    def _basis(self, index: int) -> np.ndarray:
        v = np.zeros(self.dim)
        v[index] = 1.0
        return v

    def embed_text(self, text: str, recorder: CallRecorder | None = None) -> EmbedResult:
        _record(recorder, self.provider_id, "embed_text",
                {"dim": self.dim, "text_sha": sha256_hex(text.encode())[:16]},
                1, None, deterministic=True)
        if text in self._labels:
            return EmbedResult(self._basis(self._labels[text]))
        return EmbedResult(unit_vector_from_key("text:" + text, self.dim))

    def embed_image(self, image: np.ndarray, recorder: CallRecorder | None = None) -> EmbedResult:
        checksum = image_checksum(image)
        _record(recorder, self.provider_id, "embed_image",
                {"dim": self.dim, "image_sha": checksum[:16]}, 1, None, deterministic=True)
        label = self._image_tags.get(checksum)
        if label is not None:
            return EmbedResult(self._basis(self._labels[label]))
        return EmbedResult(unit_vector_from_key("image:" + checksum, self.dim))


class MockPanoramaGenerator:
    provider_id = "mock-panogen"

    def generate_panorama(
        self, req: PanoramaRequest, recorder: CallRecorder | None = None
    ) -> Panorama:
        px = procedural_panorama(req.prompt_text, req.width, req.height, req.seed)
        _record(recorder, self.provider_id, "panorama",
                {"width": req.width, "height": req.height,
                 "num_inference_steps": req.num_inference_steps, "seed": req.seed,
                 "prompt_sha": sha256_hex(req.prompt_text.encode())[:16]},
                1, None, deterministic=True)
        return Panorama(pixels=px, source="generated", seed=req.seed)


# ---------------------------------------------------------------------------
# HTTP gateway client


@dataclass
class RetryPolicy:
    base_delay_s: float = RETRY_BASE_DELAY_S
    factor: float = RETRY_FACTOR
    max_attempts: int = RETRY_MAX_ATTEMPTS
    sleep: Callable[[float], None] = time.sleep

    def delay(self, attempt: int) -> float:
        return self.base_delay_s * (self.factor ** (attempt - 1))


class Transport(Protocol):
    def post(self, path: str, payload: dict[str, Any]) -> tuple[int, dict[str, Any], dict[str, str]]:
        """Returns (status, body, headers)."""
        ...


class HttpxTransport:
    """Thin synchronous HTTP layer over httpx with bearer auth."""

    def __init__(self, base_url: str, token: str | None = None, timeout: float = 60.0):
        import httpx

        self._client = httpx.Client(base_url=base_url, timeout=timeout)
        self._headers = {"Authorization": f"Bearer {token}"} if token else {}

    def post(self, path: str, payload: dict[str, Any]) -> tuple[int, dict[str, Any], dict[str, str]]:
        import httpx

        try:
            resp = self._client.post(path, json=payload, headers=self._headers)
        except httpx.HTTPError as exc:
            raise ProviderError(f"gateway unreachable: {exc}") from exc
        try:
            body = resp.json() if resp.content else {}
        except ValueError:
            body = {}
        return resp.status_code, body, dict(resp.headers)

    def close(self) -> None:
        self._client.close()


class BoundedTransport:
    """Caps simultaneous in-flight requests through an inner transport."""

    def __init__(self, inner: Transport, in_flight_limit: int):
        if in_flight_limit < 1:
            raise ConfigError("in-flight limit must be >= 1")
        self._inner = inner
        self._sem = threading.Semaphore(in_flight_limit)

    def post(self, path: str, payload: dict[str, Any]) -> tuple[int, dict[str, Any], dict[str, str]]:
        with self._sem:
            return self._inner.post(path, payload)


class GatewayProvider:
    """All four provider roles spoken over the gateway HTTP API.

    Transient failures (HTTP >= 500, 429) are retried with exponential
    backoff (base 1 s, factor 2, up to 5 attempts); a Retry-After header
    overrides the computed delay.
    """

    def __init__(
        self,
        transport: Transport,
        retry: RetryPolicy | None = None,
        provider_id: str = "gateway",
    ):
        self.provider_id = provider_id
        self._transport = transport
        self._retry = retry or RetryPolicy()
        self._embed_dim: int | None = None
        self._dim_lock = threading.Lock()

    @classmethod
    def from_env(
        cls,
        url: str | None = None,
        token: str | None = None,
        in_flight_limit: int = 8,
        retry: RetryPolicy | None = None,
    ) -> "GatewayProvider":
        url = url or os.environ.get("RAM_GATEWAY_URL")
        token = token if token is not None else os.environ.get("RAM_GATEWAY_TOKEN")
        if not url:
            raise ConfigError("gateway provider selected but RAM_GATEWAY_URL is not set")
        transport = BoundedTransport(HttpxTransport(url, token), in_flight_limit)
        return cls(transport, retry=retry)

    # -- plumbing

    def _post_with_retry(self, path: str, payload: dict[str, Any]) -> tuple[dict[str, Any], int]:
        last_status: int | None = None
        for attempt in range(1, self._retry.max_attempts + 1):
            try:
                status, body, headers = self._transport.post(path, payload)
            except ProviderError:
                if attempt == self._retry.max_attempts:
                    raise
                self._retry.sleep(self._retry.delay(attempt))
                continue
            if status < 400:
                return body, attempt
            last_status = status
            transient = status >= 500 or status == 429
            if not transient or attempt == self._retry.max_attempts:
                raise ProviderError(
                    f"gateway {path} failed with HTTP {status}", status=status, attempts=attempt
                )
            delay = self._retry.delay(attempt)
            retry_after = headers.get("retry-after") or headers.get("Retry-After")
            if retry_after:
                try:
                    delay = max(delay, float(retry_after))
                except ValueError:
                    pass
            self._retry.sleep(delay)
        raise ProviderError(f"gateway {path} exhausted retries", status=last_status,
                            attempts=self._retry.max_attempts)

    # -- roles

    def caption(self, image: np.ndarray, recorder: CallRecorder | None = None) -> str:
        if image.size == 0:
            raise ValidationError("cannot caption an empty image")
        started = time.perf_counter()
        payload = {"image_b64": base64.b64encode(encode_png(image)).decode("ascii")}
        body, attempts = self._post_with_retry("/v1/caption", payload)
        text = body.get("text", "")
        if not text.strip():
            raise ProtocolError("gateway caption returned empty text")
        _record(recorder, self.provider_id, "caption",
                {"image_sha": image_checksum(image)[:16]}, attempts, started, deterministic=False)
        return text

    def chat(self, req: ChatRequest, recorder: CallRecorder | None = None) -> str:
        started = time.perf_counter()
        payload = {
            "system": req.system_text,
            "user": req.user_text,
            "temperature": req.temperature,
            "presence_penalty": req.presence_penalty,
            "max_tokens": req.max_tokens,
            "seed": req.seed,
        }
        body, attempts = self._post_with_retry("/v1/chat", payload)
        text = body.get("text", "")
        if not text.strip():
            raise ProtocolError("gateway chat returned empty text")
        _record(recorder, self.provider_id, "chat",
                {"temperature": req.temperature, "presence_penalty": req.presence_penalty,
                 "max_tokens": req.max_tokens, "seed": req.seed,
                 "prompt_sha": sha256_hex(req.user_text.encode())[:16]},
                attempts, started, deterministic=False)
        return text

    def _check_dim(self, vector: list[float]) -> None:
        with self._dim_lock:
            if self._embed_dim is None:
                self._embed_dim = len(vector)
            elif self._embed_dim != len(vector):
                raise ProtocolError(
                    f"embedding dimension drifted from {self._embed_dim} to {len(vector)}"
                )

    def embed_text(self, text: str, recorder: CallRecorder | None = None) -> EmbedResult:
        started = time.perf_counter()
        body, attempts = self._post_with_retry("/v1/embed/text", {"text": text})
        vector = body.get("vector", [])
        self._check_dim(vector)
        _record(recorder, self.provider_id, "embed_text",
                {"dim": len(vector), "text_sha": sha256_hex(text.encode())[:16]},
                attempts, started, deterministic=False)
        return EmbedResult(np.asarray(vector, dtype=np.float64))

    def embed_image(self, image: np.ndarray, recorder: CallRecorder | None = None) -> EmbedResult:
        started = time.perf_counter()
        payload = {"image_b64": base64.b64encode(encode_png(image)).decode("ascii")}
        body, attempts = self._post_with_retry("/v1/embed/image", payload)
        vector = body.get("vector", [])
        self._check_dim(vector)
        _record(recorder, self.provider_id, "embed_image",
                {"dim": len(vector), "image_sha": image_checksum(image)[:16]},
                attempts, started, deterministic=False)
        return EmbedResult(np.asarray(vector, dtype=np.float64))

    def generate_panorama(
        self, req: PanoramaRequest, recorder: CallRecorder | None = None
    ) -> Panorama:
        started = time.perf_counter()
        payload = {
            "prompt": req.prompt_text,
            "width": req.width,
            "height": req.height,
            "num_inference_steps": req.num_inference_steps,
            "seed": req.seed,
        }
        body, attempts = self._post_with_retry("/v1/panorama", payload)
        data = body.get("image_b64", "")
        if not data:
            raise ProtocolError("gateway panorama returned no image")
        pixels = decode_png(base64.b64decode(data))
        h, w = pixels.shape[:2]
        if w != 2 * h:
            # generator deviated from the requested aspect; resize to 2:1
            from PIL import Image

            warnings.warn(f"gateway panorama was {w}x{h}, resizing to 2:1", stacklevel=2)
            im = Image.fromarray(pixels).resize((req.width, req.height), Image.BILINEAR)
            pixels = np.asarray(im, dtype=np.uint8)
        _record(recorder, self.provider_id, "panorama",
                {"width": req.width, "height": req.height,
                 "num_inference_steps": req.num_inference_steps, "seed": req.seed,
                 "prompt_sha": sha256_hex(req.prompt_text.encode())[:16]},
                attempts, started, deterministic=False)
        return Panorama(pixels=pixels, source="generated", seed=req.seed)


# ---------------------------------------------------------------------------
# Provider bundle + config


@dataclass
class ProviderSet:
    captioner: Captioner
    chat: ChatProvider
    embedder: Embedder
    panorama: PanoramaGenerator

    @property
    def all_deterministic(self) -> bool:
        return all(
            p.provider_id.startswith("mock-")
            for p in (self.captioner, self.chat, self.embedder, self.panorama)
        )


def build_providers(config: dict[str, Any]) -> ProviderSet:
    """Build the four roles from a config mapping role -> options.

    Each role entry is ``{"kind": "mock" | "gateway", ...}``; gateway
    entries accept ``url``, ``token``, and ``in_flight_limit`` and fall
    back to RAM_GATEWAY_URL / RAM_GATEWAY_TOKEN.
    """
    gateway_cache: dict[tuple, GatewayProvider] = {}

    def gateway_for(opts: dict[str, Any]) -> GatewayProvider:
        key = (opts.get("url"), opts.get("token"), opts.get("in_flight_limit", 8))
        if key not in gateway_cache:
            gateway_cache[key] = GatewayProvider.from_env(
                url=opts.get("url"),
                token=opts.get("token"),
                in_flight_limit=int(opts.get("in_flight_limit", 8)),
            )
        return gateway_cache[key]

    def pick(role: str, mock_factory: Callable[[dict[str, Any]], Any]) -> Any:
        opts = dict(config.get(role, {"kind": "mock"}))
        kind = opts.get("kind", "mock")
        if kind == "mock":
            return mock_factory(opts)
        if kind == "gateway":
            return gateway_for(opts)
        raise ConfigError(f"unknown provider kind {kind!r} for role {role}")

    return ProviderSet(
        captioner=pick("captioner", lambda o: MockCaptioner()),
        chat=pick("chat", lambda o: MockChat()),
        embedder=pick("embedder", lambda o: MockEmbedder(dim=int(o.get("dim", 64)))),
        panorama=pick("panorama", lambda o: MockPanoramaGenerator()),
    )
