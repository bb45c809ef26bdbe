"""Deterministic stub backends.

Every function is pure in its payload (and the payload's seed), so
responses are stable across process restarts: hashes are content-derived,
never process state. Images hash over decoded RGB pixels so the PNG
encoder in use cannot change identities.
"""

from __future__ import annotations

import hashlib
import io
import re

import numpy as np
from PIL import Image

EMBED_DIM = 64

_WORD_BANK = (
    "floor lamp", "wall clock", "area rug", "bookcase", "wing chair",
    "plant stand", "credenza", "table runner", "wall sconce", "storage bench",
    "magazine rack", "accent pillow", "room divider", "ceiling light",
    "shoe cabinet", "coat rack", "serving cart", "window seat",
)

_ACTION_SWAPS = (
    {"walk": "amble", "go": "make your way", "turn": "veer", "stop": "come to rest",
     "exit": "slip out of", "enter": "come into", "wait": "hold", "head": "push"},
    {"walk": "pace", "go": "continue", "turn": "curve", "stop": "settle",
     "exit": "move out of", "enter": "cross into", "wait": "remain", "head": "track"},
)

_STOPWORDS = frozenset(
    "the a an and or to of at in on by with into from past then until till your "
    "you left right straight ahead up down out over under through toward towards "
    "it its is are be near beside stop walk go turn head exit enter wait around".split()
)


def hash64(*parts) -> int:
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big")


def decode_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def encode_image(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def pixel_hash(pixels: np.ndarray) -> str:
    arr = np.ascontiguousarray(pixels)
    return hashlib.sha256(arr.tobytes() + str(arr.shape).encode()).hexdigest()


def caption(image_png: bytes) -> str:
    pixels = decode_image(image_png)
    h, w = pixels.shape[:2]
    return f"stub-caption {w}x{h} {pixel_hash(pixels)[:8]}"


def _last_labeled(text: str, label: str) -> str:
    hits = [ln[len(label):].strip() for ln in text.splitlines()
            if ln.strip().startswith(label)]
    return hits[-1] if hits else ""


def _nouns(text: str) -> list[str]:
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
            if phrase and " ".join(phrase) not in out:
                out.append(" ".join(phrase))
            i = j
        else:
            i += 1
    return out


def chat(user: str, seed: int | None) -> str:
    """Templated reply keyed by hash(user, seed); recognizes the labeled
    output grammars the augmentation prompts demand."""
    h = hash64(user, seed)
    rng = np.random.default_rng(h)

    if "Rewritten instruction:" in user:
        original = _last_labeled(user, "Original instruction:")
        swaps = _ACTION_SWAPS[h % len(_ACTION_SWAPS)]
        words = []
        for w in original.split():
            bare = w.strip(".,;").lower()
            if bare in swaps:
                repl = swaps[bare]
                if w[:1].isupper():
                    repl = repl.capitalize()
                words.append(w.replace(w.strip(".,;"), repl))
            else:
                words.append(w)
        text = " ".join(words) or "proceed to the goal"
        if text == original:
            text = "Afterwards " + text
        return f"Rewritten instruction: {text}"

    if "Added objects:" in user and "Rewritten description:" in user:
        scene = _last_labeled(user, "Scene description:") or "an indoor scene"
        count = 2 + int(h % 3)
        picks = rng.choice(len(_WORD_BANK), size=count, replace=False)
        objects = [_WORD_BANK[int(p)] for p in picks]
        return (
            f"Added objects: {', '.join(objects)}\n"
            f"Rewritten description: {scene} featuring "
            + " and ".join(objects) + " in view"
        )

    if "Landmarks:" in user:
        instruction = _last_labeled(user, "Instruction:")
        nouns = _nouns(instruction) or [_WORD_BANK[h % len(_WORD_BANK)]]
        return "Landmarks: " + ", ".join(nouns)

    return f"stub-chat {h:016x}"


def embed_text(text: str) -> list[float]:
    rng = np.random.default_rng(hash64("text", text))
    v = rng.standard_normal(EMBED_DIM)
    v /= np.linalg.norm(v)
    return [float(x) for x in v]


def embed_image(image_png: bytes) -> list[float]:
    rng = np.random.default_rng(hash64("image", pixel_hash(decode_image(image_png))))
    v = rng.standard_normal(EMBED_DIM)
    v /= np.linalg.norm(v)
    return [float(x) for x in v]


def panorama(prompt: str, width: int, height: int, seed: int | None) -> bytes:
    """Seeded 2:1 procedural image: gradient sky-to-floor bands plus one
    color block per prompt noun."""
    rng = np.random.default_rng(hash64("pano", prompt, seed))
    top = rng.integers(90, 200, size=3).astype(np.float64)
    bottom = rng.integers(20, 110, size=3).astype(np.float64)
    ys = np.linspace(0.0, 1.0, height)[:, None, None]
    xs = np.linspace(0.0, 1.0, width, endpoint=False)[None, :, None]
    px = top + (bottom - top) * (0.7 * ys + 0.3 * np.cos(2 * np.pi * xs) ** 2)
    for noun in _nouns(prompt)[:6]:
        nh = hash64("block", noun, seed)
        bw = max(4, width // 12)
        bh = max(4, height // 7)
        x0 = nh % max(1, width - bw)
        y0 = (nh // 11) % max(1, height - bh)
        color = np.array([(nh >> 8) % 256, (nh >> 20) % 256, (nh >> 36) % 256],
                         dtype=np.float64)
        px[y0 : y0 + bh, x0 : x0 + bw] = color
    return encode_image(np.clip(px, 0, 255).astype(np.uint8))
