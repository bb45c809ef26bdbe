"""Sequential landmark grounding.

Extracts ordered landmarks from an instruction via the chat provider,
matches one landmark to each ground-truth view by embedding similarity,
and captions the corresponding views of the rewritten panoramas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import GroundTruthAction, ViewSet
from .errors import ParseError, ValidationError
from .providers import (
    Captioner,
    CallRecorder,
    ChatProvider,
    ChatRequest,
    Embedder,
)

LANDMARK_LABEL = "Landmarks:"
LANDMARK_SYSTEM_TEXT = "You list landmarks from navigation instructions."
LANDMARK_PROMPT = (
    "List the landmarks (objects and scenes) mentioned in this navigation "
    "instruction, in order, comma-separated, under the label 'Landmarks:'.\n"
    "Instruction: {instruction}"
)


@dataclass(frozen=True)
class LandmarkList:
    items: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.items or any(not it.strip() for it in self.items):
            raise ValidationError("landmark list must contain non-empty phrases")

    def __len__(self) -> int:
        return len(self.items)


@dataclass(frozen=True)
class GroundedLandmarkSeq:
    landmarks: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.landmarks) != len(self.scores):
            raise ValidationError("landmarks and scores must align")
        for s in self.scores:
            if not -1.0 - 1e-9 <= s <= 1.0 + 1e-9:
                raise ValidationError(f"similarity {s} outside [-1, 1]")


def build_landmark_prompt(instruction: str, seed: int | None = None) -> ChatRequest:
    if not instruction.strip():
        raise ValidationError("instruction must be non-empty")
    return ChatRequest(
        system_text=LANDMARK_SYSTEM_TEXT,
        user_text=LANDMARK_PROMPT.replace("{instruction}", instruction.strip()),
        seed=seed,
    )


def parse_landmark_response(text: str) -> LandmarkList:
    line = None
    for ln in text.splitlines():
        if ln.strip().startswith(LANDMARK_LABEL):
            line = ln.strip()[len(LANDMARK_LABEL):]
    if line is None or not line.strip():
        raise ParseError(f"response missing {LANDMARK_LABEL!r}")
    items = tuple(p.strip() for p in line.split(",") if p.strip())
    if not items:
        raise ParseError("landmark list is empty")
    return LandmarkList(items=items)


def extract_landmarks(
    instruction: str,
    chat: ChatProvider,
    seed: int | None = None,
    recorder: CallRecorder | None = None,
) -> LandmarkList:
    """Ordered landmark phrases as they appear in the instruction."""
    reply = chat.chat(build_landmark_prompt(instruction, seed), recorder=recorder)
    return parse_landmark_response(reply)


def ground_landmarks(
    gt_views: list[GroundTruthAction],
    landmarks: LandmarkList,
    embedder: Embedder,
    recorder: CallRecorder | None = None,
) -> GroundedLandmarkSeq:
    """Per-step argmax of cosine(embed_image(G_t), embed_text(U_k)).

    Each step grounds independently; exact ties resolve to the smaller
    landmark index. Cosine over unit vectors is a plain dot product.
    """
    if not gt_views:
        raise ValidationError("need at least one ground-truth view")
    text_vecs = [embedder.embed_text(u, recorder=recorder) for u in landmarks.items]
    dims = {v.dim for v in text_vecs}
    if len(dims) != 1:
        raise ValidationError(f"embedder returned mixed dimensions {sorted(dims)}")

    chosen: list[str] = []
    scores: list[float] = []
    for gt in gt_views:
        img_vec = embedder.embed_image(gt.view, recorder=recorder)
        sims = np.array([img_vec.cosine(tv) for tv in text_vecs])
        best = int(np.argmax(sims))  # argmax returns the first (smallest) index on ties
        chosen.append(landmarks.items[best])
        scores.append(float(np.clip(sims[best], -1.0, 1.0)))
    return GroundedLandmarkSeq(landmarks=tuple(chosen), scores=tuple(scores))


def collect_new_descriptions(
    new_viewsets: list[ViewSet],
    gt_indices: list[int],
    captioner: Captioner,
    recorder: CallRecorder | None = None,
) -> list[str]:
    """Caption the view at each ground-truth index of the rewritten
    panoramas ("same position" = identical view index)."""
    if len(new_viewsets) != len(gt_indices):
        raise ValidationError(
            f"viewsets ({len(new_viewsets)}) and indices ({len(gt_indices)}) must align"
        )
    for idx in gt_indices:
        if not 0 <= idx < 36:
            raise ValidationError(f"gt view index {idx} outside 0..35")
    return [
        captioner.caption(vs.views[idx], recorder=recorder)
        for vs, idx in zip(new_viewsets, gt_indices)
    ]
