"""Two-stage training manifests: mix original with rewritten data first,
then focus on original data only.

A manifest is JSONL: one header line carrying stage, mix ratio, seed, and
trainer hints, followed by entry lines referencing observations and
instructions by content address. The mix stage re-shuffles every epoch
with epoch-indexed seeds (recorded in the header); rewritten entries point
at crop-mixed panorama sequences built at materialization time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .corpus import ArtifactStore, stable_hash
from .cropmix import crop_mix
from .errors import ConfigError, ValidationError

STAGE_MIX = "mix"
STAGE_FOCUS = "focus"
ORIGIN_ORIGINAL = "original"
ORIGIN_REWRITTEN = "rewritten"

DEFAULT_MIX_RATIO = (1, 3)
DEFAULT_MAX_ITERATIONS = 20_000
DEFAULT_BATCH_SIZE = 8
DEFAULT_LEARNING_RATE = 1e-5


@dataclass(frozen=True)
class ManifestItem:
    """One training item: an observation sequence paired with an instruction."""

    pair_id: str
    origin: str
    observation_ref: str
    instruction_ref: str

    def __post_init__(self) -> None:
        if self.origin not in (ORIGIN_ORIGINAL, ORIGIN_REWRITTEN):
            raise ValidationError(f"unknown origin {self.origin!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "pair_id": self.pair_id,
            "origin": self.origin,
            "observation_ref": self.observation_ref,
            "instruction_ref": self.instruction_ref,
        }


@dataclass(frozen=True)
class ResumeMarker:
    stage1_best_checkpoint_ref: str
    note: str = "trainer supplies the best stage-1 checkpoint"


@dataclass
class TrainerHints:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    batch_size: int = DEFAULT_BATCH_SIZE
    learning_rate: float = DEFAULT_LEARNING_RATE

    def to_json(self) -> dict[str, Any]:
        return {
            "max_iterations": self.max_iterations,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
        }


@dataclass
class StageManifest:
    stage: str
    entries: list[dict[str, Any]]
    mix_ratio: tuple[int, int]
    seed: int
    hints: TrainerHints = field(default_factory=TrainerHints)
    epochs: int = 1
    resume: ResumeMarker | None = None
    cropmix_enabled: bool = False

    def header(self) -> dict[str, Any]:
        h: dict[str, Any] = {
            "stage": self.stage,
            "mix_ratio": list(self.mix_ratio),
            "seed": self.seed,
            "epochs": self.epochs,
            "reshuffle_rule": "epoch_seed = stable_hash(seed, epoch)",
            "cropmix": self.cropmix_enabled,
            "hints": self.hints.to_json(),
        }
        if self.resume is not None:
            h["resume"] = {
                "stage1_best_checkpoint_ref": self.resume.stage1_best_checkpoint_ref,
                "note": self.resume.note,
            }
        return h

    def write(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [json.dumps(self.header(), sort_keys=True)]
        lines += [json.dumps(e, sort_keys=True) for e in self.entries]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "StageManifest":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        header = json.loads(lines[0])
        entries = [json.loads(ln) for ln in lines[1:] if ln.strip()]
        hints = TrainerHints(**header["hints"])
        resume = None
        if "resume" in header:
            resume = ResumeMarker(
                stage1_best_checkpoint_ref=header["resume"]["stage1_best_checkpoint_ref"],
                note=header["resume"].get("note", ""),
            )
        return cls(
            stage=header["stage"],
            entries=entries,
            mix_ratio=tuple(header["mix_ratio"]),
            seed=header["seed"],
            hints=hints,
            epochs=header.get("epochs", 1),
            resume=resume,
            cropmix_enabled=header.get("cropmix", False),
        )


@dataclass
class CropmixConfig:
    enabled: bool = True
    store: ArtifactStore | None = None

    def __post_init__(self) -> None:
        if self.enabled and self.store is None:
            raise ConfigError("crop-mixing needs an artifact store to materialize into")


def _epoch_counts(n_orig: int, n_rew: int, ratio: tuple[int, int]) -> tuple[int, int]:
    """Entry counts for one epoch respecting the ratio within +-1.

    The scarcer side bounds the epoch: units = min over sides of
    available/parts; overrepresented data rotates across epochs via the
    shuffle.
    """
    a, b = ratio
    if a < 1 or b < 0:
        raise ConfigError(f"mix ratio must have original part >= 1, rewritten >= 0; got {a}:{b}")
    if b == 0:
        return n_orig, 0
    if n_rew == 0:
        raise ConfigError(f"ratio {a}:{b} requires rewritten data but none was given")
    units = min(n_orig // a, n_rew // b)
    if units == 0:
        raise ConfigError(
            f"datasets too small for ratio {a}:{b} ({n_orig} original, {n_rew} rewritten)"
        )
    return units * a, units * b


def build_stage1(
    originals: list[ManifestItem],
    rewritten: list[ManifestItem],
    ratio: tuple[int, int] = DEFAULT_MIX_RATIO,
    seed: int = 0,
    cropmix_config: CropmixConfig | None = None,
    hints: TrainerHints | None = None,
    epochs: int = 1,
) -> StageManifest:
    """Mixed-stage manifest: seeded interleave of original and rewritten
    entries at the given ratio, optionally routing rewritten observations
    through crop-mixing."""
    if not originals:
        raise ConfigError("stage 1 needs original data")
    for item in originals:
        if item.origin != ORIGIN_ORIGINAL:
            raise ValidationError(f"{item.pair_id}: non-original item passed as original")
    for item in rewritten:
        if item.origin != ORIGIN_REWRITTEN:
            raise ValidationError(f"{item.pair_id}: non-rewritten item passed as rewritten")

    if cropmix_config is not None and cropmix_config.enabled:
        rewritten = [
            _materialize_cropmix(item, cropmix_config.store, seed) for item in rewritten
        ]

    n_orig, n_rew = _epoch_counts(len(originals), len(rewritten), ratio)
    entries: list[dict[str, Any]] = []
    for epoch in range(epochs):
        rng = np.random.default_rng(stable_hash(seed, epoch))
        orig_pick = rng.permutation(len(originals))[:n_orig]
        rew_pick = rng.permutation(len(rewritten))[:n_rew] if n_rew else []
        epoch_items = [originals[i] for i in orig_pick] + [rewritten[i] for i in rew_pick]
        order = rng.permutation(len(epoch_items))
        for pos in order:
            entry = epoch_items[pos].to_json()
            entry["epoch"] = epoch
            entries.append(entry)
    return StageManifest(
        stage=STAGE_MIX,
        entries=entries,
        mix_ratio=ratio,
        seed=seed,
        hints=hints or TrainerHints(),
        epochs=epochs,
        cropmix_enabled=bool(cropmix_config and cropmix_config.enabled),
    )


def build_stage2(
    originals: list[ManifestItem],
    seed: int = 0,
    resume: ResumeMarker | None = None,
    hints: TrainerHints | None = None,
) -> StageManifest:
    """Focus-stage manifest: original data only, resume marker embedded."""
    if not originals:
        raise ConfigError("stage 2 needs original data")
    for item in originals:
        if item.origin != ORIGIN_ORIGINAL:
            raise ValidationError(
                f"{item.pair_id}: rewritten entry rejected from the focus stage"
            )
    rng = np.random.default_rng(stable_hash(seed, "focus"))
    order = rng.permutation(len(originals))
    entries = []
    for pos in order:
        entry = originals[pos].to_json()
        entry["epoch"] = 0
        entries.append(entry)
    return StageManifest(
        stage=STAGE_FOCUS,
        entries=entries,
        mix_ratio=(1, 0),
        seed=seed,
        hints=hints or TrainerHints(),
        resume=resume or ResumeMarker(stage1_best_checkpoint_ref="<trainer-supplied>"),
    )


def _materialize_cropmix(
    item: ManifestItem, store: ArtifactStore, seed: int
) -> ManifestItem:
    """Replace a rewritten item's observation sequence with crop-mixed
    panoramas assembled from that trajectory's generated panoramas."""
    seq = store.get_json(item.observation_ref)
    pano_refs = seq["panorama_refs"]
    pool = [store.get_panorama(sha) for sha in pano_refs]
    item_seed = stable_hash("cropmix-item", seed, item.pair_id)
    mixed, plans = crop_mix(pool, count=len(pool), seed=item_seed)
    mixed_refs = [store.put_panorama(p).sha256 for p in mixed]
    plan_entry = store.put_json(
        {
            "kind": "cropmix_plans",
            "source_refs": pano_refs,
            "plans": [p.to_json() for p in plans],
        },
        kind="cropmix_plans",
        meta={"pair_id": item.pair_id},
    )
    new_seq = store.put_json(
        {
            "kind": "observation_sequence",
            "source": "cropmixed",
            "panorama_refs": mixed_refs,
            "cropmix_plans_ref": plan_entry.sha256,
        },
        kind="observation_sequence",
        meta={"pair_id": item.pair_id, "source": "cropmixed"},
    )
    return ManifestItem(
        pair_id=item.pair_id,
        origin=item.origin,
        observation_ref=new_seq.sha256,
        instruction_ref=item.instruction_ref,
    )
