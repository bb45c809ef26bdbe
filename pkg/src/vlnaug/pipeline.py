"""End-to-end augmentation pipeline.

For every trajectory-instruction pair and every variant: caption the
original panoramas, rewrite the descriptions with added objects, generate
new panoramas, discretize them, ground instruction landmarks against the
original ground-truth views, caption the matching new views, and rewrite
the instruction. Artifacts land in a content-addressed store.

Two layers make runs resumable and deterministic:

* a per-unit journal (``journal.jsonl``) skips completed units entirely;
* a provider-call cache (``cache/``) replays responses plus their
  provenance records, so a killed run resumes without repeating any
  completed provider call and produces byte-identical artifacts.

The run report is execution diagnostics (call tallies, cache hits,
latencies) and is the one output that legitimately differs between a
resumed and an uninterrupted run.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import grounding, panogeom, rewrite
from .corpus import (
    ArtifactStore,
    ConnectivityGraph,
    GroundTruthAction,
    Panorama,
    ProvenanceRecord,
    RewriteBundle,
    TrajectoryInstructionPair,
    canonical_json,
    decode_png,
    encode_png,
    load_connectivity,
    load_dataset,
    load_panorama,
    sha256_hex,
    stable_hash,
    store_bundle,
)
from .errors import ConfigError, ParseError, ProviderError, ValidationError
from .providers import (
    CallRecorder,
    ChatRequest,
    EmbedResult,
    PanoramaRequest,
    ProviderSet,
    build_providers,
    image_checksum,
)

log = logging.getLogger(__name__)

STAGES = ("caption", "scene_rewrite", "generate", "ground", "instruction")


class AbortRun(BaseException):
    """Raised by test harnesses to simulate a killed process; never caught
    by per-unit error handling."""


# ---------------------------------------------------------------------------
# Configuration


@dataclass
class RunConfig:
    trajectory_file: str
    connectivity_dir: str
    panorama_dir: str
    output_root: str
    split: str = "train"
    seed: int | None = None
    augmentations_per_pair: int = 3
    workers: int = 1
    providers: dict[str, Any] = field(default_factory=dict)
    pano_width: int = 1024
    pano_height: int = 512
    num_inference_steps: int = 30
    view_fov_deg: float = panogeom.DEFAULT_VIEW_FOV_DEG
    view_size: int = panogeom.DEFAULT_VIEW_SIZE
    run_until: str = "instruction"
    max_parse_retries: int = 2
    resume: bool = True
    scene_template: str | None = None
    instruction_template: str | None = None

    def validate(self) -> None:
        if self.augmentations_per_pair < 1:
            raise ConfigError("augmentations_per_pair must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.run_until not in STAGES:
            raise ConfigError(f"run_until must be one of {STAGES}")
        if self.pano_width != 2 * self.pano_height:
            raise ConfigError("generated panorama aspect must be 2:1")
        roles = ("captioner", "chat", "embedder", "panorama")
        any_mock = any(
            self.providers.get(role, {"kind": "mock"}).get("kind", "mock") == "mock"
            for role in roles
        )
        if any_mock and self.seed is None:
            raise ConfigError("seed is required when any mock provider is selected")

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            config = cls(**obj)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc
        config.validate()
        return config

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: malformed config JSON: {exc.msg}") from exc


# ---------------------------------------------------------------------------
# Provider-call cache


class RunStats:
    """Thread-safe execution tallies per provider role."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.calls: dict[str, dict[str, float]] = {}
        self.warnings: list[str] = []

    def bump(self, role: str, *, cached: bool, attempts: int, duration_ms: float) -> None:
        with self._lock:
            entry = self.calls.setdefault(
                role, {"executed": 0, "cached": 0, "attempts": 0, "duration_ms": 0.0}
            )
            if cached:
                entry["cached"] += 1
            else:
                entry["executed"] += 1
                entry["attempts"] += attempts
                entry["duration_ms"] += duration_ms

    def warn(self, message: str) -> None:
        with self._lock:
            self.warnings.append(message)

    def snapshot(self) -> dict[str, Any]:
        with self._lock:
            return {
                "calls": {k: dict(v) for k, v in sorted(self.calls.items())},
                "warnings": sorted(self.warnings),
            }


class CachedProviders:
    """Caches provider responses (value + provenance) under the run root.

    Cache keys fingerprint the role, provider identity, and the full
    request payload; replayed calls re-emit the original provenance
    record so bundles are byte-identical with or without cache hits.
    """

    def __init__(self, inner: ProviderSet, cache_dir: Path, stats: RunStats):
        self.inner = inner
        self.cache_dir = cache_dir
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.stats = stats

    def _key(self, role: str, provider_id: str, payload: Any) -> str:
        return sha256_hex(canonical_json({"role": role, "provider": provider_id, "req": payload}))

    def _cached(
        self,
        role: str,
        provider_id: str,
        payload: Any,
        produce,
        encode,
        decode,
        recorder: CallRecorder | None,
    ):
        key = self._key(role, provider_id, payload)
        path = self.cache_dir / f"{key}.json"
        if path.exists():
            entry = json.loads(path.read_text(encoding="utf-8"))
            record = ProvenanceRecord.from_json(entry["provenance"])
            if recorder is not None:
                recorder.add(record)
            self.stats.bump(role, cached=True, attempts=record.attempts,
                            duration_ms=record.duration_ms)
            return decode(entry["value"])

        local = CallRecorder()
        value = produce(local)
        records = local.records()
        record = records[-1] if records else None
        if recorder is not None:
            for r in records:
                recorder.add(r)
        if record is not None:
            # unique temp name: concurrent units may produce the same key
            tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(
                json.dumps({"value": encode(value), "provenance": record.to_json()},
                           sort_keys=True),
                encoding="utf-8",
            )
            tmp.replace(path)
            self.stats.bump(role, cached=False, attempts=record.attempts,
                            duration_ms=record.duration_ms)
        return value

    def caption(self, image: np.ndarray, recorder: CallRecorder | None = None) -> str:
        payload = {"image_sha": image_checksum(image)}
        return self._cached(
            "caption", self.inner.captioner.provider_id, payload,
            lambda rec: self.inner.captioner.caption(image, recorder=rec),
            lambda v: v, lambda v: v, recorder,
        )

    def chat(self, req: ChatRequest, recorder: CallRecorder | None = None) -> str:
        payload = {
            "system": req.system_text, "user": req.user_text,
            "temperature": req.temperature, "presence_penalty": req.presence_penalty,
            "max_tokens": req.max_tokens, "seed": req.seed,
        }
        return self._cached(
            "chat", self.inner.chat.provider_id, payload,
            lambda rec: self.inner.chat.chat(req, recorder=rec),
            lambda v: v, lambda v: v, recorder,
        )

    def embed_text(self, text: str, recorder: CallRecorder | None = None) -> EmbedResult:
        return self._cached(
            "embed_text", self.inner.embedder.provider_id, {"text": text},
            lambda rec: self.inner.embedder.embed_text(text, recorder=rec),
            lambda v: list(v.vector), lambda v: EmbedResult(np.asarray(v)), recorder,
        )

    def embed_image(self, image: np.ndarray, recorder: CallRecorder | None = None) -> EmbedResult:
        return self._cached(
            "embed_image", self.inner.embedder.provider_id,
            {"image_sha": image_checksum(image)},
            lambda rec: self.inner.embedder.embed_image(image, recorder=rec),
            lambda v: list(v.vector), lambda v: EmbedResult(np.asarray(v)), recorder,
        )

    def generate_panorama(
        self, req: PanoramaRequest, recorder: CallRecorder | None = None
    ) -> Panorama:
        payload = {
            "prompt": req.prompt_text, "width": req.width, "height": req.height,
            "num_inference_steps": req.num_inference_steps, "seed": req.seed,
        }
        return self._cached(
            "panorama", self.inner.panorama.provider_id, payload,
            lambda rec: self.inner.panorama.generate_panorama(req, recorder=rec),
            lambda v: base64.b64encode(encode_png(v.pixels)).decode("ascii"),
            lambda v: Panorama(pixels=decode_png(base64.b64decode(v)),
                               source="generated", seed=req.seed),
            recorder,
        )


# ---------------------------------------------------------------------------
# Journal


class Journal:
    """Completion log of (pair, variant) units; append-only during the
    run, rewritten sorted at the end for determinism."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self.units: dict[tuple[str, int], dict[str, Any]] = {}
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    rec = json.loads(line)
                    self.units[(rec["pair_id"], rec["variant"])] = rec

    def get(self, pair_id: str, variant: int) -> dict[str, Any] | None:
        return self.units.get((pair_id, variant))

    def record(self, rec: dict[str, Any]) -> None:
        with self._lock:
            self.units[(rec["pair_id"], rec["variant"])] = rec
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    def rewrite_sorted(self) -> None:
        with self._lock:
            lines = [
                json.dumps(self.units[key], sort_keys=True)
                for key in sorted(self.units)
            ]
            self.path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")


# ---------------------------------------------------------------------------
# Unit execution


@dataclass
class _UnitContext:
    config: RunConfig
    providers: CachedProviders
    store: ArtifactStore
    graph: ConnectivityGraph
    pair: TrajectoryInstructionPair
    variant: int
    stats: RunStats

    @property
    def unit_seed(self) -> int:
        return stable_hash(self.config.seed, self.pair.path_id, self.variant)


def _chat_with_parse_retries(ctx: _UnitContext, req: ChatRequest, parse, recorder: CallRecorder):
    """Query, parse, and on grammar failures re-query with the grammar
    reminder appended (fresh prompt => fresh deterministic reply)."""
    attempt_req = req
    last: ParseError | None = None
    for _ in range(ctx.config.max_parse_retries + 1):
        reply = ctx.providers.chat(attempt_req, recorder=recorder)
        try:
            return parse(reply)
        except ParseError as exc:
            last = exc
            attempt_req = rewrite.with_grammar_reminder(attempt_req)
    raise last  # type: ignore[misc]


def _stage_enabled(config: RunConfig, stage: str) -> bool:
    return STAGES.index(stage) <= STAGES.index(config.run_until)


def run_unit(ctx: _UnitContext) -> RewriteBundle | None:
    """Execute one (pair, variant) augmentation; None when the configured
    stage cutoff stops before a full bundle exists."""
    config, pair, variant = ctx.config, ctx.pair, ctx.variant
    recorder = CallRecorder()
    t_steps = pair.num_steps
    instruction = pair.instructions[variant % len(pair.instructions)]

    # original panoramas
    originals: list[Panorama] = []
    original_refs: list[str] = []
    for vp in pair.viewpoints:
        path = Path(config.panorama_dir) / pair.scan_id / f"{vp}.png"
        if not path.exists():
            raise ValidationError(f"missing panorama for {pair.scan_id}/{vp}")
        pano = load_panorama(path)
        originals.append(pano)
        original_refs.append(
            ctx.store.put_panorama(pano, meta={"viewpoint": vp, "scan": pair.scan_id}).sha256
        )

    # ground-truth view indices; the final step is STOP and keeps the
    # arrival heading of the preceding transition
    gt_indices: list[int] = []
    for t in range(t_steps - 1):
        gt_indices.append(
            panogeom.gt_view_index(ctx.graph, pair.viewpoints[t], pair.viewpoints[t + 1])
        )
    gt_indices.append(gt_indices[-1])

    scene_descs: list[str] = []
    if _stage_enabled(config, "caption"):
        for pano in originals:
            scene_descs.append(ctx.providers.caption(pano.pixels, recorder=recorder))
    else:
        return None

    added_objects: list[list[str]] = []
    rewritten_descs: list[str] = []
    scene_template = rewrite.ScenePromptTemplate.load(config.scene_template)
    if _stage_enabled(config, "scene_rewrite"):
        for t, c_t in enumerate(scene_descs):
            req = rewrite.build_scene_prompt(
                c_t, template=scene_template, seed=stable_hash(ctx.unit_seed, "scene", t)
            )
            objs, c_r = _chat_with_parse_retries(
                ctx, req, rewrite.parse_scene_response, recorder
            )
            added_objects.append(objs)
            rewritten_descs.append(c_r)
    else:
        return None

    generated: list[Panorama] = []
    generated_refs: list[str] = []
    if _stage_enabled(config, "generate"):
        for t, c_r in enumerate(rewritten_descs):
            req = PanoramaRequest(
                prompt_text=c_r,
                width=config.pano_width,
                height=config.pano_height,
                num_inference_steps=config.num_inference_steps,
                seed=stable_hash(ctx.unit_seed, "pano", t),
            )
            pano = ctx.providers.generate_panorama(req, recorder=recorder)
            generated.append(pano)
            generated_refs.append(
                ctx.store.put_panorama(
                    pano, meta={"pair_id": pair.path_id, "variant": variant, "step": t}
                ).sha256
            )
    else:
        return None

    if not _stage_enabled(config, "ground"):
        return None
    landmarks = grounding.extract_landmarks(
        instruction, ctx.providers, seed=stable_hash(ctx.unit_seed, "landmarks"),
        recorder=recorder,
    )
    gt_views = [
        GroundTruthAction(
            view=panogeom.equirec_to_perspective(
                originals[t],
                panogeom.view_params(
                    gt_indices[t] % 12, gt_indices[t] // 12,
                    fov_deg=config.view_fov_deg, out_size=config.view_size,
                ),
            ),
            view_index=gt_indices[t],
            next_viewpoint=pair.viewpoints[t + 1] if t < t_steps - 1 else pair.viewpoints[t],
        )
        for t in range(t_steps)
    ]
    grounded = grounding.ground_landmarks(gt_views, landmarks, ctx.providers, recorder=recorder)

    new_views = [
        panogeom.equirec_to_perspective(
            generated[t],
            panogeom.view_params(
                gt_indices[t] % 12, gt_indices[t] // 12,
                fov_deg=config.view_fov_deg, out_size=config.view_size,
            ),
        )
        for t in range(t_steps)
    ]
    new_descs = [ctx.providers.caption(v, recorder=recorder) for v in new_views]

    if not _stage_enabled(config, "instruction"):
        return None
    req = rewrite.build_instruction_prompt(
        list(grounded.landmarks), new_descs, instruction,
        template=rewrite.InstructionPromptTemplate.load(config.instruction_template),
        seed=stable_hash(ctx.unit_seed, "instruction"),
    )
    rewritten_instruction = _chat_with_parse_retries(
        ctx, req, rewrite.parse_instruction_response, recorder
    )
    if rewritten_instruction.strip() == instruction.strip():
        ctx.stats.warn(
            f"{pair.path_id}/{variant}: rewritten instruction equals the original"
        )

    bundle = RewriteBundle(
        path_id=pair.path_id,
        variant=variant,
        scan_id=pair.scan_id,
        instruction_original=instruction,
        scene_descriptions=scene_descs,
        rewritten_descriptions=rewritten_descs,
        added_objects=added_objects,
        grounded_landmarks=list(grounded.landmarks),
        grounded_scores=list(grounded.scores),
        new_descriptions=new_descs,
        rewritten_instruction=rewritten_instruction,
        gt_view_indices=gt_indices,
        original_pano_refs=original_refs,
        generated_pano_refs=generated_refs,
        provenance=recorder.records(),
        seed=ctx.unit_seed,
    )
    bundle.validate()
    return bundle


# ---------------------------------------------------------------------------
# Run orchestration


def run_pipeline(config: RunConfig, providers: ProviderSet | None = None) -> dict[str, Any]:
    """Run the full augmentation over a dataset; returns the run report."""
    config.validate()
    out_root = Path(config.output_root)
    out_root.mkdir(parents=True, exist_ok=True)
    if not config.resume:
        journal_path = out_root / "journal.jsonl"
        if journal_path.exists():
            journal_path.unlink()
        cache_dir = out_root / "cache"
        if cache_dir.exists():
            for f in cache_dir.iterdir():
                f.unlink()

    pairs = load_dataset(
        config.trajectory_file, config.split, connectivity_dir=config.connectivity_dir
    )
    graphs: dict[str, ConnectivityGraph] = {}
    for pair in pairs:
        if pair.scan_id not in graphs:
            graphs[pair.scan_id] = load_connectivity(
                Path(config.connectivity_dir) / f"{pair.scan_id}_connectivity.json",
                pair.scan_id,
            )

    stats = RunStats()
    store = ArtifactStore(out_root)
    journal = Journal(out_root / "journal.jsonl")
    provider_set = providers or build_providers(config.providers)
    cached = CachedProviders(provider_set, out_root / "cache", stats)

    units = [
        (pair, variant)
        for pair in sorted(pairs, key=lambda p: p.path_id)
        for variant in range(config.augmentations_per_pair)
    ]

    def execute(pair: TrajectoryInstructionPair, variant: int) -> None:
        done = journal.get(pair.path_id, variant)
        if done is not None and done["status"] == "done" and store.has(done["bundle_sha"]):
            return
        ctx = _UnitContext(
            config=config, providers=cached, store=store,
            graph=graphs[pair.scan_id], pair=pair, variant=variant, stats=stats,
        )
        try:
            bundle = run_unit(ctx)
        except (ParseError, ProviderError, ValidationError) as exc:
            journal.record(
                {
                    "pair_id": pair.path_id, "variant": variant, "status": "dropped",
                    "reason": type(exc).__name__.replace("Error", "").lower(),
                    "detail": str(exc),
                }
            )
            log.warning("dropped %s/%d: %s", pair.path_id, variant, exc)
            return
        if bundle is None:  # stage cutoff, unit intentionally partial
            journal.record(
                {"pair_id": pair.path_id, "variant": variant, "status": "partial",
                 "until": config.run_until}
            )
            return
        entry = store_bundle(bundle, store)
        journal.record(
            {"pair_id": pair.path_id, "variant": variant, "status": "done",
             "bundle_sha": entry.sha256}
        )

    try:
        if config.workers == 1:
            for pair, variant in units:
                execute(pair, variant)
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(execute, p, v) for p, v in units]
                for f in futures:
                    f.result()
    finally:
        journal.rewrite_sorted()
        store.rewrite_manifest_sorted()

    _write_schedule_inputs(out_root, store, pairs, journal, config)
    report = build_report(store, pairs, journal, stats, config)
    (out_root / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return report


def _write_schedule_inputs(
    out_root: Path,
    store: ArtifactStore,
    pairs: list[TrajectoryInstructionPair],
    journal: Journal,
    config: RunConfig,
) -> None:
    """Persist the original/rewritten item lists the schedule stage needs."""
    originals = []
    for pair in sorted(pairs, key=lambda p: p.path_id):
        pano_refs = []
        for vp in pair.viewpoints:
            path = Path(config.panorama_dir) / pair.scan_id / f"{vp}.png"
            if not path.exists():
                pano_refs = []
                break
            pano = load_panorama(path)
            pano_refs.append(
                store.put_panorama(
                    pano, meta={"viewpoint": vp, "scan": pair.scan_id}
                ).sha256
            )
        if not pano_refs:
            continue
        seq = store.put_json(
            {"kind": "observation_sequence", "source": "captured",
             "panorama_refs": pano_refs},
            kind="observation_sequence",
            meta={"pair_id": pair.path_id, "origin": "original"},
        )
        for idx, text in enumerate(pair.instructions):
            ins = store.put_bytes(
                text.encode("utf-8"), kind="instruction",
                meta={"pair_id": pair.path_id, "index": idx, "origin": "original"},
            )
            originals.append(
                {"pair_id": pair.path_id, "origin": "original",
                 "observation_ref": seq.sha256, "instruction_ref": ins.sha256}
            )

    rewritten = []
    for key in sorted(journal.units):
        rec = journal.units[key]
        if rec["status"] != "done":
            continue
        bundle = RewriteBundle.from_json(store.get_json(rec["bundle_sha"]))
        seq = store.put_json(
            {"kind": "observation_sequence", "source": "generated",
             "panorama_refs": bundle.generated_pano_refs},
            kind="observation_sequence",
            meta={"pair_id": bundle.path_id, "variant": bundle.variant,
                  "origin": "rewritten"},
        )
        ins = store.put_bytes(
            bundle.rewritten_instruction.encode("utf-8"), kind="instruction",
            meta={"pair_id": bundle.path_id, "variant": bundle.variant,
                  "origin": "rewritten"},
        )
        rewritten.append(
            {"pair_id": f"{bundle.path_id}#r{bundle.variant}", "origin": "rewritten",
             "observation_ref": seq.sha256, "instruction_ref": ins.sha256}
        )
    store.rewrite_manifest_sorted()
    (out_root / "schedule_inputs.json").write_text(
        json.dumps({"originals": originals, "rewritten": rewritten},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def build_report(
    store: ArtifactStore,
    pairs: list[TrajectoryInstructionPair],
    journal: Journal,
    stats: RunStats,
    config: RunConfig,
) -> dict[str, Any]:
    done = [r for r in journal.units.values() if r["status"] == "done"]
    drops = sorted(
        (r for r in journal.units.values() if r["status"] == "dropped"),
        key=lambda r: (r["pair_id"], r["variant"]),
    )
    partial = [r for r in journal.units.values() if r["status"] == "partial"]

    histogram: dict[str, int] = {}
    for rec in done:
        bundle = RewriteBundle.from_json(store.get_json(rec["bundle_sha"]))
        words = len(bundle.rewritten_instruction.split())
        bucket = f"{(words // 10) * 10}-{(words // 10) * 10 + 9}"
        histogram[bucket] = histogram.get(bucket, 0) + 1

    snap = stats.snapshot()
    return {
        "pairs_in": len(pairs),
        "unique_trajectories": len({p.path_id for p in pairs}),
        "augmentations_per_pair": config.augmentations_per_pair,
        "bundles_out": len(done),
        "partial_units": len(partial),
        "drops": [
            {"pair_id": r["pair_id"], "variant": r["variant"], "reason": r["reason"]}
            for r in drops
        ],
        "provider_calls": snap["calls"],
        "instruction_word_histogram": dict(sorted(histogram.items())),
        "warnings": snap["warnings"],
        "seed": config.seed,
    }


def report_from_run(out_root: str | Path) -> dict[str, Any]:
    """Load the persisted report of a finished run."""
    path = Path(out_root) / "report.json"
    if not path.exists():
        raise ValidationError(f"no report at {path}; run the pipeline first")
    return json.loads(path.read_text(encoding="utf-8"))
