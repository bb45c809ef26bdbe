"""Dataset ingestion, validation, and content-addressed artifact storage.

Trajectory files follow the R2R convention: a JSON array of
``{"path_id", "scan", "path", "heading", "instructions"}`` objects.
Connectivity files (one per scan) are JSON arrays of
``{"image_id", "pose", "unobstructed", "included"}`` records whose pose is a
row-major 4x4 camera-to-world matrix with the translation in elements
3, 7, 11.

All derived artifacts are persisted as content-addressed blobs
(SHA-256 of the bytes) plus a JSONL manifest with one record per
artifact: ``{"kind", "sha256", "path", "meta"}``.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from PIL import Image

from .errors import ValidationError

log = logging.getLogger(__name__)

PANORAMA_SOURCES = ("captured", "generated", "cropmixed")


# ---------------------------------------------------------------------------
# Domain types


@dataclass(frozen=True)
class ConnectivityGraph:
    """Undirected navigation graph of one scan.

    ``nodes`` maps viewpoint id to an (x, y, z) position in meters in the
    pipeline frame: y is the vertical axis, headings are measured from +z
    toward +x. Edge distances are Euclidean over node positions.
    """

    scan_id: str
    nodes: dict[str, tuple[float, float, float]]
    edges: dict[frozenset[str], float]

    def __post_init__(self) -> None:
        for pair, dist in self.edges.items():
            if len(pair) != 2:
                raise ValidationError(f"scan {self.scan_id}: degenerate edge {sorted(pair)}")
            if dist <= 0:
                raise ValidationError(
                    f"scan {self.scan_id}: non-positive edge distance {dist} for {sorted(pair)}"
                )
            for vp in pair:
                if vp not in self.nodes:
                    raise ValidationError(
                        f"scan {self.scan_id}: edge endpoint {vp!r} missing from nodes"
                    )

    def adjacent(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.edges

    def distance(self, a: str, b: str) -> float:
        try:
            return self.edges[frozenset((a, b))]
        except KeyError:
            raise ValidationError(f"scan {self.scan_id}: {a!r} and {b!r} are not adjacent")

    def neighbors(self, vp: str) -> list[str]:
        out = []
        for pair in self.edges:
            if vp in pair:
                (other,) = pair - {vp}
                out.append(other)
        return sorted(out)


@dataclass(frozen=True)
class TrajectoryInstructionPair:
    """One human-annotated path through a scan plus its instruction(s)."""

    path_id: str
    scan_id: str
    viewpoints: tuple[str, ...]
    initial_heading: float
    instructions: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.viewpoints) < 2:
            raise ValidationError(f"pair {self.path_id}: needs at least 2 viewpoints")
        if not self.instructions or any(not i.strip() for i in self.instructions):
            raise ValidationError(f"pair {self.path_id}: instructions must be non-empty")
        if not (0.0 <= self.initial_heading < 360.0):
            raise ValidationError(
                f"pair {self.path_id}: initial_heading {self.initial_heading} outside [0, 360)"
            )

    @property
    def num_steps(self) -> int:
        return len(self.viewpoints)

    def validate_against(self, graph: ConnectivityGraph) -> None:
        for vp in self.viewpoints:
            if vp not in graph.nodes:
                raise ValidationError(
                    f"pair {self.path_id}: unknown viewpoint {vp!r} in scan {self.scan_id}"
                )
        for a, b in zip(self.viewpoints, self.viewpoints[1:]):
            if not graph.adjacent(a, b):
                raise ValidationError(
                    f"pair {self.path_id}: consecutive viewpoints {a!r} -> {b!r} are not adjacent"
                )


@dataclass(frozen=True)
class Panorama:
    """Equirectangular RGB8 image; width must be twice the height."""

    pixels: np.ndarray
    source: str = "captured"
    seed: int | None = None

    def __post_init__(self) -> None:
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise ValidationError("panorama pixels must be an (H, W, 3) uint8 array")
        h, w = px.shape[:2]
        if h <= 0 or w <= 0 or w != 2 * h:
            raise ValidationError(f"panorama must be 2:1 equirectangular, got {w}x{h}")
        if self.source not in PANORAMA_SOURCES:
            raise ValidationError(f"unknown panorama source {self.source!r}")

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class ViewSet:
    """36 perspective views of one panorama, elevation-major then heading.

    ``views[i]`` sits at heading index ``i % 12`` (0..11, 30 degree steps
    from 0) and elevation index ``i // 12`` (0: -30, 1: 0, 2: +30 degrees).
    """

    views: np.ndarray
    candidate_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        v = self.views
        if v.ndim != 4 or v.shape[0] != 36 or v.shape[3] != 3 or v.dtype != np.uint8:
            raise ValidationError("ViewSet needs exactly 36 same-size RGB8 views")
        if self.candidate_mask is None:
            object.__setattr__(self, "candidate_mask", np.zeros(36, dtype=bool))
        mask = np.asarray(self.candidate_mask, dtype=bool)
        if mask.shape != (36,):
            raise ValidationError("candidate_mask must have 36 entries")
        object.__setattr__(self, "candidate_mask", mask)

    @staticmethod
    def tag(index: int) -> tuple[int, int]:
        """(heading_index, elevation_index) of a flat view index."""
        if not 0 <= index < 36:
            raise ValidationError(f"view index {index} outside 0..35")
        return index % 12, index // 12

    def view(self, heading_index: int, elevation_index: int) -> np.ndarray:
        return self.views[elevation_index * 12 + heading_index]


@dataclass(frozen=True)
class GroundTruthAction:
    """The single view an agent should act toward at one timestep.

    For the final timestep of a trajectory the action is STOP:
    ``next_viewpoint`` equals the current viewpoint and ``view_index``
    continues the arrival heading of the preceding step.
    """

    view: np.ndarray
    view_index: int
    next_viewpoint: str

    def __post_init__(self) -> None:
        if not 0 <= self.view_index < 36:
            raise ValidationError(f"view_index {self.view_index} outside 0..35")


@dataclass
class ProvenanceRecord:
    """One provider call attributed to a bundle."""

    provider_id: str
    role: str
    params: dict[str, Any]
    attempts: int
    duration_ms: float
    timestamp: str
    cached: bool = False

    def to_json(self) -> dict[str, Any]:
        return {
            "provider_id": self.provider_id,
            "role": self.role,
            "params": self.params,
            "attempts": self.attempts,
            "duration_ms": self.duration_ms,
            "timestamp": self.timestamp,
            "cached": self.cached,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "ProvenanceRecord":
        return cls(
            provider_id=d["provider_id"],
            role=d["role"],
            params=d["params"],
            attempts=d["attempts"],
            duration_ms=d["duration_ms"],
            timestamp=d["timestamp"],
            cached=d.get("cached", False),
        )


@dataclass
class RewriteBundle:
    """All rewriting artifacts for one augmented trajectory variant.

    Per-step lists all have length T (the trajectory's step count); the
    final step is the STOP action. Panoramas are referenced by blob
    SHA-256, never embedded.
    """

    path_id: str
    variant: int
    scan_id: str
    instruction_original: str
    scene_descriptions: list[str]
    rewritten_descriptions: list[str]
    added_objects: list[list[str]]
    grounded_landmarks: list[str]
    grounded_scores: list[float]
    new_descriptions: list[str]
    rewritten_instruction: str
    gt_view_indices: list[int]
    original_pano_refs: list[str]
    generated_pano_refs: list[str]
    provenance: list[ProvenanceRecord] = field(default_factory=list)
    seed: int | None = None

    def validate(self) -> None:
        t = len(self.scene_descriptions)
        if t < 2:
            raise ValidationError(f"bundle {self.path_id}/{self.variant}: needs T >= 2 steps")
        per_step = {
            "rewritten_descriptions": self.rewritten_descriptions,
            "added_objects": self.added_objects,
            "grounded_landmarks": self.grounded_landmarks,
            "grounded_scores": self.grounded_scores,
            "new_descriptions": self.new_descriptions,
            "gt_view_indices": self.gt_view_indices,
            "original_pano_refs": self.original_pano_refs,
            "generated_pano_refs": self.generated_pano_refs,
        }
        for name, lst in per_step.items():
            if len(lst) != t:
                raise ValidationError(
                    f"bundle {self.path_id}/{self.variant}: {name} has length "
                    f"{len(lst)}, expected T={t}"
                )
        if not self.rewritten_instruction.strip():
            raise ValidationError(
                f"bundle {self.path_id}/{self.variant}: rewritten instruction is empty"
            )

    def to_json(self) -> dict[str, Any]:
        return {
            "path_id": self.path_id,
            "variant": self.variant,
            "scan_id": self.scan_id,
            "instruction_original": self.instruction_original,
            "scene_descriptions": self.scene_descriptions,
            "rewritten_descriptions": self.rewritten_descriptions,
            "added_objects": self.added_objects,
            "grounded_landmarks": self.grounded_landmarks,
            "grounded_scores": self.grounded_scores,
            "new_descriptions": self.new_descriptions,
            "rewritten_instruction": self.rewritten_instruction,
            "gt_view_indices": self.gt_view_indices,
            "original_pano_refs": self.original_pano_refs,
            "generated_pano_refs": self.generated_pano_refs,
            "provenance": [p.to_json() for p in self.provenance],
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, d: dict[str, Any]) -> "RewriteBundle":
        return cls(
            path_id=d["path_id"],
            variant=d["variant"],
            scan_id=d["scan_id"],
            instruction_original=d["instruction_original"],
            scene_descriptions=list(d["scene_descriptions"]),
            rewritten_descriptions=list(d["rewritten_descriptions"]),
            added_objects=[list(x) for x in d["added_objects"]],
            grounded_landmarks=list(d["grounded_landmarks"]),
            grounded_scores=[float(x) for x in d["grounded_scores"]],
            new_descriptions=list(d["new_descriptions"]),
            rewritten_instruction=d["rewritten_instruction"],
            gt_view_indices=[int(x) for x in d["gt_view_indices"]],
            original_pano_refs=list(d["original_pano_refs"]),
            generated_pano_refs=list(d["generated_pano_refs"]),
            provenance=[ProvenanceRecord.from_json(p) for p in d.get("provenance", [])],
            seed=d.get("seed"),
        )


# ---------------------------------------------------------------------------
# Loading


def load_connectivity(path: str | Path, scan_id: str | None = None) -> ConnectivityGraph:
    """Load one scan's connectivity JSON into a ConnectivityGraph.

    The simulator pose is z-up; node positions are remapped into the
    pipeline's y-up frame as (pose[3], pose[11], pose[7]) so that headings
    are atan2(dx, dz) and elevation comes from dy.
    """
    path = Path(path)
    if scan_id is None:
        scan_id = path.name.replace("_connectivity.json", "").replace(".json", "")
    data = _read_json(path)
    if not isinstance(data, list):
        raise ValidationError(f"{path}: connectivity file must be a JSON array")

    included = [rec for rec in data if rec.get("included", True)]
    positions: dict[str, tuple[float, float, float]] = {}
    for rec in included:
        pose = rec["pose"]
        if len(pose) != 16:
            raise ValidationError(f"{path}: pose of {rec.get('image_id')!r} is not 16 floats")
        positions[rec["image_id"]] = (float(pose[3]), float(pose[11]), float(pose[7]))

    index_of = {rec["image_id"]: i for i, rec in enumerate(data)}
    edges: dict[frozenset[str], float] = {}
    for rec in included:
        a = rec["image_id"]
        for j, open_ in enumerate(rec.get("unobstructed", [])):
            if not open_ or j >= len(data):
                continue
            other = data[j]
            if not other.get("included", True) or other["image_id"] == a:
                continue
            b = other["image_id"]
            # symmetry check: the reverse flag must agree
            back = other.get("unobstructed", [])
            ia = index_of[a]
            if ia >= len(back) or not back[ia]:
                raise ValidationError(
                    f"{path}: asymmetric edge {a!r} -> {b!r} (reverse not unobstructed)"
                )
            pa, pb = positions[a], positions[b]
            dist = math.dist(pa, pb)
            if dist <= 0:
                raise ValidationError(f"{path}: zero-length edge {a!r} -> {b!r}")
            edges[frozenset((a, b))] = dist
    return ConnectivityGraph(scan_id=scan_id, nodes=positions, edges=edges)


def load_dataset(
    path: str | Path,
    split: str,
    connectivity_dir: str | Path | None = None,
) -> list[TrajectoryInstructionPair]:
    """Load and validate one split of trajectory-instruction pairs.

    ``path`` is either the split JSON file itself or a dataset root
    directory containing ``{split}.json`` (or ``*_{split}.json``) and a
    ``connectivity/`` subdirectory with per-scan graphs. Every pair is
    checked for graph adjacency; a dangling viewpoint fails the load.
    """
    path = Path(path)
    if path.is_dir():
        split_file = _find_split_file(path, split)
        if connectivity_dir is None and (path / "connectivity").is_dir():
            connectivity_dir = path / "connectivity"
    else:
        split_file = path

    raw = _read_json(split_file)
    if not isinstance(raw, list):
        raise ValidationError(f"{split_file}: trajectory file must be a JSON array")

    pairs: list[TrajectoryInstructionPair] = []
    for rec in raw:
        try:
            pairs.append(
                TrajectoryInstructionPair(
                    path_id=str(rec["path_id"]),
                    scan_id=str(rec["scan"]),
                    viewpoints=tuple(str(v) for v in rec["path"]),
                    initial_heading=float(rec.get("heading", 0.0)) % 360.0,
                    instructions=tuple(str(i) for i in rec["instructions"]),
                )
            )
        except KeyError as exc:
            raise ValidationError(f"{split_file}: record missing field {exc}") from exc

    if connectivity_dir is not None:
        graphs: dict[str, ConnectivityGraph] = {}
        for pair in pairs:
            if pair.scan_id not in graphs:
                graphs[pair.scan_id] = load_connectivity(
                    Path(connectivity_dir) / f"{pair.scan_id}_connectivity.json",
                    pair.scan_id,
                )
            pair.validate_against(graphs[pair.scan_id])

    unique = len({p.path_id for p in pairs})
    log.info("loaded %d pairs (%d unique trajectories) from %s", len(pairs), unique, split_file)
    return pairs


def _find_split_file(root: Path, split: str) -> Path:
    direct = root / f"{split}.json"
    if direct.exists():
        return direct
    hits = sorted(root.glob(f"*_{split}.json"))
    if hits:
        return hits[0]
    raise ValidationError(f"no trajectory file for split {split!r} under {root}")


def _read_json(path: Path) -> Any:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed JSON at line {exc.lineno}: {exc.msg}") from exc


# ---------------------------------------------------------------------------
# Image serialization


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_panorama(pano: Panorama, path: str | Path) -> None:
    Path(path).write_bytes(encode_png(pano.pixels))


def load_panorama(path: str | Path, source: str = "captured") -> Panorama:
    return Panorama(pixels=decode_png(Path(path).read_bytes()), source=source)


# ---------------------------------------------------------------------------
# Content-addressed artifact store


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
        "utf-8"
    )


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def stable_hash(*parts: Any) -> int:
    """63-bit non-negative hash of the parts; stable across processes.

    Used to derive sub-seeds so every unit of work is independently
    deterministic regardless of scheduling order.
    """
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(payload).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class ManifestEntry:
    kind: str
    sha256: str
    path: str
    meta: dict[str, Any]

    def to_json(self) -> dict[str, Any]:
        return {"kind": self.kind, "sha256": self.sha256, "path": self.path, "meta": self.meta}


class ArtifactStore:
    """Content-addressed blob store with a JSONL manifest.

    Blobs live at ``<root>/blobs/<sha[:2]>/<sha>``; re-storing identical
    bytes is idempotent. Manifest appends are serialized through one lock;
    concurrent stores of distinct content are safe.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.blob_dir = self.root / "blobs"
        self.manifest_path = self.root / "manifest.jsonl"
        self.blob_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._index: dict[str, ManifestEntry] = {}
        if self.manifest_path.exists():
            for line in self.manifest_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rec = json.loads(line)
                entry = ManifestEntry(rec["kind"], rec["sha256"], rec["path"], rec["meta"])
                self._index[entry.sha256] = entry

    def _blob_path(self, sha: str) -> Path:
        return self.blob_dir / sha[:2] / sha

    def has(self, sha: str) -> bool:
        return self._blob_path(sha).exists()

    def put_bytes(self, data: bytes, kind: str, meta: dict[str, Any] | None = None) -> ManifestEntry:
        sha = sha256_hex(data)
        with self._lock:
            existing = self._index.get(sha)
            if existing is not None:
                return existing
            blob = self._blob_path(sha)
            if not blob.exists():
                blob.parent.mkdir(parents=True, exist_ok=True)
                tmp = blob.with_suffix(".tmp")
                tmp.write_bytes(data)
                tmp.replace(blob)
            entry = ManifestEntry(
                kind=kind,
                sha256=sha,
                path=str(blob.relative_to(self.root)),
                meta=meta or {},
            )
            with self.manifest_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
            self._index[sha] = entry
            return entry

    def get_bytes(self, sha: str) -> bytes:
        blob = self._blob_path(sha)
        if not blob.exists():
            raise ValidationError(f"no blob {sha} under {self.blob_dir}")
        return blob.read_bytes()

    def put_json(self, obj: Any, kind: str, meta: dict[str, Any] | None = None) -> ManifestEntry:
        return self.put_bytes(canonical_json(obj), kind, meta)

    def get_json(self, sha: str) -> Any:
        return json.loads(self.get_bytes(sha).decode("utf-8"))

    def put_panorama(self, pano: Panorama, meta: dict[str, Any] | None = None) -> ManifestEntry:
        m = {"source": pano.source, "width": pano.width, "height": pano.height}
        if pano.seed is not None:
            m["seed"] = pano.seed
        m.update(meta or {})
        return self.put_bytes(encode_png(pano.pixels), kind="panorama", meta=m)

    def get_panorama(self, sha: str) -> Panorama:
        entry = self._index.get(sha)
        source = entry.meta.get("source", "captured") if entry else "captured"
        seed = entry.meta.get("seed") if entry else None
        return Panorama(pixels=decode_png(self.get_bytes(sha)), source=source, seed=seed)

    def entries(self, kind: str | None = None) -> list[ManifestEntry]:
        out = list(self._index.values())
        if kind is not None:
            out = [e for e in out if e.kind == kind]
        return sorted(out, key=lambda e: e.sha256)

    def rewrite_manifest_sorted(self) -> None:
        """Rewrite the manifest with entries in sha order (deterministic)."""
        with self._lock:
            lines = [
                json.dumps(e.to_json(), sort_keys=True)
                for e in sorted(self._index.values(), key=lambda e: e.sha256)
            ]
            self.manifest_path.write_text("\n".join(lines) + ("\n" if lines else ""), "utf-8")


def store_bundle(bundle: RewriteBundle, store: ArtifactStore) -> ManifestEntry:
    """Persist a validated bundle; identical bundles map to one entry."""
    bundle.validate()
    return store.put_json(
        bundle.to_json(),
        kind="bundle",
        meta={"path_id": bundle.path_id, "variant": bundle.variant, "scan": bundle.scan_id},
    )


def load_bundle(sha: str, store: ArtifactStore) -> RewriteBundle:
    bundle = RewriteBundle.from_json(store.get_json(sha))
    bundle.validate()
    return bundle


def iter_bundles(store: ArtifactStore) -> Iterable[RewriteBundle]:
    for entry in store.entries(kind="bundle"):
        yield load_bundle(entry.sha256, store)
