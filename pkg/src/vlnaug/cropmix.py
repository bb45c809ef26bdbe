"""Random observation cropping: recombine vertical strips from different
panoramas of a pool into new panoramas.

Strips span the full height and keep their column positions, so the
equirectangular row geometry (and therefore view discretization) stays
valid. Each output uses 2 to 4 strips, each at least a fifth of the
width, and draws from at least two distinct sources whenever the pool
allows it. Boundaries are pixel-granular by default, which keeps outputs
from distinct seeds almost surely distinct; pass ``snap_cells`` to align
seams with heading-cell multiples instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .corpus import Panorama, stable_hash
from .errors import ValidationError

MIN_STRIP_FRAC = 0.2
MIN_STRIPS = 2
MAX_STRIPS = 4


@dataclass(frozen=True)
class CropPlan:
    strip_boundaries: tuple[int, ...]
    source_assignment: tuple[int, ...]
    seed: int

    def __post_init__(self) -> None:
        b = self.strip_boundaries
        if len(b) < 2 or b[0] != 0:
            raise ValidationError("boundaries must start at 0")
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise ValidationError("boundaries must be strictly increasing")
        if len(self.source_assignment) != len(b) - 1:
            raise ValidationError("one source per strip required")
        width = b[-1]
        for i in range(len(b) - 1):
            if (b[i + 1] - b[i]) + 1e-9 < MIN_STRIP_FRAC * width:
                raise ValidationError(
                    f"strip {i} narrower than {MIN_STRIP_FRAC:.0%} of width"
                )

    def to_json(self) -> dict[str, Any]:
        return {
            "strip_boundaries": list(self.strip_boundaries),
            "source_assignment": list(self.source_assignment),
            "seed": self.seed,
        }


def _sample_boundaries(rng: np.random.Generator, width: int, n_strips: int, unit: int) -> list[int]:
    """Uniform composition of width into n_strips parts, each >= the
    minimum strip width, measured in ``unit``-sized steps."""
    total = width // unit
    min_cells = math.ceil(MIN_STRIP_FRAC * width / unit)
    slack = total - n_strips * min_cells
    if slack < 0:
        raise ValidationError(
            f"width {width} cannot hold {n_strips} strips of {MIN_STRIP_FRAC:.0%} each"
        )
    # stars and bars: distribute the slack over the strips
    if slack == 0:
        extras = [0] * n_strips
    else:
        bars = sorted(rng.choice(slack + n_strips - 1, size=n_strips - 1, replace=False))
        extras = []
        prev = -1
        for bar in (*bars, slack + n_strips - 1):
            extras.append(int(bar) - prev - 1)
            prev = int(bar)
    boundaries = [0]
    acc = 0
    for i in range(n_strips):
        acc += min_cells + extras[i]
        boundaries.append(min(acc * unit, width))
    boundaries[-1] = width
    return boundaries


def make_crop_plan(
    pool_size: int, width: int, seed: int, snap_cells: int | None = None
) -> CropPlan:
    """Seeded plan: strip count, boundaries, per-strip sources.

    ``snap_cells`` (e.g. 12) snaps boundaries to multiples of
    width/snap_cells; by default boundaries land on any pixel column.
    """
    if pool_size < 1:
        raise ValidationError("pool must be non-empty")
    unit = width // snap_cells if snap_cells else 1
    if unit < 1 or (snap_cells and width % snap_cells):
        raise ValidationError(f"width {width} not divisible into {snap_cells} cells")
    rng = np.random.default_rng(np.uint64(seed))
    n_strips = int(rng.integers(MIN_STRIPS, MAX_STRIPS + 1))
    boundaries = _sample_boundaries(rng, width, n_strips, unit)
    # adjacent strips never share a source, so every seam is a real seam
    # and any output with >= 2 strips mixes >= 2 panoramas
    sources = [int(rng.integers(0, pool_size))]
    for _ in range(n_strips - 1):
        if pool_size == 1:
            sources.append(0)
            continue
        pick = int(rng.integers(0, pool_size - 1))
        if pick >= sources[-1]:
            pick += 1
        sources.append(pick)
    return CropPlan(
        strip_boundaries=tuple(boundaries),
        source_assignment=tuple(sources),
        seed=seed,
    )


def apply_crop_plan(pool: list[Panorama], plan: CropPlan) -> Panorama:
    """Assemble one panorama by copying each strip's columns verbatim."""
    base = pool[0]
    out = np.empty_like(base.pixels)
    for i, src in enumerate(plan.source_assignment):
        lo, hi = plan.strip_boundaries[i], plan.strip_boundaries[i + 1]
        out[:, lo:hi] = pool[src].pixels[:, lo:hi]
    return Panorama(pixels=out, source="cropmixed", seed=plan.seed)


def crop_mix(
    pool: list[Panorama],
    count: int,
    seed: int,
    snap_cells: int | None = None,
) -> tuple[list[Panorama], list[CropPlan]]:
    """Produce ``count`` recombined panoramas from a same-size pool.

    Deterministic in (pool order, count, seed); the i-th output uses a
    sub-seed derived from (seed, i). Returns the panoramas together with
    their plans for audit.
    """
    if not pool:
        raise ValidationError("pool must be non-empty")
    if count < 1:
        raise ValidationError("count must be positive")
    dims = {(p.width, p.height) for p in pool}
    if len(dims) != 1:
        raise ValidationError(f"pool mixes dimensions: {sorted(dims)}")
    width = pool[0].width

    panos: list[Panorama] = []
    plans: list[CropPlan] = []
    for i in range(count):
        plan = make_crop_plan(
            len(pool), width, stable_hash("cropmix", seed, i), snap_cells=snap_cells
        )
        plans.append(plan)
        panos.append(apply_crop_plan(pool, plan))
    return panos, plans
