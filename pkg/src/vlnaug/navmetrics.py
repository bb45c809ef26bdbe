"""Navigation metrics over connectivity graphs.

Reference evaluator for downstream trainers and a dataset sanity tool.
All distances are geodesic: shortest paths over edge weights.

Closed forms (success radius d_th defaults to 3 m):

* TL: sum of geodesic lengths of consecutive predicted hops.
* NE: geodesic(last predicted node, goal).
* SR: 1 iff NE <= d_th.
* SPL: SR * d* / max(d*, TL), d* = geodesic(start, goal).
* OSR: 1 iff any predicted node lies within d_th of the goal.
* nDTW: exp(-DTW(pred, gt) / (|gt| * d_th)) with geodesic node costs.
* sDTW: SR * nDTW.
* CLS: PC * LS, where PC = mean over gt nodes r of exp(-d(r, pred)/d_th),
  EPL = PC * TL_gt, and LS = EPL / (EPL + |EPL - TL|).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import networkx as nx

from .corpus import ConnectivityGraph
from .errors import MetricError, ValidationError

DEFAULT_SUCCESS_RADIUS_M = 3.0

METRIC_NAMES = ("TL", "NE", "SR", "SPL", "OSR", "nDTW", "sDTW", "CLS")


@dataclass(frozen=True)
class EpisodeResult:
    predicted_path: tuple[str, ...]
    gt_path: tuple[str, ...]
    graph: ConnectivityGraph

    def __post_init__(self) -> None:
        if not self.predicted_path or not self.gt_path:
            raise ValidationError("episode paths must be non-empty")
        for node in (*self.predicted_path, *self.gt_path):
            if node not in self.graph.nodes:
                raise ValidationError(
                    f"node {node!r} not in scan {self.graph.scan_id}"
                )


class GeodesicTable:
    """Memoized single-source shortest-path distances for one graph."""

    def __init__(self, graph: ConnectivityGraph):
        self._nx = nx.Graph()
        self._nx.add_nodes_from(graph.nodes)
        for pair, dist in graph.edges.items():
            a, b = sorted(pair)
            self._nx.add_edge(a, b, weight=dist)
        self._from = lru_cache(maxsize=None)(self._single_source)

    def _single_source(self, source: str) -> dict[str, float]:
        return nx.single_source_dijkstra_path_length(self._nx, source, weight="weight")

    def distance(self, a: str, b: str) -> float:
        if a == b:
            return 0.0
        table = self._from(a)
        if b not in table:
            raise MetricError(f"no path between {a!r} and {b!r}")
        return table[b]


def _dtw(table: GeodesicTable, pred: tuple[str, ...], gt: tuple[str, ...]) -> float:
    n, m = len(gt), len(pred)
    prev = [math.inf] * (m + 1)
    prev[0] = 0.0
    for i in range(1, n + 1):
        cur = [math.inf] * (m + 1)
        for j in range(1, m + 1):
            d = table.distance(gt[i - 1], pred[j - 1])
            cur[j] = d + min(prev[j], cur[j - 1], prev[j - 1])
        prev = cur
    return prev[m]


def evaluate(
    result: EpisodeResult,
    success_radius_m: float = DEFAULT_SUCCESS_RADIUS_M,
    table: GeodesicTable | None = None,
) -> dict[str, float]:
    """Compute all eight metrics for one episode."""
    if success_radius_m <= 0:
        raise ValidationError("success radius must be positive")
    table = table or GeodesicTable(result.graph)
    pred = result.predicted_path
    gt = result.gt_path
    goal = gt[-1]

    tl = sum(table.distance(a, b) for a, b in zip(pred, pred[1:]))
    ne = table.distance(pred[-1], goal)
    sr = 1.0 if ne <= success_radius_m else 0.0
    d_star = table.distance(gt[0], goal)
    spl = sr * d_star / max(d_star, tl) if max(d_star, tl) > 0 else sr
    osr = 1.0 if any(table.distance(p, goal) <= success_radius_m for p in pred) else 0.0

    ndtw = math.exp(-_dtw(table, pred, gt) / (len(gt) * success_radius_m))
    sdtw = sr * ndtw

    pc = sum(
        math.exp(-min(table.distance(r, p) for p in pred) / success_radius_m) for r in gt
    ) / len(gt)
    tl_gt = sum(table.distance(a, b) for a, b in zip(gt, gt[1:]))
    epl = pc * tl_gt
    denom = epl + abs(epl - tl)
    ls = epl / denom if denom > 0 else 1.0
    cls_score = pc * ls

    return {
        "TL": tl,
        "NE": ne,
        "SR": sr,
        "SPL": spl,
        "OSR": osr,
        "nDTW": ndtw,
        "sDTW": sdtw,
        "CLS": cls_score,
    }


def evaluate_many(
    episodes: list[EpisodeResult], success_radius_m: float = DEFAULT_SUCCESS_RADIUS_M
) -> dict[str, float]:
    """Per-metric means over episodes sharing any number of graphs."""
    if not episodes:
        raise ValidationError("no episodes to evaluate")
    tables: dict[str, GeodesicTable] = {}
    sums = dict.fromkeys(METRIC_NAMES, 0.0)
    for ep in episodes:
        tab = tables.setdefault(ep.graph.scan_id, GeodesicTable(ep.graph))
        for name, value in evaluate(ep, success_radius_m, tab).items():
            sums[name] += value
    return {name: sums[name] / len(episodes) for name in METRIC_NAMES}
