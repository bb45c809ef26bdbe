from __future__ import annotations

import json
import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vlnaug.corpus import ConnectivityGraph, Panorama, encode_png

_ACCEPTANCE_RESULTS: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when == "call" and "test_acceptance" in report.nodeid:
        _ACCEPTANCE_RESULTS.append(
            (report.nodeid.split("::", 1)[1], "PASS" if report.passed else "FAIL")
        )


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, outcome in _ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{outcome}  {name}")


def synthetic_panorama(width=128, seed=0, source="captured"):
    """Deterministic smooth-gradient panorama with some structure."""
    height = width // 2
    rng = np.random.default_rng(seed)
    base = rng.integers(30, 220, size=3)
    xs = np.linspace(0.0, 2.0 * math.pi, width, endpoint=False)
    ys = np.linspace(0.0, math.pi, height)
    lon, lat = np.meshgrid(xs, ys)
    px = np.empty((height, width, 3), dtype=np.uint8)
    px[..., 0] = ((np.sin(lon) * 0.5 + 0.5) * 127 + base[0] // 2).astype(np.uint8)
    px[..., 1] = ((np.cos(lat) * 0.5 + 0.5) * 127 + base[1] // 2).astype(np.uint8)
    px[..., 2] = ((np.sin(lon + lat) * 0.5 + 0.5) * 127 + base[2] // 2).astype(np.uint8)
    return Panorama(pixels=px, source=source, seed=seed)


def line_graph(scan="scanL", n=4, spacing=2.0):
    """n collinear nodes along +z, edges between neighbors."""
    nodes = {f"vp{i}": (0.0, 0.0, spacing * i) for i in range(n)}
    edges = {
        frozenset((f"vp{i}", f"vp{i+1}")): spacing
        for i in range(n - 1)
    }
    return ConnectivityGraph(scan_id=scan, nodes=nodes, edges=edges)


def grid_graph(scan="scanG"):
    """Seven nodes in one horizontal plane, well connected."""
    pts = {
        "a": (0.0, 0.0, 0.0),
        "b": (0.0, 0.0, 3.0),
        "c": (3.0, 0.0, 3.0),
        "d": (3.0, 0.0, 0.0),
        "e": (0.0, 0.0, 6.0),
        "f": (3.0, 0.0, 6.0),
        "g": (6.0, 0.0, 3.0),
    }
    links = [("a", "b"), ("b", "c"), ("c", "d"), ("a", "d"), ("b", "e"), ("c", "f"),
             ("e", "f"), ("c", "g"), ("f", "g")]
    edges = {frozenset(l): math.dist(pts[l[0]], pts[l[1]]) for l in links}
    return ConnectivityGraph(scan_id=scan, nodes=pts, edges=edges)


def write_toy_dataset(root: Path, num_pairs=5, pano_width=128):
    """Materialize a small on-disk dataset in the loader's layout.

    Returns (trajectory_file, connectivity_dir, panorama_dir).
    """
    graph = grid_graph("toyscan")
    conn_dir = root / "connectivity"
    conn_dir.mkdir(parents=True, exist_ok=True)
    ids = sorted(graph.nodes)
    records = []
    for i, vp in enumerate(ids):
        unobstructed = [graph.adjacent(vp, other) for other in ids]
        x, y, z = graph.nodes[vp]
        pose = [0.0] * 16
        pose[3], pose[7], pose[11] = x, z, y  # simulator frame is z-up
        pose[0] = pose[5] = pose[10] = pose[15] = 1.0
        records.append(
            {"image_id": vp, "pose": pose, "unobstructed": unobstructed, "included": True}
        )
    (conn_dir / "toyscan_connectivity.json").write_text(json.dumps(records), "utf-8")

    paths = [
        ["a", "b", "c"],
        ["a", "d", "c", "g"],
        ["e", "b", "a"],
        ["d", "c", "f", "e"],
        ["b", "c", "g"],
        ["g", "f", "e"],
    ][:num_pairs]
    texts = [
        "walk past the sofa and stop at the kitchen",
        "exit the hallway, turn left at the plant, and wait by the door",
        "go through the living room toward the window",
        "walk around the table and stop near the bookshelf",
        "head down the corridor and stop at the stairs",
        "leave the bedroom and stop beside the mirror",
    ]
    pairs = []
    for i, path in enumerate(paths):
        pairs.append(
            {
                "path_id": f"toy_{i}",
                "scan": "toyscan",
                "path": path,
                "heading": float((i * 40) % 360),
                "instructions": [texts[i], texts[(i + 1) % len(texts)]][: 1 + i % 2],
            }
        )
    traj_file = root / "train.json"
    traj_file.write_text(json.dumps(pairs), "utf-8")

    pano_dir = root / "panoramas" / "toyscan"
    pano_dir.mkdir(parents=True, exist_ok=True)
    for i, vp in enumerate(ids):
        pano = synthetic_panorama(width=pano_width, seed=100 + i)
        (pano_dir / f"{vp}.png").write_bytes(encode_png(pano.pixels))
    return traj_file, conn_dir, root / "panoramas"


@pytest.fixture
def toy_dataset(tmp_path):
    return write_toy_dataset(tmp_path / "dataset")


@pytest.fixture
def pano128():
    return synthetic_panorama(width=128, seed=7)
