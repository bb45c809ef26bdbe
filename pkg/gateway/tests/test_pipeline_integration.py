"""End-to-end: the augmentation pipeline, spoken to over real HTTP,
completes a 5-pair toy run against the stub gateway with zero drops.

The pipeline is driven through its CLI in a subprocess, touching the
gateway only through the published endpoints.
"""

from __future__ import annotations

import json
import socket
import subprocess
import sys
import threading
import time
from pathlib import Path

import httpx
import numpy as np
import pytest
import uvicorn
from PIL import Image

from ram_gateway.app import create_app
from ram_gateway.config import GatewayConfig

TOKEN = "integration-token"


def free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def gateway_url():
    port = free_port()
    server = uvicorn.Server(
        uvicorn.Config(
            create_app(GatewayConfig(mode="stub", token=TOKEN)),
            host="127.0.0.1", port=port, log_level="warning",
        )
    )
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{port}"
    deadline = time.time() + 15
    while time.time() < deadline:
        try:
            if httpx.get(f"{url}/v1/openapi.json", timeout=1.0).status_code == 200:
                break
        except httpx.HTTPError:
            time.sleep(0.05)
    else:
        raise RuntimeError("gateway did not start")
    yield url
    server.should_exit = True
    thread.join(timeout=5)


def write_toy_dataset(root: Path) -> dict:
    """Five-pair dataset in the trajectory/connectivity/panorama layout
    the pipeline documents."""
    rng = np.random.default_rng(0)
    nodes = {
        "a": (0.0, 0.0), "b": (0.0, 3.0), "c": (3.0, 3.0), "d": (3.0, 0.0),
        "e": (0.0, 6.0), "f": (3.0, 6.0), "g": (6.0, 3.0),
    }
    links = [("a", "b"), ("b", "c"), ("c", "d"), ("a", "d"), ("b", "e"),
             ("c", "f"), ("e", "f"), ("c", "g"), ("f", "g")]
    ids = sorted(nodes)
    conn_dir = root / "connectivity"
    conn_dir.mkdir(parents=True)
    records = []
    for vp in ids:
        unobstructed = [
            (vp, other) in links or (other, vp) in links for other in ids
        ]
        x, y = nodes[vp]
        pose = [0.0] * 16
        pose[0] = pose[5] = pose[10] = pose[15] = 1.0
        pose[3], pose[7], pose[11] = x, y, 1.5  # z-up simulator frame
        records.append({"image_id": vp, "pose": pose,
                        "unobstructed": unobstructed, "included": True})
    (conn_dir / "toyscan_connectivity.json").write_text(json.dumps(records))

    pano_dir = root / "panoramas" / "toyscan"
    pano_dir.mkdir(parents=True)
    for i, vp in enumerate(ids):
        px = rng.integers(0, 255, size=(64, 128, 3), dtype=np.uint8)
        Image.fromarray(px).save(pano_dir / f"{vp}.png")

    paths = [["a", "b", "c"], ["a", "d", "c"], ["e", "b", "a"],
             ["d", "c", "f"], ["b", "c", "g"]]
    texts = [
        "walk past the sofa and stop at the kitchen",
        "exit the hallway and wait by the door",
        "go through the living room toward the window",
        "walk around the table and stop near the bookshelf",
        "head down the corridor and stop at the stairs",
    ]
    pairs = [
        {"path_id": f"toy_{i}", "scan": "toyscan", "path": p,
         "heading": 0.0, "instructions": [texts[i]]}
        for i, p in enumerate(paths)
    ]
    traj = root / "train.json"
    traj.write_text(json.dumps(pairs))
    return {
        "trajectory_file": str(traj),
        "connectivity_dir": str(conn_dir),
        "panorama_dir": str(root / "panoramas"),
    }


class TestPipelineAgainstStubGateway:
    def test_toy_run_completes_with_zero_drops(self, gateway_url, tmp_path):
        dataset = write_toy_dataset(tmp_path / "data")
        provider = {"kind": "gateway", "url": gateway_url, "token": TOKEN}
        config = {
            **dataset,
            "output_root": str(tmp_path / "run"),
            "seed": 5,
            "augmentations_per_pair": 3,
            "pano_width": 128,
            "pano_height": 64,
            "view_size": 32,
            "providers": {
                "captioner": provider, "chat": provider,
                "embedder": provider, "panorama": provider,
            },
        }
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps(config))

        proc = subprocess.run(
            [sys.executable, "-m", "vlnaug.cli", "augment", "--config", str(config_path)],
            capture_output=True, text=True, timeout=600,
        )
        assert proc.returncode == 0, proc.stderr
        report = json.loads(proc.stdout)
        assert report["bundles_out"] == 15
        assert report["drops"] == []
        # observations really came from the gateway stub
        manifest = (tmp_path / "run" / "manifest.jsonl").read_text().splitlines()
        kinds = [json.loads(ln)["kind"] for ln in manifest]
        assert kinds.count("bundle") == 15

    def test_gateway_error_surfaces_exit_code_3(self, gateway_url, tmp_path):
        dataset = write_toy_dataset(tmp_path / "data2")
        bad = {"kind": "gateway", "url": gateway_url, "token": "wrong-token"}
        config = {
            **dataset,
            "output_root": str(tmp_path / "run2"),
            "seed": 5,
            "augmentations_per_pair": 1,
            "pano_width": 128,
            "pano_height": 64,
            "view_size": 32,
            "providers": {
                "captioner": bad, "chat": bad, "embedder": bad, "panorama": bad,
            },
        }
        config_path = tmp_path / "config2.json"
        config_path.write_text(json.dumps(config))
        proc = subprocess.run(
            [sys.executable, "-m", "vlnaug.cli", "augment", "--config", str(config_path)],
            capture_output=True, text=True, timeout=600,
        )
        # auth failures drop every unit; the run completes with 0 bundles
        assert proc.returncode == 0, proc.stderr
        report = json.loads(proc.stdout)
        assert report["bundles_out"] == 0
        assert all(d["reason"] == "provider" for d in report["drops"])
