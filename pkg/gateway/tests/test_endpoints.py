from __future__ import annotations

import base64
import io

import jsonschema
import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from ram_gateway.app import create_app
from ram_gateway.config import GatewayConfig


def png_b64(width=64, height=32, seed=0) -> str:
    rng = np.random.default_rng(seed)
    px = rng.integers(0, 255, size=(height, width, 3), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(px).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


@pytest.fixture
def client():
    return TestClient(create_app(GatewayConfig(mode="stub", token="sekrit")))


def auth():
    return {"Authorization": "Bearer sekrit"}


def response_schema(client, path: str):
    """Resolve the declared 200-response schema for an endpoint."""
    spec = client.get("/v1/openapi.json").json()
    ref = spec["paths"][path]["post"]["responses"]["200"]["content"][
        "application/json"
    ]["schema"]["$ref"]
    name = ref.rsplit("/", 1)[1]
    schema = dict(spec["components"]["schemas"][name])
    schema["components"] = {"schemas": spec["components"]["schemas"]}
    return schema


class TestSchemas:
    @pytest.mark.parametrize(
        "path,payload",
        [
            ("/v1/caption", {"image_b64": png_b64()}),
            ("/v1/chat", {"user": "hello", "seed": 1}),
            ("/v1/embed/text", {"text": "sofa"}),
            ("/v1/embed/image", {"image_b64": png_b64(seed=2)}),
            ("/v1/panorama", {"prompt": "a room with the sofa", "width": 128,
                              "height": 64, "seed": 3}),
        ],
    )
    def test_all_endpoints_schema_valid(self, client, path, payload):
        resp = client.post(path, json=payload, headers=auth())
        assert resp.status_code == 200, resp.text
        jsonschema.validate(resp.json(), response_schema(client, path))

    def test_openapi_served(self, client):
        spec = client.get("/v1/openapi.json").json()
        assert set(spec["paths"]) == {
            "/v1/caption", "/v1/chat", "/v1/embed/text", "/v1/embed/image", "/v1/panorama",
        }


class TestBehavior:
    def test_caption_echoes_dimensions(self, client):
        resp = client.post("/v1/caption", json={"image_b64": png_b64(80, 40)}, headers=auth())
        assert resp.json()["text"].startswith("stub-caption 80x40 ")

    def test_embed_unit_norm_and_dim(self, client):
        body = client.post("/v1/embed/text", json={"text": "kitchen"}, headers=auth()).json()
        v = np.asarray(body["vector"])
        assert body["dim"] == len(v) == 64
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_embed_text_repeatable(self, client):
        a = client.post("/v1/embed/text", json={"text": "same"}, headers=auth()).json()
        b = client.post("/v1/embed/text", json={"text": "same"}, headers=auth()).json()
        assert a == b

    def test_panorama_dimensions_match_request(self, client):
        body = client.post(
            "/v1/panorama",
            json={"prompt": "a hallway", "width": 1024, "height": 512, "seed": 1},
            headers=auth(),
        ).json()
        png = base64.b64decode(body["image_b64"])
        with Image.open(io.BytesIO(png)) as im:
            assert im.size == (1024, 512)

    def test_chat_grammar_for_scene_prompt(self, client):
        prompt = (
            "Answer with:\nAdded objects: <x>\nRewritten description: <y>\n\n"
            "Scene description: a plain corridor"
        )
        text = client.post(
            "/v1/chat", json={"user": prompt, "seed": 9}, headers=auth()
        ).json()["text"]
        assert "Added objects:" in text
        assert "Rewritten description:" in text
        assert "a plain corridor" in text


class TestErrors:
    def test_bad_token_is_401(self, client):
        resp = client.post("/v1/chat", json={"user": "x"},
                           headers={"Authorization": "Bearer wrong"})
        assert resp.status_code == 401

    def test_missing_token_is_401(self, client):
        assert client.post("/v1/chat", json={"user": "x"}).status_code == 401

    def test_invalid_body_is_422_with_field_path(self, client):
        resp = client.post("/v1/chat", json={"seed": 1}, headers=auth())
        assert resp.status_code == 422
        detail = resp.json()["detail"]
        assert any("user" in d["loc"] for d in detail)

    def test_bad_aspect_is_422(self, client):
        resp = client.post(
            "/v1/panorama",
            json={"prompt": "x", "width": 100, "height": 60},
            headers=auth(),
        )
        assert resp.status_code == 422

    def test_invalid_base64_is_422(self, client):
        resp = client.post("/v1/caption", json={"image_b64": "!!!"}, headers=auth())
        assert resp.status_code == 422

    def test_live_mode_without_backend_is_503(self):
        client = TestClient(create_app(GatewayConfig(mode="live", token=None)))
        resp = client.post("/v1/chat", json={"user": "x"})
        assert resp.status_code == 503

    def test_live_mode_bad_backend_fails_startup(self):
        from ram_gateway.config import GatewayConfigError

        config = GatewayConfig(
            mode="live", backend_specs={"chat": "nonexistent_module:create"}
        )
        with pytest.raises(GatewayConfigError, match="chat"):
            create_app(config)

    def test_no_token_configured_allows_requests(self):
        client = TestClient(create_app(GatewayConfig(mode="stub", token=None)))
        assert client.post("/v1/chat", json={"user": "x"}).status_code == 200
