"""FastAPI application exposing the five inference endpoints.

Stub mode serves deterministic content-derived responses; live mode
dispatches to model backends resolved at startup. The OpenAPI document
lives at /v1/openapi.json.
"""

from __future__ import annotations

import base64
import binascii
import os

from fastapi import Depends, FastAPI, HTTPException, Request
from pydantic import BaseModel, Field, field_validator, model_validator

from . import __version__, stub
from .config import GatewayConfig


class CaptionRequest(BaseModel):
    image_b64: str = Field(min_length=1)


class CaptionResponse(BaseModel):
    text: str


class ChatRequestBody(BaseModel):
    system: str = ""
    user: str = Field(min_length=1)
    temperature: float = Field(default=0.8, ge=0.0)
    presence_penalty: float = 0.0
    max_tokens: int = Field(default=512, gt=0)
    seed: int | None = None

    @field_validator("user")
    @classmethod
    def _user_not_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("user text must be non-empty")
        return v


class ChatResponse(BaseModel):
    text: str


class EmbedTextRequest(BaseModel):
    text: str = Field(min_length=1)


class EmbedImageRequest(BaseModel):
    image_b64: str = Field(min_length=1)


class EmbedResponse(BaseModel):
    vector: list[float]
    dim: int


class PanoramaRequestBody(BaseModel):
    prompt: str = Field(min_length=1)
    width: int = Field(default=1024, gt=0)
    height: int = Field(default=512, gt=0)
    num_inference_steps: int = Field(default=30, gt=0)
    seed: int | None = None

    @model_validator(mode="after")
    def _check_aspect(self) -> "PanoramaRequestBody":
        if self.width != 2 * self.height:
            raise ValueError(f"aspect must be 2:1, got {self.width}x{self.height}")
        return self


class PanoramaResponse(BaseModel):
    image_b64: str


def _decode_b64(data: str) -> bytes:
    try:
        return base64.b64decode(data, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise HTTPException(status_code=422, detail=[
            {"loc": ["body", "image_b64"], "msg": f"invalid base64: {exc}",
             "type": "value_error"}
        ]) from exc


def create_app(config: GatewayConfig | None = None) -> FastAPI:
    config = config or GatewayConfig.from_env()
    config.load_backends()

    app = FastAPI(
        title="ram-gateway",
        version=__version__,
        openapi_url="/v1/openapi.json",
        docs_url="/v1/docs",
    )

    async def require_token(request: Request) -> None:
        if config.token is None:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {config.token}":
            raise HTTPException(status_code=401, detail="bad bearer token")

    def backend_or_503(role: str):
        if config.mode == "stub":
            return None
        backend = config.backends.get(role)
        if backend is None:
            raise HTTPException(status_code=503, detail=f"{role} model unavailable")
        return backend

    auth = Depends(require_token)

    @app.post("/v1/caption", response_model=CaptionResponse, dependencies=[auth])
    async def caption(body: CaptionRequest) -> CaptionResponse:
        png = _decode_b64(body.image_b64)
        backend = backend_or_503("caption")
        text = stub.caption(png) if backend is None else backend(png)
        return CaptionResponse(text=text)

    @app.post("/v1/chat", response_model=ChatResponse, dependencies=[auth])
    async def chat(body: ChatRequestBody) -> ChatResponse:
        backend = backend_or_503("chat")
        if backend is None:
            text = stub.chat(body.user, body.seed)
        else:
            text = backend(
                system=body.system, user=body.user, temperature=body.temperature,
                presence_penalty=body.presence_penalty, max_tokens=body.max_tokens,
                seed=body.seed,
            )
        return ChatResponse(text=text)

    @app.post("/v1/embed/text", response_model=EmbedResponse, dependencies=[auth])
    async def embed_text(body: EmbedTextRequest) -> EmbedResponse:
        backend = backend_or_503("embed")
        vector = stub.embed_text(body.text) if backend is None else backend(text=body.text)
        return EmbedResponse(vector=vector, dim=len(vector))

    @app.post("/v1/embed/image", response_model=EmbedResponse, dependencies=[auth])
    async def embed_image(body: EmbedImageRequest) -> EmbedResponse:
        png = _decode_b64(body.image_b64)
        backend = backend_or_503("embed")
        vector = stub.embed_image(png) if backend is None else backend(image=png)
        return EmbedResponse(vector=vector, dim=len(vector))

    @app.post("/v1/panorama", response_model=PanoramaResponse, dependencies=[auth])
    async def panorama(body: PanoramaRequestBody) -> PanoramaResponse:
        backend = backend_or_503("panorama")
        if backend is None:
            png = stub.panorama(body.prompt, body.width, body.height, body.seed)
        else:
            png = backend(
                prompt=body.prompt, width=body.width, height=body.height,
                num_inference_steps=body.num_inference_steps, seed=body.seed,
            )
        return PanoramaResponse(image_b64=base64.b64encode(png).decode("ascii"))

    return app


def serve() -> None:
    """Entry point: run the gateway with uvicorn."""
    import uvicorn

    host = os.environ.get("GATEWAY_HOST", "127.0.0.1")
    port = int(os.environ.get("GATEWAY_PORT", "8080"))
    uvicorn.run(create_app(), host=host, port=port)
