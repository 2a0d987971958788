"""FastAPI scoring service.

Endpoints
---------
POST /score    {"url": "..."} or {"urls": ["...", ...]} -> labels and malicious scores.
GET  /health   Liveness check with the loaded checkpoint's digest and epoch.

The model is loaded once and shared read-only by every request handler.
Requests carry at most 1024 URLs. There is no authentication; put the
service behind whatever gateway enforces access control.
"""

import logging
from typing import List, Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, StrictStr, model_validator

from url_transformer.checkpoint import load_checkpoint
from url_transformer.config import SERVE_CONFIG
from url_transformer.model import predict_batch

logger = logging.getLogger(__name__)


class ScoreRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    url: Optional[StrictStr] = None
    urls: Optional[List[StrictStr]] = None

    @model_validator(mode="after")
    def _exactly_one(self):
        if (self.url is None) == (self.urls is None):
            raise ValueError('provide exactly one of "url" or "urls"')
        return self

    def url_list(self) -> List[str]:
        return [self.url] if self.url is not None else list(self.urls)


class ScoreResult(BaseModel):
    url: str
    label: str
    score: float


class ModelInfo(BaseModel):
    checkpoint_digest: str
    epoch: int


class ScoreResponse(BaseModel):
    results: List[ScoreResult]
    model: ModelInfo


def create_app(checkpoint_path, max_batch: int = SERVE_CONFIG["max_batch"]) -> FastAPI:
    """Loads the checkpoint and builds the app around it."""
    ckpt = load_checkpoint(checkpoint_path)
    params = ckpt.model_params()
    vocab = ckpt.vocab
    info = ModelInfo(checkpoint_digest=ckpt.digest, epoch=ckpt.epoch)
    logger.info(f"Loaded checkpoint {checkpoint_path} (epoch {ckpt.epoch}, digest {ckpt.digest[:12]})")

    app = FastAPI(title="URL Transformer scoring service")

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request: Request, exc: RequestValidationError):
        messages = [str(err.get("msg", err)) for err in exc.errors()]
        return JSONResponse(status_code=400, content={"error": "malformed request", "detail": messages})

    @app.get("/health")
    def health():
        return {"status": "ok", **info.model_dump()}

    @app.post("/score", response_model=ScoreResponse)
    def score(request: ScoreRequest):
        urls = request.url_list()
        if len(urls) > max_batch:
            return JSONResponse(status_code=413, content={
                "error": f"batch of {len(urls)} URLs exceeds the limit of {max_batch} per request"})
        logger.debug(f"Scoring batch of {len(urls)} URL(s)")
        try:
            scored = predict_batch(params, vocab, urls)
        except Exception as e:
            logger.error(f"Scoring failed: {e}", exc_info=True)
            return JSONResponse(status_code=500, content={"error": "internal scoring failure"})
        results = [ScoreResult(url=u, label=label, score=s) for u, (label, s) in zip(urls, scored)]
        return ScoreResponse(results=results, model=info)

    return app


def serve(checkpoint_path, host: str = SERVE_CONFIG["host"], port: int = SERVE_CONFIG["port"]) -> None:
    import uvicorn

    app = create_app(checkpoint_path)
    uvicorn.run(app, host=host, port=port)
