"""
Service - HTTP inference endpoint for one trained model

GET /health reports the model configuration; POST /predict scores a WAV
upload (cepstral checkpoints only) or a SALF-F1 feature upload whose kind
matches the checkpoint. The model is immutable after loading, so handlers
share it without locking.
"""

import asyncio
import logging
from typing import Any, Callable, Dict, Optional

import numpy as np
import orjson
from aiohttp import web

from .audio_io import read_wav, resample
from .config import WORKING_RATE, CepstralConfig, FeatureKind
from .errors import (
    AudioError,
    FeatureError,
    FeatureFileError,
    KindMismatch,
    ShapeMismatch,
)
from .features import decode_feature_matrix, lfcc, mean_pool, mfcc
from .model import SalfModel

logger = logging.getLogger(__name__)

WAV_TYPES = frozenset({"audio/wav", "audio/x-wav", "audio/wave"})
FEATURE_TYPES = frozenset({"application/octet-stream"})

MODEL_KEY = web.AppKey("model", SalfModel)
CEPSTRAL_KEY = web.AppKey("cepstral", CepstralConfig)

_CEPSTRAL_EXTRACTORS: Dict[FeatureKind, Callable] = {
    FeatureKind.MFCC: mfcc,
    FeatureKind.LFCC: lfcc,
}


class BadRequest(Exception):
    """Request body cannot be interpreted."""


def _json(data: Dict[str, Any], status: int = 200) -> web.Response:
    return web.Response(
        body=orjson.dumps(data), status=status, content_type="application/json"
    )


def score_upload(
    model: SalfModel,
    cepstral: CepstralConfig,
    body: bytes,
    content_type: str,
) -> float:
    """
    MOS for one uploaded WAV or SALF-F1 payload.

    Raises:
        KindMismatch: upload kind does not fit the checkpoint
        BadRequest, AudioError, FeatureError, FeatureFileError,
        ShapeMismatch: malformed input
    """
    kind = model.config.feature_kind

    if content_type in WAV_TYPES:
        if not kind.is_cepstral:
            raise KindMismatch(
                f"Checkpoint expects {kind.value} feature files, not WAV audio"
            )
        buf = resample(read_wav(body), WORKING_RATE)
        vector = mean_pool(_CEPSTRAL_EXTRACTORS[kind](buf, cepstral))
    elif content_type in FEATURE_TYPES:
        fm = decode_feature_matrix(body)
        if fm.source_kind != kind:
            raise KindMismatch(
                f"Feature file holds {fm.source_kind.value}, checkpoint expects "
                f"{kind.value}"
            )
        vector = mean_pool(fm)
    else:
        raise BadRequest(f"Unsupported content type {content_type!r}")

    return model.predict(np.asarray(vector, dtype=np.float64))


@web.middleware
async def error_middleware(request: web.Request, handler) -> web.StreamResponse:
    try:
        return await handler(request)
    except web.HTTPException:
        raise
    except KindMismatch as e:
        return _json({"error": str(e)}, status=422)
    except (BadRequest, AudioError, FeatureError, FeatureFileError, ShapeMismatch) as e:
        return _json({"error": str(e)}, status=400)
    except Exception as e:
        logger.exception(f"Unhandled error on {request.path}")
        return _json({"error": f"internal error: {type(e).__name__}"}, status=500)


async def health(request: web.Request) -> web.Response:
    model = request.app[MODEL_KEY]
    return _json(
        {
            "status": "ok",
            "config": model.config.summary(),
            "parameters": model.num_parameters(),
        }
    )


async def predict(request: web.Request) -> web.Response:
    body = await request.read()
    if not body:
        raise BadRequest("Empty request body")
    mos = await asyncio.to_thread(
        score_upload,
        request.app[MODEL_KEY],
        request.app[CEPSTRAL_KEY],
        body,
        request.content_type,
    )
    return _json({"mos": mos})


def create_app(
    model: SalfModel, cepstral: Optional[CepstralConfig] = None
) -> web.Application:
    """Application serving ``model``; no training happens here."""
    app = web.Application(middlewares=[error_middleware])
    app[MODEL_KEY] = model
    app[CEPSTRAL_KEY] = cepstral or CepstralConfig()
    app.router.add_get("/health", health)
    app.router.add_post("/predict", predict)
    return app


def parse_bind(bind: str) -> tuple:
    """``host:port`` (or ``:port``) to a (host, port) pair."""
    host, sep, port = bind.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"Bind address must look like host:port, got {bind!r}")
    return host or "127.0.0.1", int(port)


def run_service(
    model: SalfModel, bind: str, cepstral: Optional[CepstralConfig] = None
) -> None:
    host, port = parse_bind(bind)
    logger.info(
        f"Serving {model.config.feature_kind.value} model "
        f"({model.num_parameters()} parameters) on http://{host}:{port}"
    )
    web.run_app(create_app(model, cepstral), host=host, port=port, print=None)
