import struct

import numpy as np
import pytest
import pytest_asyncio
from aiohttp import test_utils

from core.audio_io import write_wav
from core.config import FeatureKind, SalfConfig
from core.features import FeatureMatrix, encode_feature_matrix
from core.model import build_model
from core.service import create_app, parse_bind
from tests.conftest import tone

WAV = {"Content-Type": "audio/wav"}
FEATURES = {"Content-Type": "application/octet-stream"}


def _mfcc_payload(fill: float) -> bytes:
    """SALF-F1 bytes with a valid 2x20 mfcc header and every value set to ``fill``."""
    header = struct.pack("<4sBII", b"SLF1", 0, 2, 20)
    return header + np.full(40, fill, "<f4").tobytes()


async def _client(model):
    client = test_utils.TestClient(test_utils.TestServer(create_app(model)))
    await client.start_server()
    return client


@pytest_asyncio.fixture
async def mfcc_client():
    client = await _client(
        build_model(SalfConfig(depth=2, input_dim=20, feature_kind=FeatureKind.MFCC))
    )
    yield client
    await client.close()


@pytest_asyncio.fixture
async def wav2vec_client():
    client = await _client(build_model(SalfConfig(depth=3, input_dim=16)))
    yield client
    await client.close()


@pytest.mark.asyncio
async def test_health(mfcc_client):
    resp = await mfcc_client.get("/health")
    assert resp.status == 200
    body = await resp.json()
    assert body["status"] == "ok"
    assert body["config"]["feature_kind"] == "mfcc"
    assert body["parameters"] > 0


@pytest.mark.asyncio
async def test_predict_wav_is_repeatable(mfcc_client):
    payload = write_wav(tone(440.0, 22050), "pcm16")
    scores = []
    for _ in range(3):
        resp = await mfcc_client.post("/predict", data=payload, headers=WAV)
        assert resp.status == 200
        scores.append((await resp.json())["mos"])
    assert 1.0 <= scores[0] <= 5.0
    assert scores == [scores[0]] * 3


@pytest.mark.asyncio
async def test_predict_feature_upload(wav2vec_client):
    data = np.random.default_rng(0).normal(size=(5, 16)).astype(np.float32)
    payload = encode_feature_matrix(FeatureMatrix(data, FeatureKind.WAV2VEC))
    resp = await wav2vec_client.post("/predict", data=payload, headers=FEATURES)
    assert resp.status == 200
    assert 1.0 <= (await resp.json())["mos"] <= 5.0


@pytest.mark.asyncio
async def test_kind_mismatch_is_422(wav2vec_client):
    wav = write_wav(tone(440.0, 16000), "pcm16")
    resp = await wav2vec_client.post("/predict", data=wav, headers=WAV)
    assert resp.status == 422

    lfcc = encode_feature_matrix(FeatureMatrix(np.ones((2, 16)), FeatureKind.LFCC))
    resp = await wav2vec_client.post("/predict", data=lfcc, headers=FEATURES)
    assert resp.status == 422
    assert "lfcc" in (await resp.json())["error"]


@pytest.mark.asyncio
@pytest.mark.parametrize(
    "payload,headers",
    [
        (b"RIFF\x00\x00", WAV),
        (b"not a feature file", FEATURES),
        (b"", FEATURES),
        (b"hello", {"Content-Type": "text/plain"}),
        (_mfcc_payload(float("nan")), FEATURES),
        (_mfcc_payload(float("inf")), FEATURES),
    ],
)
async def test_malformed_uploads_are_400(mfcc_client, payload, headers):
    resp = await mfcc_client.post("/predict", data=payload, headers=headers)
    assert resp.status == 400
    assert "error" in await resp.json()


@pytest.mark.asyncio
async def test_wrong_feature_width_is_400(wav2vec_client):
    payload = encode_feature_matrix(FeatureMatrix(np.ones((2, 8)), FeatureKind.WAV2VEC))
    resp = await wav2vec_client.post("/predict", data=payload, headers=FEATURES)
    assert resp.status == 400


def test_parse_bind():
    assert parse_bind("0.0.0.0:9000") == ("0.0.0.0", 9000)
    assert parse_bind(":8080") == ("127.0.0.1", 8080)
    with pytest.raises(ValueError):
        parse_bind("localhost")
