import io

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient
from scipy.io import wavfile

from lmaczs import datagen
from lmaczs.checkpoint import save_checkpoint
from lmaczs.config import RunConfig, DspConfig
from lmaczs.contrastive import ClapArch, ClapModel, clap_checkpoint
from lmaczs.interpreter import decoder_checkpoint, decoder_for
from lmaczs.server import create_app

API = "/api/v1"


def wav_bytes(seed=0, seconds=1.0, rate=16000, stereo=False, amplitude=0.3):
    rng = np.random.default_rng(seed)
    shape = (int(seconds * rate), 2) if stereo else int(seconds * rate)
    pcm = (rng.uniform(-amplitude, amplitude, shape) * 32767).astype(np.int16)
    buf = io.BytesIO()
    wavfile.write(buf, rate, pcm)
    return buf.getvalue()


@pytest.fixture(scope="module")
def client(tmp_path_factory):
    out = tmp_path_factory.mktemp("server_run")
    torch.manual_seed(0)
    clap = ClapModel(
        ClapArch(vocab=datagen.caption_vocabulary(), embed_dim=16, text_hidden=32, conv_channels=(8, 8, 8, 8), n_mels=32)
    ).eval()
    decoder = decoder_for(clap, width=4)
    with torch.no_grad():
        decoder.head.weight.normal_()
        decoder.head.bias.normal_()
    save_checkpoint(out / "clap.ckpt", clap_checkpoint(clap, extra={"labels": list(datagen.CLASS_LABELS.values())}))
    save_checkpoint(out / "interpreter.ckpt", decoder_checkpoint(decoder))
    cfg = RunConfig(seed=0, out_dir=str(out), dsp=DspConfig(frame_len=1024, hop=256, n_mels=32))
    return TestClient(create_app(cfg, out))


@pytest.fixture(scope="module")
def clip_id(client):
    r = client.post(API + "/clips", content=wav_bytes(1), headers={"content-type": "audio/wav"})
    assert r.status_code == 201
    return r.json()["clip_id"]


class TestClips:
    def test_upload_returns_id_duration_and_spectrogram(self, client):
        r = client.post(API + "/clips", content=wav_bytes(2))
        assert r.status_code == 201
        body = r.json()
        assert body["duration"] == pytest.approx(2.0)  # padded to the fixed clip length
        asset = client.get(body["spectrogram_url"])
        assert asset.status_code == 200
        assert asset.headers["content-type"] == "image/png"
        assert asset.content[:4] == b"\x89PNG"

    def test_identical_bytes_same_id(self, client):
        a = client.post(API + "/clips", content=wav_bytes(3)).json()["clip_id"]
        b = client.post(API + "/clips", content=wav_bytes(3)).json()["clip_id"]
        assert a == b

    def test_stereo_rejected(self, client):
        r = client.post(API + "/clips", content=wav_bytes(4, stereo=True))
        assert r.status_code == 400
        assert "mono" in r.json()["detail"]

    def test_garbage_rejected(self, client):
        assert client.post(API + "/clips", content=b"not audio at all").status_code == 400

    def test_oversize_rejected(self, client):
        r = client.post(API + "/clips", content=b"\x00" * 5_000_000)
        assert r.status_code == 413


class TestExplain:
    def test_mel_explain(self, client, clip_id):
        r = client.post(API + "/explain", json={"clip_id": clip_id, "prompt": "a steady tone", "domain": "mel"})
        assert r.status_code == 200
        body = r.json()
        assert body["audio_url"] is None
        assert -1 <= body["similarity_original"] <= 1
        assert -1 <= body["similarity_masked"] <= 1
        assert 0 <= body["mask_mean"] <= 1
        mask = client.get(body["mask_url"])
        assert mask.status_code == 200 and mask.headers["content-type"] == "image/png"

    def test_stft_explain_has_audio(self, client, clip_id):
        r = client.post(API + "/explain", json={"clip_id": clip_id, "prompt": "a chirp sweeps upward", "domain": "stft"})
        assert r.status_code == 200
        audio_url = r.json()["audio_url"]
        assert audio_url
        audio = client.get(audio_url)
        assert audio.status_code == 200
        assert audio.headers["content-type"] == "audio/wav"
        rate, data = wavfile.read(io.BytesIO(audio.content))
        assert rate == 16000 and data.dtype == np.int16

    def test_unknown_clip_404(self, client):
        r = client.post(API + "/explain", json={"clip_id": "deadbeef", "prompt": "x", "domain": "mel"})
        assert r.status_code == 404

    def test_empty_prompt_422(self, client, clip_id):
        r = client.post(API + "/explain", json={"clip_id": clip_id, "prompt": "   ", "domain": "mel"})
        assert r.status_code == 422

    def test_bad_domain_422(self, client, clip_id):
        r = client.post(API + "/explain", json={"clip_id": clip_id, "prompt": "x", "domain": "lpc"})
        assert r.status_code == 422

    def test_deterministic_across_repeats(self, client, clip_id):
        payload = {"clip_id": clip_id, "prompt": "a pulsing wash of noise", "domain": "mel"}
        a = client.post(API + "/explain", json=payload).json()
        b = client.post(API + "/explain", json=payload).json()
        assert a["similarity_original"] == b["similarity_original"]
        assert a["mask_mean"] == b["mask_mean"]


class TestHistory:
    def test_fresh_clip_empty_history(self, client):
        cid = client.post(API + "/clips", content=wav_bytes(9)).json()["clip_id"]
        assert client.get(API + f"/clips/{cid}/history").json() == []

    def test_history_preserves_order_and_fields(self, client):
        cid = client.post(API + "/clips", content=wav_bytes(10)).json()["clip_id"]
        client.post(API + "/explain", json={"clip_id": cid, "prompt": "first prompt", "domain": "mel"})
        client.post(API + "/explain", json={"clip_id": cid, "prompt": "second prompt", "domain": "mel"})
        records = client.get(API + f"/clips/{cid}/history").json()
        assert [r["prompt"] for r in records] == ["first prompt", "second prompt"]
        for r in records:
            assert "similarity" in r and "mask_mean" in r and "timestamp" in r

    def test_unknown_clip_404(self, client):
        assert client.get(API + "/clips/zzz/history").status_code == 404


class TestClassify:
    def test_prompts_echoed_with_template(self, client, clip_id):
        r = client.post(API + "/classify", json={"clip_id": clip_id, "labels": ["cat", "dog"]})
        assert r.status_code == 200
        body = r.json()
        assert body["prompts"] == ["this is the sound of cat", "this is the sound of dog"]
        assert sum(body["probabilities"]) == pytest.approx(1.0, abs=1e-6)

    def test_label_permutation_same_prediction(self, client, clip_id):
        labels = ["tone", "chirp", "noise burst"]
        a = client.post(API + "/classify", json={"clip_id": clip_id, "labels": labels}).json()
        b = client.post(API + "/classify", json={"clip_id": clip_id, "labels": labels[::-1]}).json()
        assert a["predicted_label"] == b["predicted_label"]

    def test_fewer_than_two_labels_422(self, client, clip_id):
        assert client.post(API + "/classify", json={"clip_id": clip_id, "labels": ["solo"]}).status_code == 422

    def test_labels_endpoint(self, client):
        body = client.get(API + "/labels").json()
        assert body["labels"] == list(datagen.CLASS_LABELS.values())
        assert body["prompt_prefix"] == "this is the sound of "


class TestNoCheckpoints:
    def test_503_when_models_missing(self, tmp_path):
        cfg = RunConfig(seed=0, out_dir=str(tmp_path))
        client = TestClient(create_app(cfg, tmp_path))
        cid = client.post(API + "/clips", content=wav_bytes(5)).json()["clip_id"]
        r = client.post(API + "/explain", json={"clip_id": cid, "prompt": "x", "domain": "mel"})
        assert r.status_code == 503


class TestAssetEviction:
    def test_assets_rebuilt_after_eviction(self, tmp_path):
        torch.manual_seed(1)
        clap = ClapModel(
            ClapArch(vocab=datagen.caption_vocabulary(), embed_dim=16, text_hidden=32,
                     conv_channels=(8, 8, 8, 8), n_mels=32)
        ).eval()
        decoder = decoder_for(clap, width=4)
        save_checkpoint(tmp_path / "clap.ckpt", clap_checkpoint(clap))
        save_checkpoint(tmp_path / "interpreter.ckpt", decoder_checkpoint(decoder))
        from lmaczs.config import ServerConfig

        cfg = RunConfig(seed=0, out_dir=str(tmp_path), dsp=DspConfig(n_mels=32),
                        server=ServerConfig(max_cached_assets=2))
        client = TestClient(create_app(cfg, tmp_path))
        cid = client.post(API + "/clips", content=wav_bytes(6)).json()["clip_id"]
        first = client.post(API + "/explain", json={"clip_id": cid, "prompt": "alpha", "domain": "mel"}).json()
        for p in ("beta", "gamma", "delta"):
            client.post(API + "/explain", json={"clip_id": cid, "prompt": p, "domain": "mel"})
        # the first mask was evicted from the LRU but is rebuilt on demand
        r = client.get(first["mask_url"])
        assert r.status_code == 200
        assert r.content[:4] == b"\x89PNG"
