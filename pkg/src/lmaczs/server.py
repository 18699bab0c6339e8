"""HTTP service exposing the trained pipeline to the interactive explorer.

JSON over HTTP under /api/v1: content-addressed clip upload, prompt
explanations with cached PNG/WAV assets, per-clip prompt history, and
zero-shot classification with the prompt template applied server-side.
Checkpoints are loaded once at startup and never mutated; session state
(clips, history, assets) is guarded by a single lock.
"""

from __future__ import annotations

import hashlib
import io
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from pydantic import BaseModel
from scipy.io import wavfile

from . import dsp, interpreter as itp, viz
from .checkpoint import load_checkpoint
from .config import RunConfig
from .contrastive import clap_from_checkpoint
from .interpreter import decoder_from_checkpoint
from .zeroshot import PROMPT_PREFIX, build_prompts, classify

API_PREFIX = "/api/v1"


class ExplainRequest(BaseModel):
    clip_id: str
    prompt: str
    domain: str = "mel"


class ClassifyRequest(BaseModel):
    clip_id: str
    labels: list[str]


@dataclass
class Session:
    """One server lifetime of uploaded clips, prompt history and assets."""

    clips: dict[str, dsp.AudioClip] = field(default_factory=dict)
    history: dict[str, list[dict]] = field(default_factory=dict)
    assets: "OrderedDict[str, tuple[bytes, str]]" = field(default_factory=OrderedDict)
    recipes: dict[str, tuple] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def create_app(cfg: RunConfig, out_dir: Path, ui_dir: Path | None = None) -> FastAPI:
    app = FastAPI(title="lmaczs explorer api")
    session = Session()
    frontend = dsp.MelFrontend(cfg.sample_rate, frame_len=cfg.dsp.frame_len, hop=cfg.dsp.hop, n_mels=cfg.dsp.n_mels)

    clap = decoder = None
    clap_path, dec_path = Path(out_dir) / "clap.ckpt", Path(out_dir) / "interpreter.ckpt"
    if clap_path.exists():
        clap = clap_from_checkpoint(load_checkpoint(clap_path))
    if dec_path.exists():
        decoder = decoder_from_checkpoint(load_checkpoint(dec_path))
    default_labels = []
    if clap_path.exists():
        default_labels = load_checkpoint(clap_path).config.get("labels", [])

    def require_models():
        if clap is None or decoder is None:
            raise HTTPException(status_code=503, detail="checkpoints not loaded; train first")

    def put_asset(asset_id: str, data: bytes, mime: str, recipe: tuple | None = None) -> str:
        with session.lock:
            session.assets[asset_id] = (data, mime)
            session.assets.move_to_end(asset_id)
            while len(session.assets) > cfg.server.max_cached_assets:
                session.assets.popitem(last=False)
            if recipe is not None:
                session.recipes[asset_id] = recipe
        return f"{API_PREFIX}/assets/{asset_id}"

    def clip_or_404(clip_id: str) -> dsp.AudioClip:
        clip = session.clips.get(clip_id)
        if clip is None:
            raise HTTPException(status_code=404, detail=f"unknown clip {clip_id}")
        return clip

    def run_explain(clip_id: str, prompt: str, domain: str) -> dict:
        require_models()
        clip = clip_or_404(clip_id)
        exp = itp.explain(clip, prompt, domain, clap, decoder, frontend)
        key = hashlib.sha1(f"{clip_id}|{prompt}|{domain}".encode()).hexdigest()[:12]
        mask_url = put_asset(
            f"{key}_mask.png", viz.heatmap_png(exp.mask.values, vmin=0.0, vmax=1.0), "image/png",
            recipe=("mask", clip_id, prompt, domain),
        )
        audio_url = None
        if exp.waveform is not None:
            buf = io.BytesIO()
            pcm = (np.clip(exp.waveform.samples, -1, 1) * 32767).astype(np.int16)
            wavfile.write(buf, exp.waveform.sample_rate, pcm)
            audio_url = put_asset(f"{key}_audio.wav", buf.getvalue(), "audio/wav",
                                  recipe=("audio", clip_id, prompt, domain))
        return {
            "mask_url": mask_url,
            "audio_url": audio_url,
            "similarity_original": exp.similarity_original,
            "similarity_masked": exp.similarity_masked,
            "mask_mean": exp.mask_mean,
            "prompt": prompt,
            "domain": domain,
        }

    @app.post(API_PREFIX + "/clips", status_code=201)
    async def upload_clip(request: Request):
        body = await request.body()
        if len(body) > cfg.server.max_clip_bytes:
            raise HTTPException(status_code=413, detail=f"clip exceeds {cfg.server.max_clip_bytes} bytes")
        try:
            rate, data = wavfile.read(io.BytesIO(body))
        except Exception as exc:  # noqa: BLE001
            raise HTTPException(status_code=400, detail=f"not a readable WAV file: {exc}") from exc
        if data.ndim != 1:
            raise HTTPException(status_code=400, detail="expected mono audio")
        if data.dtype != np.int16:
            raise HTTPException(status_code=400, detail=f"expected 16-bit PCM, got {data.dtype}")
        clip = dsp.AudioClip(samples=data.astype(np.float64) / 32768.0, sample_rate=rate)
        if rate != cfg.sample_rate:
            clip = dsp.resample(clip, cfg.sample_rate)
        clip = dsp.fix_length(clip, int(cfg.clip_seconds * cfg.sample_rate))

        clip_id = hashlib.sha256(body).hexdigest()[:16]  # idempotent re-uploads
        with session.lock:
            session.clips[clip_id] = clip
            session.history.setdefault(clip_id, [])
        spec = frontend.stft(clip)
        display = np.log(spec.values**2 + dsp.LOG_FLOOR)
        spec_url = put_asset(f"{clip_id}_spec.png", viz.heatmap_png(display), "image/png",
                             recipe=("spec", clip_id, "", ""))
        return {"clip_id": clip_id, "duration": clip.duration, "spectrogram_url": spec_url}

    @app.post(API_PREFIX + "/explain")
    def explain_endpoint(req: ExplainRequest):
        if not req.prompt.strip():
            raise HTTPException(status_code=422, detail="prompt must be non-empty")
        if req.domain not in ("mel", "stft"):
            raise HTTPException(status_code=422, detail="domain must be 'mel' or 'stft'")
        result = run_explain(req.clip_id, req.prompt, req.domain)
        record = {
            "clip_id": req.clip_id,
            "prompt": req.prompt,
            "domain": req.domain,
            "similarity": result["similarity_original"],
            "similarity_masked": result["similarity_masked"],
            "mask_mean": result["mask_mean"],
            "mask_url": result["mask_url"],
            "audio_url": result["audio_url"],
            "timestamp": datetime.now(timezone.utc).isoformat(),
        }
        with session.lock:
            session.history.setdefault(req.clip_id, []).append(record)
        return result

    @app.get(API_PREFIX + "/clips/{clip_id}/history")
    def history_endpoint(clip_id: str):
        clip_or_404(clip_id)
        with session.lock:
            return list(session.history.get(clip_id, []))

    @app.get(API_PREFIX + "/labels")
    def labels_endpoint():
        return {"labels": default_labels, "prompt_prefix": PROMPT_PREFIX}

    @app.post(API_PREFIX + "/classify")
    def classify_endpoint(req: ClassifyRequest):
        require_models()
        if len(req.labels) < 2:
            raise HTTPException(status_code=422, detail="need at least 2 labels")
        if len(set(req.labels)) != len(req.labels):
            raise HTTPException(status_code=422, detail="labels must be distinct")
        clip = clip_or_404(req.clip_id)
        prompts = build_prompts(clap, req.labels)
        res = classify(clap, frontend.mel(clip), prompts)
        return {
            "labels": res.labels,
            "prompts": prompts.prompts,
            "scores": res.scores.tolist(),
            "probabilities": res.probabilities.tolist(),
            "predicted_index": res.predicted_index,
            "predicted_label": res.predicted_label,
        }

    @app.get(API_PREFIX + "/assets/{asset_id}")
    def asset_endpoint(asset_id: str):
        with session.lock:
            hit = session.assets.get(asset_id)
            recipe = session.recipes.get(asset_id)
        if hit is None and recipe is not None:  # evicted: rebuild deterministically
            kind, clip_id, prompt, domain = recipe
            if kind == "spec":
                spec = frontend.stft(clip_or_404(clip_id))
                put_asset(asset_id, viz.heatmap_png(np.log(spec.values**2 + dsp.LOG_FLOOR)), "image/png")
            else:
                run_explain(clip_id, prompt, domain)
            with session.lock:
                hit = session.assets.get(asset_id)
        if hit is None:
            raise HTTPException(status_code=404, detail=f"unknown asset {asset_id}")
        data, mime = hit
        return Response(content=data, media_type=mime)

    if ui_dir is not None and Path(ui_dir).exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
