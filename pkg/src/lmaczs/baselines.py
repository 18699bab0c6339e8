"""Gradient-based saliency baselines targeting the zero-shot decision.

All methods differentiate the similarity logit between the target class
prompt embedding and the audio embedding, using only the audio encoder. The
target class defaults to the zero-shot prediction. Class-activation methods
read the final conv block; input-gradient methods read the mel input.

Maps are min-max normalised to [0, 1] per sample (all-zero maps pass through
untouched) and the raw attributions are kept alongside for the sparseness /
complexity metrics and the completeness check.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .contrastive import ClapModel, spec_to_tensor
from .dsp import Mask, SpecDomain, Spectrogram
from .errors import InvalidInputError
from .zeroshot import PromptSet, classify

SMOOTHGRAD_SAMPLES = 32
SMOOTHGRAD_SIGMA_FRAC = 0.1  # noise std as a fraction of the input std
IG_STEPS = 64


@dataclass
class SaliencyMap:
    values: np.ndarray  # (T, F) in [0, 1]
    raw: np.ndarray  # unnormalised attributions, same shape
    method: str

    def __post_init__(self):
        if self.values.shape != self.raw.shape:
            raise InvalidInputError("normalised and raw saliency shapes differ")


def _normalize(raw: np.ndarray) -> np.ndarray:
    lo, hi = float(raw.min()), float(raw.max())
    if hi == lo == 0.0:
        return raw.copy()
    if hi == lo:
        return np.ones_like(raw)
    return (raw - lo) / (hi - lo)


def gradcam_map(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Channel weights = spatially averaged gradients; map = ReLU(weighted sum)."""
    weights = grads.mean(axis=(1, 2))
    cam = np.einsum("c,chw->hw", weights, acts)
    return np.maximum(cam, 0.0)


def gradcam_pp_map(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Pixel-weighted variant: alpha = g^2 / (2 g^2 + sum(A g^3)), zero where undefined."""
    g2 = grads**2
    g3 = grads**3
    denom = 2.0 * g2 + np.sum(acts * g3, axis=(1, 2), keepdims=True)
    alpha = np.divide(g2, denom, out=np.zeros_like(g2), where=(g2 != 0) & (denom != 0))
    weights = np.sum(alpha * np.maximum(grads, 0.0), axis=(1, 2))
    cam = np.einsum("c,chw->hw", weights, acts)
    return np.maximum(cam, 0.0)


def _upsample(map2d: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    if map2d.shape == tuple(out_shape):
        return map2d
    x = torch.from_numpy(np.ascontiguousarray(map2d))[None, None].float()
    y = torch.nn.functional.interpolate(x, size=tuple(out_shape), mode="bilinear", align_corners=False)
    return y[0, 0].numpy().astype(np.float64)


def _target_vec(clap: ClapModel, spec: Spectrogram, prompts: PromptSet, target: int | None) -> torch.Tensor:
    if target is None:
        target = classify(clap, spec, prompts).predicted_index
    if not 0 <= target < len(prompts.labels):
        raise InvalidInputError(f"target index {target} outside prompt set of {len(prompts.labels)}")
    return torch.from_numpy(prompts.embeddings[target].vector).float()


def _score(clap: ClapModel, x: torch.Tensor, t_vec: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
    emb, maps = clap.audio_encoder(x)
    return (emb[0] * t_vec).sum(), maps


def _cam(clap: ClapModel, spec: Spectrogram, prompts: PromptSet, target: int | None, kernel, name: str) -> SaliencyMap:
    t_vec = _target_vec(clap, spec, prompts, target)
    x = spec_to_tensor(spec, clap.arch.n_mels).requires_grad_(True)
    score, maps = _score(clap, x, t_vec)
    grads = None
    if score.grad_fn is not None:
        grads = torch.autograd.grad(score, maps[-1], allow_unused=True)[0]
    if grads is None:  # score constant w.r.t. activations: all-zero map by convention
        raw = np.zeros_like(spec.values)
    else:
        raw = _upsample(kernel(maps[-1][0].detach().numpy(), grads[0].numpy()), spec.values.shape)
    return SaliencyMap(values=_normalize(raw), raw=raw, method=name)


def gradcam(clap: ClapModel, spec: Spectrogram, prompts: PromptSet, target: int | None = None) -> SaliencyMap:
    return _cam(clap, spec, prompts, target, gradcam_map, "gradcam")


def gradcam_pp(clap: ClapModel, spec: Spectrogram, prompts: PromptSet, target: int | None = None) -> SaliencyMap:
    return _cam(clap, spec, prompts, target, gradcam_pp_map, "gradcam_pp")


def _input_gradient(clap: ClapModel, x_np: np.ndarray, t_vec: torch.Tensor) -> np.ndarray:
    x = torch.from_numpy(np.ascontiguousarray(x_np)).float()[None, None].requires_grad_(True)
    score, _ = _score(clap, x, t_vec)
    if score.grad_fn is None:
        return np.zeros_like(x_np, dtype=np.float64)
    (grad,) = torch.autograd.grad(score, x)
    return grad[0, 0].numpy().astype(np.float64)


def smoothgrad(
    clap: ClapModel,
    spec: Spectrogram,
    prompts: PromptSet,
    target: int | None = None,
    n: int = SMOOTHGRAD_SAMPLES,
    sigma: float | None = None,
    seed: int = 0,
) -> SaliencyMap:
    """Mean absolute input gradient over n noisy copies; n=1, sigma=0 is
    vanilla saliency."""
    if n < 1:
        raise InvalidInputError("smoothgrad needs n >= 1")
    if sigma is None:
        sigma = SMOOTHGRAD_SIGMA_FRAC * float(spec.values.std())
    if sigma < 0:
        raise InvalidInputError("sigma must be >= 0")
    t_vec = _target_vec(clap, spec, prompts, target)
    rng = np.random.default_rng(seed)
    acc = np.zeros_like(spec.values, dtype=np.float64)
    for _ in range(n):
        noisy = spec.values + (rng.standard_normal(spec.values.shape) * sigma if sigma > 0 else 0.0)
        acc += np.abs(_input_gradient(clap, noisy, t_vec))
    raw = acc / n
    return SaliencyMap(values=_normalize(raw), raw=raw, method="smoothgrad")


def integrated_gradients(
    clap: ClapModel,
    spec: Spectrogram,
    prompts: PromptSet,
    target: int | None = None,
    steps: int = IG_STEPS,
    baseline: np.ndarray | None = None,
) -> SaliencyMap:
    """Midpoint-Riemann path integral of gradients times (input - baseline).

    Raw attributions satisfy completeness: their sum approximates
    score(input) - score(baseline).
    """
    if steps < 1:
        raise InvalidInputError("integrated gradients needs steps >= 1")
    if baseline is None:
        baseline = np.zeros_like(spec.values)
    if baseline.shape != spec.values.shape:
        raise InvalidInputError("baseline shape must match the spectrogram")
    t_vec = _target_vec(clap, spec, prompts, target)
    delta = spec.values - baseline
    acc = np.zeros_like(spec.values, dtype=np.float64)
    for k in range(steps):
        point = baseline + (k + 0.5) / steps * delta
        acc += _input_gradient(clap, point, t_vec)
    raw = delta * acc / steps
    return SaliencyMap(values=_normalize(np.abs(raw)), raw=raw, method="integrated_gradients")


def target_score(clap: ClapModel, spec_values: np.ndarray, prompts: PromptSet, target: int) -> float:
    """Similarity logit used by every baseline; exposed for completeness checks."""
    t_vec = torch.from_numpy(prompts.embeddings[target].vector).float()
    x = torch.from_numpy(np.ascontiguousarray(spec_values)).float()[None, None]
    with torch.no_grad():
        score, _ = _score(clap, x, t_vec)
    return float(score)


def saliency_as_mask(s: SaliencyMap, spec: Spectrogram) -> Mask:
    """Use a saliency map as a multiplicative mask, resizing when the
    evaluation domain has a different resolution."""
    values = _upsample(s.values, spec.values.shape)
    return Mask(values=np.clip(values, 0.0, 1.0), domain=spec.domain)


def export_saliency(s: SaliencyMap, out_dir: str | Path) -> Path:
    from . import viz

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "mask.npy", s.values)
    np.save(out_dir / "raw_attributions.npy", s.raw)
    viz.heatmap_png(s.values, out_dir / "mask.png", vmin=0.0, vmax=1.0)
    (out_dir / "explanation.json").write_text(
        json.dumps({"method": s.method, "mask_mean": float(s.values.mean())}, indent=2, sort_keys=True)
    )
    return out_dir
