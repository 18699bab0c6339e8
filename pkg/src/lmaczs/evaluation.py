"""Faithfulness metrics, aggregate reporting, and sanity checks.

Metric kernels are exact re-implementations of the published formulas
(indicator-based increase, clamped relative drop/gain, Gini sparseness,
entropy complexity), aggregated sample-wise. The suite runs any explainer
(mask decoder, gradient baselines, random control) through the same masking
protocol: probabilities come from the zero-shot softmax over the prompt set,
the explanation is conditioned on the predicted class, and "removing" the
explanation multiplies by the complement mask.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import spearmanr

from . import baselines as bl
from . import dsp
from .contrastive import ClapModel, encode_audio
from .dsp import AudioClip, Mask, MelFrontend, SpecDomain, Spectrogram
from .errors import InvalidInputError
from .interpreter import decode_mask, resize_mask
from .zeroshot import PromptSet, classify, classify_scores

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("AI", "AD", "AG", "FF", "Fid-In", "SPS", "COMP", "MM")


# ---------------------------------------------------------------------------
# metric kernels


def _check_prob(p: float, name: str) -> float:
    if not (0.0 <= p <= 1.0):
        raise InvalidInputError(f"{name}={p} outside [0, 1]")
    return float(p)


def faithfulness_ff(p_orig: float, p_removed: float) -> float:
    """Probability drop after removing the explained content."""
    return _check_prob(p_orig, "p_orig") - _check_prob(p_removed, "p_removed")


def ff_aggregate(pairs: list[tuple[float, float]]) -> float:
    if not pairs:
        raise InvalidInputError("empty batch")
    return float(np.mean([faithfulness_ff(po, pr) for po, pr in pairs]))


def average_increase(pairs: list[tuple[float, float]]) -> float:
    """Percent of samples whose confidence strictly rises under the mask."""
    if not pairs:
        raise InvalidInputError("empty batch")
    return 100.0 * sum(1 for po, pm in pairs if pm > po) / len(pairs)


def average_drop(pairs: list[tuple[float, float]]) -> float:
    """Mean clamped relative confidence drop, in percent."""
    if not pairs:
        raise InvalidInputError("empty batch")
    terms = []
    for po, pm in pairs:
        if po <= 0:
            raise InvalidInputError("average_drop needs p_orig > 0")
        terms.append(max(0.0, po - pm) / po)
    return 100.0 * float(np.mean(terms))


def average_gain(pairs: list[tuple[float, float]]) -> float:
    """Mean clamped relative confidence gain, in percent."""
    if not pairs:
        raise InvalidInputError("empty batch")
    terms = []
    for po, pm in pairs:
        if po >= 1:
            raise InvalidInputError("average_gain needs p_orig < 1")
        terms.append(max(0.0, pm - po) / (1.0 - po))
    return 100.0 * float(np.mean(terms))


def fid_in(decisions: list[tuple[int, int]]) -> float:
    """Fraction of samples keeping their decision on the masked-in input."""
    if not decisions:
        raise InvalidInputError("empty batch")
    return float(np.mean([1.0 if a == b else 0.0 for a, b in decisions]))


def sparseness(saliency: np.ndarray) -> float:
    """Gini index of the flattened non-negative saliency values."""
    v = np.asarray(saliency, dtype=np.float64).ravel()
    if np.any(v < 0):
        raise InvalidInputError("sparseness expects non-negative values")
    total = v.sum()
    if total == 0:
        raise InvalidInputError("sparseness undefined for an all-zero vector")
    v = np.sort(v)
    n = v.size
    i = np.arange(1, n + 1)
    return float(np.sum((2 * i - n - 1) * v) / (n * total))


def complexity(saliency: np.ndarray) -> float:
    """Shannon entropy (nats) of the normalised absolute contributions."""
    v = np.abs(np.asarray(saliency, dtype=np.float64).ravel())
    total = v.sum()
    if total == 0:
        raise InvalidInputError("complexity undefined for an all-zero vector")
    p = v / total
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def mask_mean(mask: Mask) -> float:
    return mask.mean()


# ---------------------------------------------------------------------------
# report


@dataclass
class MetricsReport:
    AI: float
    AD: float
    AG: float
    FF: float
    fid_in: float
    sps: float
    comp: float
    mm: float
    n_samples: int
    dataset: str = ""
    mask_domain: str = ""
    explainer: str = ""
    n_failures: int = 0

    def __post_init__(self):
        for name in ("AI", "AD", "AG"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise InvalidInputError(f"{name}={v} outside [0, 100]")
        if not -1.0 <= self.FF <= 1.0:
            raise InvalidInputError(f"FF={self.FF} outside [-1, 1]")
        for name in ("fid_in", "mm"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidInputError(f"{name}={v} outside [0, 1]")

    def row(self) -> list[float]:
        return [self.AI, self.AD, self.AG, self.FF, self.fid_in, self.sps, self.comp, self.mm]

    def to_dict(self) -> dict:
        return {
            "explainer": self.explainer,
            "dataset": self.dataset,
            "mask_domain": self.mask_domain,
            "n_samples": self.n_samples,
            "n_failures": self.n_failures,
            "metrics": dict(zip(REPORT_COLUMNS, self.row())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        m = d["metrics"]
        return cls(
            AI=m["AI"], AD=m["AD"], AG=m["AG"], FF=m["FF"], fid_in=m["Fid-In"],
            sps=m["SPS"], comp=m["COMP"], mm=m["MM"], n_samples=d["n_samples"],
            dataset=d["dataset"], mask_domain=d["mask_domain"], explainer=d["explainer"],
            n_failures=d.get("n_failures", 0),
        )


def format_table(reports: list[MetricsReport], title: str = "") -> str:
    """Aligned-column text mirroring the published column order."""
    headers = ["Explainer"] + [f"{c} ({a})" for c, a in zip(
        REPORT_COLUMNS, ("up", "down", "up", "up", "up", "up", "down", "-"))]
    rows = [[r.explainer] + [f"{v:.2f}" for v in r.row()] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(headers)]
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(w) for h, w in zip(headers, widths)))
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# explainers


@dataclass
class SampleContext:
    clip_id: str
    stft_spec: Spectrogram
    mel_spec: Spectrogram
    domain_spec: Spectrogram  # the spectrogram the mask multiplies
    target_idx: int


class LmacZsExplainer:
    """Masks from the trained decoder, conditioned on the predicted class prompt."""

    name = "lmac_zs"

    def __init__(self, decoder):
        self.decoder = decoder

    def explain_sample(self, clap: ClapModel, prompts: PromptSet, ctx: SampleContext) -> tuple[Mask, np.ndarray]:
        t = prompts.embeddings[ctx.target_idx]
        _, latents = encode_audio(clap, ctx.mel_spec)
        mask = decode_mask(self.decoder, t, latents, ctx.mel_spec.shape)
        if ctx.domain_spec.domain == SpecDomain.LINEAR_MAG_STFT:
            mask = resize_mask(mask, ctx.domain_spec.shape, SpecDomain.LINEAR_MAG_STFT)
        return mask, mask.values  # sparseness/complexity read the mask itself


class BaselineExplainer:
    """Gradient-based saliency used as a mask; metrics read raw attributions."""

    _METHODS = {
        "gradcam": bl.gradcam,
        "gradcam_pp": bl.gradcam_pp,
        "smoothgrad": bl.smoothgrad,
        "integrated_gradients": bl.integrated_gradients,
    }

    def __init__(self, name: str):
        if name not in self._METHODS:
            raise InvalidInputError(f"unknown baseline {name!r}; choose from {sorted(self._METHODS)}")
        self.name = name
        self._fn = self._METHODS[name]

    def explain_sample(self, clap: ClapModel, prompts: PromptSet, ctx: SampleContext) -> tuple[Mask, np.ndarray]:
        s = self._fn(clap, ctx.mel_spec, prompts, target=ctx.target_idx)
        return bl.saliency_as_mask(s, ctx.domain_spec), np.abs(s.raw)


class RandomMaskExplainer:
    """Uniform-random control, optionally matched to per-clip target means."""

    name = "random"

    def __init__(self, target_mean: float | dict[str, float] = 0.5, seed: int = 0):
        self.target_mean = target_mean
        self.seed = seed

    def explain_sample(self, clap: ClapModel, prompts: PromptSet, ctx: SampleContext) -> tuple[Mask, np.ndarray]:
        m = self.target_mean.get(ctx.clip_id, 0.5) if isinstance(self.target_mean, dict) else self.target_mean
        m = min(max(float(m), 0.0), 1.0)
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, hash(ctx.clip_id) & 0x7FFFFFFF]))
        u = rng.uniform(0.0, 1.0, ctx.domain_spec.shape)
        values = 2 * m * u if m <= 0.5 else 1.0 - 2 * (1.0 - m) * (1.0 - u)
        mask = Mask(values=values, domain=ctx.domain_spec.domain)
        return mask, mask.values


def make_explainer(name: str, decoder=None, random_mean=0.5, random_seed: int = 0):
    if name == "lmac_zs":
        if decoder is None:
            raise InvalidInputError("lmac_zs explainer needs a decoder")
        return LmacZsExplainer(decoder)
    if name == "random":
        return RandomMaskExplainer(random_mean, random_seed)
    return BaselineExplainer(name)


# ---------------------------------------------------------------------------
# suite


def _prob_of(clap: ClapModel, prompts: PromptSet, mel_spec: Spectrogram, idx: int) -> tuple[float, int]:
    res = classify(clap, mel_spec, prompts)
    return float(res.probabilities[idx]), res.predicted_index


def _masked_mel(frontend: MelFrontend, ctx: SampleContext, mask_values: np.ndarray) -> Spectrogram:
    masked = dsp.apply_mask(ctx.domain_spec, Mask(values=mask_values, domain=ctx.domain_spec.domain))
    if masked.domain == SpecDomain.LINEAR_MAG_STFT:
        masked = frontend.mel(masked)
    return masked


def build_context(clap: ClapModel, prompts: PromptSet, frontend: MelFrontend,
                  clip: AudioClip, clip_id: str, mask_domain: str) -> SampleContext:
    stft_spec = frontend.stft(clip)
    mel_spec = frontend.mel(stft_spec)
    res = classify(clap, mel_spec, prompts)
    domain_spec = mel_spec if mask_domain == "mel" else stft_spec
    return SampleContext(clip_id=clip_id, stft_spec=stft_spec, mel_spec=mel_spec,
                         domain_spec=domain_spec, target_idx=res.predicted_index)


def evaluate_suite(
    dataset: list,
    explainer,
    clap: ClapModel,
    prompts: PromptSet,
    frontend: MelFrontend,
    mask_domain: str = "mel",
    dataset_tag: str = "",
    max_samples: int | None = None,
) -> tuple[MetricsReport, list[dict]]:
    """All eight metrics over a split; returns the report and per-sample records."""
    if mask_domain not in ("mel", "stft"):
        raise InvalidInputError("mask_domain must be 'mel' or 'stft'")
    items = dataset[:max_samples] if max_samples else dataset
    if not items:
        raise InvalidInputError("empty dataset")

    records: list[dict] = []
    failures = 0
    for item in items:
        try:
            ctx = build_context(clap, prompts, frontend, item.clip, item.clip_id, mask_domain)
            res = classify(clap, ctx.mel_spec, prompts)
            p_orig = float(res.probabilities[ctx.target_idx])

            mask, sps_vec = explainer.explain_sample(clap, prompts, ctx)
            mel_in = _masked_mel(frontend, ctx, mask.values)
            p_masked, pred_masked = _prob_of(clap, prompts, mel_in, ctx.target_idx)
            mel_out = _masked_mel(frontend, ctx, 1.0 - mask.values)
            p_removed, _ = _prob_of(clap, prompts, mel_out, ctx.target_idx)

            ad_n = max(0.0, p_orig - p_masked) / p_orig
            ag_n = max(0.0, p_masked - p_orig) / (1.0 - p_orig)
            assert not (ad_n > 0 and ag_n > 0)  # per-sample exclusivity
            records.append(
                {
                    "clip_id": ctx.clip_id,
                    "label": item.class_label,
                    "predicted": prompts.labels[ctx.target_idx],
                    "p_orig": p_orig,
                    "p_masked": p_masked,
                    "p_removed": p_removed,
                    "pred_orig": ctx.target_idx,
                    "pred_masked": pred_masked,
                    "mask_mean": float(mask.values.mean()),
                    "sps": sparseness(sps_vec) if np.any(sps_vec) else float("nan"),
                    "comp": complexity(sps_vec) if np.any(sps_vec) else float("nan"),
                }
            )
        except Exception:  # noqa: BLE001 - per-sample failures are counted, not fatal
            log.exception("sample %s failed under explainer %s", getattr(item, "clip_id", "?"), explainer.name)
            failures += 1
    if not records:
        raise InvalidInputError("every sample failed")

    masked_pairs = [(r["p_orig"], r["p_masked"]) for r in records]
    # all-zero saliency leaves SPS/COMP undefined for that sample; those
    # samples are excluded from the two means
    sps_vals = [r["sps"] for r in records if np.isfinite(r["sps"])]
    comp_vals = [r["comp"] for r in records if np.isfinite(r["comp"])]
    report = MetricsReport(
        AI=average_increase(masked_pairs),
        AD=average_drop(masked_pairs),
        AG=average_gain(masked_pairs),
        FF=ff_aggregate([(r["p_orig"], r["p_removed"]) for r in records]),
        fid_in=fid_in([(r["pred_orig"], r["pred_masked"]) for r in records]),
        sps=float(np.mean(sps_vals)) if sps_vals else float("nan"),
        comp=float(np.mean(comp_vals)) if comp_vals else float("nan"),
        mm=float(np.mean([r["mask_mean"] for r in records])),
        n_samples=len(records),
        dataset=dataset_tag,
        mask_domain=mask_domain,
        explainer=explainer.name,
        n_failures=failures,
    )
    return report, records


def write_records_csv(records: list[dict], path: str | Path) -> None:
    if not records:
        return
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(records[0].keys()))
        writer.writeheader()
        writer.writerows(records)


# ---------------------------------------------------------------------------
# sanity checks


def mask_mean_vs_similarity(
    dataset: list,
    clap: ClapModel,
    decoder,
    prompts: PromptSet,
    frontend: MelFrontend,
    max_samples: int | None = None,
) -> tuple[list[dict], float]:
    """(similarity, mask mean) per (clip, prompt) pair plus Spearman rho."""
    items = dataset[:max_samples] if max_samples else dataset
    records = []
    for item in items:
        mel_spec = frontend.mel(item.clip)
        a, latents = encode_audio(clap, mel_spec)
        for label, emb in zip(prompts.labels, prompts.embeddings):
            sim = float(emb.vector @ a.vector)
            mm = decode_mask(decoder, emb, latents, mel_spec.shape).mean()
            records.append(
                {
                    "clip_id": item.clip_id,
                    "clip_label": item.class_label,
                    "prompt_label": label,
                    "similarity": sim,
                    "mask_mean": mm,
                }
            )
    if len(records) < 3:
        raise InvalidInputError("need at least 3 (clip, prompt) records for a rank correlation")
    rho = spearmanr([r["similarity"] for r in records], [r["mask_mean"] for r in records]).statistic
    if not np.isfinite(rho):
        raise InvalidInputError("rank correlation undefined (constant records)")
    return records, float(rho)


@dataclass
class RandomizationTrace:
    stages: list[tuple[int, float]]  # (blocks_randomized, mean mask cosine)
    method: str = ""

    def __post_init__(self):
        if not self.stages or self.stages[0][0] != 0:
            raise InvalidInputError("trace must start at stage 0")
        if abs(self.stages[0][1] - 1.0) > 1e-12:
            raise InvalidInputError("stage 0 must compare the model to itself (similarity 1)")
        blocks = [b for b, _ in self.stages]
        if blocks != sorted(set(blocks)):
            raise InvalidInputError("stages must be strictly increasing in blocks randomized")

    def to_dict(self) -> dict:
        return {"method": self.method, "stages": [{"blocks_randomized": b, "mask_similarity": s} for b, s in self.stages]}


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 and nb == 0:
        return 1.0
    if na == 0 or nb == 0:
        return 0.0
    return float(a.ravel() @ b.ravel() / (na * nb))


def _randomized_copy(clap: ClapModel, n_blocks: int, seed: int) -> ClapModel:
    """Re-initialise the top `n_blocks` conv blocks of the audio encoder."""
    import copy

    from .contrastive import ConvBlock

    out = copy.deepcopy(clap)
    chans = out.arch.conv_channels
    ins = (1,) + tuple(chans[:-1])
    torch.manual_seed(seed)
    with torch.no_grad():
        for k in range(n_blocks):
            idx = len(chans) - 1 - k  # top-down
            fresh = ConvBlock(ins[idx], chans[idx])
            out.audio_encoder.blocks[idx].load_state_dict(fresh.state_dict())
    out.eval()
    return out


def cascading_randomization(
    clap: ClapModel,
    mask_fn,
    samples: list[tuple[AudioClip, int]],
    prompts: PromptSet,
    frontend: MelFrontend,
    max_blocks: int = 4,
    seed: int = 0,
    method: str = "",
) -> RandomizationTrace:
    """Re-initialise encoder blocks top-down and track mask similarity.

    `mask_fn(model, mel_spec, prompts, target_idx) -> np.ndarray` recomputes a
    mask under the (partially randomised) model; `samples` carries the fixed
    conditioning target per clip so only the model varies across stages.
    """
    n_blocks = len(clap.arch.conv_channels)
    if max_blocks > n_blocks:
        raise InvalidInputError(f"max_blocks={max_blocks} exceeds encoder depth {n_blocks}")
    if not samples:
        raise InvalidInputError("need at least one sample")

    mel_specs = [frontend.mel(clip) for clip, _ in samples]
    reference = [mask_fn(clap, spec, prompts, tgt) for spec, (_, tgt) in zip(mel_specs, samples)]
    stages = [(0, 1.0)]
    for k in range(1, max_blocks + 1):
        model_k = _randomized_copy(clap, k, seed + k)
        sims = [
            _cosine(ref, mask_fn(model_k, spec, prompts, tgt))
            for ref, spec, (_, tgt) in zip(reference, mel_specs, samples)
        ]
        stages.append((k, float(np.mean(sims))))
    return RandomizationTrace(stages=stages, method=method)


def lmaczs_mask_fn(decoder):
    def fn(model: ClapModel, mel_spec: Spectrogram, prompts: PromptSet, target_idx: int) -> np.ndarray:
        _, latents = encode_audio(model, mel_spec)
        return decode_mask(decoder, prompts.embeddings[target_idx], latents, mel_spec.shape).values

    return fn


def gradcam_pp_mask_fn(model: ClapModel, mel_spec: Spectrogram, prompts: PromptSet, target_idx: int) -> np.ndarray:
    return bl.gradcam_pp(model, mel_spec, prompts, target=target_idx).values
