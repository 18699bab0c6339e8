"""Prompt-conditioned mask decoder, its training loss, and the explain front door.

The decoder fuses the four audio-encoder feature maps (channel-projected,
upsampled by transposed convolutions) with a text embedding injected through
one cross-attention layer at the coarsest resolution, and emits a sigmoid
mask at mel resolution. Training minimises, over every (text, audio) pair in
the batch, the absolute discrepancy between the frozen model's text-audio
similarity and the same similarity recomputed on the masked audio, plus a
sparsity penalty on the mask mean and a diversity penalty aligning text-text
with masked-audio similarities.

Masks always multiply the domain they were requested in: the mel log-power
input directly (mel domain) or the linear-magnitude STFT (stft domain, where
the mel-resolution mask is bilinearly resized first and the masked
spectrogram is listenable via the inverse transform).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import dsp
from .checkpoint import Checkpoint, params_digest
from .contrastive import (
    AudioLatents,
    ClapModel,
    Embedding,
    Modality,
    TokenSequence,
    clap_digest,
    encode_audio,
    encode_text,
)
from .dsp import AudioClip, Mask, MelFrontend, SpecDomain, Spectrogram
from .errors import ContractViolationError, InvalidInputError, NumericError

MASK_DOMAINS = ("mel", "stft")


@dataclass
class InterpreterTrainConfig:
    """Loss weights and optimisation settings for the mask decoder.

    The published setup trained with batch size 2 at lr 1e-5; those are the
    defaults here, and desk-scale runs override them in the run config. The
    sparsity/diversity weights come from the bundled sweep script
    (scripts/sweep_lambdas.py), chosen so trained mask means land in
    [0.05, 0.25].
    """

    lambda1: float = 0.6
    lambda2: float = 0.3
    batch_size: int = 2
    lr: float = 1e-5
    epochs: int = 2
    mask_domain: str = "mel"
    seed: int = 0
    distance: str = "abs"  # "abs" or "squared" for the scalar norms

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise InvalidInputError("lambda weights must be non-negative")
        if self.mask_domain not in MASK_DOMAINS:
            raise InvalidInputError(f"mask_domain must be one of {MASK_DOMAINS}")
        if self.distance not in ("abs", "squared"):
            raise InvalidInputError("distance must be 'abs' or 'squared'")
        if self.lambda2 > 0 and self.batch_size < 2:
            raise InvalidInputError("diversity term needs batch_size >= 2")


@dataclass
class Explanation:
    mask: Mask
    masked_spec: Spectrogram
    waveform: AudioClip | None
    similarity_original: float
    similarity_masked: float
    prompt: str

    @property
    def mask_mean(self) -> float:
        return self.mask.mean()


@dataclass
class DecoderArch:
    text_dim: int
    latent_channels: tuple[int, ...]
    width: int = 32

    def to_dict(self) -> dict:
        return {"text_dim": self.text_dim, "latent_channels": list(self.latent_channels), "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "DecoderArch":
        return cls(text_dim=d["text_dim"], latent_channels=tuple(d["latent_channels"]), width=d["width"])


class CrossAttention(nn.Module):
    """Spatial positions attend over two tokens: the text embedding and a
    learned null token. Softmax over the pair gives every position (and
    head) its own text-dependent gate."""

    def __init__(self, channels: int, text_dim: int, heads: int = 4):
        super().__init__()
        if channels % heads != 0:
            raise InvalidInputError(f"attention width {channels} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = channels // heads
        self.q = nn.Linear(channels, channels)
        self.kv_text = nn.Linear(text_dim, 2 * channels)
        self.kv_null = nn.Parameter(torch.zeros(2 * channels))
        self.out = nn.Linear(channels, channels)
        self.scale = self.head_dim**-0.5

    def forward(self, x: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        n, hd = self.heads, self.head_dim
        q = self.q(x.flatten(2).transpose(1, 2)).reshape(b, h * w, n, hd)  # (B, HW, H, hd)
        kv_t = self.kv_text(text)  # (B, 2C)
        kv_n = self.kv_null.unsqueeze(0).expand(b, -1)
        k = torch.stack([kv_t[:, :c], kv_n[:, :c]], dim=1).reshape(b, 2, n, hd)
        v = torch.stack([kv_t[:, c:], kv_n[:, c:]], dim=1).reshape(b, 2, n, hd)
        logits = torch.einsum("bphd,bthd->bpht", q, k) * self.scale  # (B, HW, H, 2)
        attn = torch.softmax(logits, dim=-1)
        mixed = torch.einsum("bpht,bthd->bphd", attn, v).reshape(b, h * w, c)
        mixed = self.out(mixed)
        return x + mixed.transpose(1, 2).reshape(b, c, h, w)


class MaskDecoder(nn.Module):
    """Latents in, mel-resolution mask in [0, 1] out."""

    def __init__(self, arch: DecoderArch):
        super().__init__()
        if len(arch.latent_channels) != 4:
            raise InvalidInputError("decoder expects 4 latent channel counts")
        self.arch = arch
        w = arch.width
        self.proj = nn.ModuleList(nn.Conv2d(c, w, kernel_size=1) for c in arch.latent_channels)
        self.attn = CrossAttention(w, arch.text_dim)
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(w, w, kernel_size=4, stride=2, padding=1) for _ in range(4)
        )
        self.head = nn.Conv2d(w, 1, kernel_size=1)
        nn.init.zeros_(self.head.weight)  # fresh decoder outputs 0.5 everywhere
        nn.init.zeros_(self.head.bias)

    def forward(self, text: torch.Tensor, latents: list[torch.Tensor], out_shape: tuple[int, int]) -> torch.Tensor:
        """text: (B, d); latents: 4 maps of (B, C_i, T_i, F_i), coarse last.

        Returns (B, T, F) masks at `out_shape` (the mel spectrogram shape).
        """
        if len(latents) != 4:
            raise InvalidInputError(f"expected 4 latent maps, got {len(latents)}")
        for fm, c in zip(latents, self.arch.latent_channels):
            if fm.shape[1] != c:
                raise InvalidInputError(
                    f"latent channels {tuple(fm.shape)} incompatible with decoder config {self.arch.latent_channels}"
                )
        x = self.proj[3](latents[3])
        x = self.attn(x, text)
        for stage, skip_idx in zip(range(3), (2, 1, 0)):
            x = self.ups[stage](x)
            skip = self.proj[skip_idx](latents[skip_idx])
            if x.shape[-2:] != skip.shape[-2:]:
                x = nn.functional.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
            x = torch.relu(x + skip)
        x = self.ups[3](x)
        if x.shape[-2:] != tuple(out_shape):
            x = nn.functional.interpolate(x, size=tuple(out_shape), mode="bilinear", align_corners=False)
        return torch.sigmoid(self.head(x)).squeeze(1)


class ConstantMaskDecoder(nn.Module):
    """Stub emitting a constant mask; used for identities and tests."""

    def __init__(self, value: float = 1.0, latent_channels: tuple[int, ...] = (0, 0, 0, 0)):
        super().__init__()
        self.value = value
        self.arch = DecoderArch(text_dim=0, latent_channels=latent_channels)
        self._anchor = nn.Parameter(torch.zeros(1))  # gives the module a dtype/device

    def forward(self, text, latents, out_shape):
        b = latents[0].shape[0]
        base = torch.full((b, *out_shape), self.value, dtype=self._anchor.dtype)
        return base + 0.0 * self._anchor  # keep graph connectivity for grad tests


def decoder_for(clap: ClapModel, width: int = 32) -> MaskDecoder:
    return MaskDecoder(DecoderArch(text_dim=clap.arch.embed_dim, latent_channels=clap.arch.conv_channels, width=width))


def decode_mask(decoder: nn.Module, t: Embedding, h: AudioLatents, out_shape: tuple[int, int]) -> Mask:
    """Mel-resolution mask for one (text embedding, audio latents) pair.

    Depends only on (t, h, decoder parameters): batch composition at
    inference cannot change the result.
    """
    dtype = next(decoder.parameters()).dtype
    text = torch.from_numpy(np.asarray(t.vector)).to(dtype).unsqueeze(0)
    latents = [fm.to(dtype).unsqueeze(0) for fm in h.feature_maps]
    with torch.no_grad():
        values = decoder(text, latents, out_shape)[0]
    return Mask(values=values.numpy().astype(np.float64), domain=SpecDomain.MEL_LOG_POWER)


def resize_mask(mask: Mask, out_shape: tuple[int, int], domain: SpecDomain) -> Mask:
    """Bilinear resize (used to bridge mel-resolution masks to STFT shape)."""
    x = torch.from_numpy(mask.values).unsqueeze(0).unsqueeze(0)
    y = nn.functional.interpolate(x, size=tuple(out_shape), mode="bilinear", align_corners=False)
    return Mask(values=y[0, 0].numpy(), domain=domain)


def mel_log_power_torch(mag: torch.Tensor, weights: torch.Tensor, floor: float = dsp.LOG_FLOOR) -> torch.Tensor:
    """Differentiable counterpart of dsp.to_mel_log_power. mag: (B, T, F_lin)."""
    return torch.log(mag**2 @ weights.T + floor)


def _distance(x: torch.Tensor, kind: str) -> torch.Tensor:
    return x.abs() if kind == "abs" else x**2


class _LossInputs:
    """Precomputed frozen-model quantities for one batch."""

    def __init__(self, clap: ClapModel, frontend: MelFrontend,
                 batch: list[tuple[TokenSequence | str, Spectrogram]], mask_domain: str):
        if not batch:
            raise InvalidInputError("empty batch")
        dtype = next(clap.parameters()).dtype
        texts = [b[0] for b in batch]
        specs = [b[1] for b in batch]
        for s in specs:
            want = SpecDomain.MEL_LOG_POWER if mask_domain == "mel" else SpecDomain.LINEAR_MAG_STFT
            if s.domain != want:
                raise InvalidInputError(f"{mask_domain}-domain loss needs {want} spectrograms, got {s.domain}")
        with torch.no_grad():
            self.t = clap.embed_texts(list(texts)).detach()
        self.x = torch.stack([torch.from_numpy(np.ascontiguousarray(s.values)).to(dtype) for s in specs])
        self.weights = torch.from_numpy(frontend.filterbank.weights).to(dtype)
        self.mask_domain = mask_domain
        if mask_domain == "mel":
            self.mel = self.x
        else:
            self.mel = mel_log_power_torch(self.x, self.weights)
        with torch.no_grad():
            a, maps = clap.audio_encoder(self.mel.unsqueeze(1))
            self.a = a.detach()
            self.latents = [m.detach() for m in maps]
        self.c = (self.t @ self.a.T).detach()  # similarity targets, constants

    def pair_masks(self, decoder: nn.Module) -> torch.Tensor:
        """(N, N, T, F) with entry [i, j] = decoder(t_i, h_j)."""
        n = self.t.shape[0]
        t_rep = self.t.repeat_interleave(n, dim=0)  # pair k = i*n + j
        lat_rep = [m.repeat(n, 1, 1, 1) for m in self.latents]
        out_shape = self.mel.shape[-2:]
        masks = decoder(t_rep, lat_rep, out_shape)
        return masks.reshape(n, n, *out_shape)

    def masked_embeddings(self, clap: ClapModel, masks: torch.Tensor) -> torch.Tensor:
        """(N, N, d) embeddings of X_j masked by M[i, j]."""
        n = masks.shape[0]
        if self.mask_domain == "mel":
            masked_mel = masks * self.mel.unsqueeze(0)  # (i, j, T, F)
        else:
            big = nn.functional.interpolate(
                masks.reshape(n * n, 1, *masks.shape[-2:]), size=self.x.shape[-2:],
                mode="bilinear", align_corners=False,
            ).reshape(n, n, *self.x.shape[-2:])
            masked_mel = mel_log_power_torch((big * self.x.unsqueeze(0)).reshape(n * n, *self.x.shape[-2:]),
                                             self.weights).reshape(n, n, *self.mel.shape[-2:])
        flat = masked_mel.reshape(n * n, 1, *self.mel.shape[-2:])
        emb, _ = clap.audio_encoder(flat)
        if not torch.isfinite(emb).all():
            bad = int(torch.nonzero(~torch.isfinite(emb).all(dim=1))[0, 0]) % n
            raise NumericError(f"non-finite embedding for batch sample {bad}")
        return emb.reshape(n, n, -1)


def zs_loss(
    batch: list[tuple[TokenSequence | str, Spectrogram]],
    clap: ClapModel,
    decoder: nn.Module,
    config: InterpreterTrainConfig,
    frontend: MelFrontend,
) -> torch.Tensor:
    """Similarity preservation + sparsity + diversity over all batch pairs."""
    if config.lambda2 > 0 and len(batch) < 2:
        raise InvalidInputError("diversity term needs at least 2 batch items")
    inputs = _LossInputs(clap, frontend, batch, config.mask_domain)
    n = len(batch)
    masks = inputs.pair_masks(decoder)
    emb = inputs.masked_embeddings(clap, masks)

    sim_masked = torch.einsum("id,ijd->ij", inputs.t, emb)
    fidelity = _distance(inputs.c - sim_masked, config.distance).sum()
    sparsity = config.lambda1 * masks.reshape(n * n, -1).mean(dim=1).sum()

    diversity = masks.new_zeros(())
    if config.lambda2 > 0 and n > 1:
        tt = (inputs.t @ inputs.t.T).detach()
        e_diag = emb[torch.arange(n), torch.arange(n)]  # f_audio(X_i . M(t_i, h_i))
        cross = torch.einsum("id,ijd->ij", e_diag, emb.permute(1, 0, 2))  # [i,j] = e_ii . e_ji
        off = ~torch.eye(n, dtype=torch.bool)
        diversity = config.lambda2 * _distance(tt - cross, config.distance)[off].sum()

    total = fidelity + sparsity + diversity
    if not torch.isfinite(total):
        raise NumericError("non-finite objective")
    return total


def diversity_term(
    spec: Spectrogram,
    prompts: list[TokenSequence | str],
    clap: ClapModel,
    decoder: nn.Module,
    frontend: MelFrontend,
    mask_domain: str = "mel",
    distance: str = "abs",
) -> float:
    """Diversity penalty of one audio against a batch of prompts.

    Aligns text-text similarity with the similarity of embeddings from the
    correspondingly masked audio; empty sum (0) for a single prompt.
    """
    if len(prompts) < 1:
        raise InvalidInputError("need at least one prompt")
    if len(prompts) == 1:
        return 0.0
    batch = [(p, spec) for p in prompts]
    inputs = _LossInputs(clap, frontend, batch, mask_domain)
    with torch.no_grad():
        masks = inputs.pair_masks(decoder)
        emb = inputs.masked_embeddings(clap, masks)
        tt = inputs.t @ inputs.t.T
        e_diag = emb[torch.arange(len(prompts)), torch.arange(len(prompts))]
        cross = torch.einsum("id,ijd->ij", e_diag, emb.permute(1, 0, 2))
        off = ~torch.eye(len(prompts), dtype=torch.bool)
        # every row describes the same audio here, so row 0 is D(X)
        return float(_distance(tt - cross, distance)[0, off[0]].sum())


def train_interpreter(
    dataset: list,
    val: list,
    clap: ClapModel,
    config: InterpreterTrainConfig,
    frontend: MelFrontend,
    decoder_width: int = 32,
) -> tuple[MaskDecoder, dict]:
    """Fit the decoder against a frozen contrastive model.

    Training pairs are (caption, clip): evaluation class labels never enter.
    Raises ContractViolationError if any frozen parameter changes.
    """
    if not dataset:
        raise InvalidInputError("training dataset is empty")
    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        torch.manual_seed(config.seed)
        clap = clap.eval()
        for p in clap.parameters():
            p.requires_grad_(False)
        frozen_digest = clap_digest(clap)

        decoder = MaskDecoder(
            DecoderArch(text_dim=clap.arch.embed_dim, latent_channels=clap.arch.conv_channels, width=decoder_width)
        )

        def prep(item) -> tuple[str, Spectrogram]:
            spec = frontend.stft(item.clip)
            if config.mask_domain == "mel":
                spec = frontend.mel(spec)
            return (item.caption, spec)

        train_pairs = [prep(it) for it in dataset]
        val_pairs = [prep(it) for it in val] if val else []

        def heldout() -> float:
            if not val_pairs:
                return float("nan")
            with torch.no_grad():
                return float(zs_loss(val_pairs[: max(2, config.batch_size)], clap, decoder, config, frontend))

        history: dict = {"step": [], "loss": [], "val_loss_init": heldout()}
        opt = torch.optim.Adam(decoder.parameters(), lr=config.lr)
        rng = np.random.default_rng(config.seed)
        step = 0
        min_batch = 2 if config.lambda2 > 0 else 1
        for _epoch in range(config.epochs):
            order = rng.permutation(len(train_pairs))
            for lo in range(0, len(order), config.batch_size):
                idx = order[lo : lo + config.batch_size]
                if len(idx) < min_batch:
                    continue
                opt.zero_grad()
                loss = zs_loss([train_pairs[i] for i in idx], clap, decoder, config, frontend)
                loss.backward()
                opt.step()
                history["step"].append(step)
                history["loss"].append(float(loss.detach()))
                step += 1
        history["val_loss_final"] = heldout()

        if clap_digest(clap) != frozen_digest:
            raise ContractViolationError("contrastive parameters changed during interpreter training")
        decoder.eval()
        return decoder, history
    finally:
        torch.set_num_threads(n_threads)


def explain(
    clip: AudioClip,
    prompt: str,
    mask_domain: str,
    clap: ClapModel,
    decoder: nn.Module,
    frontend: MelFrontend,
) -> Explanation:
    """Mask, masked spectrogram, similarities, and (stft domain) waveform."""
    if mask_domain not in MASK_DOMAINS:
        raise InvalidInputError(f"mask_domain must be one of {MASK_DOMAINS}")
    stft_spec = frontend.stft(clip)
    mel_spec = frontend.mel(stft_spec)
    t = encode_text(clap, prompt)
    a, latents = encode_audio(clap, mel_spec)
    similarity_original = float(t.vector @ a.vector)

    mel_mask = decode_mask(decoder, t, latents, mel_spec.shape)
    if mask_domain == "mel":
        masked_spec = dsp.apply_mask(mel_spec, mel_mask)
        waveform = None
        masked_mel = masked_spec
        mask = mel_mask
    else:
        mask = resize_mask(mel_mask, stft_spec.shape, SpecDomain.LINEAR_MAG_STFT)
        masked_spec = dsp.apply_mask(stft_spec, mask)
        waveform = dsp.istft(masked_spec)
        masked_mel = frontend.mel(masked_spec)
    a_masked, _ = encode_audio(clap, masked_mel)
    similarity_masked = float(t.vector @ a_masked.vector)
    return Explanation(
        mask=mask,
        masked_spec=masked_spec,
        waveform=waveform,
        similarity_original=similarity_original,
        similarity_masked=similarity_masked,
        prompt=prompt,
    )


def export_explanation(exp: Explanation, out_dir: str | Path) -> Path:
    """PNG heatmap + raw matrix + masked spectrogram image + JSON sidecar
    (+ WAV in the stft domain)."""
    from . import viz

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    np.save(out_dir / "mask.npy", exp.mask.values)
    viz.heatmap_png(exp.mask.values, out_dir / "mask.png", vmin=0.0, vmax=1.0)
    display = exp.masked_spec.values
    if exp.masked_spec.domain == SpecDomain.LINEAR_MAG_STFT:
        display = np.log(display**2 + dsp.LOG_FLOOR)
    viz.heatmap_png(display, out_dir / "masked_spec.png")
    if exp.waveform is not None:
        dsp.write_wav(out_dir / "interpretation.wav", exp.waveform)
    sidecar = {
        "prompt": exp.prompt,
        "similarity_original": exp.similarity_original,
        "similarity_masked": exp.similarity_masked,
        "mask_mean": exp.mask_mean,
        "mask_domain": exp.masked_spec.domain.value,
    }
    (out_dir / "explanation.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))
    return out_dir


def decoder_checkpoint(decoder: MaskDecoder, config: InterpreterTrainConfig | None = None,
                       step: int = 0, extra: dict | None = None) -> Checkpoint:
    cfg: dict = {"kind": "decoder", "arch": decoder.arch.to_dict()}
    if config is not None:
        cfg["train"] = {
            "lambda1": config.lambda1, "lambda2": config.lambda2, "batch_size": config.batch_size,
            "lr": config.lr, "epochs": config.epochs, "mask_domain": config.mask_domain,
            "seed": config.seed, "distance": config.distance,
        }
    if extra:
        cfg.update(extra)
    params = {k: v.detach().cpu().numpy() for k, v in decoder.state_dict().items()}
    return Checkpoint(params=params, step=step, config=cfg)


def decoder_from_checkpoint(ckpt: Checkpoint) -> MaskDecoder:
    if ckpt.config.get("kind") != "decoder":
        raise InvalidInputError(f"checkpoint kind {ckpt.config.get('kind')!r} is not a mask decoder")
    decoder = MaskDecoder(DecoderArch.from_dict(ckpt.config["arch"]))
    decoder.load_state_dict({k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in ckpt.params.items()})
    decoder.eval()
    return decoder


def decoder_digest(decoder: nn.Module) -> str:
    return params_digest({k: v.detach().cpu().numpy() for k, v in decoder.state_dict().items()})
