"""Toy contrastive audio-text model.

A word-embedding text encoder and a 4-block convolutional audio encoder
project both modalities into one unit-norm space; matched pairs are pulled
together with a symmetric temperature-scaled cross-entropy over the batch
similarity matrix. Small enough to train on CPU in minutes while exposing
the full interface the mask decoder needs (projected embeddings plus the
last four audio feature maps).
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch
from torch import nn

from .checkpoint import Checkpoint, params_digest
from .dsp import Spectrogram, SpecDomain
from .errors import InvalidInputError, NumericError

PAD_ID = 0

# fixed affine applied to mel log-power inputs before the first conv
MEL_SHIFT = 12.0
MEL_SCALE = 6.0


class Modality(Enum):
    TEXT = "text"
    AUDIO = "audio"


@dataclass
class TokenSequence:
    token_ids: np.ndarray
    raw_text: str

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.token_ids.size == 0:
            raise InvalidInputError("token sequence must be non-empty")


@dataclass
class Embedding:
    vector: np.ndarray
    modality: Modality

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)


@dataclass
class IntermediateLatents:
    """Pre-projection pooled latents from each encoder."""

    text_latent: np.ndarray
    audio_latent: np.ndarray


@dataclass
class AudioLatents:
    """The last 4 feature maps from the audio encoder, coarse last."""

    feature_maps: list[torch.Tensor]  # each (C, T', F')

    def __post_init__(self):
        if len(self.feature_maps) != 4:
            raise InvalidInputError(f"expected exactly 4 feature maps, got {len(self.feature_maps)}")
        sizes = [fm.shape[-2] * fm.shape[-1] for fm in self.feature_maps]
        if any(a < b for a, b in zip(sizes, sizes[1:])):
            raise InvalidInputError("feature map resolutions must be monotone non-increasing")


@dataclass
class SimilarityMatrix:
    values: np.ndarray  # (N, N), values[i, j] =
    temperature: float  # t_i . a_j

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise InvalidInputError(f"similarity matrix must be square, got {self.values.shape}")


class Tokenizer:
    """Lowercase whitespace tokenizer over a fixed vocabulary.

    Out-of-vocabulary words hash (crc32) into a small bucket range so unseen
    prompts still tokenize deterministically.
    """

    def __init__(self, vocab: list[str], hash_buckets: int = 32):
        if len(set(vocab)) != len(vocab):
            raise InvalidInputError("vocabulary contains duplicates")
        self.vocab = list(vocab)
        self.word_to_id = {w: i + 1 for i, w in enumerate(vocab)}  # 0 is PAD
        self.hash_base = 1 + len(vocab)
        self.hash_buckets = hash_buckets
        self.vocab_size = self.hash_base + hash_buckets

    def encode(self, text: str) -> TokenSequence:
        words = text.lower().split()
        if not words:
            raise InvalidInputError("cannot tokenize empty text")
        ids = [
            self.word_to_id.get(w, self.hash_base + zlib.crc32(w.encode()) % self.hash_buckets)
            for w in words
        ]
        return TokenSequence(token_ids=np.array(ids, dtype=np.int64), raw_text=text)


@dataclass
class ClapArch:
    """Architecture hyperparameters; serialized into every checkpoint."""

    vocab: list[str]
    embed_dim: int = 64
    text_hidden: int = 128
    conv_channels: tuple[int, ...] = (16, 32, 48, 64)
    n_mels: int = 64
    hash_buckets: int = 32
    temperature_init: float = 0.07

    def to_dict(self) -> dict:
        return {
            "vocab": self.vocab,
            "embed_dim": self.embed_dim,
            "text_hidden": self.text_hidden,
            "conv_channels": list(self.conv_channels),
            "n_mels": self.n_mels,
            "hash_buckets": self.hash_buckets,
            "temperature_init": self.temperature_init,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClapArch":
        d = dict(d)
        d["conv_channels"] = tuple(d["conv_channels"])
        return cls(**d)


class TextEncoder(nn.Module):
    """Embedding table -> masked mean pool -> 2-layer MLP."""

    def __init__(self, arch: ClapArch):
        super().__init__()
        self.table = nn.Embedding(1 + len(arch.vocab) + arch.hash_buckets, arch.text_hidden, padding_idx=PAD_ID)
        self.mlp = nn.Sequential(
            nn.Linear(arch.text_hidden, arch.text_hidden),
            nn.ReLU(),
            nn.Linear(arch.text_hidden, arch.embed_dim),
        )

    def pool(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        emb = self.table(ids)
        denom = pad_mask.sum(dim=1, keepdim=True).clamp(min=1.0)
        return (emb * pad_mask.unsqueeze(-1)).sum(dim=1) / denom

    def forward(self, ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        out = self.mlp(self.pool(ids, pad_mask))
        return nn.functional.normalize(out, dim=-1, eps=1e-12)


class ConvBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel_size=3, padding=1)
        self.norm = nn.GroupNorm(4, c_out)
        self.pool = nn.MaxPool2d(2)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.pool(torch.relu(self.norm(self.conv(x))))


class AudioEncoder(nn.Module):
    """Four conv blocks over (time, mel) followed by a projection MLP."""

    def __init__(self, arch: ClapArch):
        super().__init__()
        chans = arch.conv_channels
        self.blocks = nn.ModuleList(
            ConvBlock(c_in, c_out) for c_in, c_out in zip((1,) + tuple(chans[:-1]), chans)
        )
        self.mlp = nn.Sequential(
            nn.Linear(chans[-1], chans[-1]),
            nn.ReLU(),
            nn.Linear(chans[-1], arch.embed_dim),
        )

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """x: (B, 1, T, F) mel log-power. Returns the 4 block outputs."""
        x = (x + MEL_SHIFT) / MEL_SCALE
        maps = []
        for block in self.blocks:
            x = block(x)
            maps.append(x)
        return maps

    def head(self, top: torch.Tensor) -> torch.Tensor:
        # mean + max global pooling: embeddings track salient peaks, so
        # sparse masks that keep the peaks stay faithful
        pooled = top.mean(dim=(-2, -1)) + top.amax(dim=(-2, -1))
        return nn.functional.normalize(self.mlp(pooled), dim=-1, eps=1e-12)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        maps = self.features(x)
        return self.head(maps[-1]), maps


class ClapModel(nn.Module):
    def __init__(self, arch: ClapArch):
        super().__init__()
        self.arch = arch
        self.tokenizer = Tokenizer(arch.vocab, arch.hash_buckets)
        self.text_encoder = TextEncoder(arch)
        self.audio_encoder = AudioEncoder(arch)
        self.log_tau = nn.Parameter(torch.tensor(float(np.log(arch.temperature_init))))

    @property
    def tau(self) -> torch.Tensor:
        return self.log_tau.exp().clamp(min=0.01)

    def tokens_to_tensors(self, sequences: list[TokenSequence]) -> tuple[torch.Tensor, torch.Tensor]:
        max_len = max(len(s.token_ids) for s in sequences)
        ids = torch.zeros((len(sequences), max_len), dtype=torch.long)
        for i, s in enumerate(sequences):
            ids[i, : len(s.token_ids)] = torch.from_numpy(s.token_ids)
        return ids, (ids != PAD_ID).float()

    def embed_texts(self, texts: list[str | TokenSequence]) -> torch.Tensor:
        seqs = [t if isinstance(t, TokenSequence) else self.tokenizer.encode(t) for t in texts]
        ids, mask = self.tokens_to_tensors(seqs)
        p = next(self.parameters())
        return self.text_encoder(ids, mask.to(p.dtype))


def spec_to_tensor(spec: Spectrogram, n_mels: int, dtype=torch.float32) -> torch.Tensor:
    if spec.domain != SpecDomain.MEL_LOG_POWER:
        raise InvalidInputError("audio encoder expects a MEL_LOG_POWER spectrogram")
    if spec.values.shape[1] != n_mels:
        raise InvalidInputError(f"encoder configured for {n_mels} mel bands, got {spec.values.shape[1]}")
    return torch.from_numpy(np.ascontiguousarray(spec.values)).to(dtype).unsqueeze(0).unsqueeze(0)


def encode_text(model: ClapModel, tokens: TokenSequence | str) -> Embedding:
    """Unit-norm text embedding; deterministic given parameters."""
    if isinstance(tokens, str):
        tokens = model.tokenizer.encode(tokens)
    with torch.no_grad():
        vec = model.embed_texts([tokens])[0]
    return Embedding(vector=vec.numpy().astype(np.float64), modality=Modality.TEXT)


def encode_audio(model: ClapModel, spec: Spectrogram) -> tuple[Embedding, AudioLatents]:
    """Unit-norm audio embedding plus the 4 final encoder feature maps."""
    x = spec_to_tensor(spec, model.arch.n_mels, dtype=next(model.parameters()).dtype)
    with torch.no_grad():
        emb, maps = model.audio_encoder(x)
    return (
        Embedding(vector=emb[0].numpy().astype(np.float64), modality=Modality.AUDIO),
        AudioLatents(feature_maps=[m[0].detach() for m in maps]),
    )


def intermediate_latents(model: ClapModel, tokens: TokenSequence | str, spec: Spectrogram) -> IntermediateLatents:
    if isinstance(tokens, str):
        tokens = model.tokenizer.encode(tokens)
    ids, mask = model.tokens_to_tensors([tokens])
    x = spec_to_tensor(spec, model.arch.n_mels)
    with torch.no_grad():
        text_lat = model.text_encoder.pool(ids, mask)[0]
        audio_lat = model.audio_encoder.features(x)[-1][0].mean(dim=(-2, -1))
    return IntermediateLatents(
        text_latent=text_lat.numpy().astype(np.float64),
        audio_latent=audio_lat.numpy().astype(np.float64),
    )


def similarity_matrix(t_batch: list[Embedding], a_batch: list[Embedding], temperature: float = 1.0) -> SimilarityMatrix:
    """C[i, j] = t_i . a_j (pre-temperature)."""
    if len(t_batch) != len(a_batch) or len(t_batch) < 1:
        raise InvalidInputError("need equal, non-empty text and audio batches")
    t = np.stack([e.vector for e in t_batch])
    a = np.stack([e.vector for e in a_batch])
    return SimilarityMatrix(values=t @ a.T, temperature=temperature)


def clap_loss(c: torch.Tensor, tau: torch.Tensor | float) -> torch.Tensor:
    """Symmetric cross-entropy over the temperature-scaled similarity matrix."""
    tau_val = float(tau) if not isinstance(tau, torch.Tensor) else float(tau.detach())
    if tau_val <= 0:
        raise InvalidInputError(f"temperature must be positive, got {tau_val}")
    logits = c / tau
    over_text = torch.log_softmax(logits, dim=0).diagonal()
    over_audio = torch.log_softmax(logits, dim=1).diagonal()
    return -0.5 * (over_text.sum() + over_audio.sum())


def contrastive_loss(C: SimilarityMatrix) -> float:
    return float(clap_loss(torch.from_numpy(C.values), C.temperature))


@dataclass
class ClapTrainConfig:
    lr: float = 1e-5  # conservative published default; toy runs override
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    # Anchor the two "void" inputs (all-zero log-power and the silence floor)
    # as universal negatives in the text->audio softmax. Large training
    # corpora repel empty audio from typical prompts implicitly; the toy
    # corpus needs it spelled out so emptied masks have a well-defined,
    # low-similarity meaning.
    void_anchor: bool = True


def _mel_batch(feats: list[np.ndarray], idx: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.stack([feats[i] for i in idx])).float().unsqueeze(1)


def train_clap(
    train: list,
    val: list,
    arch: ClapArch,
    cfg: ClapTrainConfig,
    frontend,
) -> tuple[ClapModel, dict]:
    """Train the contrastive model on (clip, caption) pairs.

    Returns the model and a history dict with the per-step loss curve plus
    held-out loss at init and at the end. Deterministic for a fixed seed.
    """
    if not train:
        raise InvalidInputError("training dataset is empty")
    if not val:
        raise InvalidInputError("validation dataset is empty")

    n_threads = torch.get_num_threads()
    torch.set_num_threads(1)  # bit-reproducible loss curves
    try:
        torch.manual_seed(cfg.seed)
        model = ClapModel(arch)

        feats = [frontend.mel(item.clip).values.astype(np.float32) for item in train]
        seqs = [model.tokenizer.encode(item.caption) for item in train]
        val_feats = [frontend.mel(item.clip).values.astype(np.float32) for item in val]
        val_seqs = [model.tokenizer.encode(item.caption) for item in val]

        t_frames = feats[0].shape[0]
        voids = torch.stack([
            torch.zeros(t_frames, arch.n_mels),
            torch.full((t_frames, arch.n_mels), float(np.log(1e-10))),
        ]).unsqueeze(1)

        def batch_loss(f_list, s_list, idx) -> torch.Tensor:
            x = _mel_batch(f_list, idx)
            t = model.embed_texts([s_list[i] for i in idx])
            a, _ = model.audio_encoder(x)
            c = t @ a.T
            if not cfg.void_anchor:
                return clap_loss(c, model.tau)
            v, _ = model.audio_encoder(voids)
            rows = torch.cat([c, t @ v.T], dim=1) / model.tau  # void columns are extra negatives
            over_audio = torch.log_softmax(rows, dim=1).diagonal()
            over_text = torch.log_softmax(c / model.tau, dim=0).diagonal()
            return -0.5 * (over_audio.sum() + over_text.sum())

        def heldout_loss() -> float:
            with torch.no_grad():
                n = min(len(val_feats), cfg.batch_size)
                return float(batch_loss(val_feats, val_seqs, np.arange(n)))

        history: dict = {"step": [], "loss": [], "val_loss_init": heldout_loss()}
        opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
        rng = np.random.default_rng(cfg.seed)
        step = 0
        for _epoch in range(cfg.epochs):
            order = rng.permutation(len(train))
            for lo in range(0, len(order) - 1, cfg.batch_size):
                idx = order[lo : lo + cfg.batch_size]
                if len(idx) < 2:
                    continue
                opt.zero_grad()
                loss = batch_loss(feats, seqs, idx)
                if not torch.isfinite(loss):
                    raise NumericError(f"non-finite contrastive loss at step {step}")
                loss.backward()
                opt.step()
                history["step"].append(step)
                history["loss"].append(float(loss.detach()))
                step += 1
        history["val_loss_final"] = heldout_loss()
        return model, history
    finally:
        torch.set_num_threads(n_threads)


def clap_state(model: ClapModel) -> dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}


def clap_checkpoint(model: ClapModel, step: int = 0, extra: dict | None = None) -> Checkpoint:
    config = {"kind": "clap", "arch": model.arch.to_dict()}
    if extra:
        config.update(extra)
    rng = torch.get_rng_state().numpy().tobytes()
    return Checkpoint(params=clap_state(model), step=step, config=config, rng_state=rng)


def clap_from_checkpoint(ckpt: Checkpoint) -> ClapModel:
    if ckpt.config.get("kind") != "clap":
        raise InvalidInputError(f"checkpoint kind {ckpt.config.get('kind')!r} is not a contrastive model")
    arch = ClapArch.from_dict(ckpt.config["arch"])
    model = ClapModel(arch)
    state = {k: torch.from_numpy(np.ascontiguousarray(v)) for k, v in ckpt.params.items()}
    model.load_state_dict(state)
    model.eval()
    return model


def clap_digest(model: ClapModel) -> str:
    return params_digest(clap_state(model))
