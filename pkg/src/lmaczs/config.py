"""Run configuration: one nested YAML file drives every subcommand.

`seed` and `out_dir` are required; everything else has desk-scale defaults.
Unknown keys and type mismatches fail loudly with the offending field named.
The LMACZS_OUT environment variable overrides the output root.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError


@dataclass
class DspConfig:
    frame_len: int = 1024
    hop: int = 256
    n_mels: int = 64


@dataclass
class DatagenConfig:
    n_per_class: int = 100
    families: list[str] = field(default_factory=lambda: [
        "tone", "chirp", "harmonic_stack", "noise_burst", "click_train", "am_noise"
    ])
    split_fracs: list[float] = field(default_factory=lambda: [0.7, 0.15, 0.15])


@dataclass
class ContrastiveConfig:
    embed_dim: int = 64
    text_hidden: int = 128
    conv_channels: list[int] = field(default_factory=lambda: [16, 32, 48, 64])
    hash_buckets: int = 32
    temperature_init: float = 0.07
    lr: float = 1e-3  # desk-scale override of the conservative 1e-5 default
    batch_size: int = 32
    epochs: int = 40


@dataclass
class InterpreterConfig:
    lambda1: float = 0.6
    lambda2: float = 0.3
    lr: float = 1e-3
    batch_size: int = 6
    epochs: int = 6
    mask_domain: str = "mel"
    distance: str = "abs"
    decoder_width: int = 32


@dataclass
class EvaluationConfig:
    explainers: list[str] = field(default_factory=lambda: [
        "lmac_zs", "gradcam", "gradcam_pp", "smoothgrad", "integrated_gradients", "random"
    ])
    snr_db: float = 3.0
    contaminations: list[str] = field(default_factory=lambda: ["other_clip", "white_noise", "speech_like"])
    domains: list[str] = field(default_factory=lambda: ["mel"])
    max_samples: int | None = None


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8723
    max_clip_bytes: int = 4_000_000
    max_cached_assets: int = 256


@dataclass
class RunConfig:
    seed: int
    out_dir: str
    sample_rate: int = 16000
    clip_seconds: float = 2.0
    dsp: DspConfig = field(default_factory=DspConfig)
    datagen: DatagenConfig = field(default_factory=DatagenConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    interpreter: InterpreterConfig = field(default_factory=InterpreterConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    server: ServerConfig = field(default_factory=ServerConfig)

    def resolved_out_dir(self) -> Path:
        return Path(os.environ.get("LMACZS_OUT", self.out_dir))

    def to_dict(self) -> dict:
        return asdict(self)


_SECTIONS = {
    "dsp": DspConfig,
    "datagen": DatagenConfig,
    "contrastive": ContrastiveConfig,
    "interpreter": InterpreterConfig,
    "evaluation": EvaluationConfig,
    "server": ServerConfig,
}


def _build(cls, data: dict, prefix: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{prefix.rstrip('.')}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown field '{prefix}{sorted(unknown)[0]}'")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            value = data[f.name]
            kwargs[f.name] = value
    try:
        obj = cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad value in section '{prefix.rstrip('.')}': {exc}") from exc
    _typecheck(obj, prefix)
    return obj


def _typecheck(obj, prefix: str) -> None:
    simple = {"int": int, "float": (int, float), "str": str, "bool": bool}
    for f in fields(obj):
        value = getattr(obj, f.name)
        annot = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", "")
        expect = simple.get(annot)
        if expect and not isinstance(value, expect):
            raise ConfigError(f"field '{prefix}{f.name}' must be {annot}, got {type(value).__name__}")


def load_config(path: str | Path, seed: int | None = None, out_dir: str | None = None) -> RunConfig:
    """Parse and validate a YAML run config, with optional CLI overrides."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    if seed is not None:
        data["seed"] = seed
    if out_dir is not None:
        data["out_dir"] = out_dir
    for required in ("seed", "out_dir"):
        if required not in data:
            raise ConfigError(f"missing required field '{required}'")

    top_known = {"seed", "out_dir", "sample_rate", "clip_seconds", *_SECTIONS}
    unknown = set(data) - top_known
    if unknown:
        raise ConfigError(f"unknown field '{sorted(unknown)[0]}'")

    sections = {name: _build(cls, data.get(name, {}), f"{name}.") for name, cls in _SECTIONS.items()}
    if not isinstance(data["seed"], int):
        raise ConfigError("field 'seed' must be an integer")
    cfg = RunConfig(
        seed=data["seed"],
        out_dir=str(data["out_dir"]),
        sample_rate=data.get("sample_rate", 16000),
        clip_seconds=data.get("clip_seconds", 2.0),
        **sections,
    )
    if cfg.sample_rate not in (16000, 44100):
        raise ConfigError("field 'sample_rate' must be 16000 or 44100")
    if cfg.interpreter.mask_domain not in ("mel", "stft"):
        raise ConfigError("field 'interpreter.mask_domain' must be 'mel' or 'stft'")
    for d in cfg.evaluation.domains:
        if d not in ("mel", "stft"):
            raise ConfigError("field 'evaluation.domains' entries must be 'mel' or 'stft'")
    return cfg


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
