"""Seeded synthetic audio-caption corpus and contamination harness.

Six sound-event families with parameterised synthesisers and a small caption
grammar (>= 8 surface forms each). Clips are synthesised at 44.1 kHz and
resampled to the run's rate so both the mel and STFT paths consume the same
material. Everything is a pure function of (config, seed); regeneration is
bit-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import dsp
from .dsp import AudioClip
from .errors import InvalidInputError
from .zeroshot import PROMPT_PREFIX as EVAL_PROMPT_PREFIX

SYNTH_RATE = 44100

FAMILIES = ("tone", "chirp", "harmonic_stack", "noise_burst", "click_train", "am_noise")

#: Zero-shot class label per family. Held out from interpreter training;
#: used only to build evaluation prompts.
CLASS_LABELS = {
    "tone": "tone",
    "chirp": "chirp",
    "harmonic_stack": "harmonic stack",
    "noise_burst": "noise burst",
    "click_train": "click train",
    "am_noise": "pulsing noise",
}

#: Documented parameter ranges per family (Hz, seconds, unitless amplitude).
FAMILY_RANGES = {
    "tone": {"fundamental_hz": (200.0, 1800.0), "duration_s": (0.8, 1.8), "amplitude": (0.3, 0.8)},
    "chirp": {"fundamental_hz": (150.0, 800.0), "duration_s": (0.7, 1.6), "amplitude": (0.3, 0.8), "freq_ratio": (2.0, 5.0)},
    "harmonic_stack": {"fundamental_hz": (100.0, 350.0), "duration_s": (0.9, 1.8), "amplitude": (0.3, 0.7), "n_harmonics": (4, 8)},
    "noise_burst": {"fundamental_hz": (0.0, 0.0), "duration_s": (0.08, 0.3), "amplitude": (0.3, 0.8), "n_bursts": (1, 3)},
    "click_train": {"fundamental_hz": (2000.0, 4000.0), "duration_s": (1.0, 1.9), "amplitude": (0.4, 0.9), "rate_hz": (5.0, 18.0)},
    "am_noise": {"fundamental_hz": (0.0, 0.0), "duration_s": (1.2, 1.9), "amplitude": (0.2, 0.6), "mod_hz": (2.0, 8.0)},
}

_CAPTION_GRAMMAR = {
    "tone": [
        "a {pitch} steady tone is ringing",
        "someone plays a long {pitch} beep",
        "a pure tone hums at a constant pitch",
        "an unwavering {pitch} beep sounds",
        "a sustained electronic tone plays",
        "a {pitch} sine tone rings out",
        "a constant beep keeps sounding",
        "a smooth tone holds one {pitch} note",
    ],
    "chirp": [
        "a chirp sweeps upward in pitch",
        "a {speed} rising chirp glides up",
        "a sweeping chirp climbs higher",
        "a whistle like chirp slides upward",
        "a {speed} frequency sweep rises",
        "a gliding chirp goes from low to high",
        "an upward chirp whooshes by",
        "a rising sweep of sound chirps along",
    ],
    "harmonic_stack": [
        "a rich harmonic stack of overtones plays",
        "an organ like chord thick with harmonics sounds",
        "a {pitch} note stacked with many overtones is held",
        "stacked harmonics form a buzzing chord",
        "a droning chord of layered harmonics plays",
        "many overtones stack into one {pitch} drone",
        "a reedy harmonic chord sustains",
        "a full stack of harmonics rings as a chord",
    ],
    "noise_burst": [
        "a sharp burst of noise crackles",
        "short bursts of static noise appear",
        "a sudden noise burst erupts and stops",
        "crackling bursts of broadband noise pop",
        "a quick burst of white static fires",
        "abrupt noise bursts punch through silence",
        "a harsh static burst snaps briefly",
        "a few scattered bursts of noise crackle",
    ],
    "click_train": [
        "a train of clicks ticks {speed}",
        "rapid clicking sounds repeat evenly",
        "a series of sharp clicks taps along",
        "a {speed} click train patters on",
        "evenly spaced clicks tick like a meter",
        "a run of dry clicks keeps time",
        "clicks repeat in a steady train",
        "a ticking sequence of clicks continues",
    ],
    "am_noise": [
        "a pulsing wash of noise wobbles {speed}",
        "noise throbs with a {speed} pulse",
        "a wobbling bed of noise surges and fades",
        "pulsing static swells in waves",
        "a throbbing noise rises and falls {speed}",
        "waves of pulsing noise wash in and out",
        "a surging noise pulse beats steadily",
        "noise pulses with a wobbling rhythm",
    ],
}

@dataclass
class SoundEventSpec:
    """Parameters for one synthetic sound event."""

    family: str
    fundamental_hz: float
    duration_s: float
    onset_s: float
    amplitude: float
    extra: dict = field(default_factory=dict)


@dataclass
class CaptionedClip:
    clip: AudioClip
    caption: str
    class_label: str
    family: str
    clip_id: str


def caption_vocabulary() -> list[str]:
    """All words the caption grammar and label set can produce."""
    words: set[str] = set()
    for templates in _CAPTION_GRAMMAR.values():
        for t in templates:
            for w in t.replace("{pitch}", "").replace("{speed}", "").split():
                words.add(w)
    words.update({"low", "mid", "high", "slow", "fast", "steady"})
    for label in CLASS_LABELS.values():
        words.update(label.split())
    words.update(EVAL_PROMPT_PREFIX.split())
    return sorted(words)


def sample_event_spec(family: str, rng: np.random.Generator) -> SoundEventSpec:
    if family not in FAMILY_RANGES:
        raise InvalidInputError(f"unknown family {family!r}; choose from {FAMILIES}")
    r = FAMILY_RANGES[family]
    dur = rng.uniform(*r["duration_s"])
    if family == "noise_burst":
        n_bursts = int(rng.integers(r["n_bursts"][0], r["n_bursts"][1] + 1))
        extra = {"n_bursts": n_bursts}
        total = dur * n_bursts * 2
        onset = rng.uniform(0.05, max(0.06, 1.9 - total))
    else:
        extra = {}
        if family == "chirp":
            extra["freq_ratio"] = float(rng.uniform(*r["freq_ratio"]))
        elif family == "harmonic_stack":
            extra["n_harmonics"] = int(rng.integers(r["n_harmonics"][0], r["n_harmonics"][1] + 1))
        elif family == "click_train":
            extra["rate_hz"] = float(rng.uniform(*r["rate_hz"]))
        elif family == "am_noise":
            extra["mod_hz"] = float(rng.uniform(*r["mod_hz"]))
        onset = rng.uniform(0.02, max(0.03, 1.95 - dur))
    return SoundEventSpec(
        family=family,
        fundamental_hz=float(rng.uniform(*r["fundamental_hz"])),
        duration_s=float(dur),
        onset_s=float(onset),
        amplitude=float(rng.uniform(*r["amplitude"])),
        extra=extra,
    )


def _fade(signal: np.ndarray, fs: int, ms: float = 10.0) -> np.ndarray:
    n = min(len(signal) // 2, int(fs * ms / 1000))
    if n > 0:
        ramp = np.linspace(0.0, 1.0, n)
        signal[:n] *= ramp
        signal[-n:] *= ramp[::-1]
    return signal


def _synth_event(spec: SoundEventSpec, rng: np.random.Generator, fs: int) -> np.ndarray:
    n = int(spec.duration_s * fs)
    t = np.arange(n) / fs
    f0 = spec.fundamental_hz
    if spec.family == "tone":
        sig = np.sin(2 * np.pi * f0 * t)
    elif spec.family == "chirp":
        f1 = min(f0 * spec.extra["freq_ratio"], 6000.0)
        inst = f0 + (f1 - f0) * t / spec.duration_s
        phase = 2 * np.pi * np.cumsum(inst) / fs
        sig = np.sin(phase)
    elif spec.family == "harmonic_stack":
        k = np.arange(1, spec.extra["n_harmonics"] + 1)
        sig = np.sum(np.sin(2 * np.pi * f0 * np.outer(k, t)) / k[:, None], axis=0)
        sig /= np.max(np.abs(sig)) + 1e-12
    elif spec.family == "noise_burst":
        sig = rng.standard_normal(n) * np.hanning(n)
        sig /= np.max(np.abs(sig)) + 1e-12
    elif spec.family == "click_train":
        sig = np.zeros(n)
        period = int(fs / spec.extra["rate_hz"])
        ping_len = int(0.004 * fs)
        ping_t = np.arange(ping_len) / fs
        ping = np.sin(2 * np.pi * f0 * ping_t) * np.exp(-ping_t / 0.0012)
        for start in range(0, n - ping_len, period):
            sig[start : start + ping_len] += ping
    elif spec.family == "am_noise":
        env = 0.5 * (1 + np.sin(2 * np.pi * spec.extra["mod_hz"] * t))
        sig = rng.standard_normal(n) * env
        sig /= np.max(np.abs(sig)) + 1e-12
    else:
        raise InvalidInputError(f"unknown family {spec.family!r}")
    return _fade(sig * spec.amplitude, fs)


def synth_speech_like(n_samples: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    """Formant-filtered glottal pulse train: a stand-in for real speech noise.

    Three resonators around typical vowel formants, pitch and formants
    drifting per syllable, with a syllabic amplitude envelope.
    """
    out = np.zeros(n_samples)
    syll_len = int(0.22 * fs)
    pos = 0
    while pos < n_samples:
        seg = min(syll_len, n_samples - pos)
        pitch = rng.uniform(90, 180)
        pulses = np.zeros(seg)
        period = max(4, int(fs / pitch))
        pulses[::period] = 1.0
        voiced = pulses
        for f_center, bw in ((rng.uniform(300, 900), 80), (rng.uniform(900, 2200), 120), (2500, 200)):
            r = np.exp(-np.pi * bw / fs)
            theta = 2 * np.pi * f_center / fs
            a = [1.0, -2 * r * np.cos(theta), r**2]
            voiced = lfilter([1.0 - r], a, voiced)
        env = np.sin(np.pi * np.arange(seg) / seg) ** 2 * rng.uniform(0.4, 1.0)
        out[pos : pos + seg] = voiced * env
        pos += seg + int(rng.uniform(0.0, 0.08) * fs)
    peak = np.max(np.abs(out))
    return out / peak * 0.5 if peak > 0 else out


def _caption(spec: SoundEventSpec, rng: np.random.Generator) -> str:
    template = _CAPTION_GRAMMAR[spec.family][int(rng.integers(len(_CAPTION_GRAMMAR[spec.family])))]
    pitch = "low" if spec.fundamental_hz < 350 else ("mid" if spec.fundamental_hz < 900 else "high")
    speed_source = spec.extra.get("rate_hz", spec.extra.get("mod_hz", 1.0 / max(spec.duration_s, 0.1)))
    speed = "fast" if speed_source > 8 else ("steady" if speed_source > 4 else "slow")
    return template.format(pitch=pitch, speed=speed)


def generate_clip(
    spec: SoundEventSpec,
    seed: int,
    sample_rate: int = 16000,
    clip_seconds: float = 2.0,
) -> CaptionedClip:
    """Deterministic waveform + caption for (spec, seed)."""
    if spec.family not in FAMILY_RANGES:
        raise InvalidInputError(f"unknown family {spec.family!r}")
    if spec.amplitude < 0 or spec.duration_s <= 0:
        raise InvalidInputError("amplitude must be >= 0 and duration positive")
    if spec.onset_s < 0 or spec.onset_s + spec.duration_s > clip_seconds + 1e-9:
        raise InvalidInputError(
            f"event (onset {spec.onset_s:.2f}s + duration {spec.duration_s:.2f}s) "
            f"does not fit in a {clip_seconds}s clip"
        )
    rng = np.random.default_rng(np.random.SeedSequence([seed, FAMILIES.index(spec.family)]))
    n_total = int(clip_seconds * SYNTH_RATE)
    wave = np.zeros(n_total)
    event = _synth_event(spec, rng, SYNTH_RATE)
    start = int(spec.onset_s * SYNTH_RATE)
    if spec.family == "noise_burst":
        # several short isolated bursts instead of one contiguous event
        gap = int(spec.duration_s * 1.2 * SYNTH_RATE)
        for b in range(spec.extra.get("n_bursts", 1)):
            s = start + b * (len(event) + gap)
            if s + len(event) <= n_total:
                wave[s : s + len(event)] += event
    else:
        wave[start : start + len(event)] += event[: n_total - start]

    clip = AudioClip(samples=wave, sample_rate=SYNTH_RATE)
    if sample_rate != SYNTH_RATE:
        clip = dsp.resample(clip, sample_rate)
    clip = dsp.fix_length(clip, int(clip_seconds * sample_rate))
    caption = _caption(spec, rng)
    pcm = (np.clip(clip.samples, -1, 1) * 32767).astype(np.int16)
    clip_id = hashlib.sha1(pcm.tobytes() + spec.family.encode()).hexdigest()[:16]
    return CaptionedClip(
        clip=clip,
        caption=caption,
        class_label=CLASS_LABELS[spec.family],
        family=spec.family,
        clip_id=clip_id,
    )


def make_dataset(
    n_per_class: int,
    families: tuple[str, ...] = FAMILIES,
    seed: int = 0,
    sample_rate: int = 16000,
    clip_seconds: float = 2.0,
    split_fracs: tuple[float, float, float] = (0.7, 0.15, 0.15),
    out_dir: str | Path | None = None,
) -> dict[str, list[CaptionedClip]]:
    """Stratified train/val/test splits; optionally persists WAVs + manifest."""
    if n_per_class < 1:
        raise InvalidInputError("n_per_class must be >= 1")
    if len(families) < 2:
        raise InvalidInputError("need at least 2 families")
    n_val = int(round(n_per_class * split_fracs[1]))
    n_test = int(round(n_per_class * split_fracs[2]))
    n_train = n_per_class - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise InvalidInputError(
            f"n_per_class={n_per_class} too small for split fractions {split_fracs}"
        )

    splits: dict[str, list[CaptionedClip]] = {"train": [], "val": [], "test": []}
    for fam_idx, family in enumerate(families):
        fam_rng = np.random.default_rng(np.random.SeedSequence([seed, 1000 + fam_idx]))
        for i in range(n_per_class):
            spec = sample_event_spec(family, fam_rng)
            clip = generate_clip(
                spec, seed=int(fam_rng.integers(2**31)), sample_rate=sample_rate, clip_seconds=clip_seconds
            )
            if i < n_train:
                splits["train"].append(clip)
            elif i < n_train + n_val:
                splits["val"].append(clip)
            else:
                splits["test"].append(clip)

    order_rng = np.random.default_rng(np.random.SeedSequence([seed, 42]))
    for name in splits:
        order_rng.shuffle(splits[name])

    if out_dir is not None:
        write_corpus(Path(out_dir), splits, seed)
    return splits


def contaminate(
    split: list[CaptionedClip],
    noise_source: str,
    snr_db: float = 3.0,
    seed: int = 0,
) -> list[CaptionedClip]:
    """Mix every clip with a noise source at the given SNR; labels preserved.

    other_clip noise always comes from a different class within the split.
    """
    if noise_source not in ("other_clip", "white_noise", "speech_like"):
        raise InvalidInputError(f"unknown noise source {noise_source!r}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    out: list[CaptionedClip] = []
    for item in split:
        if noise_source == "other_clip":
            donors = [c for c in split if c.family != item.family]
            if not donors:
                raise InvalidInputError("other_clip contamination needs >= 2 classes in the split")
            noise = donors[int(rng.integers(len(donors)))].clip
        elif noise_source == "white_noise":
            noise = AudioClip(
                samples=rng.standard_normal(len(item.clip.samples)) * 0.1,
                sample_rate=item.clip.sample_rate,
            )
        else:
            noise = AudioClip(
                samples=synth_speech_like(len(item.clip.samples), item.clip.sample_rate, rng),
                sample_rate=item.clip.sample_rate,
            )
        mixed = dsp.mix_at_snr(item.clip, noise, snr_db)
        peak = np.max(np.abs(mixed.samples))
        if peak > 1.0:
            mixed = AudioClip(samples=mixed.samples / peak, sample_rate=mixed.sample_rate)
        pcm = (np.clip(mixed.samples, -1, 1) * 32767).astype(np.int16)
        out.append(
            CaptionedClip(
                clip=mixed,
                caption=item.caption,
                class_label=item.class_label,
                family=item.family,
                clip_id=hashlib.sha1(pcm.tobytes() + item.family.encode()).hexdigest()[:16],
            )
        )
    return out


def write_corpus(out_dir: Path, splits: dict[str, list[CaptionedClip]], seed: int) -> Path:
    """WAVs in a content-addressed layout plus a JSON-lines manifest."""
    out_dir = Path(out_dir)
    wav_root = out_dir / "wavs"
    manifest_path = out_dir / "manifest.jsonl"
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for split_name, items in splits.items():
        for item in items:
            rel = Path("wavs") / item.clip_id[:2] / f"{item.clip_id}.wav"
            (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
            dsp.write_wav(out_dir / rel, item.clip)
            records.append(
                {
                    "id": item.clip_id,
                    "path": str(rel),
                    "caption": item.caption,
                    "class": item.class_label,
                    "family": item.family,
                    "split": split_name,
                    "seed": seed,
                }
            )
    with open(manifest_path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


def load_corpus(manifest_path: str | Path, sample_rate: int | None = None) -> dict[str, list[CaptionedClip]]:
    """Rebuild splits from a manifest written by `write_corpus`."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    splits: dict[str, list[CaptionedClip]] = {}
    with open(manifest_path) as f:
        for line in f:
            rec = json.loads(line)
            clip = dsp.read_wav(root / rec["path"], expected_rate=sample_rate)
            splits.setdefault(rec["split"], []).append(
                CaptionedClip(
                    clip=clip,
                    caption=rec["caption"],
                    class_label=rec["class"],
                    family=rec["family"],
                    clip_id=rec["id"],
                )
            )
    return splits
