"""Prompt construction and zero-shot classification over the joint space.

A class label becomes the prompt "this is the sound of <label>"; the clip
is assigned to the prompt whose text embedding is most similar to the audio
embedding. Class probabilities are the plain softmax of the similarity
scores (no temperature by default, matching the decision rule).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contrastive import ClapModel, Embedding, encode_audio, encode_text
from .dsp import Spectrogram
from .errors import InvalidInputError

PROMPT_PREFIX = "this is the sound of "


@dataclass
class PromptSet:
    labels: list[str]
    prompts: list[str]
    embeddings: list[Embedding]

    def __post_init__(self):
        if not (len(self.labels) == len(self.prompts) == len(self.embeddings)):
            raise InvalidInputError("labels, prompts and embeddings must align")
        if len(self.labels) < 2:
            raise InvalidInputError("a prompt set needs at least 2 classes")
        if len(set(self.prompts)) != len(self.prompts):
            raise InvalidInputError("prompts must be pairwise distinct")

    def matrix(self) -> np.ndarray:
        return np.stack([e.vector for e in self.embeddings])


@dataclass
class ZeroShotResult:
    scores: np.ndarray
    predicted_index: int
    probabilities: np.ndarray
    labels: list[str]

    @property
    def predicted_label(self) -> str:
        return self.labels[self.predicted_index]


def build_prompts(model: ClapModel, labels: list[str]) -> PromptSet:
    """Prefix every label and embed the resulting prompts."""
    if not labels:
        raise InvalidInputError("label list is empty")
    if len(set(labels)) != len(labels):
        raise InvalidInputError("labels must be distinct")
    prompts = [PROMPT_PREFIX + label for label in labels]
    embeddings = [encode_text(model, p) for p in prompts]
    return PromptSet(labels=list(labels), prompts=prompts, embeddings=embeddings)


def class_probabilities(scores: np.ndarray, temperature: float | None = None) -> np.ndarray:
    """Softmax over similarity scores. `temperature` divides scores when set."""
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise InvalidInputError("scores must be a non-empty vector")
    if not np.all(np.isfinite(scores)):
        raise InvalidInputError("scores must be finite")
    if temperature is not None:
        if temperature <= 0:
            raise InvalidInputError("temperature must be positive")
        scores = scores / temperature
    shifted = scores - scores.max()
    e = np.exp(shifted)
    return e / e.sum()


def classify(model: ClapModel, spec: Spectrogram, prompts: PromptSet,
             temperature: float | None = None) -> ZeroShotResult:
    """Zero-shot decision: argmax over prompt-audio similarities."""
    a, _ = encode_audio(model, spec)
    return classify_scores(prompts.matrix() @ a.vector, prompts.labels, temperature)


def classify_scores(scores: np.ndarray, labels: list[str],
                    temperature: float | None = None) -> ZeroShotResult:
    probs = class_probabilities(scores, temperature)
    return ZeroShotResult(
        scores=np.asarray(scores, dtype=np.float64),
        predicted_index=int(np.argmax(scores)),  # lowest index wins ties
        probabilities=probs,
        labels=list(labels),
    )


def read_label_file(path) -> list[str]:
    """Newline-delimited labels; blank lines ignored."""
    with open(path) as f:
        labels = [line.strip() for line in f if line.strip()]
    if not labels:
        raise InvalidInputError(f"{path}: no labels found")
    return labels
