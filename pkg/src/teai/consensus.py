"""Verdict fusion: rating selection, agreement metric, motivation similarity.

Three judge models each return a 1-5 rating plus a free-text motivation per
task. This module selects the single task-exposure rating (mode, falling
back to the minimum when all ratings differ), quantifies rater agreement
with a dispersion-based consensus statistic over the ordinal scale, and
quantifies motivation agreement as the mean cosine similarity between each
motivation embedding and their centroid.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .errors import SimilarityUndefinedError, TransportError
from .onet import SocCode, TaskRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RatingScale:
    """Ordinal rating scale; ``width`` is the dispersion normalizer.

    The default width is max - min (4 on the 1-5 scale), which is what
    makes a two-same-one-adjacent triple like (4,4,3) score 0.8286.
    ``width_override`` exists for sensitivity analysis only.
    """

    minimum: int = 1
    maximum: int = 5
    width_override: int | None = None

    def __post_init__(self) -> None:
        if self.maximum <= self.minimum:
            raise ValueError("rating scale must have positive width")
        if self.width_override is not None and self.width_override <= 0:
            raise ValueError("scale width override must be positive")

    @property
    def width(self) -> int:
        return self.width_override if self.width_override is not None else self.maximum - self.minimum

    def check(self, rating: int) -> None:
        if not self.minimum <= rating <= self.maximum:
            raise ValueError(f"rating {rating} outside scale [{self.minimum}, {self.maximum}]")


DEFAULT_SCALE = RatingScale()


def select_rating(ratings: Sequence[int], scale: RatingScale = DEFAULT_SCALE) -> int:
    """Pick the single task rating: the mode, or the minimum when all differ.

    The minimum fallback is the conservative choice; it also covers the
    two-rater case with distinct values.
    """
    if len(ratings) < 2:
        raise ValueError("need at least two ratings")
    for rating in ratings:
        scale.check(rating)
    counts = Counter(ratings)
    top = max(counts.values())
    if top == 1:
        return min(ratings)
    return min(value for value, count in counts.items() if count == top)


def consensus_metric(ratings: Sequence[int], scale: RatingScale = DEFAULT_SCALE) -> float:
    """Dispersion-based agreement over ordinal ratings; 1 means unanimous.

    Computes 1 + sum_k p_k * log2(1 - |v_k - mu| / d) over the distinct
    rating values, where p_k are relative frequencies, mu their p-weighted
    mean, and d the scale width. The result lands in [0, 1] by the
    mathematics alone; no clamping is applied.
    """
    k = len(ratings)
    if k < 2:
        raise ValueError("need at least two ratings")
    for rating in ratings:
        scale.check(rating)
    counts = Counter(ratings)
    mu = sum(value * count for value, count in counts.items()) / k
    total = 0.0
    for value, count in counts.items():
        spread = abs(value - mu) / scale.width
        if spread >= 1.0:
            raise RuntimeError(f"rating dispersion {spread:.3f} reached the scale width; invalid scale")
        total += (count / k) * math.log2(1.0 - spread)
    return 1.0 + total


def normalize_embedding(values: Sequence[float]) -> np.ndarray:
    vector = np.asarray(values, dtype=float)
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero embedding vector")
    return vector / norm


def centroid_similarity(embeddings: Sequence[np.ndarray]) -> float:
    """Mean cosine similarity between each embedding and their centroid.

    Inputs are (re)normalized so the statistic is invariant to per-vector
    scaling. Exactly opposed vectors cancel the centroid, which leaves the
    statistic undefined.
    """
    if len(embeddings) < 2:
        raise ValueError("need at least two embeddings")
    unit = np.vstack([normalize_embedding(v) for v in embeddings])
    centroid = unit.mean(axis=0)
    norm = float(np.linalg.norm(centroid))
    if norm < 1e-12:
        raise SimilarityUndefinedError("embeddings cancel out; centroid similarity undefined")
    return float(np.mean(unit @ (centroid / norm)))


def pairwise_similarity(embeddings: Sequence[np.ndarray]) -> float:
    """Mean pairwise cosine similarity (sensitivity-analysis variant)."""
    if len(embeddings) < 2:
        raise ValueError("need at least two embeddings")
    unit = np.vstack([normalize_embedding(v) for v in embeddings])
    gram = unit @ unit.T
    index = np.triu_indices(len(embeddings), k=1)
    return float(gram[index].mean())


SIMILARITY_VARIANTS = {
    "centroid": centroid_similarity,
    "pairwise": pairwise_similarity,
}


class EmbeddingEndpoint(Protocol):
    """Anything that maps a text to a raw embedding vector."""

    model_id: str

    def fetch(self, text: str) -> Sequence[float]: ...


class Embedder:
    """L2-normalizing embedding client with an optional on-disk cache.

    Cache entries are keyed by (embedding model id, text hash) so re-runs
    and repeated motivations never hit the endpoint twice.
    """

    def __init__(self, endpoint: EmbeddingEndpoint, cache_dir: Path | None = None):
        self.endpoint = endpoint
        self.cache_dir = Path(cache_dir) / "embeddings" if cache_dir else None
        self._write_lock = threading.Lock()
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)

    @property
    def model_id(self) -> str:
        return self.endpoint.model_id

    def _cache_path(self, text: str) -> Path | None:
        if self.cache_dir is None:
            return None
        digest = hashlib.sha256(f"{self.endpoint.model_id}\x00{text}".encode()).hexdigest()
        return self.cache_dir / digest[:2] / f"{digest}.json"

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        path = self._cache_path(text)
        if path is not None and path.exists():
            return np.asarray(json.loads(path.read_text(encoding="utf-8"))["vector"], dtype=float)
        vector = normalize_embedding(self.endpoint.fetch(text))
        if path is not None:
            with self._write_lock:
                path.parent.mkdir(parents=True, exist_ok=True)
                tmp = path.with_suffix(".tmp")
                tmp.write_text(json.dumps({"vector": vector.tolist()}), encoding="utf-8")
                tmp.replace(path)
        return vector


@dataclass
class TaskAssessment:
    """Fused ensemble result for one task, with the raw verdicts for audit."""

    soc: SocCode
    task_id: int
    te: int
    consensus: float
    verdicts: list  # ModelVerdict | None, in config order
    similarity: float | None = None
    similarity_note: str | None = None
    template_version: str = ""
    embedding_model_id: str | None = None


def fuse(
    task: TaskRecord,
    verdicts: Sequence,
    embedder: Embedder | None = None,
    scale: RatingScale = DEFAULT_SCALE,
    similarity_variant: str = "centroid",
    template_version: str = "",
) -> TaskAssessment:
    """Fuse per-model verdicts into a TaskAssessment.

    Requires at least two usable verdicts (the gateway excludes tasks below
    that). Similarity is computed when an embedder is supplied; embedding
    failures degrade to a missing similarity instead of failing the task.
    """
    usable = [v for v in verdicts if v is not None]
    if len(usable) < 2:
        raise ValueError(f"task {task.task_id}: need at least two usable verdicts, have {len(usable)}")
    ratings = [v.rating for v in usable]
    assessment = TaskAssessment(
        soc=task.soc,
        task_id=task.task_id,
        te=select_rating(ratings, scale),
        consensus=consensus_metric(ratings, scale),
        verdicts=list(verdicts),
        template_version=template_version,
    )
    if embedder is None:
        return assessment
    assessment.embedding_model_id = embedder.model_id
    similarity_fn = SIMILARITY_VARIANTS.get(similarity_variant)
    if similarity_fn is None:
        raise ValueError(f"unknown similarity variant {similarity_variant!r}")
    try:
        vectors = [embedder.embed(v.motivation) for v in usable]
        assessment.similarity = similarity_fn(vectors)
    except (TransportError, SimilarityUndefinedError) as exc:
        assessment.similarity_note = str(exc)
        logger.warning("task %d: similarity unavailable (%s)", task.task_id, exc)
    return assessment
