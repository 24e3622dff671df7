"""Occupation-level exposure aggregation and the per-class skill index.

Task ratings are averaged into a per-occupation score using the three
O*NET weights, each rescaled by its scale maximum (relevance/100,
importance/5, frequency/7); the raw scores are then min-max normalized
and percentile-ranked across the corpus. The same weighted-mean shape
computes a per-class skill relevance index from skill level and importance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, TypeVar

from scipy.stats import rankdata

from .errors import DataValidationError
from .onet import SkillRecord, SocCode

logger = logging.getLogger(__name__)

K = TypeVar("K")

SKILL_VALUE_SOURCES = ("level", "importance", "unit")


@dataclass(frozen=True)
class OccupationScore:
    soc: SocCode
    title: str
    teai_raw: float
    teai_norm: float
    percentile: float
    n_tasks: int
    n_imputed: int


@dataclass(frozen=True)
class SkillRelevance:
    soc: SocCode
    skill_class: str
    sr: float
    n_skills: int


def weighted_mean(pairs: Iterable[tuple[float, float]]) -> float:
    """Plain ratio of value-times-weight sums over the weight sum."""
    numerator = 0.0
    denominator = 0.0
    for value, weight in pairs:
        numerator += value * weight
        denominator += weight
    if denominator == 0.0:
        raise DataValidationError("all weights are zero")
    return numerator / denominator


def compute_teai(tasks: Iterable[tuple[float, float, float, float]]) -> float:
    """Weighted mean of task ratings for one occupation.

    ``tasks`` yields (te, relevance, importance, frequency). Each weight is
    rescaled by its scale maximum before the product; tasks whose weight
    product is zero (zero relevance) are dropped with a warning. Raises
    when nothing scorable remains.
    """
    pairs = []
    dropped = 0
    for te, relevance, importance, frequency in tasks:
        weight = (relevance / 100.0) * (importance / 5.0) * (frequency / 7.0)
        if weight <= 0.0:
            dropped += 1
            continue
        pairs.append((te, weight))
    if dropped:
        logger.warning("dropped %d task(s) with zero weight product", dropped)
    if not pairs:
        raise DataValidationError("no tasks with positive weight; occupation cannot be scored")
    return weighted_mean(pairs)


def normalize_scores(scores: Mapping[K, float]) -> dict[K, tuple[float, float]]:
    """Min-max normalization plus percentile rank for each raw score.

    Percentiles use the mean rank of ties scaled to [0, 100] (rank/n*100),
    so the corpus maximum always lands at 100. When every raw score is
    identical the normalized value is undefined; 0.5 is emitted for all
    occupations with a corpus-degeneracy warning.
    """
    if len(scores) < 2:
        raise DataValidationError("normalization needs at least two occupations")
    keys = list(scores.keys())
    values = [scores[k] for k in keys]
    low, high = min(values), max(values)
    if high == low:
        logger.warning("degenerate corpus: all %d raw scores equal %g; emitting 0.5", len(values), low)
        norms = [0.5] * len(values)
    else:
        norms = [(v - low) / (high - low) for v in values]
    ranks = rankdata(values, method="average")
    n = len(values)
    return {k: (norm, float(rank) / n * 100.0) for k, norm, rank in zip(keys, norms, ranks)}


def compute_skill_relevance(
    skills: Sequence[tuple[float, float]],
    value_source: str = "level",
) -> float:
    """Weighted skill index for one (occupation, class) cell.

    ``skills`` yields (level, importance) pairs. Weights are level/7 times
    importance/5; the value S being averaged depends on ``value_source``:
    the rescaled level (default), the rescaled importance, or 1 (pure
    weight shares).
    """
    if value_source not in SKILL_VALUE_SOURCES:
        raise ValueError(f"unknown value_source {value_source!r} (expected one of {SKILL_VALUE_SOURCES})")
    if not skills:
        raise DataValidationError("empty skill class")
    pairs = []
    for level, importance in skills:
        weight = (level / 7.0) * (importance / 5.0)
        if value_source == "level":
            value = level / 7.0
        elif value_source == "importance":
            value = importance / 5.0
        else:
            value = 1.0
        pairs.append((value, weight))
    try:
        return weighted_mean(pairs)
    except DataValidationError:
        raise DataValidationError("all skills in the class have zero weight") from None


def skill_relevance_table(
    records: Sequence[SkillRecord],
    value_source: str = "level",
) -> list[SkillRelevance]:
    """Per-(occupation, class) skill relevance rows, sorted for stable output.

    Classes with no skills for an occupation are simply absent (reported
    at debug level); zero-weight classes are skipped with a warning.
    """
    cells: dict[tuple[SocCode, str], list[tuple[float, float]]] = {}
    for record in records:
        cells.setdefault((record.soc, record.skill_class), []).append((record.level, record.importance))
    rows: list[SkillRelevance] = []
    for (soc, skill_class), pairs in sorted(cells.items()):
        try:
            sr = compute_skill_relevance(pairs, value_source)
        except DataValidationError as exc:
            logger.warning("skill relevance missing for %s/%s: %s", soc, skill_class, exc)
            continue
        rows.append(SkillRelevance(soc=soc, skill_class=skill_class, sr=sr, n_skills=len(pairs)))
    return rows
