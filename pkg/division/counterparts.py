"""Модуль поиска кандидатов-двойников для группы несопоставленных сущностей.

Вес цели складывается из локальности (минус число шагов до ближайшего
целевого якоря группы) и нормированного сходства, накопленного
сопоставителем на прошлой итерации. В первой итерации используется только
локальность.
"""

import heapq
import logging
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, Mapping, Optional, Tuple

import numpy as np

from division.partition import Partition
from kg.graph import KnowledgeGraph
from kg.mappings import MappingSet
from matchers.similarity import SimilarityMatrix, mutual_nearest
from utils.exceptions import ConfigurationError, NoLocalEvidence
from utils.states import Provenance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CandidateScore:
    """Вес целевой сущности как кандидата.

    Attributes:
        target (int): id цели
        w_loc (int): Минус расстояние до якорей (0 у якоря, -(radius+1) у недостижимых)
        w_sim (float): Нормированное сходство или 0, если цель ещё не оценивалась
        w_combined (float): w_loc + beta * w_sim
    """

    target: int
    w_loc: int
    w_sim: float
    w_combined: float


class SimilarityStore:
    """Последние значения w_sim по целям группы (перезапись по итерациям)."""

    def __init__(self):
        self._values: Dict[int, Tuple[float, int]] = {}

    def __len__(self) -> int:
        return len(self._values)

    def is_empty(self) -> bool:
        return not self._values

    def update(self, values: Mapping[int, float], iteration: int) -> None:
        for target, value in values.items():
            self._values[int(target)] = (float(value), iteration)

    def get(self, target: int) -> float:
        entry = self._values.get(target)
        return entry[0] if entry is not None else 0.0

    def written_at(self, target: int) -> Optional[int]:
        entry = self._values.get(target)
        return entry[1] if entry is not None else None

    def as_array(self, n: int) -> np.ndarray:
        """Плотный вектор w_sim длины n (неоценённые - 0)."""
        values = np.zeros(n, dtype=np.float64)
        for target, (value, _) in self._values.items():
            values[target] = value
        return values


def group_seed_mappings(group_partition: Partition, mappings: MappingSet) -> MappingSet:
    """Пары, источник которых лежит в части."""
    return mappings.restrict_sources(group_partition.entities)


def hop_distances(kg: KnowledgeGraph, sources: Iterable[int], radius: int) -> np.ndarray:
    """Расстояния многоисточникового BFS; -1 для недостигнутых в пределах radius."""
    n = kg.entity_count
    distances = np.full(n, -1, dtype=np.int64)
    frontier = np.zeros(n, dtype=bool)
    frontier[np.fromiter((int(s) for s in sources), dtype=np.int64)] = True
    distances[frontier] = 0
    adjacency = kg.adjacency_matrix()
    for step in range(1, radius + 1):
        reached = (adjacency @ frontier.astype(np.float64)) > 0
        frontier = reached & (distances < 0)
        if not frontier.any():
            break
        distances[frontier] = step
    return distances


def locality_weights(kg_t: KnowledgeGraph, target_anchors: Iterable[int], radius: int) -> Dict[int, int]:
    """Веса локальности: -dist до ближайшего якоря; дальше radius - нет в словаре.

    Raises:
        NoLocalEvidence: Пустое множество якорей
        ConfigurationError: radius < 1
    """
    anchors = frozenset(target_anchors)
    if not anchors:
        raise NoLocalEvidence("Нет целевых якорей для вычисления весов локальности")
    if radius < 1:
        raise ConfigurationError(f"Радиус BFS должен быть >= 1: {radius}")
    distances = hop_distances(kg_t, anchors, radius)
    reached = np.flatnonzero(distances >= 0)
    return {int(e): -int(distances[e]) for e in reached}


def accumulate_similarity(
    sim: SimilarityMatrix,
    group_sources: Iterable[int],
    candidate_pool: Optional[Iterable[int]],
    top_k: int,
) -> Dict[int, float]:
    """W'(t): сумма top_k наибольших sim(s, t) по источникам группы.

    Цели без оценок в результат не попадают.
    """
    pool = None if candidate_pool is None else frozenset(candidate_pool)
    columns: Dict[int, list] = {}
    for s in group_sources:
        for t, value in sim.row(s):
            if pool is not None and t not in pool:
                continue
            columns.setdefault(t, []).append(value)
    return {t: float(sum(heapq.nlargest(top_k, values))) for t, values in columns.items()}


def normalize_similarity(
    raw: Mapping[int, float],
    alpha: float,
    pool: Optional[Iterable[int]] = None,
    store: Optional[SimilarityStore] = None,
    iteration: int = 0,
) -> Dict[int, float]:
    """Min-max нормировка W' по оценённым целям пула минус alpha.

    Неоценённые цели пула получают 0. Оценённые значения записываются в store.
    При max = min нормированное значение считается нулём.
    """
    members = frozenset(raw) if pool is None else frozenset(pool)
    scored = {t: v for t, v in raw.items() if t in members}
    result = {t: 0.0 for t in members}
    if scored:
        low, high = min(scored.values()), max(scored.values())
        span = high - low
        for t, value in scored.items():
            scaled = (value - low) / span if span > 0 else 0.0
            result[t] = scaled - alpha
        if store is not None:
            store.update({t: result[t] for t in scored}, iteration)
    return result


def score_targets(
    kg_t: KnowledgeGraph,
    target_anchors: Iterable[int],
    radius: int,
    beta: float,
    store: Optional[SimilarityStore] = None,
    exclude: Iterable[int] = (),
) -> Dict[int, CandidateScore]:
    """Считает CandidateScore для всех целей вне exclude.

    Без store (первая итерация или режим только локальности) итоговый вес равен w_loc.

    Raises:
        NoLocalEvidence: Пустое множество якорей
    """
    local = locality_weights(kg_t, target_anchors, radius)
    excluded = frozenset(exclude)
    unreachable = -(radius + 1)
    use_sim = store is not None and not store.is_empty()
    scores: Dict[int, CandidateScore] = {}
    for t in range(kg_t.entity_count):
        if t in excluded:
            continue
        w_loc = local.get(t, unreachable)
        w_sim = store.get(t) if use_sim else 0.0
        combined = w_loc + beta * w_sim if use_sim else float(w_loc)
        scores[t] = CandidateScore(t, w_loc, w_sim, combined)
    return scores


def select_candidates(
    group: Iterable[int],
    kg_t: KnowledgeGraph,
    weights: Mapping[int, CandidateScore],
    quota: int,
    exclude: Iterable[int] = (),
) -> FrozenSet[int]:
    """Выбирает quota целей с наибольшим итоговым весом; равные - по возрастанию id.

    Raises:
        ConfigurationError: quota < 1
    """
    if quota < 1:
        raise ConfigurationError(f"Квота кандидатов должна быть >= 1: {quota}")
    excluded = frozenset(exclude)
    ids = np.array(sorted(t for t in weights if t not in excluded), dtype=np.int64)
    if len(ids) < quota:
        logger.warning(
            f"Доступно целей меньше квоты: {len(ids)} < {quota} "
            f"(группа из {len(frozenset(group))} сущностей), берутся все"
        )
    if len(ids) == 0:
        return frozenset()
    combined = np.array([weights[t].w_combined for t in ids.tolist()], dtype=np.float64)
    order = np.lexsort((ids, -combined))
    return frozenset(ids[order[:quota]].tolist())


def generate_pseudo_mappings(
    sim: SimilarityMatrix,
    sources: Iterable[int],
    candidates: Iterable[int],
    min_score: float = 0.0,
) -> MappingSet:
    """Взаимно ближайшие пары строк sources и столбцов candidates (provenance = pseudo).

    Пары с оценкой ниже min_score отбрасываются.
    """
    pairs = mutual_nearest(sim, sources, candidates, min_score)
    return MappingSet.from_pairs(((s, t) for s, t, _ in pairs), Provenance.PSEUDO)
