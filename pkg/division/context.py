"""Модуль построения контекстных графов подзадачи.

Исходный контекст: из всего исходного графа раундами удаляются сущности
с наименьшей оценкой стоимости удаления, пока не будет выполнен бюджет;
несопоставленные сущности группы не удаляются никогда.

Целевой контекст: кандидаты и целевые якоря фиксированы, остальные сущности
целевого графа считаются связующими и отбираются теми же раундами.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional

import numpy as np

from division.evidence import EvidenceConfig, GraphView, drop_cost_proxy, indicator
from kg.graph import KnowledgeGraph
from kg.mappings import Mapping, MappingSet
from utils.exceptions import ConfigurationError, SubtaskSizeError
from utils.states import Provenance, Side

logger = logging.getLogger(__name__)

# Доля текущего превышения бюджета, удаляемая за один раунд
BATCH_FRACTION = 0.10


@dataclass(frozen=True)
class ContextGraph:
    """Контекстный граф одной стороны подзадачи.

    Attributes:
        side (Side): Сторона
        entities (FrozenSet[int]): unmatched | anchors | связующие
        anchors (FrozenSet[int]): Якоря контекста
        unmatched (FrozenSet[int]): Несопоставленные (источник) или кандидаты (цель)
        induced_triples (np.ndarray): Триплеты графа с обоими концами внутри entities
    """

    side: Side
    entities: FrozenSet[int]
    anchors: FrozenSet[int]
    unmatched: FrozenSet[int]
    induced_triples: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.entities)

    @property
    def connecting(self) -> FrozenSet[int]:
        return self.entities - self.anchors - self.unmatched


@dataclass(frozen=True)
class SizeBudget:
    """Ограничение размера подзадачи |E~s| + |E~t| <= S.

    Attributes:
        total (int): S
        delta1 (float): Доля исходного контекста
        delta2 (float): Доля кандидатов в целевом контексте
    """

    total: int
    delta1: float = 0.5
    delta2: float = 0.5

    def __post_init__(self):
        if self.total < 2:
            raise ConfigurationError(f"Размер подзадачи S должен быть >= 2: {self.total}")
        if not 0 < self.delta1 < 1:
            raise ConfigurationError(f"delta1 должна лежать в (0, 1): {self.delta1}")
        if not 0 < self.delta2 <= 1:
            raise ConfigurationError(f"delta2 должна лежать в (0, 1]: {self.delta2}")

    @property
    def source_budget(self) -> int:
        return int(math.floor(self.delta1 * self.total))

    @property
    def target_budget(self) -> int:
        return self.total - self.source_budget

    def target_budget_for(self, source_size: int) -> int:
        """Остаток бюджета после фактического исходного контекста."""
        return self.total - source_size

    def candidate_quota(self, source_size: int) -> int:
        """floor(delta2 * (S - |исходный контекст|))."""
        return int(math.floor(self.delta2 * (self.total - source_size)))


@dataclass(frozen=True)
class Subtask:
    """Подзадача: два контекстных графа и локальные сопоставления.

    Attributes:
        group (int): Номер группы (части разбиения)
        source (ContextGraph): Исходный контекст
        target (ContextGraph): Целевой контекст
        seeds (MappingSet): M~l_i (seed) и pseudo-пары внутри контекстов
        max_size (int): S
    """

    group: int
    source: ContextGraph
    target: ContextGraph
    seeds: MappingSet
    max_size: int

    @property
    def sources(self) -> FrozenSet[int]:
        return self.source.unmatched

    @property
    def candidates(self) -> FrozenSet[int]:
        return self.target.unmatched

    @property
    def size(self) -> int:
        return self.source.size + self.target.size


def select_context(
    kg: KnowledgeGraph,
    protected: Iterable[int],
    anchors: Iterable[int],
    unmatched: Iterable[int],
    budget: int,
    config: EvidenceConfig,
) -> np.ndarray:
    """Раунды удаления сущностей с наименьшей оценкой стоимости.

    Размер раунда: max(1, ceil(10% превышения)); все сущности с нулевой
    оценкой уходят в том же раунде (их удаление не меняет чужих оценок).
    Среди равных оценок раньше удаляются сущности меньшей степени,
    затем с большим id.

    Returns:
        np.ndarray: Булева маска оставшихся сущностей
    """
    n = kg.entity_count
    view = GraphView.from_kg(kg)
    mask = view.mask.copy()
    keep = indicator(protected, n) > 0
    anchor_mask = indicator(anchors, n) > 0
    unmatched_mask = indicator(unmatched, n) > 0
    degrees = kg.degrees
    rounds = 0

    while int(mask.sum()) > budget:
        excess = int(mask.sum()) - budget
        droppable = np.flatnonzero(mask & ~keep)
        if len(droppable) == 0:
            break
        scores = drop_cost_proxy(view.with_mask(mask), anchor_mask & mask, unmatched_mask, 2 * config.depth)
        droppable_scores = scores[droppable]
        zeros = int(np.count_nonzero(droppable_scores == 0))
        batch = min(excess, max(1, math.ceil(BATCH_FRACTION * excess), zeros))
        order = np.lexsort((-droppable, degrees[droppable], droppable_scores))
        mask[droppable[order[:batch]]] = False
        rounds += 1

    logger.debug(f"Отбор контекста: {rounds} раундов, осталось {int(mask.sum())} сущностей")
    return mask


def _context_graph(kg: KnowledgeGraph, side: Side, mask: np.ndarray, anchors, unmatched) -> ContextGraph:
    entities = frozenset(np.flatnonzero(mask).tolist())
    return ContextGraph(
        side=side,
        entities=entities,
        anchors=frozenset(a for a in anchors if a in entities),
        unmatched=frozenset(unmatched),
        induced_triples=kg.induced_triples(entities),
    )


def build_source_context(
    kg_s: KnowledgeGraph,
    group_unmatched: Iterable[int],
    all_source_anchors: Iterable[int],
    budget: int,
    config: EvidenceConfig = EvidenceConfig(),
    group: Optional[int] = None,
) -> ContextGraph:
    """Строит исходный контекст группы в пределах бюджета delta1 * S.

    Raises:
        ConfigurationError: Группа не помещается в бюджет
    """
    unmatched = frozenset(group_unmatched)
    anchors = frozenset(all_source_anchors)
    if len(unmatched) > budget:
        raise ConfigurationError(
            f"Группа {group}: {len(unmatched)} несопоставленных сущностей не помещаются "
            f"в бюджет исходного контекста {budget}; увеличьте S, delta1 или N"
        )
    mask = select_context(kg_s, unmatched, anchors, unmatched, budget, config)
    context = _context_graph(kg_s, Side.SOURCE, mask, anchors, unmatched)
    logger.debug(
        f"Исходный контекст группы {group}: {context.size} сущностей, "
        f"{len(context.anchors)} якорей, {len(unmatched)} несопоставленных"
    )
    return context


def build_target_context(
    kg_t: KnowledgeGraph,
    candidates: Iterable[int],
    target_anchors: Iterable[int],
    budget: int,
    config: EvidenceConfig = EvidenceConfig(),
) -> ContextGraph:
    """Строит целевой контекст: кандидаты и якоря плюс связующие сущности.

    Raises:
        ConfigurationError: Кандидаты и якоря не помещаются в бюджет
    """
    candidates = frozenset(candidates)
    anchors = frozenset(target_anchors)
    if len(candidates) + len(anchors) > budget:
        raise ConfigurationError(
            f"Кандидаты ({len(candidates)}) и целевые якоря ({len(anchors)}) "
            f"не помещаются в бюджет целевого контекста {budget}"
        )
    mask = select_context(kg_t, candidates | anchors, anchors, candidates, budget, config)
    return _context_graph(kg_t, Side.TARGET, mask, anchors, candidates)


def trim_anchors(
    kg_t: KnowledgeGraph,
    target_anchors: Iterable[int],
    candidates: Iterable[int],
    keep: int,
    config: EvidenceConfig = EvidenceConfig(),
) -> FrozenSet[int]:
    """Оставляет keep целевых якорей с наибольшей оценкой относительно кандидатов."""
    anchors = sorted(set(target_anchors))
    if len(anchors) <= keep:
        return frozenset(anchors)
    if keep <= 0:
        return frozenset()
    view = GraphView.from_kg(kg_t)
    scores = drop_cost_proxy(view, anchors, candidates, 2 * config.depth)
    ids = np.array(anchors, dtype=np.int64)
    order = np.lexsort((ids, -scores[ids]))
    return frozenset(ids[order[:keep]].tolist())


def assemble_subtask(
    group: int,
    source_ctx: ContextGraph,
    target_ctx: ContextGraph,
    mappings: MappingSet,
    max_size: int,
) -> Subtask:
    """Собирает подзадачу и проверяет ограничение размера.

    Seed-пары берутся, если оба конца - якоря контекстов; pseudo-пары -
    если источник среди несопоставленных, а цель среди кандидатов.

    Raises:
        SubtaskSizeError: |E~s| + |E~t| > S
    """
    local: List[Mapping] = []
    for m in mappings:
        if m.provenance == Provenance.SEED:
            if m.source in source_ctx.anchors and m.target in target_ctx.anchors:
                local.append(m)
        elif m.source in source_ctx.unmatched and m.target in target_ctx.unmatched:
            local.append(m)

    size = source_ctx.size + target_ctx.size
    if size > max_size:
        raise SubtaskSizeError(f"Подзадача {group}: размер {size} превышает S = {max_size}")
    return Subtask(
        group=group,
        source=source_ctx,
        target=target_ctx,
        seeds=MappingSet.from_mappings(local),
        max_size=max_size,
    )


def subtask_manifest(subtask: Subtask, kg_s: KnowledgeGraph, kg_t: KnowledgeGraph, iteration: int) -> Dict:
    """Описание подзадачи в исходных строках для аудита и внешних сопоставителей."""

    def labels(kg: KnowledgeGraph, ids: Iterable[int]) -> List[str]:
        return [kg.entity_labels[e] for e in sorted(ids)]

    return {
        "group": subtask.group,
        "iteration": iteration,
        "max_size": subtask.max_size,
        "size": subtask.size,
        "source": {
            "size": subtask.source.size,
            "unmatched": labels(kg_s, subtask.source.unmatched),
            "anchors": labels(kg_s, subtask.source.anchors),
            "connecting": labels(kg_s, subtask.source.connecting),
            "triples": int(len(subtask.source.induced_triples)),
        },
        "target": {
            "size": subtask.target.size,
            "candidates": labels(kg_t, subtask.target.unmatched),
            "anchors": labels(kg_t, subtask.target.anchors),
            "connecting": labels(kg_t, subtask.target.connecting),
            "triples": int(len(subtask.target.induced_triples)),
        },
        "seeds": [
            [kg_s.entity_labels[m.source], kg_t.entity_labels[m.target], m.provenance.value]
            for m in subtask.seeds
        ],
    }
