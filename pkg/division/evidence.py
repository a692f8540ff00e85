"""Модуль скалярной передачи свидетельств по графу.

Свидетельство стартует с якорей (h^0 = 1 на якорях), L слоёв суммирования
по соседям с петлёй, нормировка 2*sigmoid(lambda*x/ref)-1 относительно
значений на всём графе, ещё L слоёв и ещё одна нормировка. Сумма итоговых
значений по несопоставленным сущностям - информативность контекста.

Числа на подграфе никогда не превышают значения на всём графе (число
блужданий монотонно по вложенности), поэтому отношения лежат в [0, 1].
"""

import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from kg.graph import KnowledgeGraph

logger = logging.getLogger(__name__)

# Порог, после которого слой масштабируется степенью двойки
SCALE_LIMIT = 2.0 ** 500

EntitySet = Union[np.ndarray, Iterable[int]]


@dataclass(frozen=True)
class EvidenceConfig:
    """Параметры модели свидетельств.

    Attributes:
        depth (int): Глубина L (по умолчанию 2, как у двухслойных GCN)
        lam (float): Крутизна нормировки lambda
    """

    depth: int = 2
    lam: float = 2.0

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"Глубина свидетельств должна быть >= 1: {self.depth}")
        if self.lam <= 0:
            raise ValueError(f"lambda должна быть положительной: {self.lam}")


@dataclass(frozen=True)
class GraphView:
    """Индуцированный подграф как маска поверх смежности всего графа.

    Attributes:
        adjacency (sp.csr_matrix): Симметричная 0/1 смежность всего графа
        mask (np.ndarray): Булева маска сущностей представления
    """

    adjacency: sp.csr_matrix
    mask: np.ndarray

    @classmethod
    def from_kg(cls, kg: KnowledgeGraph, entities: Optional[EntitySet] = None) -> "GraphView":
        adjacency = kg.adjacency_matrix()
        if entities is None:
            mask = np.ones(kg.entity_count, dtype=bool)
        else:
            mask = indicator(entities, kg.entity_count).astype(bool)
        return cls(adjacency, mask)

    @property
    def entity_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    def full(self) -> "GraphView":
        return GraphView(self.adjacency, np.ones_like(self.mask))

    def with_mask(self, mask: np.ndarray) -> "GraphView":
        return GraphView(self.adjacency, mask)

    def without(self, entities: EntitySet) -> "GraphView":
        mask = self.mask.copy()
        mask[indicator(entities, self.entity_count).astype(bool)] = False
        return GraphView(self.adjacency, mask)


@dataclass(frozen=True)
class EvidenceReference:
    """Константы (h^L_e)_G и (h^2L_e)_G всего графа для фиксированных якорей.

    Значения хранятся в масштабированном виде: value * 2**exponent.
    """

    ref_L: np.ndarray
    exp_L: int
    ref_2L: np.ndarray
    exp_2L: int
    config: EvidenceConfig


@dataclass(frozen=True)
class EvidenceState:
    """Полное состояние передачи свидетельств на одном представлении.

    Attributes:
        depth (int): Глубина L
        lam (float): lambda
        h (List[np.ndarray]): Слои h^0..h^2L (второй этап стартует с h_out_L);
            большие слои хранятся масштабированными, как в EvidenceReference
        h_out_L (np.ndarray): Нормированный слой L, значения в [0, 1)
        h_out_2L (np.ndarray): Нормированный слой 2L, значения в [0, 1)
        refs (EvidenceReference): Константы всего графа в масштабированном виде
    """

    depth: int
    lam: float
    h: List[np.ndarray]
    h_out_L: np.ndarray
    h_out_2L: np.ndarray
    refs: EvidenceReference


def indicator(entities: EntitySet, n: int) -> np.ndarray:
    """Вектор-индикатор (float64) множества сущностей."""
    if isinstance(entities, np.ndarray) and entities.dtype == bool:
        return entities.astype(np.float64)
    values = np.zeros(n, dtype=np.float64)
    ids = np.fromiter((int(e) for e in entities), dtype=np.int64)
    values[ids] = 1.0
    return values


def init_evidence(view: GraphView, anchors: EntitySet) -> np.ndarray:
    """Слой 0: единица на якорях представления, ноль на остальных."""
    return indicator(anchors, view.entity_count) * view.mask


def _propagate_scaled(values: np.ndarray, view: GraphView, steps: int) -> Tuple[np.ndarray, int, List[np.ndarray]]:
    mask = view.mask.astype(np.float64)
    h = values * mask
    exponent = 0
    layers = []
    for _ in range(steps):
        h = (view.adjacency @ h + h) * mask
        peak = float(h.max()) if len(h) else 0.0
        if peak > SCALE_LIMIT:
            shift = int(np.frexp(peak)[1])
            h = np.ldexp(h, -shift)
            exponent += shift
        layers.append(h)
    return h, exponent, layers


def propagate(values: np.ndarray, view: GraphView, steps: int) -> np.ndarray:
    """Применяет h^{l+1}_e = sum h^l_{e'} по e' из {e} и соседей e внутри представления.

    При индикаторном входе результат равен числу блужданий длины steps
    от якорей до e по подграфу с петлями.
    """
    if steps < 1:
        raise ValueError(f"Число шагов должно быть >= 1: {steps}")
    h, exponent, _ = _propagate_scaled(values, view, steps)
    return np.ldexp(h, exponent) if exponent else h


def normalize(
    values: np.ndarray,
    reference: np.ndarray,
    lam: float,
    exponent_gap: int = 0,
) -> np.ndarray:
    """2 * sigmoid(lam * values / reference) - 1; ноль там, где reference = 0.

    Args:
        values (np.ndarray): Значения на подграфе
        reference (np.ndarray): Значения на всём графе
        lam (float): lambda
        exponent_gap (int): Разность степеней двойки масштабов values и reference

    Returns:
        np.ndarray: Значения в [0, 1)
    """
    out = np.zeros(len(values), dtype=np.float64)
    positive = reference > 0
    ratio = values[positive] / reference[positive]
    if exponent_gap:
        ratio = np.ldexp(ratio, exponent_gap)
    # 2*sigmoid(x)-1 == tanh(x/2)
    out[positive] = np.tanh(0.5 * lam * ratio)
    return out


def reference_evidence(
    kg_or_view: Union[KnowledgeGraph, GraphView],
    anchors: EntitySet,
    config: EvidenceConfig = EvidenceConfig(),
) -> EvidenceReference:
    """Вычисляет константы всего графа для данного множества якорей.

    Считается один раз на подзадачу и переиспользуется при всех удалениях.
    """
    view = GraphView.from_kg(kg_or_view) if isinstance(kg_or_view, KnowledgeGraph) else kg_or_view.full()
    h0 = init_evidence(view, anchors)
    ref_L, exp_L, _ = _propagate_scaled(h0, view, config.depth)
    out_L = normalize(ref_L, ref_L, config.lam)
    ref_2L, exp_2L, _ = _propagate_scaled(out_L, view, config.depth)
    return EvidenceReference(ref_L, exp_L, ref_2L, exp_2L, config)


def evidence_state(view: GraphView, anchors: EntitySet, refs: EvidenceReference) -> EvidenceState:
    """Прогоняет оба этапа передачи свидетельств на представлении."""
    config = refs.config
    h0 = init_evidence(view, anchors)
    h_L, exp_L, first = _propagate_scaled(h0, view, config.depth)
    out_L = normalize(h_L, refs.ref_L, config.lam, exp_L - refs.exp_L)
    h_2L, exp_2L, second = _propagate_scaled(out_L, view, config.depth)
    out_2L = normalize(h_2L, refs.ref_2L, config.lam, exp_2L - refs.exp_2L)
    return EvidenceState(
        depth=config.depth,
        lam=config.lam,
        h=[h0] + first + second,
        h_out_L=out_L,
        h_out_2L=out_2L,
        refs=refs,
    )


def informativeness(
    view: GraphView,
    anchors: EntitySet,
    unmatched: EntitySet,
    refs: EvidenceReference,
) -> float:
    """Сумма итоговых свидетельств по несопоставленным сущностям представления.

    Returns:
        float: Значение в [0, |unmatched|); 0, если в представлении нет якорей
    """
    n = view.entity_count
    anchor_mask = (indicator(anchors, n) > 0) & view.mask
    if not anchor_mask.any():
        return 0.0
    state = evidence_state(view, anchor_mask, refs)
    weights = indicator(unmatched, n) * view.mask
    return float(np.dot(state.h_out_2L, weights))


def drop_cost_exact(
    view: GraphView,
    anchors: EntitySet,
    unmatched: EntitySet,
    entity: int,
    refs: EvidenceReference,
) -> float:
    """Потеря информативности от удаления одной сущности (константы не меняются).

    Raises:
        ValueError: Сущность несопоставленная (такие не удаляются)
    """
    unmatched_set = set(int(e) for e in unmatched)
    if entity in unmatched_set:
        raise ValueError(f"Несопоставленную сущность {entity} нельзя удалить из контекста")
    before = informativeness(view, anchors, unmatched_set, refs)
    after = informativeness(view.without([entity]), anchors, unmatched_set, refs)
    return max(0.0, before - after)


def walk_layers(view: GraphView, start: EntitySet, steps: int) -> List[np.ndarray]:
    """Слои числа блужданий 0..steps от множества start по подграфу с петлями."""
    layers = [indicator(start, view.entity_count) * view.mask]
    mask = view.mask.astype(np.float64)
    for _ in range(steps):
        h = layers[-1]
        layers.append((view.adjacency @ h + h) * mask)
    return layers


def drop_cost_proxy(
    view: GraphView,
    anchors: EntitySet,
    unmatched: EntitySet,
    depth: int,
) -> np.ndarray:
    """Быстрая оценка стоимости удаления для всех сущностей сразу.

    score(e) = sum_l f_l(e) * b_{depth-l}(e), где f - блуждания от якорей,
    b - блуждания от несопоставленных. Это число посещений e блужданиями
    длины depth из якорей в несопоставленные; ноль означает, что удаление e
    не убирает ни одного такого блуждания.

    Args:
        depth (int): Длина блужданий (обычно 2L)

    Returns:
        np.ndarray: Оценки для всех сущностей графа (вне представления - 0)
    """
    forward = walk_layers(view, anchors, depth)
    backward = walk_layers(view, unmatched, depth)
    score = np.zeros(view.entity_count, dtype=np.float64)
    for step in range(depth + 1):
        score += forward[step] * backward[depth - step]
    return score
