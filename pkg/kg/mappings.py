"""Модуль для работы с сопоставлениями сущностей (seed / pseudo / predicted).

Содержит MappingSet с индексами по источнику и цели, загрузку файлов
ent_links_* и вычисление якорных и несопоставленных множеств.
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple

import numpy as np

from kg.graph import KnowledgeGraph, read_tsv
from utils.exceptions import MappingError
from utils.states import Provenance, Side

logger = logging.getLogger(__name__)

TRAIN_LINKS = "ent_links_train"
TEST_LINKS = "ent_links_test"
ALL_LINKS = "ent_links"


@dataclass(frozen=True)
class Mapping:
    """Пара (source, target) с происхождением."""

    source: int
    target: int
    provenance: Provenance = Provenance.SEED


@dataclass(frozen=True)
class MappingSet:
    """Неизменяемое множество сопоставлений.

    Для seed и pseudo (и их объединения) соблюдается один-к-одному;
    для predicted не более одной пары на источник.

    Attributes:
        pairs (Tuple[Mapping, ...]): Пары в порядке добавления
        source_index (Dict[int, Mapping]): id источника -> пара
        target_index (Dict[int, Mapping]): id цели -> пара (seed/pseudo)
    """

    pairs: Tuple[Mapping, ...] = ()
    source_index: Dict[int, Mapping] = field(default_factory=dict, repr=False)
    target_index: Dict[int, Mapping] = field(default_factory=dict, repr=False)

    @classmethod
    def from_pairs(
        cls,
        pairs: Iterable[Tuple[int, int]],
        provenance: Provenance = Provenance.SEED,
    ) -> "MappingSet":
        """Создаёт множество из пар id с единым происхождением.

        Raises:
            MappingError: Нарушение один-к-одному
        """
        return cls.from_mappings(Mapping(int(s), int(t), provenance) for s, t in pairs)

    @classmethod
    def from_mappings(cls, mappings: Iterable[Mapping]) -> "MappingSet":
        source_index: Dict[int, Mapping] = {}
        target_index: Dict[int, Mapping] = {}
        kept: List[Mapping] = []
        for m in mappings:
            if m.source in source_index:
                if source_index[m.source] == m:
                    continue
                raise MappingError(f"Источник {m.source} сопоставлен более одного раза")
            if m.provenance != Provenance.PREDICTED:
                if m.target in target_index:
                    raise MappingError(f"Цель {m.target} сопоставлена более одного раза")
                target_index[m.target] = m
            source_index[m.source] = m
            kept.append(m)
        return cls(tuple(kept), source_index, target_index)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Mapping]:
        return iter(self.pairs)

    def __contains__(self, pair: Tuple[int, int]) -> bool:
        m = self.source_index.get(pair[0])
        return m is not None and m.target == pair[1]

    def sources(self) -> FrozenSet[int]:
        return frozenset(self.source_index)

    def targets(self) -> FrozenSet[int]:
        return frozenset(m.target for m in self.pairs)

    def anchors(self, side: Side) -> FrozenSet[int]:
        return self.sources() if Side(side) == Side.SOURCE else self.targets()

    def target_of(self, source: int) -> Optional[int]:
        m = self.source_index.get(source)
        return m.target if m is not None else None

    def as_tuples(self) -> List[Tuple[int, int]]:
        return [(m.source, m.target) for m in self.pairs]

    def with_provenance(self, provenance: Provenance) -> "MappingSet":
        """Подмножество пар заданного происхождения."""
        return MappingSet.from_mappings(m for m in self.pairs if m.provenance == provenance)

    def restrict_sources(self, sources: Iterable[int]) -> "MappingSet":
        """Пары, чей источник входит в заданное множество."""
        allowed = sources if isinstance(sources, (set, frozenset)) else set(sources)
        return MappingSet.from_mappings(m for m in self.pairs if m.source in allowed)

    def union(self, other: "MappingSet") -> "MappingSet":
        """Объединение с проверкой один-к-одному.

        Raises:
            MappingError: Пары двух множеств конфликтуют
        """
        return MappingSet.from_mappings(list(self.pairs) + list(other.pairs))


def load_mappings(
    path: str,
    kg_s: KnowledgeGraph,
    kg_t: KnowledgeGraph,
    provenance: Provenance = Provenance.SEED,
) -> MappingSet:
    """Загружает файл сопоставлений source<TAB>target.

    Сущности, которых нет в триплетах своего графа, отвергаются:
    до них не дойдёт ни одно свидетельство.

    Args:
        path (str): Путь к файлу
        kg_s (KnowledgeGraph): Исходный граф
        kg_t (KnowledgeGraph): Целевой граф
        provenance (Provenance): Происхождение всех пар файла

    Returns:
        MappingSet: Загруженные пары

    Raises:
        KGParseError: Неверный формат файла
        MappingError: Неизвестная сущность или нарушение один-к-одному
    """
    pairs: List[Tuple[int, int]] = []
    for source_label, target_label in read_tsv(path, fields=2):
        source = kg_s.entity_id(source_label)
        if source is None:
            raise MappingError(f"{path}: неизвестная сущность исходного графа '{source_label}'")
        target = kg_t.entity_id(target_label)
        if target is None:
            raise MappingError(f"{path}: неизвестная сущность целевого графа '{target_label}'")
        pairs.append((source, target))

    mappings = MappingSet.from_pairs(pairs, provenance)
    logger.info(f"Загружено сопоставлений ({Provenance(provenance).value}): {len(mappings)} из {path}")
    return mappings


def split_mappings(
    mappings: MappingSet,
    train_ratio: float,
    rng_seed: int,
) -> Tuple[MappingSet, MappingSet]:
    """Случайно делит ссылки на обучающие (seed) и тестовые.

    Returns:
        Tuple[MappingSet, MappingSet]: (seed, test); размер seed = floor(ratio * n)
    """
    order = np.random.default_rng(rng_seed).permutation(len(mappings))
    cut = int(np.floor(train_ratio * len(mappings)))
    pairs = mappings.as_tuples()
    train = [pairs[i] for i in sorted(order[:cut].tolist())]
    test = [pairs[i] for i in sorted(order[cut:].tolist())]
    return MappingSet.from_pairs(train, Provenance.SEED), MappingSet.from_pairs(test, Provenance.SEED)


def load_links(
    data_dir: str,
    kg_s: KnowledgeGraph,
    kg_t: KnowledgeGraph,
    train_ratio: float = 0.2,
    rng_seed: int = 0,
) -> Tuple[MappingSet, MappingSet]:
    """Загружает обучающие и тестовые ссылки каталога данных.

    Если готового разбиения нет, но есть ent_links, он делится случайно.

    Returns:
        Tuple[MappingSet, MappingSet]: (seed, test); test может быть пустым
    """
    train_path = os.path.join(data_dir, TRAIN_LINKS)
    test_path = os.path.join(data_dir, TEST_LINKS)
    if os.path.exists(train_path):
        seeds = load_mappings(train_path, kg_s, kg_t, Provenance.SEED)
        test = load_mappings(test_path, kg_s, kg_t, Provenance.SEED) if os.path.exists(test_path) else MappingSet()
        return seeds, test

    all_path = os.path.join(data_dir, ALL_LINKS)
    links = load_mappings(all_path, kg_s, kg_t, Provenance.SEED)
    seeds, test = split_mappings(links, train_ratio, rng_seed)
    logger.info(f"Ссылки разделены случайно: {len(seeds)} обучающих, {len(test)} тестовых")
    return seeds, test


def unmatched_entities(kg: KnowledgeGraph, mappings: MappingSet, side: Side) -> FrozenSet[int]:
    """Сущности стороны side без известного сопоставления (E \\ anchors)."""
    anchors = mappings.anchors(side)
    return frozenset(e for e in range(kg.entity_count) if e not in anchors)


def write_mappings(path: str, mappings: MappingSet, kg_s: KnowledgeGraph, kg_t: KnowledgeGraph) -> None:
    """Записывает пары в исходных строках (source<TAB>target)."""
    with open(path, "w", encoding="utf-8") as f:
        for m in sorted(mappings, key=lambda m: m.source):
            f.write(f"{kg_s.entity_labels[m.source]}\t{kg_t.entity_labels[m.target]}\n")
