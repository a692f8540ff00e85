"""Модуль загрузки и индексации графов знаний.

Содержит:
- KnowledgeGraph: интернированные сущности и отношения, список триплетов
  и симметричную смежность в сжатом (CSR) виде
- load_kg / dump_kg: чтение и запись файлов триплетов head<TAB>rel<TAB>tail
"""

import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from utils.exceptions import KGParseError
from utils.states import Side

logger = logging.getLogger(__name__)

# Имена файлов в каталоге данных (раскладка DBP15K / DWY100K)
TRIPLE_FILES = {
    Side.SOURCE: "rel_triples_1",
    Side.TARGET: "rel_triples_2",
}


@dataclass(frozen=True)
class KnowledgeGraph:
    """Граф знаний с плотной нумерацией сущностей и отношений.

    Attributes:
        entity_labels (List[str]): Исходные строки сущностей, индекс = id
        relation_labels (List[str]): Исходные строки отношений, индекс = id
        triples (np.ndarray): Массив (n, 3) из (head, relation, tail)
        indptr (np.ndarray): CSR-указатели неориентированной смежности
        indices (np.ndarray): CSR-соседи, отсортированы внутри строки, без петель
        label_index (Dict[str, int]): Строка сущности -> id
    """

    entity_labels: List[str]
    relation_labels: List[str]
    triples: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    label_index: Dict[str, int] = field(repr=False)
    relation_index: Dict[str, int] = field(repr=False)

    @property
    def entity_count(self) -> int:
        return len(self.entity_labels)

    @property
    def relation_count(self) -> int:
        return len(self.relation_labels)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, entity: int) -> np.ndarray:
        """Отсортированные соседи сущности в неориентированном представлении."""
        return self.indices[self.indptr[entity]:self.indptr[entity + 1]]

    def entity_id(self, label: str) -> Optional[int]:
        return self.label_index.get(label)

    def entity_label(self, entity: int) -> str:
        return self.entity_labels[entity]

    def adjacency_matrix(self) -> sp.csr_matrix:
        """Симметричная 0/1 матрица смежности (без петель)."""
        n = self.entity_count
        data = np.ones(len(self.indices), dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(n, n))

    def induced_triples(self, entities: Iterable[int]) -> np.ndarray:
        """Триплеты, у которых обе сущности входят в заданное множество."""
        mask = np.zeros(self.entity_count, dtype=bool)
        mask[np.fromiter(entities, dtype=np.int64)] = True
        if len(self.triples) == 0:
            return self.triples
        keep = mask[self.triples[:, 0]] & mask[self.triples[:, 2]]
        return self.triples[keep]

    def edge_count(self) -> int:
        """Число неориентированных рёбер смежности."""
        return len(self.indices) // 2


def build_adjacency(n: int, heads: np.ndarray, tails: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Строит симметричную CSR-смежность без петель и кратных рёбер.

    Args:
        n (int): Число сущностей
        heads (np.ndarray): Начала рёбер
        tails (np.ndarray): Концы рёбер

    Returns:
        Tuple[np.ndarray, np.ndarray]: (indptr, indices), соседи отсортированы
    """
    keep = heads != tails
    rows = np.concatenate([heads[keep], tails[keep]])
    cols = np.concatenate([tails[keep], heads[keep]])
    matrix = sp.coo_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)
    ).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix.indptr.astype(np.int64), matrix.indices.astype(np.int64)


def from_triples(
    triples: Sequence[Tuple[str, str, str]],
    entity_labels: Optional[Sequence[str]] = None,
) -> KnowledgeGraph:
    """Строит граф из списка строковых триплетов.

    Сущности и отношения нумеруются в порядке первого появления
    (голова раньше хвоста). Повторяющиеся триплеты отбрасываются.

    Args:
        triples: Последовательность (head, relation, tail)
        entity_labels: Необязательный заранее заданный порядок сущностей
            (сущности без триплетов получают пустую смежность)

    Returns:
        KnowledgeGraph: Неизменяемый граф
    """
    label_index: Dict[str, int] = {}
    relation_index: Dict[str, int] = {}
    for label in entity_labels or ():
        label_index.setdefault(label, len(label_index))

    seen = set()
    encoded: List[Tuple[int, int, int]] = []
    for head, rel, tail in triples:
        h = label_index.setdefault(head, len(label_index))
        r = relation_index.setdefault(rel, len(relation_index))
        t = label_index.setdefault(tail, len(label_index))
        key = (h, r, t)
        if key in seen:
            continue
        seen.add(key)
        encoded.append(key)

    array = np.array(encoded, dtype=np.int64).reshape(-1, 3)
    n = len(label_index)
    indptr, indices = build_adjacency(n, array[:, 0], array[:, 2])
    return KnowledgeGraph(
        entity_labels=list(label_index),
        relation_labels=list(relation_index),
        triples=array,
        indptr=indptr,
        indices=indices,
        label_index=label_index,
        relation_index=relation_index,
    )


def resolve_triples_path(path: str, side: Side) -> str:
    """Возвращает путь к файлу триплетов (каталог данных или сам файл)."""
    if os.path.isdir(path):
        return os.path.join(path, TRIPLE_FILES[Side(side)])
    return path


def read_tsv(path: str, fields: int) -> List[Tuple[str, ...]]:
    """Читает UTF-8 файл с заданным числом полей через табуляцию.

    Пустые строки пропускаются. Ошибка содержит номер строки.

    Raises:
        KGParseError: Файл не найден, пуст или строка с неверным числом полей
    """
    if not os.path.exists(path):
        raise KGParseError(path, None, "файл не найден")

    rows: List[Tuple[str, ...]] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != fields:
                raise KGParseError(
                    path, line_no, f"ожидалось полей: {fields}, получено: {len(parts)}"
                )
            rows.append(tuple(parts))

    if not rows:
        raise KGParseError(path, None, "файл пуст")
    return rows


def load_kg(path: str, side: Side = Side.SOURCE) -> KnowledgeGraph:
    """Загружает граф знаний из файла триплетов.

    Args:
        path (str): Каталог данных (берётся rel_triples_1/rel_triples_2) или файл
        side (Side): Сторона графа, нужна для выбора файла в каталоге

    Returns:
        KnowledgeGraph: Граф с плотными id в порядке первого появления

    Raises:
        KGParseError: Неверный формат строки или пустой файл
    """
    file_path = resolve_triples_path(path, side)
    rows = read_tsv(file_path, fields=3)
    kg = from_triples(rows)
    logger.info(
        f"Загружен граф {Side(side).value}: {kg.entity_count} сущностей, "
        f"{kg.relation_count} отношений, {len(kg.triples)} триплетов"
    )
    return kg


def dump_kg(kg: KnowledgeGraph, path: str) -> None:
    """Записывает триплеты графа обратно в исходных строках.

    Повторная загрузка файла даёт ту же нумерацию сущностей и отношений.
    """
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in kg.triples.tolist():
            f.write(f"{kg.entity_labels[h]}\t{kg.relation_labels[r]}\t{kg.entity_labels[t]}\n")
