"""Матрица сходства подзадачи, взаимно ближайшие пары и ранжирование кандидатов."""

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from kg.mappings import Mapping as Pair, MappingSet
from utils.states import Provenance

logger = logging.getLogger(__name__)

Row = Tuple[Tuple[int, float], ...]


def _sorted_row(scores: Iterable[Tuple[int, float]], top_k: Optional[int]) -> Row:
    row = sorted(((int(t), float(v)) for t, v in scores), key=lambda item: (-item[1], item[0]))
    if top_k is not None:
        row = row[:top_k]
    return tuple(row)


@dataclass(frozen=True)
class SimilarityMatrix:
    """Разреженное сходство: для каждого источника top-K целей.

    Строка отсортирована по убыванию оценки, равные оценки - по возрастанию id цели.

    Attributes:
        rows (Dict[int, Row]): id источника -> ((id цели, оценка), ...)
        top_k_store (Optional[int]): Длина строки (None - без усечения)
    """

    rows: Dict[int, Row] = field(default_factory=dict)
    top_k_store: Optional[int] = 50

    @classmethod
    def from_scores(
        cls,
        scores: Mapping[int, Mapping[int, float]],
        top_k_store: Optional[int] = 50,
    ) -> "SimilarityMatrix":
        """Строит матрицу из словаря источник -> {цель: оценка}."""
        rows = {int(s): _sorted_row(row.items(), top_k_store) for s, row in scores.items()}
        return cls(rows, top_k_store)

    @classmethod
    def from_sparse(
        cls,
        matrix: sp.spmatrix,
        row_ids: np.ndarray,
        col_ids: np.ndarray,
        top_k_store: Optional[int] = 50,
    ) -> "SimilarityMatrix":
        """Строит матрицу из scipy-матрицы, строки и столбцы которой - локальные индексы.

        Нулевые элементы не хранятся; у источника без ненулевых оценок строка пустая.
        """
        csr = sp.csr_matrix(matrix)
        csr.eliminate_zeros()
        rows: Dict[int, Row] = {}
        for i, source in enumerate(row_ids.tolist()):
            start, end = csr.indptr[i], csr.indptr[i + 1]
            targets = col_ids[csr.indices[start:end]].tolist()
            values = csr.data[start:end].tolist()
            rows[int(source)] = _sorted_row(zip(targets, values), top_k_store)
        return cls(rows, top_k_store)

    def __len__(self) -> int:
        return len(self.rows)

    def is_empty(self) -> bool:
        return not any(self.rows.values())

    def sources(self) -> FrozenSet[int]:
        return frozenset(self.rows)

    def row(self, source: int) -> Row:
        return self.rows.get(source, ())

    def score(self, source: int, target: int) -> Optional[float]:
        for t, value in self.row(source):
            if t == target:
                return value
        return None

    def transposed(self) -> "SimilarityMatrix":
        """Транспонирование по хранимым элементам (без повторного усечения)."""
        columns: Dict[int, List[Tuple[int, float]]] = {}
        for s, row in self.rows.items():
            for t, value in row:
                columns.setdefault(t, []).append((s, value))
        return SimilarityMatrix({t: _sorted_row(col, None) for t, col in columns.items()}, None)

    def restrict(
        self,
        sources: Optional[Iterable[int]] = None,
        targets: Optional[Iterable[int]] = None,
    ) -> "SimilarityMatrix":
        """Оставляет заданные строки и элементы с заданными целями."""
        allowed_sources = None if sources is None else frozenset(sources)
        allowed_targets = None if targets is None else frozenset(targets)
        rows: Dict[int, Row] = {}
        for s, row in self.rows.items():
            if allowed_sources is not None and s not in allowed_sources:
                continue
            if allowed_targets is not None:
                row = tuple(item for item in row if item[0] in allowed_targets)
            rows[s] = row
        return SimilarityMatrix(rows, self.top_k_store)


def _best(row: Row) -> Optional[Tuple[int, float]]:
    """Единственный максимум строки; None при пустой строке или ничьей."""
    if not row:
        return None
    if len(row) > 1 and row[1][1] == row[0][1]:
        return None
    return row[0]


def mutual_nearest(
    sim: SimilarityMatrix,
    sources: Optional[Iterable[int]] = None,
    targets: Optional[Iterable[int]] = None,
    min_score: float = 0.0,
) -> List[Tuple[int, int, float]]:
    """Находит взаимно ближайшие пары (argmax строки и argmax столбца).

    Пары с ничьей в строке или столбце и пары с неположительной оценкой
    отбрасываются. Результат один-к-одному.

    Returns:
        List[Tuple[int, int, float]]: (источник, цель, оценка) по возрастанию источника
    """
    restricted = sim.restrict(sources, targets)
    columns = restricted.transposed()
    pairs = []
    for s in sorted(restricted.rows):
        best = _best(restricted.rows[s])
        if best is None:
            continue
        t, value = best
        if value <= 0 or value < min_score:
            continue
        back = _best(columns.row(t))
        if back is not None and back[0] == s:
            pairs.append((s, t, value))
    return pairs


@dataclass(frozen=True)
class CandidateRanking:
    """Полное ранжирование кандидатов подзадачи для одного источника.

    Сначала оценённые кандидаты в порядке строки, затем остальные по возрастанию id.

    Attributes:
        candidates (np.ndarray): Отсортированные id кандидатов (общие для подзадачи)
        head (Row): Оценённые кандидаты в порядке убывания оценки
    """

    candidates: np.ndarray = field(repr=False)
    head: Row = ()

    def __len__(self) -> int:
        return len(self.candidates)

    def contains(self, target: int) -> bool:
        i = int(np.searchsorted(self.candidates, target))
        return i < len(self.candidates) and int(self.candidates[i]) == target

    def rank_of(self, target: int) -> Optional[int]:
        """Позиция цели (с единицы) или None, если цель не кандидат."""
        if not self.contains(target):
            return None
        for position, (t, _) in enumerate(self.head, start=1):
            if t == target:
                return position
        head_ids = {t for t, _ in self.head}
        smaller = int(np.searchsorted(self.candidates, target))
        smaller_in_head = sum(1 for t in head_ids if t < target)
        return len(self.head) + (smaller - smaller_in_head) + 1

    def top(self) -> Optional[int]:
        return self.head[0][0] if self.head else None

    def as_list(self) -> List[int]:
        head_ids = [t for t, _ in self.head]
        seen = set(head_ids)
        return head_ids + [int(t) for t in self.candidates.tolist() if t not in seen]


def predict(
    sim: SimilarityMatrix,
    candidates: Iterable[int],
    sources: Iterable[int],
) -> Tuple[Dict[int, CandidateRanking], MappingSet]:
    """Ранжирует кандидатов для каждого источника и выдаёт top-1 предсказания.

    Top-1 выдаётся только для источников, у которых есть оценённый кандидат.

    Returns:
        Tuple[Dict[int, CandidateRanking], MappingSet]: Ранжирования и пары (predicted)
    """
    pool = np.array(sorted(set(int(c) for c in candidates)), dtype=np.int64)
    pool_set = frozenset(pool.tolist())
    rankings: Dict[int, CandidateRanking] = {}
    predicted: List[Pair] = []
    for s in sorted(set(int(s) for s in sources)):
        head = tuple(item for item in sim.row(s) if item[0] in pool_set)
        ranking = CandidateRanking(pool, head)
        rankings[s] = ranking
        if head:
            predicted.append(Pair(s, head[0][0], Provenance.PREDICTED))
    return rankings, MappingSet.from_mappings(predicted)
