"""Встроенный детерминированный сопоставитель на перекрытии выровненных соседей.

sim(s, t) = |{(s', t') выровнены : s' ~ s, t' ~ t}| / sqrt((deg(s) + 1) * (deg(t) + 1))

После нулевого раунда взаимно ближайшие пары с оценкой не ниже порога
временно добавляются к выровненным, и сходство пересчитывается.
"""

import logging
from typing import Iterable, List, Set, Tuple

import numpy as np
import scipy.sparse as sp

from division.context import ContextGraph, Subtask
from kg.graph import build_adjacency
from matchers.similarity import SimilarityMatrix, mutual_nearest

logger = logging.getLogger(__name__)


def _local_ids(entities: Iterable[int]) -> np.ndarray:
    return np.array(sorted(entities), dtype=np.int64)


def _local_adjacency(context: ContextGraph, ids: np.ndarray) -> sp.csr_matrix:
    n = len(ids)
    triples = context.induced_triples
    heads = np.searchsorted(ids, triples[:, 0]) if len(triples) else np.zeros(0, dtype=np.int64)
    tails = np.searchsorted(ids, triples[:, 2]) if len(triples) else np.zeros(0, dtype=np.int64)
    indptr, indices = build_adjacency(n, heads, tails)
    data = np.ones(len(indices), dtype=np.float64)
    return sp.csr_matrix((data, indices, indptr), shape=(n, n))


class BuiltinMatcher:
    """Сопоставитель без обучения: бутстрэппинг по перекрытию якорных соседей.

    Attributes:
        rounds (int): Число раундов бутстрэппинга после нулевого
        threshold (float): Минимальная оценка временной пары
        top_k_store (int): Длина хранимой строки матрицы
    """

    def __init__(self, rounds: int = 3, threshold: float = 0.5, top_k_store: int = 50):
        self.rounds = rounds
        self.threshold = threshold
        self.top_k_store = top_k_store

    def __repr__(self) -> str:
        return f"BuiltinMatcher(rounds={self.rounds}, threshold={self.threshold})"

    def match(self, subtask: Subtask, iteration: int = 1) -> SimilarityMatrix:
        """Строит матрицу сходства несопоставленных источников и кандидатов подзадачи."""
        if len(subtask.seeds) == 0:
            logger.warning(f"Подзадача {subtask.group}: нет seed-сопоставлений, матрица пуста")
            return SimilarityMatrix({}, self.top_k_store)

        src_ids = _local_ids(subtask.source.entities)
        tgt_ids = _local_ids(subtask.target.entities)
        rows = _local_ids(subtask.sources)
        cols = _local_ids(subtask.candidates)
        if len(rows) == 0 or len(cols) == 0:
            return SimilarityMatrix({}, self.top_k_store)

        adj_s = _local_adjacency(subtask.source, src_ids)
        adj_t = _local_adjacency(subtask.target, tgt_ids)
        deg_s = np.asarray(adj_s.sum(axis=1)).ravel()
        deg_t = np.asarray(adj_t.sum(axis=1)).ravel()
        row_pos = np.searchsorted(src_ids, rows)
        col_pos = np.searchsorted(tgt_ids, cols)
        left = adj_s[row_pos]
        right = adj_t[:, col_pos].tocsc()
        scale_rows = sp.diags(1.0 / np.sqrt(deg_s[row_pos] + 1.0))
        scale_cols = sp.diags(1.0 / np.sqrt(deg_t[col_pos] + 1.0))

        aligned: List[Tuple[int, int]] = [
            (m.source, m.target)
            for m in subtask.seeds
            if m.source in subtask.source.entities and m.target in subtask.target.entities
        ]
        used_sources: Set[int] = {s for s, _ in aligned}
        used_targets: Set[int] = {t for _, t in aligned}

        def similarity(pairs: List[Tuple[int, int]]) -> SimilarityMatrix:
            s_pos = np.searchsorted(src_ids, [s for s, _ in pairs])
            t_pos = np.searchsorted(tgt_ids, [t for _, t in pairs])
            alignment = sp.csr_matrix(
                (np.ones(len(pairs)), (s_pos, t_pos)), shape=(len(src_ids), len(tgt_ids))
            )
            overlap = scale_rows @ (left @ alignment @ right) @ scale_cols
            return SimilarityMatrix.from_sparse(overlap, rows, cols, self.top_k_store)

        sim = similarity(aligned)
        for round_no in range(1, self.rounds + 1):
            free_sources = [s for s in rows.tolist() if s not in used_sources]
            free_targets = [t for t in cols.tolist() if t not in used_targets]
            provisional = mutual_nearest(sim, free_sources, free_targets, self.threshold)
            if not provisional:
                break
            for s, t, _ in provisional:
                aligned.append((s, t))
                used_sources.add(s)
                used_targets.add(t)
            sim = similarity(aligned)
            logger.debug(
                f"Подзадача {subtask.group}, раунд {round_no}: "
                f"+{len(provisional)} временных пар, всего выровнено {len(aligned)}"
            )
        return sim
