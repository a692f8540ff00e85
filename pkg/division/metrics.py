"""Метрики качества выравнивания: Hits@1, Hits@5, MRR и покрытие подзадачами.

Каждый тестовый источник учитывается ровно один раз; если его истинная
цель не попала в ранжирование его подзадачи, это промах с нулевым вкладом.
"""

import logging
from dataclasses import asdict, dataclass
from typing import Dict, FrozenSet, Iterable, Mapping, Optional

from kg.mappings import MappingSet
from matchers.similarity import CandidateRanking

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Metrics:
    """Итоговые метрики.

    Attributes:
        hits1 (float): Доля истинных целей на первой позиции
        hits5 (float): Доля истинных целей в первых пяти
        mrr (float): Средний обратный ранг (промах - 0)
        coverage_recall (float): Доля тестовых пар, попавших в одну подзадачу
        n_test (int): Число тестовых пар
    """

    hits1: float = 0.0
    hits5: float = 0.0
    mrr: float = 0.0
    coverage_recall: float = 0.0
    n_test: int = 0

    def to_dict(self) -> Dict:
        return asdict(self)


def evaluate(
    rankings: Mapping[int, CandidateRanking],
    test_mappings: MappingSet,
    coverage: Optional[Mapping[int, FrozenSet[int]]] = None,
) -> Metrics:
    """Считает метрики по ранжированиям кандидатов.

    Args:
        rankings: Источник -> ранжирование кандидатов его подзадачи
        test_mappings: Тестовые пары
        coverage: Источник -> кандидаты его подзадачи; по умолчанию берутся
            из ранжирований (подзадачи со сбоем сопоставителя иначе не учтутся)

    Returns:
        Metrics: Нули, если тестовых пар нет
    """
    n_test = len(test_mappings)
    if n_test == 0:
        return Metrics()

    hits1 = hits5 = covered = 0
    reciprocal = 0.0
    for pair in test_mappings:
        ranking = rankings.get(pair.source)
        if coverage is not None:
            candidates = coverage.get(pair.source)
            if candidates is not None and pair.target in candidates:
                covered += 1
        elif ranking is not None and ranking.contains(pair.target):
            covered += 1

        rank = ranking.rank_of(pair.target) if ranking is not None else None
        if rank is None:
            continue
        reciprocal += 1.0 / rank
        hits1 += rank <= 1
        hits5 += rank <= 5

    return Metrics(
        hits1=hits1 / n_test,
        hits5=hits5 / n_test,
        mrr=reciprocal / n_test,
        coverage_recall=covered / n_test,
        n_test=n_test,
    )


def candidate_recall(test_mappings: MappingSet, candidate_sets: Iterable[FrozenSet[int]]) -> float:
    """Доля тестовых целей, попавших в кандидаты хотя бы одной подзадачи."""
    if len(test_mappings) == 0:
        return 0.0
    selected = set()
    for candidates in candidate_sets:
        selected.update(candidates)
    return sum(1 for pair in test_mappings if pair.target in selected) / len(test_mappings)
