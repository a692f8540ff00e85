"""Модуль разбиения исходного графа знаний на N связных сбалансированных частей.

Многоуровневая схема в духе METIS:
- огрубление паросочетанием по тяжёлым рёбрам до max(100, 20 * N) вершин
- начальное разбиение жадным выращиванием областей
- уточнение граничными перемещениями Фидуччи-Маттейсеса на каждом уровне

Изолированные вершины раскладываются по самым маленьким частям отдельно.
"""

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple, Union

import numpy as np
import scipy.sparse as sp

from kg.graph import KnowledgeGraph, read_tsv
from kg.mappings import MappingSet
from utils.exceptions import ConfigurationError, MappingError

logger = logging.getLogger(__name__)

COARSE_PASSES = 10
FINAL_PASSES = 200
STALL_RATIO = 0.95


@dataclass(frozen=True)
class Partition:
    """Часть исходного графа.

    Attributes:
        index (int): Номер части в [0, N)
        entities (FrozenSet[int]): Сущности части
        unmatched (FrozenSet[int]): Сущности части, не являющиеся seed-якорями
    """

    index: int
    entities: FrozenSet[int]
    unmatched: FrozenSet[int]


def max_part_size(entity_count: int, n_parts: int, balance_slack: float) -> int:
    """Верхняя граница размера части: floor((1 + eps) * ceil(n / N))."""
    base = math.ceil(entity_count / n_parts)
    return int(math.floor((1.0 + balance_slack) * base + 1e-9))


def partition_source(
    kg_s: KnowledgeGraph,
    n_parts: int,
    balance_slack: float = 0.10,
    rng_seed: int = 0,
    seeds: Optional[MappingSet] = None,
) -> List[Partition]:
    """Делит исходный граф на n_parts частей.

    Args:
        kg_s (KnowledgeGraph): Исходный граф
        n_parts (int): Число частей N
        balance_slack (float): Допуск дисбаланса eps
        rng_seed (int): Зерно генератора (результат детерминирован)
        seeds (Optional[MappingSet]): Seed-сопоставления для заполнения unmatched

    Returns:
        List[Partition]: Попарно непересекающиеся части, покрывающие все сущности

    Raises:
        ConfigurationError: n_parts < 1 или n_parts > entity_count
    """
    assignment = partition_assignment(kg_s, n_parts, balance_slack, rng_seed)
    return partitions_from_assignment(assignment, n_parts, seeds)


def partition_assignment(
    kg: KnowledgeGraph,
    n_parts: int,
    balance_slack: float = 0.10,
    rng_seed: int = 0,
) -> np.ndarray:
    """Возвращает массив entity -> part для многоуровневого разбиения."""
    n = kg.entity_count
    if n_parts < 1:
        raise ConfigurationError(f"Число частей должно быть >= 1, получено {n_parts}")
    if n_parts > n:
        raise ConfigurationError(f"Число частей {n_parts} больше числа сущностей {n}")
    if balance_slack < 0:
        raise ConfigurationError(f"Допуск дисбаланса не может быть отрицательным: {balance_slack}")

    if n_parts == 1:
        return np.zeros(n, dtype=np.int64)

    limit = max_part_size(n, n_parts, balance_slack)
    rng = np.random.default_rng(rng_seed)
    degrees = kg.degrees
    connected = np.flatnonzero(degrees > 0)
    assignment = np.full(n, -1, dtype=np.int64)

    if len(connected):
        adjacency = kg.adjacency_matrix()[connected][:, connected].astype(np.int64).tocsr()
        adjacency.sort_indices()
        assignment[connected] = _multilevel(adjacency, n_parts, limit, rng)

    # Изолированные вершины - по очереди в самую маленькую часть
    sizes = np.bincount(assignment[assignment >= 0], minlength=n_parts)
    for u in np.flatnonzero(degrees == 0).tolist():
        p = int(np.argmin(sizes))
        assignment[u] = p
        sizes[p] += 1

    logger.info(
        f"Разбиение на {n_parts} частей: размеры {sizes.tolist()}, "
        f"граница {limit}, разрез {edge_cut(kg, assignment)}"
    )
    return assignment


def partitions_from_assignment(
    assignment: np.ndarray,
    n_parts: int,
    seeds: Optional[MappingSet] = None,
) -> List[Partition]:
    """Собирает объекты Partition по массиву принадлежности."""
    anchors = seeds.sources() if seeds is not None else frozenset()
    members: List[List[int]] = [[] for _ in range(n_parts)]
    for entity, part in enumerate(np.asarray(assignment).tolist()):
        members[part].append(entity)
    return [
        Partition(
            index=i,
            entities=frozenset(ents),
            unmatched=frozenset(e for e in ents if e not in anchors),
        )
        for i, ents in enumerate(members)
    ]


def edge_cut(kg: KnowledgeGraph, assignment: Union[np.ndarray, Mapping[int, int]]) -> int:
    """Число неориентированных рёбер смежности между разными частями."""
    if isinstance(assignment, Mapping):
        parts = np.array([assignment[e] for e in range(kg.entity_count)], dtype=np.int64)
    else:
        parts = np.asarray(assignment)
    rows = np.repeat(np.arange(kg.entity_count), kg.degrees)
    upper = kg.indices > rows
    return int(np.count_nonzero(parts[rows[upper]] != parts[kg.indices[upper]]))


def group_unmatched(partition: Partition, seeds: MappingSet) -> FrozenSet[int]:
    """Сущности части без seed-сопоставления (группа несопоставленных)."""
    anchors = seeds.sources()
    return frozenset(e for e in partition.entities if e not in anchors)


def load_partition_file(path: str, kg: KnowledgeGraph) -> Tuple[np.ndarray, int]:
    """Читает готовое разбиение "entity<TAB>part" (например, вывод METIS).

    Returns:
        Tuple[np.ndarray, int]: (массив принадлежности, число частей)

    Raises:
        MappingError: Неизвестная сущность
        ConfigurationError: Не все сущности получили часть
    """
    assignment = np.full(kg.entity_count, -1, dtype=np.int64)
    for label, part in read_tsv(path, fields=2):
        entity = kg.entity_id(label)
        if entity is None:
            raise MappingError(f"{path}: неизвестная сущность '{label}'")
        assignment[entity] = int(part)

    missing = np.flatnonzero(assignment < 0)
    if len(missing):
        raise ConfigurationError(
            f"{path}: не указана часть для {len(missing)} сущностей, "
            f"например '{kg.entity_labels[int(missing[0])]}'"
        )
    return assignment, int(assignment.max()) + 1


def write_partition_file(path: str, kg: KnowledgeGraph, assignment: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for entity, part in enumerate(np.asarray(assignment).tolist()):
            f.write(f"{kg.entity_labels[entity]}\t{part}\n")


def _multilevel(adjacency: sp.csr_matrix, n_parts: int, limit: int, rng: np.random.Generator) -> np.ndarray:
    coarsen_to = max(100, 20 * n_parts)
    levels: List[Tuple[sp.csr_matrix, np.ndarray, np.ndarray]] = []
    graph = adjacency
    weights = np.ones(adjacency.shape[0], dtype=np.int64)

    while graph.shape[0] > coarsen_to:
        max_weight = min(limit, max(1, int(1.5 * weights.sum() / coarsen_to)))
        cmap, n_coarse = _heavy_edge_matching(graph, weights, max_weight, rng)
        if n_coarse > STALL_RATIO * graph.shape[0]:
            break
        levels.append((graph, weights, cmap))
        graph, weights = _contract(graph, weights, cmap, n_coarse)

    logger.debug(f"Огрубление: {len(levels)} уровней, {graph.shape[0]} вершин на верхнем")
    parts = _grow_regions(graph, weights, n_parts, rng)
    parts = _refine(graph, weights, parts, n_parts, limit, FINAL_PASSES if not levels else COARSE_PASSES)

    for depth, (finer, finer_weights, cmap) in enumerate(reversed(levels)):
        parts = parts[cmap]
        passes = FINAL_PASSES if depth == len(levels) - 1 else COARSE_PASSES
        parts = _refine(finer, finer_weights, parts, n_parts, limit, passes)
    return parts


def _heavy_edge_matching(
    graph: sp.csr_matrix,
    weights: np.ndarray,
    max_weight: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, int]:
    n = graph.shape[0]
    indptr = graph.indptr.tolist()
    indices = graph.indices.tolist()
    data = graph.data.tolist()
    vw = weights.tolist()
    match = [-1] * n

    for u in rng.permutation(n).tolist():
        if match[u] != -1:
            continue
        best, best_w = u, 0
        for k in range(indptr[u], indptr[u + 1]):
            v = indices[k]
            if v == u or match[v] != -1 or vw[u] + vw[v] > max_weight:
                continue
            if data[k] > best_w:
                best, best_w = v, data[k]
        match[u] = best
        match[best] = u

    cmap = [-1] * n
    n_coarse = 0
    for u in range(n):
        if cmap[u] == -1:
            cmap[u] = n_coarse
            cmap[match[u]] = n_coarse
            n_coarse += 1
    return np.array(cmap, dtype=np.int64), n_coarse


def _contract(
    graph: sp.csr_matrix,
    weights: np.ndarray,
    cmap: np.ndarray,
    n_coarse: int,
) -> Tuple[sp.csr_matrix, np.ndarray]:
    n = graph.shape[0]
    projection = sp.csr_matrix(
        (np.ones(n, dtype=np.int64), (np.arange(n), cmap)), shape=(n, n_coarse)
    )
    coarse = (projection.T @ graph @ projection).tocsr()
    coarse = (coarse - sp.diags(coarse.diagonal())).tocsr()
    coarse.eliminate_zeros()
    coarse.sort_indices()
    coarse_weights = np.bincount(cmap, weights=weights, minlength=n_coarse).astype(np.int64)
    return coarse, coarse_weights


def _grow_regions(
    graph: sp.csr_matrix,
    weights: np.ndarray,
    n_parts: int,
    rng: np.random.Generator,
) -> np.ndarray:
    n = graph.shape[0]
    indptr = graph.indptr.tolist()
    indices = graph.indices.tolist()
    data = graph.data.tolist()
    vw = weights.tolist()
    part = [-1] * n
    order = rng.permutation(n).tolist()
    cursor = 0
    remaining = sum(vw)

    for p in range(n_parts - 1):
        goal = remaining / (n_parts - p)
        grown = 0
        gain: Dict[int, int] = {}
        frontier: List[Tuple[int, int]] = []
        while grown < goal:
            u = None
            while frontier:
                neg, v = heapq.heappop(frontier)
                if part[v] == -1 and gain.get(v) == -neg:
                    u = v
                    break
            if u is None:
                while cursor < n and part[order[cursor]] != -1:
                    cursor += 1
                if cursor == n:
                    break
                u = order[cursor]
            part[u] = p
            grown += vw[u]
            for k in range(indptr[u], indptr[u + 1]):
                v = indices[k]
                if part[v] == -1:
                    gain[v] = gain.get(v, 0) + data[k]
                    heapq.heappush(frontier, (-gain[v], v))
        remaining -= grown

    return np.array([p if p != -1 else n_parts - 1 for p in part], dtype=np.int64)


def _connectivity(u: int, indptr: List[int], indices: List[int], data: List[int], part: List[int]) -> Dict[int, int]:
    conn: Dict[int, int] = {}
    for k in range(indptr[u], indptr[u + 1]):
        q = part[indices[k]]
        conn[q] = conn.get(q, 0) + data[k]
    return conn


def _rebalance(
    indptr: List[int],
    indices: List[int],
    data: List[int],
    vw: List[int],
    part: List[int],
    load: List[int],
    limit: int,
) -> None:
    n_parts = len(load)
    for _ in range(len(part) + 1):
        overloaded = [p for p in range(n_parts) if load[p] > limit]
        if not overloaded:
            return
        p = max(overloaded, key=lambda q: (load[q], -q))

        scored = []
        for u in range(len(part)):
            if part[u] != p:
                continue
            conn = _connectivity(u, indptr, indices, data, part)
            internal = conn.get(p, 0)
            options = [q for q in range(n_parts) if q != p]
            q = max(options, key=lambda q: (conn.get(q, 0) - internal, -load[q], -q))
            scored.append((internal - conn.get(q, 0), u, q))
        scored.sort()

        moved = False
        for _, u, q in scored:
            if load[p] <= limit:
                break
            if load[q] + vw[u] > limit:
                fitting = [r for r in range(n_parts) if r != p and load[r] + vw[u] <= limit]
                if not fitting:
                    continue
                q = min(fitting, key=lambda r: (load[r], r))
            part[u] = q
            load[p] -= vw[u]
            load[q] += vw[u]
            moved = True
        if not moved:
            # Огрублённые вершины слишком тяжёлые; баланс восстановится на более мелком уровне
            logger.debug(f"Не удалось разгрузить часть {p}: {load[p]} > {limit}")
            return


def _refine(
    graph: sp.csr_matrix,
    weights: np.ndarray,
    parts: np.ndarray,
    n_parts: int,
    limit: int,
    max_passes: int,
) -> np.ndarray:
    n = graph.shape[0]
    indptr = graph.indptr.tolist()
    indices = graph.indices.tolist()
    data = graph.data.tolist()
    vw = weights.tolist()
    part = parts.tolist()
    load = [0] * n_parts
    for u in range(n):
        load[part[u]] += vw[u]

    _rebalance(indptr, indices, data, vw, part, load, limit)

    for _ in range(max_passes):
        moves = 0
        for u in range(n):
            own = part[u]
            conn = _connectivity(u, indptr, indices, data, part)
            if not conn or (len(conn) == 1 and own in conn):
                continue
            internal = conn.get(own, 0)
            best, best_gain = own, None
            for q in sorted(conn):
                if q == own or load[q] + vw[u] > limit:
                    continue
                gain = conn[q] - internal
                if best_gain is None or gain > best_gain or (gain == best_gain and load[q] < load[best]):
                    best, best_gain = q, gain
            if best == own:
                continue
            if best_gain > 0 or (best_gain == 0 and load[best] + vw[u] < load[own]):
                part[u] = best
                load[own] -= vw[u]
                load[best] += vw[u]
                moves += 1
        if moves == 0:
            break
    else:
        if max_passes == FINAL_PASSES:
            logger.warning(f"Уточнение разбиения не сошлось за {max_passes} проходов")

    return np.array(part, dtype=np.int64)
