"""Общие фикстуры: маленькие графы и синтетический экземпляр из двух копий графа."""

import os
from dataclasses import dataclass
from typing import Iterable, List, Sequence

import networkx as nx
import numpy as np
import pytest

from division.context import ContextGraph, Subtask, assemble_subtask
from kg.graph import KnowledgeGraph, from_triples
from kg.mappings import MappingSet
from utils.states import Provenance, Side


def write_lines(path, rows: Iterable[Sequence[str]]) -> str:
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write("\t".join(row) + "\n")
    return str(path)


def graph_kg(graph: nx.Graph, prefix: str = "e") -> KnowledgeGraph:
    """Граф знаний из графа networkx: сущности prefix<i> в порядке вершин."""
    labels = [f"{prefix}{u}" for u in graph.nodes()]
    triples = [(f"{prefix}{u}", "r", f"{prefix}{v}") for u, v in graph.edges()]
    return from_triples(triples, entity_labels=labels)


def full_context(kg: KnowledgeGraph, side: Side, anchors, unmatched) -> ContextGraph:
    entities = frozenset(range(kg.entity_count))
    return ContextGraph(side, entities, frozenset(anchors), frozenset(unmatched), kg.triples)


def whole_graph_subtask(
    kg_s: KnowledgeGraph,
    kg_t: KnowledgeGraph,
    seeds: MappingSet,
    sources: Iterable[int],
    candidates: Iterable[int],
    group: int = 0,
) -> Subtask:
    """Подзадача, контексты которой - графы целиком."""
    src = full_context(kg_s, Side.SOURCE, seeds.sources(), sources)
    tgt = full_context(kg_t, Side.TARGET, seeds.targets(), candidates)
    return assemble_subtask(group, src, tgt, seeds, kg_s.entity_count + kg_t.entity_count)


@dataclass
class Planted:
    data_dir: str
    kg_s: KnowledgeGraph
    kg_t: KnowledgeGraph
    seeds: MappingSet
    test: MappingSet


def planted_instance(
    root,
    n: int = 120,
    avg_degree: int = 6,
    seed_ratio: float = 0.2,
    rng_seed: int = 7,
) -> Planted:
    """Две копии случайного графа с переставленными именами сущностей."""
    graph = nx.gnm_random_graph(n, n * avg_degree // 2, seed=rng_seed)
    rng = np.random.default_rng(rng_seed)
    perm = rng.permutation(n)
    edges = list(graph.edges())
    source_triples = [(f"s{u}", f"r{(u + v) % 3}", f"s{v}") for u, v in edges]
    target_triples = [(f"t{perm[u]}", f"r{(u + v) % 3}", f"t{perm[v]}") for u, v in edges]
    target_triples = [target_triples[i] for i in rng.permutation(len(target_triples))]

    nodes = sorted(u for u in graph.nodes() if graph.degree(u) > 0)
    order = rng.permutation(len(nodes))
    cut = int(seed_ratio * len(nodes))
    train = [(f"s{nodes[i]}", f"t{perm[nodes[i]]}") for i in sorted(order[:cut].tolist())]
    test = [(f"s{nodes[i]}", f"t{perm[nodes[i]]}") for i in sorted(order[cut:].tolist())]

    data_dir = os.path.join(str(root), f"planted_{n}_{rng_seed}")
    os.makedirs(data_dir, exist_ok=True)
    write_lines(os.path.join(data_dir, "rel_triples_1"), source_triples)
    write_lines(os.path.join(data_dir, "rel_triples_2"), target_triples)
    write_lines(os.path.join(data_dir, "ent_links_train"), train)
    write_lines(os.path.join(data_dir, "ent_links_test"), test)

    kg_s = from_triples(source_triples)
    kg_t = from_triples(target_triples)
    to_ids = lambda pairs: [(kg_s.label_index[s], kg_t.label_index[t]) for s, t in pairs]
    return Planted(
        data_dir,
        kg_s,
        kg_t,
        MappingSet.from_pairs(to_ids(train), Provenance.SEED),
        MappingSet.from_pairs(to_ids(test), Provenance.SEED),
    )


@pytest.fixture
def planted(tmp_path):
    return planted_instance(tmp_path)


@pytest.fixture
def path_kg() -> KnowledgeGraph:
    """Путь a - x - u и изолированная пара b - c."""
    return from_triples([("a", "r", "x"), ("x", "r", "u"), ("b", "r", "c")])


def random_graphs(count: int, max_nodes: int, rng_seed: int, density: float = 0.08) -> List[nx.Graph]:
    rng = np.random.default_rng(rng_seed)
    graphs = []
    for _ in range(count):
        n = int(rng.integers(5, max_nodes + 1))
        graphs.append(nx.gnp_random_graph(n, density, seed=int(rng.integers(1 << 30))))
    return graphs
