import logging
import shlex
import sys

import networkx as nx
import numpy as np
import pytest
import scipy.sparse as sp

from conftest import whole_graph_subtask
from kg.graph import from_triples
from kg.mappings import MappingSet
from matchers import BuiltinMatcher, ExternalMatcher, SimilarityMatrix, mutual_nearest, parse_matcher_spec, predict
from matchers.external import is_valid_matcher_spec
from utils.exceptions import ConfigurationError, MatcherError, MatcherProtocolError, MatcherTimeout
from utils.states import Provenance

EDGES = [(0, 1), (1, 2), (2, 0), (2, 3), (0, 4)]


def twin_graphs():
    """Треугольник 0-1-2 с висячими 3 (у 2) и 4 (у 0) и его копия."""
    kg_s = from_triples([(f"s{u}", "r", f"s{v}") for u, v in EDGES], entity_labels=[f"s{i}" for i in range(5)])
    kg_t = from_triples([(f"t{u}", "r", f"t{v}") for u, v in EDGES], entity_labels=[f"t{i}" for i in range(5)])
    return kg_s, kg_t


def twin_subtask(seeds=((3, 3),)):
    kg_s, kg_t = twin_graphs()
    seed_set = MappingSet.from_pairs(seeds)
    free = [e for e in range(5) if e not in seed_set.sources()]
    return kg_s, kg_t, whole_graph_subtask(kg_s, kg_t, seed_set, free, free)


def test_rows_sorted_by_score_then_id():
    sim = SimilarityMatrix.from_scores({0: {5: 0.3, 2: 0.9, 7: 0.3}}, top_k_store=2)
    assert sim.row(0) == ((2, 0.9), (5, 0.3))
    assert sim.row(1) == ()
    assert sim.score(0, 2) == 0.9
    assert sim.score(0, 7) is None


def test_from_sparse_drops_zeros():
    matrix = sp.csr_matrix(np.array([[0.0, 0.4], [0.0, 0.0]]))
    sim = SimilarityMatrix.from_sparse(matrix, np.array([10, 11]), np.array([20, 21]))
    assert sim.row(10) == ((21, 0.4),)
    assert sim.row(11) == ()
    assert not sim.is_empty()
    assert sim.sources() == {10, 11}


def test_mutual_nearest_rules():
    sim = SimilarityMatrix.from_scores({0: {10: 0.9, 11: 0.1}, 1: {10: 0.2, 11: 0.8}})
    assert mutual_nearest(sim) == [(0, 10, 0.9), (1, 11, 0.8)]
    assert mutual_nearest(sim, min_score=0.85) == [(0, 10, 0.9)]
    assert mutual_nearest(sim, targets={11}) == [(1, 11, 0.8)]

    tied = SimilarityMatrix.from_scores({0: {10: 0.5}, 1: {10: 0.5}})
    assert mutual_nearest(tied) == []
    zero = SimilarityMatrix.from_scores({0: {10: 0.0}})
    assert mutual_nearest(zero) == []


def test_transposed_swaps_rows_and_columns():
    sim = SimilarityMatrix.from_scores({0: {10: 0.9, 11: 0.1}, 1: {10: 0.2}})
    columns = sim.transposed()
    assert columns.row(10) == ((0, 0.9), (1, 0.2))
    assert columns.row(11) == ((0, 0.1),)
    assert columns.transposed().rows == sim.rows


def test_predict_completes_ranking_by_id():
    sim = SimilarityMatrix.from_scores({0: {2: 0.9, 1: 0.3, 9: 0.95}})
    rankings, predicted = predict(sim, {1, 2, 3}, {0, 5})
    assert rankings[0].as_list() == [2, 1, 3]
    assert rankings[0].rank_of(3) == 3
    assert rankings[0].rank_of(9) is None
    assert rankings[0].top() == 2
    assert rankings[5].as_list() == [1, 2, 3]
    assert rankings[5].rank_of(2) == 2
    assert predicted.as_tuples() == [(0, 2)]
    assert all(m.provenance == Provenance.PREDICTED for m in predicted)


def test_builtin_recovers_twin_by_bootstrapping():
    _, _, subtask = twin_subtask()
    sim = BuiltinMatcher(rounds=3, threshold=0.2).match(subtask)
    _, predicted = predict(sim, subtask.candidates, subtask.sources)
    assert sorted(predicted.as_tuples()) == [(0, 0), (1, 1), (2, 2), (4, 4)]


def test_builtin_with_all_but_one_seeded():
    _, _, subtask = twin_subtask(seeds=((0, 0), (1, 1), (3, 3), (4, 4)))
    sim = BuiltinMatcher().match(subtask)
    assert sim.row(2)[0][0] == 2
    assert sim.score(2, 2) > 0


def test_builtin_is_deterministic():
    _, _, subtask = twin_subtask()
    matcher = BuiltinMatcher(rounds=3, threshold=0.2)
    assert matcher.match(subtask).rows == matcher.match(subtask).rows


def labelled_scores(sim, kg_s, kg_t):
    return {
        kg_s.entity_labels[s]: {kg_t.entity_labels[t]: score for t, score in row}
        for s, row in sim.rows.items()
        if row
    }


def test_builtin_is_permutation_equivariant():
    graph = nx.gnm_random_graph(30, 70, seed=3)
    rng = np.random.default_rng(5)
    triples_s = [(f"s{u}", "r", f"s{v}") for u, v in graph.edges()]
    triples_t = [(f"t{u}", "r", f"t{v}") for u, v in graph.edges()]
    seeded = [int(u) for u in rng.choice(30, size=8, replace=False)]
    free = [f"{u}" for u in range(30) if u not in seeded]

    def solve(order_s, order_t):
        kg_s = from_triples(triples_s, entity_labels=[f"s{u}" for u in order_s])
        kg_t = from_triples(triples_t, entity_labels=[f"t{u}" for u in order_t])
        seeds = MappingSet.from_pairs(
            [(kg_s.label_index[f"s{u}"], kg_t.label_index[f"t{u}"]) for u in seeded]
        )
        subtask = whole_graph_subtask(
            kg_s,
            kg_t,
            seeds,
            [kg_s.label_index[f"s{u}"] for u in free],
            [kg_t.label_index[f"t{u}"] for u in free],
        )
        sim = BuiltinMatcher(rounds=3, threshold=0.2, top_k_store=100).match(subtask)
        return labelled_scores(sim, kg_s, kg_t)

    identity = solve(range(30), range(30))
    relabelled = solve(rng.permutation(30).tolist(), rng.permutation(30).tolist())
    assert identity
    assert identity.keys() == relabelled.keys()
    for label, row in identity.items():
        assert relabelled[label] == pytest.approx(row)


def test_builtin_without_seeds_returns_empty(caplog):
    kg_s, kg_t = twin_graphs()
    subtask = whole_graph_subtask(kg_s, kg_t, MappingSet(), range(5), range(5))
    with caplog.at_level(logging.WARNING, logger="matchers.builtin"):
        sim = BuiltinMatcher().match(subtask)
    assert sim.is_empty()
    assert "нет seed" in caplog.text


def matcher_script(tmp_path, body: str) -> str:
    script = tmp_path / "matcher.py"
    script.write_text("import json, sys, time\nrequest = json.loads(sys.stdin.readline())\n" + body, encoding="utf-8")
    return f"{shlex.quote(sys.executable)} {shlex.quote(str(script))}"


RANK_ALL = """
scores = {s: [[c, 1.0 / (i + 1)] for i, c in enumerate(cands)] for s, cands in request["candidates"].items()}
print(json.dumps({"subtask_id": request["subtask_id"], "scores": scores}))
"""


def test_external_matcher_round_trip(tmp_path):
    kg_s, kg_t, subtask = twin_subtask()
    matcher = ExternalMatcher(matcher_script(tmp_path, RANK_ALL), kg_s, kg_t, timeout=30, retries=0)
    request = matcher.build_request(subtask, iteration=2)
    assert request["iteration"] == 2
    assert request["seeds"] == [["s3", "t3"]]
    assert request["candidates"]["s0"] == ["t0", "t1", "t2", "t4"]
    assert len(request["source"]["triples"]) == len(EDGES)

    sim = matcher.match(subtask, iteration=2)
    assert sim.row(0)[0] == (0, 1.0)
    assert sim.sources() == {0, 1, 2, 4}


def test_external_matcher_rejects_unknown_target(tmp_path):
    kg_s, kg_t, subtask = twin_subtask()
    body = 'print(json.dumps({"subtask_id": request["subtask_id"], "scores": {"s0": [["nope", 1.0]]}}))\n'
    matcher = ExternalMatcher(matcher_script(tmp_path, body), kg_s, kg_t, timeout=30, retries=2)
    with pytest.raises(MatcherProtocolError):
        matcher.match(subtask)


@pytest.mark.parametrize("response", [
    {"subtask_id": 99, "scores": {}},
    {"subtask_id": 0},
    {"subtask_id": 0, "scores": {"s3": [["t0", 1.0]]}},
    {"subtask_id": 0, "scores": {"s0": [["t0", "high"]]}},
    {"subtask_id": 0, "scores": {"s0": [["t0"]]}},
])
def test_parse_response_validation(response):
    kg_s, kg_t, subtask = twin_subtask()
    matcher = ExternalMatcher("unused", kg_s, kg_t)
    with pytest.raises(MatcherProtocolError):
        matcher.parse_response(response, subtask)


def test_external_matcher_timeout(tmp_path):
    kg_s, kg_t, subtask = twin_subtask()
    matcher = ExternalMatcher(matcher_script(tmp_path, "time.sleep(10)\n"), kg_s, kg_t, timeout=0.5, retries=0)
    with pytest.raises(MatcherTimeout):
        matcher.match(subtask)


def test_external_matcher_nonzero_exit(tmp_path):
    kg_s, kg_t, subtask = twin_subtask()
    matcher = ExternalMatcher(matcher_script(tmp_path, "sys.exit(3)\n"), kg_s, kg_t, timeout=30, retries=0)
    with pytest.raises(MatcherError) as info:
        matcher.match(subtask)
    assert not isinstance(info.value, MatcherProtocolError)


def test_external_matcher_retries_after_crash(tmp_path):
    kg_s, kg_t, subtask = twin_subtask()
    marker = tmp_path / "attempted"
    body = (
        f"import os\nmarker = {str(marker)!r}\n"
        "if not os.path.exists(marker):\n    open(marker, 'w').close()\n    sys.exit(1)\n"
    ) + RANK_ALL
    matcher = ExternalMatcher(matcher_script(tmp_path, body), kg_s, kg_t, timeout=30, retries=1)
    assert not matcher.match(subtask).is_empty()


def test_parse_matcher_spec():
    kg_s, kg_t = twin_graphs()
    assert isinstance(parse_matcher_spec("builtin", rounds=1), BuiltinMatcher)
    external = parse_matcher_spec("external:python run.py", kg_s, kg_t, timeout=5)
    assert isinstance(external, ExternalMatcher)
    assert external.command == "python run.py"
    assert external.timeout == 5
    with pytest.raises(ConfigurationError):
        parse_matcher_spec("external:python run.py")
    with pytest.raises(ConfigurationError):
        parse_matcher_spec("external:", kg_s, kg_t)
    with pytest.raises(ConfigurationError):
        parse_matcher_spec("gcn")
    assert is_valid_matcher_spec("external:x")
    assert not is_valid_matcher_spec("external: ")
