import numpy as np
import pytest

from conftest import write_lines
from kg.graph import dump_kg, from_triples, load_kg
from utils.exceptions import KGParseError
from utils.states import Side


def test_symmetric_pair_loads_as_one_edge(tmp_path):
    path = write_lines(tmp_path / "rel_triples_1", [("a", "r", "b"), ("b", "r", "a")])
    kg = load_kg(path)
    assert kg.entity_count == 2
    assert kg.relation_count == 1
    assert len(kg.triples) == 2
    assert kg.neighbors(kg.entity_id("a")).tolist() == [kg.entity_id("b")]
    assert kg.edge_count() == 1


def test_duplicate_lines_are_stored_once(tmp_path):
    path = write_lines(tmp_path / "t", [("a", "r", "b"), ("a", "r", "b")])
    assert len(load_kg(path).triples) == 1


def test_first_appearance_interning():
    kg = from_triples([("c", "p", "a"), ("a", "q", "b")])
    assert kg.entity_labels == ["c", "a", "b"]
    assert kg.relation_labels == ["p", "q"]
    assert kg.triples.tolist() == [[0, 0, 1], [1, 1, 2]]


def test_directory_layout_selects_side_file(tmp_path):
    write_lines(tmp_path / "rel_triples_1", [("a", "r", "b")])
    write_lines(tmp_path / "rel_triples_2", [("x", "r", "y"), ("y", "r", "z")])
    assert load_kg(str(tmp_path), Side.SOURCE).entity_count == 2
    assert load_kg(str(tmp_path), Side.TARGET).entity_count == 3


def test_wrong_field_count_reports_line(tmp_path):
    path = tmp_path / "bad"
    path.write_text("a\tr\tb\n\na\tb\n", encoding="utf-8")
    with pytest.raises(KGParseError) as err:
        load_kg(str(path))
    assert err.value.line_no == 3
    assert ":3:" in str(err.value)


def test_empty_and_missing_files_are_errors(tmp_path):
    empty = tmp_path / "empty"
    empty.write_text("\n", encoding="utf-8")
    with pytest.raises(KGParseError):
        load_kg(str(empty))
    with pytest.raises(KGParseError):
        load_kg(str(tmp_path / "nope"))


def test_adjacency_is_sorted_symmetric_and_self_free():
    kg = from_triples([("a", "r", "a"), ("a", "r", "c"), ("b", "r", "a"), ("c", "s", "b"), ("c", "r", "a")])
    total = 0
    for u in range(kg.entity_count):
        nbrs = kg.neighbors(u).tolist()
        assert nbrs == sorted(set(nbrs))
        assert u not in nbrs
        for v in nbrs:
            assert u in kg.neighbors(v).tolist()
        total += len(nbrs)
    assert total % 2 == 0
    matrix = kg.adjacency_matrix()
    assert (matrix != matrix.T).nnz == 0


def test_dump_and_reload_is_identical(tmp_path, planted):
    kg = planted.kg_t
    path = str(tmp_path / "dump")
    dump_kg(kg, path)
    again = load_kg(path)
    assert again.entity_labels == kg.entity_labels
    assert again.relation_labels == kg.relation_labels
    np.testing.assert_array_equal(again.triples, kg.triples)
    np.testing.assert_array_equal(again.indptr, kg.indptr)
    np.testing.assert_array_equal(again.indices, kg.indices)


def test_induced_triples_keep_only_internal_edges(path_kg):
    a, x, u = (path_kg.entity_id(e) for e in "axu")
    induced = path_kg.induced_triples({a, x})
    assert induced.tolist() == [[a, 0, x]]
    assert len(path_kg.induced_triples({a, u})) == 0
