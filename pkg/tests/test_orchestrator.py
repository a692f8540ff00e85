import json
import os

import numpy as np
import pytest

import database
from config import RunConfig
from conftest import planted_instance
from database import crud
from division.orchestrator import (
    METRICS_FILE,
    PARTITION_FILE,
    PREDICTIONS_FILE,
    RANKINGS_FILE,
    DivisionEngine,
    auto_max_size,
    evaluate_run,
    merge_extra_seeds,
    run,
)
from division.partition import Partition, partition_source
from kg.mappings import MappingSet
from utils.exceptions import ConfigurationError, MatcherError
from utils.states import Provenance, RunStatus, SubtaskStatus


class FailingMatcher:
    def match(self, subtask, iteration=1):
        raise MatcherError("сопоставитель недоступен")


def make_config(**overrides):
    values = dict(n_subtasks=4, iterations=2, matcher_threshold=0.3, db_url=None)
    values.update(overrides)
    return RunConfig(**values)


def make_engine(planted, **overrides):
    config = make_config(**overrides)
    partitions = partition_source(planted.kg_s, config.n_subtasks, config.balance_slack, config.rng_seed, planted.seeds)
    return DivisionEngine(config, planted.kg_s, planted.kg_t, partitions, planted.seeds, planted.test)


def without_timing(history):
    cleaned = []
    for entry in history:
        entry = {k: v for k, v in entry.items() if k != "seconds"}
        entry["subtasks"] = [{k: v for k, v in r.items() if k != "seconds"} for r in entry["subtasks"]]
        cleaned.append(entry)
    return cleaned


def test_auto_max_size(planted):
    total = planted.kg_s.entity_count + planted.kg_t.entity_count
    assert auto_max_size(planted.kg_s, planted.kg_t, 4) == -(-2 * total // 4)
    assert auto_max_size(planted.kg_s, planted.kg_t, 1) == total


def test_merge_extra_seeds_drops_conflicts():
    seeds = MappingSet.from_pairs([(0, 10), (1, 11)])
    extra = MappingSet.from_pairs([(0, 12), (2, 11), (3, 13)])
    merged = merge_extra_seeds(seeds, extra)
    assert merged.as_tuples() == [(3, 13)]
    assert all(m.provenance == Provenance.PSEUDO for m in merged)


def test_subtasks_respect_size_limit(planted):
    engine = make_engine(planted)
    entry = engine.run_iteration(1)
    assert entry["n_subtasks"] == 4
    for manifest in engine.state.manifests.values():
        assert manifest["size"] <= engine.max_size
        assert manifest["source"]["size"] + manifest["target"]["size"] == manifest["size"]
    for record in entry["subtasks"]:
        assert record["source_size"] + record["target_size"] <= engine.max_size


def test_parallel_run_matches_sequential(planted):
    sequential = make_engine(planted, parallelism=1)
    parallel = make_engine(planted, parallelism=3)
    assert sequential.run() == parallel.run()
    assert sequential.state.predictions.as_tuples() == parallel.state.predictions.as_tuples()
    assert sequential.state.pseudo.as_tuples() == parallel.state.pseudo.as_tuples()
    assert without_timing(sequential.state.history) == without_timing(parallel.state.history)


def test_known_mappings_never_shrink(planted):
    engine = make_engine(planted, iterations=3)
    engine.run()
    known = [entry["n_known"] for entry in engine.state.history]
    assert known == sorted(known)
    assert known[0] >= len(planted.seeds)
    pseudo = engine.state.pseudo
    assert not (pseudo.sources() & planted.seeds.sources())
    assert not (pseudo.targets() & planted.seeds.targets())


def test_source_context_is_built_once(planted):
    engine = make_engine(planted)
    engine.run_iteration(1)
    cached = dict(engine.state.source_contexts)
    assert set(cached) == {p.index for p in engine.partitions}
    result = engine.run_subtask(engine.partitions[0], 2)
    assert result.source_context is cached[0]
    engine.run_iteration(2)
    assert all(engine.state.source_contexts[g] is ctx for g, ctx in cached.items())


def test_group_without_seeds_uses_global_anchors(planted):
    seed_sources = planted.seeds.sources()
    everything = frozenset(range(planted.kg_s.entity_count))
    free = sorted(everything - seed_sources)
    first = seed_sources | frozenset(free[: len(free) // 2])
    second = everything - first
    partitions = [
        Partition(0, first, first - seed_sources),
        Partition(1, second, second),
    ]
    total = planted.kg_s.entity_count + planted.kg_t.entity_count
    engine = DivisionEngine(
        make_config(n_subtasks=2, max_size=total), planted.kg_s, planted.kg_t, partitions, planted.seeds, planted.test
    )
    assert not engine.run_subtask(partitions[0], 1).used_global_anchors
    result = engine.run_subtask(partitions[1], 1)
    assert result.used_global_anchors
    assert result.status == SubtaskStatus.DONE


def test_single_subtask_covers_everything(planted):
    total = planted.kg_s.entity_count + planted.kg_t.entity_count
    engine = make_engine(planted, n_subtasks=1, max_size=3 * total, delta2=1.0, iterations=1)
    metrics = engine.run()
    assert metrics.coverage_recall == 1.0
    assert engine.state.history[0]["candidate_recall"] == 1.0


def test_matcher_failure_is_skipped_unless_strict(planted):
    engine = make_engine(planted, iterations=1)
    engine.matcher = FailingMatcher()
    entry = engine.run_iteration(1)
    assert entry["n_failed"] == 4
    assert entry["n_subtasks"] == 0
    assert entry["hits1"] == 0
    assert entry["coverage_recall"] > 0
    assert len(engine.state.predictions) == 0

    strict = make_engine(planted, iterations=1, strict=True)
    strict.matcher = FailingMatcher()
    with pytest.raises(MatcherError):
        strict.run_iteration(1)


def test_engine_rejects_bad_setups(planted):
    with pytest.raises(ConfigurationError):
        DivisionEngine(make_config(), planted.kg_s, planted.kg_t, [], MappingSet(), planted.test)
    with pytest.raises(ConfigurationError):
        make_engine(planted, max_size=10)


def test_full_run_writes_outputs(tmp_path, planted):
    out = tmp_path / "out"
    outcome = run(make_config(n_subtasks=3), planted.data_dir, str(out))

    for name in (PREDICTIONS_FILE, RANKINGS_FILE, METRICS_FILE, PARTITION_FILE):
        assert os.path.exists(out / name)
    assert len(os.listdir(out / "manifests")) == 3
    with open(out / METRICS_FILE, encoding="utf-8") as f:
        saved = json.load(f)
    assert [h["iteration"] for h in saved["history"]] == [1, 2]
    assert saved["hits1"] == outcome.metrics.hits1

    with open(out / PREDICTIONS_FILE, encoding="utf-8") as f:
        lines = [line.rstrip("\n").split("\t") for line in f]
    assert len(lines) == len(outcome.predictions)
    assert all(s.startswith("s") and t.startswith("t") for s, t in lines)

    assert evaluate_run(str(out)).to_dict() == pytest.approx(outcome.metrics.to_dict())

    with database.get_db() as db:
        history = crud.get_iteration_history(db, outcome.run_id)
        assert [h.iteration for h in history] == [1, 2]
        assert history[-1].hits1 == pytest.approx(outcome.metrics.hits1)
        assert crud.get_run(db, outcome.run_id).status == RunStatus.FINISHED
        assert len(crud.get_subtasks(db, outcome.run_id, iteration=1)) == 3


def test_evaluate_run_needs_results(tmp_path):
    with pytest.raises(ConfigurationError):
        evaluate_run(str(tmp_path))


def test_parallel_outputs_are_byte_identical(tmp_path, planted):
    outputs = {}
    for workers in (1, 8):
        out = tmp_path / f"out_{workers}"
        run(make_config(n_subtasks=4, parallelism=workers), planted.data_dir, str(out))
        files = {}
        for name in (PREDICTIONS_FILE, RANKINGS_FILE, PARTITION_FILE):
            files[name] = (out / name).read_bytes()
        for path in sorted((out / "manifests").iterdir()):
            files[path.name] = path.read_bytes()
        with open(out / METRICS_FILE, encoding="utf-8") as f:
            saved = json.load(f)
        saved["history"] = without_timing(saved["history"])
        files[METRICS_FILE] = saved
        outputs[workers] = files
    assert outputs[1] == outputs[8]


def test_pseudo_pairs_below_threshold_are_not_admitted(planted):
    engine = make_engine(planted, matcher_threshold=0.5)
    seed_source = next(iter(planted.seeds)).source
    free_sources = sorted(frozenset(range(planted.kg_s.entity_count)) - planted.seeds.sources())
    free_targets = sorted(frozenset(range(planted.kg_t.entity_count)) - planted.seeds.targets())
    offered = [
        (free_sources[0], free_targets[0], 0.9),
        (free_sources[1], free_targets[1], 0.49),
        (free_sources[2], free_targets[0], 0.8),
        (seed_source, free_targets[2], 0.95),
    ]
    assert engine._admit_pseudo(offered) == 1
    assert engine.state.pseudo.as_tuples() == [(free_sources[0], free_targets[0])]


def test_locality_anchors_come_from_seeds_only(planted):
    engine = make_engine(planted)
    engine.run_iteration(1)
    assert len(engine.state.pseudo) > 0
    for partition in engine.partitions:
        anchors, _ = engine._target_anchor_set(partition)
        assert anchors <= planted.seeds.targets()
        assert not anchors & engine.state.pseudo.targets()


@pytest.mark.slow
def test_subtask_size_holds_across_random_configurations(tmp_path):
    rng = np.random.default_rng(29)
    instances = [planted_instance(tmp_path, n=60, rng_seed=s) for s in (1, 2, 3, 4)]
    checked = 0
    for _ in range(100):
        planted = instances[int(rng.integers(len(instances)))]
        total = planted.kg_s.entity_count + planted.kg_t.entity_count
        overrides = dict(
            n_subtasks=int(rng.integers(1, 7)),
            max_size=int(rng.uniform(0.15, 1.2) * total),
            delta1=float(rng.uniform(0.3, 0.7)),
            delta2=float(rng.uniform(0.2, 1.0)),
            depth=int(rng.integers(1, 4)),
            iterations=int(rng.integers(1, 3)),
            rng_seed=int(rng.integers(1000)),
        )
        try:
            engine = make_engine(planted, **overrides)
        except ConfigurationError:
            continue
        engine.run()
        checked += 1
        for entry in engine.state.history:
            for record in entry["subtasks"]:
                assert record["source_size"] + record["target_size"] <= engine.max_size
        for manifest in engine.state.manifests.values():
            assert manifest["size"] <= engine.max_size
    assert checked >= 50


def share_of_each_kg(planted, fraction):
    return int(fraction * planted.kg_s.entity_count) + int(fraction * planted.kg_t.entity_count)


def acceptance_engine(planted, **overrides):
    values = dict(n_subtasks=4, iterations=3, db_url=None)
    values.update(overrides)
    config = RunConfig(**values)
    partitions = partition_source(planted.kg_s, config.n_subtasks, config.balance_slack, config.rng_seed, planted.seeds)
    return DivisionEngine(config, planted.kg_s, planted.kg_t, partitions, planted.seeds, planted.test)


@pytest.mark.slow
def test_planted_alignment_reaches_high_accuracy(tmp_path):
    planted = planted_instance(tmp_path, n=500, rng_seed=11)
    engine = acceptance_engine(planted, max_size=share_of_each_kg(planted, 0.6))
    metrics = engine.run()
    history = engine.state.history
    assert metrics.coverage_recall >= 0.95
    assert metrics.hits1 >= 0.9
    assert metrics.hits1 <= metrics.hits5 <= metrics.coverage_recall
    assert [h["n_known"] for h in history] == sorted(h["n_known"] for h in history)
    assert history[-1]["n_pseudo"] > 0


@pytest.mark.slow
def test_coverage_does_not_drop_under_tight_budget(tmp_path):
    planted = planted_instance(tmp_path, n=500, rng_seed=5)
    engine = acceptance_engine(planted, max_size=share_of_each_kg(planted, 0.3))
    engine.run()
    history = engine.state.history
    assert history[1]["coverage_recall"] >= history[0]["coverage_recall"]
    known = [h["n_known"] for h in history]
    assert known == sorted(known)


@pytest.mark.slow
def test_accuracy_degrades_gracefully_with_more_subtasks(tmp_path):
    planted = planted_instance(tmp_path, n=500, rng_seed=11)
    hits1 = {}
    for n_subtasks in (2, 8):
        engine = acceptance_engine(planted, n_subtasks=n_subtasks, iterations=2)
        metrics = engine.run()
        assert all(h["n_failed"] == 0 for h in engine.state.history)
        hits1[n_subtasks] = metrics.hits1
    assert 0 < hits1[8] <= hits1[2]
