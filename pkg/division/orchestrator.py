"""Модуль итеративного выполнения разбитой задачи выравнивания.

Разбиение исходного графа, затем на каждой итерации для каждой группы:
кандидаты (локальность + сходство прошлой итерации), контексты,
сопоставитель, ранжирования и pseudo-пары. Подзадачи одной итерации
независимы и могут выполняться параллельно; все слияния (предсказания,
pseudo-пары, хранилища сходства) выполняются после барьера в порядке
возрастания номера группы.
"""

import glob
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Tuple, Union

import numpy as np

import database
from config import RunConfig
from database import crud
from division.context import (
    ContextGraph,
    SizeBudget,
    Subtask,
    assemble_subtask,
    build_source_context,
    build_target_context,
    subtask_manifest,
    trim_anchors,
)
from division.counterparts import (
    SimilarityStore,
    accumulate_similarity,
    generate_pseudo_mappings,
    group_seed_mappings,
    normalize_similarity,
    score_targets,
    select_candidates,
)
from division.evidence import EvidenceConfig
from division.metrics import Metrics, candidate_recall, evaluate
from division.partition import (
    Partition,
    edge_cut,
    load_partition_file,
    partition_assignment,
    partitions_from_assignment,
)
from kg.graph import KnowledgeGraph, load_kg
from kg.mappings import Mapping, MappingSet, load_links, load_mappings, write_mappings
from matchers.builtin import BuiltinMatcher
from matchers.external import ExternalMatcher, parse_matcher_spec
from matchers.similarity import CandidateRanking, SimilarityMatrix, predict
from utils.exceptions import ConfigurationError, MatcherError, NoLocalEvidence
from utils.states import Provenance, RunStatus, Side, SubtaskStatus

logger = logging.getLogger(__name__)

PREDICTIONS_FILE = "predictions.tsv"
RANKINGS_FILE = "rankings.jsonl"
METRICS_FILE = "metrics.json"
PARTITION_FILE = "partition.json"
RUN_CONFIG_FILE = "run_config.json"
MANIFEST_DIR = "manifests"

Matcher = Union[BuiltinMatcher, ExternalMatcher]


@dataclass
class SubtaskResult:
    """Результат одной подзадачи (вычисляется без изменения состояния запуска)."""

    group: int
    status: SubtaskStatus
    source_context: Optional[ContextGraph] = None
    subtask: Optional[Subtask] = None
    similarity: Optional[SimilarityMatrix] = None
    rankings: Dict[int, CandidateRanking] = field(default_factory=dict)
    predicted: MappingSet = field(default_factory=MappingSet)
    pseudo: List[Tuple[int, int, float]] = field(default_factory=list)
    manifest: Optional[Dict] = None
    used_global_anchors: bool = False
    seconds: float = 0.0
    message: Optional[str] = None

    @property
    def candidates(self) -> FrozenSet[int]:
        return self.subtask.candidates if self.subtask is not None else frozenset()

    def record(self) -> Dict:
        """Сводка для файла метрик и реестра запусков."""
        sub = self.subtask
        return {
            "group": self.group,
            "status": self.status.value,
            "source_size": sub.source.size if sub else 0,
            "target_size": sub.target.size if sub else 0,
            "n_candidates": len(sub.candidates) if sub else 0,
            "n_seeds": len(sub.seeds) if sub else 0,
            "seconds": round(self.seconds, 6),
            "message": self.message,
        }


@dataclass
class RunState:
    """Состояние запуска между итерациями.

    Attributes:
        seeds (MappingSet): Seed-сопоставления (не меняются)
        pseudo (MappingSet): Накопленные pseudo-пары (только растут)
        predictions (MappingSet): Top-1 предсказания последней итерации
        rankings (Dict[int, CandidateRanking]): Ранжирования последней итерации
        coverage (Dict[int, FrozenSet[int]]): Источник -> кандидаты его подзадачи
        source_contexts (Dict[int, ContextGraph]): Кэш исходных контекстов по группам
        stores (Dict[int, SimilarityStore]): Хранилища w_sim по группам
        history (List[Dict]): Метрики по итерациям
        manifests (Dict[int, Dict]): Манифесты подзадач последней итерации
    """

    seeds: MappingSet
    pseudo: MappingSet = field(default_factory=MappingSet)
    predictions: MappingSet = field(default_factory=MappingSet)
    rankings: Dict[int, CandidateRanking] = field(default_factory=dict)
    coverage: Dict[int, FrozenSet[int]] = field(default_factory=dict)
    source_contexts: Dict[int, ContextGraph] = field(default_factory=dict)
    stores: Dict[int, SimilarityStore] = field(default_factory=dict)
    history: List[Dict] = field(default_factory=list)
    manifests: Dict[int, Dict] = field(default_factory=dict)
    iteration: int = 0

    def known(self) -> MappingSet:
        """seed и pseudo вместе (один-к-одному)."""
        return self.seeds.union(self.pseudo)


@dataclass(frozen=True)
class RunOutcome:
    predictions: MappingSet
    metrics: Metrics
    history: List[Dict]
    run_id: Optional[int] = None


def auto_max_size(kg_s: KnowledgeGraph, kg_t: KnowledgeGraph, n_subtasks: int) -> int:
    """S по умолчанию: ceil(2 * (|Es| + |Et|) / N), не больше |Es| + |Et|."""
    total = kg_s.entity_count + kg_t.entity_count
    return min(total, math.ceil(2 * total / n_subtasks))


def merge_extra_seeds(seeds: MappingSet, extra: MappingSet) -> MappingSet:
    """Оставляет внешние пары (provenance = pseudo), не конфликтующие с seed."""
    used_sources = seeds.sources()
    used_targets = seeds.targets()
    kept = []
    dropped = 0
    for m in extra:
        if m.source in used_sources or m.target in used_targets:
            dropped += 1
            continue
        kept.append(Mapping(m.source, m.target, Provenance.PSEUDO))
    if dropped:
        logger.warning(f"Отброшено внешних пар, конфликтующих с seed: {dropped}")
    return MappingSet.from_mappings(kept)


class DivisionEngine:
    """Выполняет итерации над готовым разбиением.

    Attributes:
        config (RunConfig): Параметры запуска
        kg_s, kg_t (KnowledgeGraph): Исходный и целевой графы
        partitions (List[Partition]): Части исходного графа
        test (MappingSet): Тестовые пары (могут отсутствовать)
        matcher (Matcher): Сопоставитель подзадач
        state (RunState): Состояние между итерациями
    """

    def __init__(
        self,
        config: RunConfig,
        kg_s: KnowledgeGraph,
        kg_t: KnowledgeGraph,
        partitions: List[Partition],
        seeds: MappingSet,
        test: Optional[MappingSet] = None,
        matcher: Optional[Matcher] = None,
        extra: Optional[MappingSet] = None,
        run_id: Optional[int] = None,
    ):
        config.validate()
        if len(seeds) == 0:
            raise ConfigurationError("Нет seed-сопоставлений: выравнивание невозможно")
        self.config = config
        self.kg_s = kg_s
        self.kg_t = kg_t
        self.partitions = partitions
        self.test = test if test is not None else MappingSet()
        self.max_size = config.max_size or auto_max_size(kg_s, kg_t, config.n_subtasks)
        self.budget = SizeBudget(self.max_size, config.delta1, config.delta2)
        self.evidence = EvidenceConfig(config.depth, config.lam)
        self.matcher = matcher or parse_matcher_spec(
            config.matcher,
            kg_s,
            kg_t,
            rounds=config.matcher_rounds,
            threshold=config.matcher_threshold,
            timeout=config.matcher_timeout,
            retries=config.matcher_retries,
            top_k_store=config.top_k_store,
        )
        self.run_id = run_id
        self.state = RunState(seeds=seeds, pseudo=extra if extra is not None else MappingSet())
        self.state.stores = {p.index: SimilarityStore() for p in partitions}
        self._source_anchors = seeds.anchors(Side.SOURCE)
        self._target_anchors = seeds.anchors(Side.TARGET)
        self._check_budget()

    def _check_budget(self) -> None:
        """Проверяет до первой итерации, что каждая группа помещается в бюджет."""
        for p in self.partitions:
            if len(p.unmatched) > self.budget.source_budget:
                raise ConfigurationError(
                    f"Группа {p.index}: {len(p.unmatched)} несопоставленных сущностей не помещаются "
                    f"в бюджет исходного контекста {self.budget.source_budget} (S={self.max_size}, "
                    f"delta1={self.config.delta1}); увеличьте S или N"
                )
            if self.budget.candidate_quota(self.budget.source_budget) < 1:
                raise ConfigurationError(
                    f"Группа {p.index}: при S={self.max_size} не остаётся места для кандидатов"
                )

    def _target_anchor_set(self, partition: Partition) -> Tuple[FrozenSet[int], bool]:
        """Целевые якоря для весов близости: только seed-пары группы.

        pseudo-пары сюда не попадают, они лишь дополняют seed сопоставителя.
        """
        local = group_seed_mappings(partition, self.state.seeds).targets()
        if local:
            return local, False
        logger.warning(f"Группа {partition.index}: нет локальных якорей, используются все целевые якоря")
        return self.state.seeds.targets(), True

    def run_subtask(self, partition: Partition, iteration: int) -> SubtaskResult:
        """Выполняет подзадачу группы; состояние запуска только читается.

        Raises:
            MatcherError: Сбой сопоставителя в строгом режиме
        """
        started = time.perf_counter()
        group = partition.index
        state = self.state
        if not partition.unmatched:
            logger.warning(f"Группа {group}: все сущности сопоставлены, подзадача пропущена")
            return SubtaskResult(group, SubtaskStatus.SKIPPED, message="пустая группа")

        source_ctx = state.source_contexts.get(group)
        if source_ctx is None:
            source_ctx = build_source_context(
                self.kg_s,
                partition.unmatched,
                self._source_anchors,
                self.budget.source_budget,
                self.evidence,
                group=group,
            )

        known = state.known()
        anchors, used_global = self._target_anchor_set(partition)
        use_store = iteration > 1 and not self.config.locality_only
        try:
            weights = score_targets(
                self.kg_t,
                anchors,
                self.config.radius,
                self.config.beta,
                store=state.stores.get(group) if use_store else None,
                exclude=self._target_anchors,
            )
        except NoLocalEvidence as e:
            return SubtaskResult(group, SubtaskStatus.SKIPPED, source_context=source_ctx, message=str(e))

        quota = self.budget.candidate_quota(source_ctx.size)
        candidates = select_candidates(partition.unmatched, self.kg_t, weights, quota, self._target_anchors)
        if not candidates:
            logger.warning(f"Группа {group}: пустое множество кандидатов, подзадача пропущена")
            return SubtaskResult(
                group, SubtaskStatus.SKIPPED, source_context=source_ctx, message="нет кандидатов"
            )

        target_budget = self.budget.target_budget_for(source_ctx.size)
        context_anchors = frozenset(
            t for t in (state.seeds.target_of(s) for s in source_ctx.anchors) if t is not None
        )
        keep = target_budget - len(candidates)
        if len(context_anchors) > keep:
            logger.debug(f"Группа {group}: целевых якорей {len(context_anchors)}, остаётся {keep}")
            context_anchors = trim_anchors(self.kg_t, context_anchors, candidates, keep, self.evidence)
        target_ctx = build_target_context(self.kg_t, candidates, context_anchors, target_budget, self.evidence)
        subtask = assemble_subtask(group, source_ctx, target_ctx, known, self.max_size)
        manifest = subtask_manifest(subtask, self.kg_s, self.kg_t, iteration)

        try:
            sim = self.matcher.match(subtask, iteration)
        except MatcherError as e:
            if self.config.strict:
                raise
            logger.error(f"Группа {group}: сбой сопоставителя: {e}")
            return SubtaskResult(
                group,
                SubtaskStatus.FAILED,
                source_context=source_ctx,
                subtask=subtask,
                manifest=manifest,
                used_global_anchors=used_global,
                seconds=time.perf_counter() - started,
                message=str(e),
            )

        rankings, predicted = predict(sim, candidates, subtask.sources)
        pseudo = generate_pseudo_mappings(
            sim, subtask.sources, candidates, self.config.matcher_threshold
        )
        scored = [(m.source, m.target, sim.score(m.source, m.target) or 0.0) for m in pseudo]
        seconds = time.perf_counter() - started
        logger.debug(
            f"Группа {group}: источник {source_ctx.size}, цель {target_ctx.size}, "
            f"кандидатов {len(candidates)}, seed {len(subtask.seeds)}, "
            f"предсказаний {len(predicted)}, pseudo {len(scored)}, {seconds:.2f} с"
        )
        return SubtaskResult(
            group,
            SubtaskStatus.DONE,
            source_context=source_ctx,
            subtask=subtask,
            similarity=sim,
            rankings=rankings,
            predicted=predicted,
            pseudo=scored,
            manifest=manifest,
            used_global_anchors=used_global,
            seconds=seconds,
        )

    def run_iteration(self, iteration: int) -> Dict:
        """Выполняет все подзадачи итерации и сливает результаты после барьера."""
        started = time.perf_counter()
        if self.config.parallelism > 1:
            with ThreadPoolExecutor(max_workers=self.config.parallelism) as pool:
                results = list(pool.map(lambda p: self.run_subtask(p, iteration), self.partitions))
        else:
            results = [self.run_subtask(p, iteration) for p in self.partitions]
        results.sort(key=lambda r: r.group)
        return self.merge(results, iteration, time.perf_counter() - started)

    def merge(self, results: List[SubtaskResult], iteration: int, seconds: float = 0.0) -> Dict:
        """Слияние результатов итерации в порядке возрастания группы."""
        state = self.state
        predicted: List[Mapping] = []
        rankings: Dict[int, CandidateRanking] = {}
        coverage: Dict[int, FrozenSet[int]] = {}
        manifests: Dict[int, Dict] = {}
        offered: List[Tuple[int, int, float]] = []

        for result in results:
            if result.source_context is not None and result.group not in state.source_contexts:
                state.source_contexts[result.group] = result.source_context
            if result.subtask is not None:
                for s in result.subtask.sources:
                    coverage[s] = result.subtask.candidates
                manifests[result.group] = result.manifest
            if result.status != SubtaskStatus.DONE:
                continue
            predicted.extend(result.predicted)
            rankings.update(result.rankings)
            offered.extend(result.pseudo)
            raw = accumulate_similarity(
                result.similarity, result.subtask.sources, result.candidates, self.config.top_k
            )
            normalize_similarity(
                raw, self.config.alpha, result.candidates, state.stores[result.group], iteration
            )

        state.predictions = MappingSet.from_mappings(predicted)
        state.rankings = rankings
        state.coverage = coverage
        state.manifests = manifests
        admitted = self._admit_pseudo(offered)
        state.iteration = iteration

        metrics = evaluate(rankings, self.test, coverage)
        recall = candidate_recall(
            self.test, [r.candidates for r in results if r.subtask is not None]
        )
        records = [r.record() for r in results]
        entry = {
            "iteration": iteration,
            **metrics.to_dict(),
            "candidate_recall": recall,
            "n_pseudo": len(state.pseudo),
            "n_pseudo_new": admitted,
            "n_known": len(state.seeds) + len(state.pseudo),
            "n_predictions": len(state.predictions),
            "n_subtasks": sum(1 for r in results if r.status == SubtaskStatus.DONE),
            "n_failed": sum(1 for r in results if r.status == SubtaskStatus.FAILED),
            "seconds": round(seconds, 6),
            "subtasks": records,
        }
        state.history.append(entry)
        self._persist(iteration, entry)
        logger.info(
            f"Итерация {iteration}: H@1={metrics.hits1:.4f} H@5={metrics.hits5:.4f} "
            f"MRR={metrics.mrr:.4f} покрытие={metrics.coverage_recall:.4f} "
            f"кандидаты={recall:.4f}, pseudo +{admitted} (всего {len(state.pseudo)}), {seconds:.1f} с"
        )
        return entry

    def _admit_pseudo(self, offered: List[Tuple[int, int, float]]) -> int:
        """Добавляет новые pseudo-пары: по убыванию оценки, затем по id источника.

        Пара принимается, только если её оценка не ниже порога сопоставителя
        и ни один её конец ещё не занят.
        """
        threshold = self.config.matcher_threshold
        state = self.state
        known = state.known()
        used_sources = set(known.sources())
        used_targets = set(known.targets())
        admitted: List[Mapping] = []
        for s, t, score in sorted(offered, key=lambda item: (-item[2], item[0])):
            if score < threshold:
                break
            if s in used_sources or t in used_targets:
                continue
            used_sources.add(s)
            used_targets.add(t)
            admitted.append(Mapping(s, t, Provenance.PSEUDO))
        if admitted:
            state.pseudo = state.pseudo.union(MappingSet.from_mappings(admitted))
        return len(admitted)

    def _persist(self, iteration: int, entry: Dict) -> None:
        if self.run_id is None or database.engine is None:
            return
        with database.get_db() as db:
            crud.record_iteration(db, self.run_id, iteration, entry)
            for record in entry["subtasks"]:
                crud.record_subtask(
                    db,
                    self.run_id,
                    iteration,
                    record["group"],
                    SubtaskStatus(record["status"]),
                    source_size=record["source_size"],
                    target_size=record["target_size"],
                    n_candidates=record["n_candidates"],
                    n_seeds=record["n_seeds"],
                    seconds=record["seconds"],
                    message=record["message"],
                )

    def run(self) -> Metrics:
        """Выполняет все итерации; возвращает метрики последней."""
        logger.info(
            f"Запуск: N={len(self.partitions)}, S={self.max_size}, итераций {self.config.iterations}, "
            f"seed {len(self.state.seeds)}, тест {len(self.test)}, сопоставитель {self.matcher!r}"
        )
        for iteration in range(1, self.config.iterations + 1):
            self.run_iteration(iteration)
        return evaluate(self.state.rankings, self.test, self.state.coverage)


def partition_stats(kg_s: KnowledgeGraph, assignment: np.ndarray, partitions: List[Partition]) -> Dict:
    return {
        "n_parts": len(partitions),
        "edge_cut": edge_cut(kg_s, assignment),
        "sizes": [len(p.entities) for p in partitions],
        "unmatched": [len(p.unmatched) for p in partitions],
    }


def _write_json(path: str, payload: Dict) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, ensure_ascii=False, indent=2)


def write_outputs(engine: DivisionEngine, out_dir: str, metrics: Metrics) -> None:
    """Записывает предсказания, ранжирования, метрики и манифесты последней итерации."""
    state = engine.state
    kg_s, kg_t = engine.kg_s, engine.kg_t
    write_mappings(os.path.join(out_dir, PREDICTIONS_FILE), state.predictions, kg_s, kg_t)

    groups = {s: g for g, manifest in state.manifests.items() for s in manifest["source"]["unmatched"]}
    with open(os.path.join(out_dir, RANKINGS_FILE), "w", encoding="utf-8") as f:
        for s in sorted(state.rankings):
            label = kg_s.entity_labels[s]
            line = {
                "source": label,
                "group": groups.get(label),
                "scores": [[kg_t.entity_labels[t], score] for t, score in state.rankings[s].head],
            }
            f.write(json.dumps(line, ensure_ascii=False) + "\n")

    manifest_dir = os.path.join(out_dir, MANIFEST_DIR)
    os.makedirs(manifest_dir, exist_ok=True)
    for old in glob.glob(os.path.join(manifest_dir, "subtask_*.json")):
        os.remove(old)
    for group, manifest in state.manifests.items():
        _write_json(os.path.join(manifest_dir, f"subtask_{group}.json"), manifest)

    _write_json(os.path.join(out_dir, METRICS_FILE), {
        **metrics.to_dict(),
        "max_size": engine.max_size,
        "history": state.history,
    })


def run(config: RunConfig, data_dir: str, out_dir: str) -> RunOutcome:
    """Полный запуск: загрузка, разбиение, итерации, запись результатов.

    Raises:
        DivisionError: Ошибки данных и параметров (до первой итерации),
            сбой сопоставителя в строгом режиме
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    kg_s = load_kg(data_dir, Side.SOURCE)
    kg_t = load_kg(data_dir, Side.TARGET)
    seeds, test = load_links(data_dir, kg_s, kg_t, config.train_ratio, config.rng_seed)
    if len(seeds) == 0:
        raise ConfigurationError("Нет seed-сопоставлений: выравнивание невозможно")
    extra = None
    if config.extra_seeds:
        extra = merge_extra_seeds(seeds, load_mappings(config.extra_seeds, kg_s, kg_t, Provenance.PSEUDO))

    if config.partition_file:
        assignment, n_parts = load_partition_file(config.partition_file, kg_s)
        if n_parts != config.n_subtasks:
            logger.warning(f"Файл разбиения задаёт {n_parts} частей вместо {config.n_subtasks}")
    else:
        n_parts = config.n_subtasks
        assignment = partition_assignment(kg_s, n_parts, config.balance_slack, config.rng_seed)
    partitions = partitions_from_assignment(assignment, n_parts, seeds)
    _write_json(os.path.join(out_dir, PARTITION_FILE), partition_stats(kg_s, assignment, partitions))
    _write_json(os.path.join(out_dir, RUN_CONFIG_FILE), {"data_dir": os.path.abspath(data_dir), **config.to_dict()})

    engine = DivisionEngine(config, kg_s, kg_t, partitions, seeds, test, extra=extra)

    database.configure(config.db_url or database.default_url(out_dir))
    with database.get_db() as db:
        run_record = crud.create_run(db, os.path.abspath(data_dir), os.path.abspath(out_dir), config.to_dict())
    engine.run_id = run_record.run_id if run_record else None

    try:
        metrics = engine.run()
    except Exception:
        _finish(engine.run_id, RunStatus.FAILED)
        raise
    write_outputs(engine, out_dir, metrics)
    _finish(engine.run_id, RunStatus.FINISHED)
    logger.info(
        f"Готово: предсказаний {len(engine.state.predictions)}, H@1={metrics.hits1:.4f}, "
        f"покрытие={metrics.coverage_recall:.4f}; результаты в {out_dir}"
    )
    return RunOutcome(engine.state.predictions, metrics, engine.state.history, engine.run_id)


def _finish(run_id: Optional[int], status: RunStatus) -> None:
    if run_id is None:
        return
    with database.get_db() as db:
        crud.finish_run(db, run_id, status)


def evaluate_run(out_dir: str) -> Metrics:
    """Пересчитывает метрики по сохранённым ранжированиям и манифестам.

    Raises:
        ConfigurationError: В каталоге нет результатов запуска
    """
    config_path = os.path.join(out_dir, RUN_CONFIG_FILE)
    rankings_path = os.path.join(out_dir, RANKINGS_FILE)
    if not os.path.exists(config_path) or not os.path.exists(rankings_path):
        raise ConfigurationError(f"В {out_dir} нет результатов запуска ({RUN_CONFIG_FILE}, {RANKINGS_FILE})")
    with open(config_path, encoding="utf-8") as f:
        saved = json.load(f)
    config = RunConfig.from_dict(saved)
    data_dir = saved["data_dir"]
    kg_s = load_kg(data_dir, Side.SOURCE)
    kg_t = load_kg(data_dir, Side.TARGET)
    _, test = load_links(data_dir, kg_s, kg_t, config.train_ratio, config.rng_seed)

    coverage: Dict[int, FrozenSet[int]] = {}
    pools: Dict[int, np.ndarray] = {}
    for path in sorted(glob.glob(os.path.join(out_dir, MANIFEST_DIR, "subtask_*.json"))):
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
        candidates = frozenset(kg_t.label_index[t] for t in manifest["target"]["candidates"])
        pool = np.array(sorted(candidates), dtype=np.int64)
        for label in manifest["source"]["unmatched"]:
            s = kg_s.label_index[label]
            coverage[s] = candidates
            pools[s] = pool

    rankings: Dict[int, CandidateRanking] = {}
    with open(rankings_path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            s = kg_s.label_index[row["source"]]
            head = tuple((kg_t.label_index[t], float(score)) for t, score in row["scores"])
            pool = pools.get(s, np.array(sorted(t for t, _ in head), dtype=np.int64))
            rankings[s] = CandidateRanking(pool, head)

    metrics = evaluate(rankings, test, coverage)
    logger.info(f"Метрики по {rankings_path}: {metrics.to_dict()}")
    return metrics
