"""Модуль для работы с внешним сопоставителем через подпроцесс.

Протокол: движок пишет в stdin одну строку JSON с запросом подзадачи,
процесс отвечает одной строкой JSON со списками оценок и завершается
с кодом 0. Один процесс обслуживает ровно одну подзадачу.
"""

import json
import logging
import math
import shlex
import subprocess
from typing import Dict, Optional, Tuple, Union

from tenacity import (
    Retrying,
    retry_if_exception_type,
    retry_if_not_exception_type,
    stop_after_attempt,
    wait_exponential,
)

from division.context import ContextGraph, Subtask
from kg.graph import KnowledgeGraph
from matchers.builtin import BuiltinMatcher
from matchers.similarity import SimilarityMatrix
from utils.exceptions import ConfigurationError, MatcherError, MatcherProtocolError, MatcherTimeout

logger = logging.getLogger(__name__)

BUILTIN = "builtin"
EXTERNAL_PREFIX = "external:"


class ExternalMatcher:
    """Запускает внешнюю команду на каждую подзадачу.

    Attributes:
        command (str): Командная строка (разбивается shlex)
        timeout (float): Тайм-аут одного запуска в секундах
        retries (int): Число повторов при сбое (кроме ошибок протокола)
    """

    def __init__(
        self,
        command: str,
        kg_s: KnowledgeGraph,
        kg_t: KnowledgeGraph,
        timeout: float = 600.0,
        retries: int = 2,
        top_k_store: int = 50,
    ):
        if not command.strip():
            raise ConfigurationError("Пустая команда внешнего сопоставителя")
        self.command = command
        self.kg_s = kg_s
        self.kg_t = kg_t
        self.timeout = timeout
        self.retries = retries
        self.top_k_store = top_k_store

    def __repr__(self) -> str:
        return f"ExternalMatcher({self.command!r}, timeout={self.timeout})"

    def match(self, subtask: Subtask, iteration: int = 1) -> SimilarityMatrix:
        """Отправляет запрос подзадачи и разбирает ответ с повторами.

        Raises:
            MatcherTimeout: Процесс не уложился в тайм-аут (после всех повторов)
            MatcherProtocolError: Ответ не соответствует протоколу (без повторов)
            MatcherError: Ненулевой код возврата (после всех повторов)
        """
        request = self.build_request(subtask, iteration)
        retrying = Retrying(
            stop=stop_after_attempt(self.retries + 1),
            wait=wait_exponential(multiplier=1, min=1, max=10),
            retry=retry_if_exception_type(MatcherError) & retry_if_not_exception_type(MatcherProtocolError),
            reraise=True,
        )
        for attempt in retrying:
            with attempt:
                number = attempt.retry_state.attempt_number
                if number > 1:
                    logger.warning(f"Подзадача {subtask.group}: повторный запуск сопоставителя, попытка {number}")
                response = self._invoke(request)
        return self.parse_response(response, subtask)

    def _context_payload(self, context: ContextGraph, kg: KnowledgeGraph) -> Dict:
        labels = kg.entity_labels
        relations = kg.relation_labels
        return {
            "entities": [labels[e] for e in sorted(context.entities)],
            "triples": [[labels[h], relations[r], labels[t]] for h, r, t in context.induced_triples.tolist()],
        }

    def build_request(self, subtask: Subtask, iteration: int) -> Dict:
        """Запрос подзадачи в исходных строках сущностей."""
        s_labels = self.kg_s.entity_labels
        t_labels = self.kg_t.entity_labels
        candidates = [t_labels[t] for t in sorted(subtask.candidates)]
        return {
            "subtask_id": subtask.group,
            "iteration": iteration,
            "source": self._context_payload(subtask.source, self.kg_s),
            "target": self._context_payload(subtask.target, self.kg_t),
            "seeds": [[s_labels[m.source], t_labels[m.target]] for m in subtask.seeds],
            "candidates": {s_labels[s]: candidates for s in sorted(subtask.sources)},
        }

    def _invoke(self, request: Dict) -> Dict:
        payload = json.dumps(request, ensure_ascii=False) + "\n"
        try:
            completed = subprocess.run(
                shlex.split(self.command),
                input=payload,
                capture_output=True,
                text=True,
                encoding="utf-8",
                timeout=self.timeout,
                check=False,
            )
        except subprocess.TimeoutExpired as e:
            raise MatcherTimeout(f"Сопоставитель не ответил за {self.timeout} с") from e
        except OSError as e:
            raise MatcherError(f"Не удалось запустить сопоставитель '{self.command}': {e}") from e

        if completed.returncode != 0:
            tail = completed.stderr.strip().splitlines()[-5:]
            raise MatcherError(f"Сопоставитель завершился с кодом {completed.returncode}: {' | '.join(tail)}")

        lines = [line for line in completed.stdout.splitlines() if line.strip()]
        if not lines:
            raise MatcherProtocolError("Пустой ответ сопоставителя")
        try:
            response = json.loads(lines[0])
        except json.JSONDecodeError as e:
            raise MatcherProtocolError(f"Ответ сопоставителя не является JSON: {e}") from e
        if not isinstance(response, dict):
            raise MatcherProtocolError("Ответ сопоставителя должен быть объектом")
        return response

    def parse_response(self, response: Dict, subtask: Subtask) -> SimilarityMatrix:
        """Проверяет ответ и переводит строки сущностей в id.

        Raises:
            MatcherProtocolError: Чужой subtask_id, неизвестная сущность или неверная оценка
        """
        if response.get("subtask_id") != subtask.group:
            raise MatcherProtocolError(
                f"Ответ для подзадачи {response.get('subtask_id')!r}, ожидалась {subtask.group}"
            )
        scores = response.get("scores")
        if not isinstance(scores, dict):
            raise MatcherProtocolError("В ответе нет объекта scores")

        allowed_targets = subtask.candidates | subtask.target.anchors
        rows: Dict[int, Dict[int, float]] = {}
        for source_label, row in scores.items():
            source = self.kg_s.entity_id(source_label)
            if source is None or source not in subtask.sources:
                raise MatcherProtocolError(f"Неизвестный источник в ответе: '{source_label}'")
            if not isinstance(row, list):
                raise MatcherProtocolError(f"Строка '{source_label}' должна быть списком")
            parsed: Dict[int, float] = {}
            for item in row:
                target_label, value = _parse_item(item, source_label)
                target = self.kg_t.entity_id(target_label)
                if target is None or target not in allowed_targets:
                    raise MatcherProtocolError(f"Неизвестная цель в ответе: '{target_label}'")
                parsed[target] = value
            rows[source] = parsed
        return SimilarityMatrix.from_scores(rows, self.top_k_store)


def _parse_item(item, source_label: str) -> Tuple[str, float]:
    if not isinstance(item, (list, tuple)) or len(item) != 2:
        raise MatcherProtocolError(f"Элемент строки '{source_label}' должен быть парой [цель, оценка]")
    target_label, value = item
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise MatcherProtocolError(f"Неверная оценка {value!r} в строке '{source_label}'")
    return str(target_label), float(value)


def parse_matcher_spec(
    spec: str,
    kg_s: Optional[KnowledgeGraph] = None,
    kg_t: Optional[KnowledgeGraph] = None,
    rounds: int = 3,
    threshold: float = 0.5,
    timeout: float = 600.0,
    retries: int = 2,
    top_k_store: int = 50,
) -> Union[BuiltinMatcher, ExternalMatcher]:
    """Создаёт сопоставитель по строке 'builtin' или 'external:CMD'.

    Raises:
        ConfigurationError: Неизвестный вид сопоставителя
    """
    if spec == BUILTIN:
        return BuiltinMatcher(rounds, threshold, top_k_store)
    if spec.startswith(EXTERNAL_PREFIX):
        if kg_s is None or kg_t is None:
            raise ConfigurationError("Внешнему сопоставителю нужны оба графа")
        return ExternalMatcher(spec[len(EXTERNAL_PREFIX):], kg_s, kg_t, timeout, retries, top_k_store)
    raise ConfigurationError(f"Неизвестный сопоставитель '{spec}': ожидается builtin или external:CMD")


def is_valid_matcher_spec(spec: str) -> bool:
    return spec == BUILTIN or (spec.startswith(EXTERNAL_PREFIX) and bool(spec[len(EXTERNAL_PREFIX):].strip()))
