"""Точка входа движка разбиения задачи выравнивания сущностей.

Команды:
- run: полный итеративный запуск над каталогом данных
- eval: пересчёт метрик по сохранённым результатам
- partition: только разбиение исходного графа
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

from config import Config, RunConfig
from division.orchestrator import evaluate_run, run
from division.partition import edge_cut, max_part_size, partition_assignment, write_partition_file
from kg.graph import load_kg
from utils.exceptions import DivisionError
from utils.states import Side

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="divea",
        description="Разбиение большой задачи выравнивания сущностей на подзадачи ограниченного размера",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default=Config.LOG_LEVEL, help="Уровень логирования")
    commands = parser.add_subparsers(dest="command", required=True)

    run_cmd = commands.add_parser("run", parents=[common], help="Итеративный запуск")
    run_cmd.add_argument("--data", required=True, help="Каталог rel_triples_1/2 и ent_links_*")
    run_cmd.add_argument("--out", required=True, help="Каталог результатов")
    run_cmd.add_argument("--num-subtasks", dest="n_subtasks", type=int)
    run_cmd.add_argument("--max-size", dest="max_size", type=int, help="S (0 - автоматически)")
    run_cmd.add_argument("--iterations", type=int)
    run_cmd.add_argument("--alpha", type=float)
    run_cmd.add_argument("--beta", type=float)
    run_cmd.add_argument("--lambda", dest="lam", type=float)
    run_cmd.add_argument("--top-k", dest="top_k", type=int)
    run_cmd.add_argument("--delta1", type=float)
    run_cmd.add_argument("--delta2", type=float)
    run_cmd.add_argument("--depth", type=int)
    run_cmd.add_argument("--matcher", help="builtin или external:CMD")
    run_cmd.add_argument("--parallelism", type=int)
    run_cmd.add_argument("--seed", dest="rng_seed", type=int)
    run_cmd.add_argument("--partition-file", dest="partition_file")
    run_cmd.add_argument("--strict", action="store_true", help="Прерывать запуск при сбое сопоставителя")
    run_cmd.add_argument("--radius", type=int)
    run_cmd.add_argument("--top-k-store", dest="top_k_store", type=int)
    run_cmd.add_argument("--matcher-rounds", dest="matcher_rounds", type=int)
    run_cmd.add_argument("--matcher-threshold", dest="matcher_threshold", type=float)
    run_cmd.add_argument("--matcher-timeout", dest="matcher_timeout", type=float)
    run_cmd.add_argument("--matcher-retries", dest="matcher_retries", type=int)
    run_cmd.add_argument("--balance-slack", dest="balance_slack", type=float)
    run_cmd.add_argument("--train-ratio", dest="train_ratio", type=float)
    run_cmd.add_argument("--extra-seeds", dest="extra_seeds", help="Дополнительные пары (provenance pseudo)")
    run_cmd.add_argument("--locality-only", dest="locality_only", action="store_true",
                         help="Отбирать кандидатов только по локальности")
    run_cmd.add_argument("--db-url", dest="db_url", help="SQLAlchemy URL реестра запусков")

    eval_cmd = commands.add_parser("eval", parents=[common], help="Пересчёт метрик по результатам")
    eval_cmd.add_argument("--out", required=True)

    part_cmd = commands.add_parser("partition", parents=[common], help="Разбиение исходного графа")
    part_cmd.add_argument("--data", required=True)
    part_cmd.add_argument("--num-subtasks", dest="n_subtasks", type=int, default=Config.NUM_SUBTASKS)
    part_cmd.add_argument("--out", help="Файл разбиения (по умолчанию stdout)")
    part_cmd.add_argument("--balance-slack", dest="balance_slack", type=float, default=Config.BALANCE_SLACK)
    part_cmd.add_argument("--seed", dest="rng_seed", type=int, default=Config.SEED)
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig.from_args(args)
    outcome = run(config, args.data, args.out)
    print(json.dumps(outcome.metrics.to_dict(), ensure_ascii=False))
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    metrics = evaluate_run(args.out)
    print(json.dumps(metrics.to_dict(), ensure_ascii=False))
    return 0


def cmd_partition(args: argparse.Namespace) -> int:
    kg_s = load_kg(args.data, Side.SOURCE)
    assignment = partition_assignment(kg_s, args.n_subtasks, args.balance_slack, args.rng_seed)
    cut = edge_cut(kg_s, assignment)
    logger.info(
        f"Разбиение на {args.n_subtasks} частей: разрез {cut}, "
        f"предел размера {max_part_size(kg_s.entity_count, args.n_subtasks, args.balance_slack)}"
    )
    if args.out:
        write_partition_file(args.out, kg_s, assignment)
    else:
        for label, part in zip(kg_s.entity_labels, assignment.tolist()):
            sys.stdout.write(f"{label}\t{part}\n")
    return 0


COMMANDS = {
    "run": cmd_run,
    "eval": cmd_eval,
    "partition": cmd_partition,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Разбирает аргументы и выполняет команду.

    Returns:
        int: 0 - успех, 1 - ошибка движка (2 - ошибка аргументов, из argparse)
    """
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="%(asctime)s %(levelname)s [%(name)s] %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except DivisionError as e:
        logger.error(f"Ошибка: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
