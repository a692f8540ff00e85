"""Графы знаний и сопоставления сущностей."""

from kg.graph import KnowledgeGraph, dump_kg, from_triples, load_kg
from kg.mappings import Mapping, MappingSet, load_links, load_mappings, unmatched_entities

__all__ = [
    "KnowledgeGraph",
    "Mapping",
    "MappingSet",
    "dump_kg",
    "from_triples",
    "load_kg",
    "load_links",
    "load_mappings",
    "unmatched_entities",
]
