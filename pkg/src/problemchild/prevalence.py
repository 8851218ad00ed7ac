"""Local-environment prevalence statistics.

Builds, from the corpus being hunted, per-process-name counts and
per-pair conditional probabilities, each reduced to a 0-99 percentile
rank:

    process:  Pr(process_count < PERCENTILE)
    pair:     P(child | parent) = P(child, parent) / P(parent),
              then Pr(P(child | parent) < PERCENTILE)

The pair percentile is taken among the observed children of the same
parent name ("from this parent, I've seen this child more than X% of
other child processes"). Percentiles use strict less-than counting, so
ties do not raise each other's rank. Unseen names and pairs score 0:
rarity amplifies anomaly, it never masks it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

from .errors import PrevalenceError
from .ingest import ProcessInstance

TABLE_FORMAT = "prevtable"
TABLE_FORMAT_VERSION = 1


@dataclass
class ProcessStats:
    count: int
    percentile: int
    fraction: float


@dataclass
class PairStats:
    cond_prob: float
    percentile: int
    fraction: float


@dataclass
class PrevalenceTable:
    process_counts: Dict[str, int] = field(default_factory=dict)
    pair_counts: Dict[Tuple[str, str], int] = field(default_factory=dict)
    process_percentile: Dict[str, int] = field(default_factory=dict)
    pair_percentile: Dict[Tuple[str, str], int] = field(default_factory=dict)
    pair_cond_prob: Dict[Tuple[str, str], float] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        processes = {
            name: {"count": self.process_counts[name],
                   "percentile": self.process_percentile[name]}
            for name in sorted(self.process_counts)
        }
        pairs: dict = {}
        for (parent, child) in sorted(self.pair_counts):
            pairs.setdefault(parent, {})[child] = {
                "count": self.pair_counts[(parent, child)],
                "cond_prob": self.pair_cond_prob[(parent, child)],
                "percentile": self.pair_percentile[(parent, child)],
            }
        return {
            "format": TABLE_FORMAT,
            "format_version": TABLE_FORMAT_VERSION,
            "processes": processes,
            "pairs": pairs,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PrevalenceTable":
        if doc.get("format") != TABLE_FORMAT:
            raise PrevalenceError("not a prevalence table document")
        table = cls()
        for name, entry in doc["processes"].items():
            table.process_counts[name] = int(entry["count"])
            table.process_percentile[name] = int(entry["percentile"])
        for parent, children in doc["pairs"].items():
            for child, entry in children.items():
                key = (parent, child)
                table.pair_counts[key] = int(entry["count"])
                table.pair_cond_prob[key] = float(entry["cond_prob"])
                table.pair_percentile[key] = int(entry["percentile"])
        return table

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, separators=(",", ":"))

    @classmethod
    def load(cls, path) -> "PrevalenceTable":
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise PrevalenceError(
                    f"corrupt prevalence table: {exc}") from None
        return cls.from_json_dict(doc)


def percentile_rank(value: float, population: Sequence[float]) -> int:
    """floor(100 * |{x in population : x < value}| / |population|), clamped
    to 99. Population must be non-empty."""
    if len(population) == 0:
        raise PrevalenceError("percentile_rank needs a non-empty population")
    below = sum(1 for x in population if x < value)
    return min(math.floor(100.0 * below / len(population)), 99)


def build_prevalence(instances: Sequence[ProcessInstance]) -> PrevalenceTable:
    """Tally name and pair counts over a corpus and rank them."""
    if not instances:
        raise PrevalenceError("cannot build prevalence from empty corpus")
    table = PrevalenceTable()
    for inst in instances:
        name = inst.process_name
        table.process_counts[name] = table.process_counts.get(name, 0) + 1
        parent = inst.parent_name
        if parent:
            key = (parent, name)
            table.pair_counts[key] = table.pair_counts.get(key, 0) + 1

    counts = list(table.process_counts.values())
    for name, count in table.process_counts.items():
        table.process_percentile[name] = percentile_rank(count, counts)

    children_of: Dict[str, list] = {}
    for (parent, child), count in table.pair_counts.items():
        children_of.setdefault(parent, []).append((child, count))
    for parent, kids in children_of.items():
        total = sum(count for _, count in kids)
        probs = []
        for child, count in kids:
            p = count / total
            table.pair_cond_prob[(parent, child)] = p
            probs.append(p)
        for child, _ in kids:
            table.pair_percentile[(parent, child)] = percentile_rank(
                table.pair_cond_prob[(parent, child)], probs)
    return table


def query_process(table: PrevalenceTable, process_name: str) -> ProcessStats:
    """Unseen names score {0, 0, 0.0} (maximally rare)."""
    count = table.process_counts.get(process_name, 0)
    if count == 0:
        return ProcessStats(count=0, percentile=0, fraction=0.0)
    pct = table.process_percentile[process_name]
    return ProcessStats(count=count, percentile=pct, fraction=pct / 100.0)


def query_pair(table: PrevalenceTable, parent_name: str,
               child_name: str) -> PairStats:
    """Unseen pairs score {0.0, 0, 0.0}."""
    key = (parent_name, child_name)
    if key not in table.pair_counts:
        return PairStats(cond_prob=0.0, percentile=0, fraction=0.0)
    pct = table.pair_percentile[key]
    return PairStats(cond_prob=table.pair_cond_prob[key], percentile=pct,
                     fraction=pct / 100.0)
