"""Community scoring, thresholding, and threshold calibration.

Per-node anomaly score combines the global classifier view with the
local prevalence view:

    anomalous_score = weight * (1 - prevalence_fraction)

where weight is the inbound-edge classifier probability and
prevalence_fraction is the parent/child pair percentile divided by 100.
Root nodes (no inbound edge) score 0. A community is flagged when its
maximum member score reaches the threshold; flagged communities come
back ranked, highest score first.

Threshold calibration does leave-one-group-out retraining: hold out one
group (default machine-day), train on the rest, run the full pipeline
on the holdout, and sweep a threshold grid recording community-level
FPR and FNR. The chosen threshold is the smallest grid point whose
mean FPR across folds is within the target.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

from .community import Partition, louvain
from .errors import CalibrationError, DetectorError
from .gbt import GbtModel, GbtParams, train_from_instances
from .graph import ProcessGraph, build_graph
from .ingest import (Label, ProcessEvent, ProcessInstance, pair_instances)
from .prevalence import PrevalenceTable, build_prevalence, query_pair

log = logging.getLogger(__name__)


@dataclass
class CommunityMember:
    process_name: str
    command_line: str
    anomalous_score: float
    guid: str

    def to_json_dict(self) -> dict:
        return {
            "process_name": self.process_name,
            "command_line": self.command_line,
            "anomalous_score": self.anomalous_score,
            "guid": self.guid,
        }


@dataclass
class ScoredCommunity:
    community_id: int
    score: float
    members: List[CommunityMember]

    def to_json_dict(self) -> dict:
        return {
            "community_id": self.community_id,
            "score": self.score,
            "members": [m.to_json_dict() for m in self.members],
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScoredCommunity":
        return cls(
            community_id=int(d["community_id"]),
            score=float(d["score"]),
            members=[CommunityMember(
                process_name=m["process_name"],
                command_line=m["command_line"],
                anomalous_score=float(m["anomalous_score"]),
                guid=m["guid"],
            ) for m in d["members"]],
        )


@dataclass
class CalibrationResult:
    roc_points: list  # [(threshold, fpr, fnr)], sorted by threshold
    chosen_threshold: float
    target_fpr: float

    def to_csv(self) -> str:
        lines = ["threshold,fpr,fnr"]
        lines += [f"{t:.2f},{fpr:.6f},{fnr:.6f}" for t, fpr, fnr in self.roc_points]
        return "\n".join(lines) + "\n"


def score_nodes(graph: ProcessGraph, table: PrevalenceTable) -> None:
    """Fill anomalous_score on every node in place."""
    for node in graph.nodes.values():
        node.anomalous_score = 0.0
    for edge in graph.edges:
        child = graph.nodes[edge.child_guid]
        parent_name = child.parent_name or graph.nodes[edge.parent_guid].process_name
        fraction = query_pair(table, parent_name, child.process_name).fraction
        child.anomalous_score = edge.weight * (1.0 - fraction)


def find_bad_communities(graph: ProcessGraph, partition: Partition,
                         table: PrevalenceTable,
                         threshold: float) -> List[ScoredCommunity]:
    """Score nodes, then keep communities whose max member score reaches
    the threshold, ranked by score descending (ties: more members, then
    lower community id)."""
    if not 0.0 <= threshold <= 1.0:
        raise DetectorError(f"threshold {threshold} outside [0, 1]")
    score_nodes(graph, table)

    members_by_com: Dict[int, list] = {}
    for guid, com in partition.assignment.items():
        members_by_com.setdefault(com, []).append(graph.nodes[guid])

    flagged = []
    for com, nodes in members_by_com.items():
        best = max(node.anomalous_score for node in nodes)
        if best >= threshold:
            members = sorted(nodes, key=lambda n: (-n.anomalous_score, n.guid))
            flagged.append(ScoredCommunity(
                community_id=com,
                score=best,
                members=[CommunityMember(n.process_name, n.command_line,
                                         n.anomalous_score, n.guid)
                         for n in members],
            ))
    flagged.sort(key=lambda c: (-c.score, -len(c.members), c.community_id))
    return flagged


def run_hunt(instances: Sequence[ProcessInstance], model: GbtModel,
             threshold: float, resolution: float = 1.0, seed: int = 0,
             table: Optional[PrevalenceTable] = None):
    """Wire graph -> communities -> prevalence -> ranked communities.
    Prevalence defaults to the hunted corpus itself (the local
    environment). Returns (graph, partition, table, flagged)."""
    graph = build_graph(instances, model)
    partition = louvain(graph, resolution=resolution, seed=seed)
    if table is None:
        table = build_prevalence(instances)
    flagged = find_bad_communities(graph, partition, table, threshold)
    return graph, partition, table, flagged


def default_group_id(event: ProcessEvent) -> str:
    return event.group_id or f"{event.host_id}/{event.timestamp.date().isoformat()}"


def _threshold_grid(step: float) -> list:
    n = int(round(1.0 / step))
    return [round(i * step, 10) for i in range(n + 1)]


@dataclass
class _FoldOutcome:
    benign_scores: list  # max community score per all-benign community
    malicious_scores: list  # max community score per community with >=1 bad event


def _evaluate_fold(holdout: Sequence[ProcessEvent],
                   training: Sequence[ProcessEvent], params: GbtParams,
                   seed: int, resolution: float, k_tfidf: int,
                   ngram_range: tuple, delta_t_cap: float) -> _FoldOutcome:
    train_inst = pair_instances(training, delta_t_cap).instances
    model = train_from_instances(train_inst, params=params, seed=seed,
                                 k_tfidf=k_tfidf, ngram_range=ngram_range,
                                 delta_t_cap=delta_t_cap)

    hold_inst = pair_instances(holdout, delta_t_cap).instances
    benign_inst = [inst for inst in hold_inst
                   if inst.create_event.label is Label.BENIGN]
    if not benign_inst:
        raise CalibrationError("holdout group has no benign events to build "
                               "prevalence from")
    graph = build_graph(hold_inst, model)
    partition = louvain(graph, resolution=resolution, seed=seed)
    table = build_prevalence(benign_inst)
    score_nodes(graph, table)

    label_of = {inst.guid: inst.create_event.label for inst in hold_inst}
    by_com: Dict[int, list] = {}
    for guid, com in partition.assignment.items():
        by_com.setdefault(com, []).append(guid)

    outcome = _FoldOutcome(benign_scores=[], malicious_scores=[])
    for guids in by_com.values():
        best = max(graph.nodes[g].anomalous_score for g in guids)
        if any(label_of.get(g) is Label.MALICIOUS for g in guids):
            outcome.malicious_scores.append(best)
        else:
            outcome.benign_scores.append(best)
    return outcome


def calibrate_threshold(labeled_corpus: Sequence[ProcessEvent],
                        params: Optional[GbtParams] = None,
                        target_fpr: float = 0.03,
                        grid_step: float = 0.01,
                        seed: int = 0,
                        resolution: float = 1.0,
                        k_tfidf: int = 200,
                        ngram_range: tuple = (1, 2),
                        delta_t_cap: float = 86400.0) -> CalibrationResult:
    """Leave-one-group-out threshold sweep.

    Per held-out group: retrain on the remaining groups, run the full
    pipeline on the holdout (prevalence from its benign portion), and
    record community-level FPR/FNR at each grid threshold. Fold curves
    are aggregated by mean; the chosen threshold is the smallest grid
    point with aggregate FPR within target_fpr.
    """
    params = params or GbtParams()
    groups: Dict[str, list] = {}
    for event in labeled_corpus:
        groups.setdefault(default_group_id(event), []).append(event)
    if len(groups) < 2:
        raise CalibrationError(">=2 groups required for leave-one-out "
                               "calibration")

    grid = _threshold_grid(grid_step)
    fold_fpr: List[list] = []
    fold_fnr: List[list] = []
    for group_key in sorted(groups):
        holdout = groups[group_key]
        training = [e for key in sorted(groups) if key != group_key
                    for e in groups[key]]
        outcome = _evaluate_fold(holdout, training, params, seed, resolution,
                                 k_tfidf, ngram_range, delta_t_cap)
        n_benign = len(outcome.benign_scores)
        n_bad = len(outcome.malicious_scores)
        fprs, fnrs = [], []
        for t in grid:
            flagged_benign = sum(1 for s in outcome.benign_scores if s >= t)
            missed_bad = sum(1 for s in outcome.malicious_scores if s < t)
            fprs.append(flagged_benign / n_benign if n_benign else 0.0)
            fnrs.append(missed_bad / n_bad if n_bad else 0.0)
        fold_fpr.append(fprs)
        fold_fnr.append(fnrs)
        log.info("fold %s: %d benign / %d malicious communities",
                 group_key, n_benign, n_bad)

    n_folds = len(fold_fpr)
    roc_points = [
        (t,
         sum(f[i] for f in fold_fpr) / n_folds,
         sum(f[i] for f in fold_fnr) / n_folds)
        for i, t in enumerate(grid)
    ]
    for t, fpr, _ in roc_points:
        if fpr <= target_fpr:
            return CalibrationResult(roc_points=roc_points,
                                     chosen_threshold=t,
                                     target_fpr=target_fpr)
    raise CalibrationError(
        f"no grid threshold reaches FPR <= {target_fpr}",
        roc_points=roc_points)
