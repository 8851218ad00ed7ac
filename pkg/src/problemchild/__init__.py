"""Graph-based triage of anomalous parent-child process chains.

Pipeline: ingest process telemetry -> classifier-weighted process graph
-> Louvain communities -> local prevalence scoring -> ranked list of
suspicious communities.
"""

__version__ = "0.1.0"

from .community import Partition, louvain, modularity
from .detector import (CalibrationResult, ScoredCommunity, calibrate_threshold,
                       find_bad_communities, run_hunt, score_nodes)
from .features import (EdgeFeatureVector, FeatureVocabulary, featurize_edge,
                       fit_vocabulary, shannon_entropy, tfidf_vector)
from .gbt import (GbtModel, GbtParams, LabeledEdge, load_model, predict_weight,
                  save_model, train, train_from_instances)
from .graph import ProcessGraph, ProcessNode, assert_dag, build_graph
from .ingest import (ProcessEvent, ProcessInstance,iter_edges, pair_instances,
                     parse_events)
from .prevalence import (PrevalenceTable, build_prevalence, percentile_rank,
                         query_pair, query_process)
from .synth import ScenarioSpec, generate

__all__ = [
    "CalibrationResult", "EdgeFeatureVector", "FeatureVocabulary", "GbtModel",
    "GbtParams", "LabeledEdge", "Partition", "PrevalenceTable", "ProcessEvent",
    "ProcessGraph", "ProcessInstance", "ProcessNode", "ScenarioSpec",
    "ScoredCommunity", "assert_dag", "build_graph", "build_prevalence",
    "calibrate_threshold", "featurize_edge", "find_bad_communities",
    "fit_vocabulary", "generate", "iter_edges", "load_model", "louvain",
    "modularity", "pair_instances", "parse_events", "percentile_rank",
    "predict_weight", "query_pair", "query_process", "run_hunt", "save_model",
    "score_nodes", "shannon_entropy", "tfidf_vector", "train",
    "train_from_instances",
]
