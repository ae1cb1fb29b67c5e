"""Graph structure refinement for GNNs under poisoning attacks.

Pipeline: attack simulation, node2vec structural embeddings, clean
sub-graph extraction, JSD-filtered augmentation and degree-grouped
attention training, driven by :func:`gsrefine.harness.run_experiment`
or the ``gsrefine`` command.
"""

from .attack import AttackConfig, FraudConfig, generate_fraud_graph, inject_feature_noise, inject_structure_attack
from .augment import AugmentedEdgeSet, augment_subgraph, jsd, jsd_counter
from .extract import KnnCandidates, build_knn_candidates, extract_subgraph, score_edges
from .graph import GraphBundle, clean_rate, degree_profile, load_bundle, save_bundle
from .harness import ExperimentConfig, generate_sbm, inter_class_edge_ratio, run_experiment
from .node2vec import EmbeddingMatrix, Node2VecConfig, embed
from .train import TrainConfig, infer_refined, train

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "AugmentedEdgeSet", "EmbeddingMatrix", "ExperimentConfig", "FraudConfig",
    "GraphBundle", "KnnCandidates", "Node2VecConfig", "TrainConfig",
    "augment_subgraph", "build_knn_candidates", "clean_rate", "degree_profile", "embed",
    "extract_subgraph", "generate_fraud_graph", "generate_sbm", "infer_refined",
    "inject_feature_noise", "inject_structure_attack", "inter_class_edge_ratio", "jsd", "jsd_counter",
    "load_bundle", "run_experiment", "save_bundle", "score_edges", "train",
]
