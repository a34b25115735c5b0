"""dccfl: single-round clustered federated learning via data collaboration.

Clients share dimensionality-reduced representations and labels exactly
once; the analyst clusters clients by the total variation distance
between their label distributions, aligns each cluster through shared
anchor data, trains one model per cluster, and returns mappings and
models for local inference.
"""

from .alignment import AlignmentResult, compute_mappings, integrate, pseudoinverse, truncated_svd
from .clustering import (
    ClusterPartition,
    DistanceMatrix,
    LabelDistribution,
    build_distance_matrix,
    complete_linkage_clusters,
    label_distribution,
    tv_distance,
)
from .dataset import (
    ClientShard,
    LabeledTable,
    PartitionSpec,
    load_dataset,
    partition_class_based,
    partition_dirichlet,
    split_train_test,
)
from .harness import ExperimentConfig, ResultRecord, run_method, sweep_threshold, write_results
from .learner import MLPParams, TrainConfig, evaluate, forward, grad_check, init_mlp, train
from .protocol import (
    AnalystReport,
    Download,
    Transcript,
    Upload,
    analyst_run,
    client_infer,
    client_prepare_upload,
    evaluate_round,
    select_threshold,
)
from .reduction import AnchorData, Reducer, apply_reducer, fit_reducer, generate_anchor
from .seeds import derive_seed

__version__ = "0.1.0"
