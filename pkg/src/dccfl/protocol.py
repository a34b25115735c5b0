"""Single-round protocol: one upload and one download per client.

Clients reduce their data locally and send only reduced representations
plus labels.  The analyst clusters clients by label distribution,
aligns each cluster's representations into a common space, trains one
model per cluster, and returns each client its mapping matrix and its
cluster's model.  Threshold selection happens analyst-side on the data
already received, so it costs no extra communication.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .alignment import compute_mappings, integrate
from .clustering import (
    ClusterPartition,
    build_distance_matrix,
    complete_linkage_clusters,
    label_distribution,
)
from .dataset import ClientShard, LabeledTable, split_train_test
from .learner import MLPParams, TrainConfig, evaluate, forward, init_mlp, train
from .reduction import AnchorData, Reducer, apply_reducer, fit_reducer
from .seeds import derive_seed

__all__ = [
    "Upload",
    "Download",
    "ClusterSummary",
    "AnalystReport",
    "Transcript",
    "client_prepare_upload",
    "analyst_run",
    "select_threshold",
    "client_infer",
    "evaluate_round",
]

VALIDATION_RATIO = 0.2


@dataclass(frozen=True)
class Upload:
    """Everything a client shares, and nothing else: reduced train rows,
    reduced anchor rows, and train labels."""

    client_id: int
    intermediate_train: np.ndarray
    intermediate_anchor: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.intermediate_train.shape[1] != self.intermediate_anchor.shape[1]:
            raise ValueError("train and anchor representations must share the column count")
        if self.labels.shape[0] != self.intermediate_train.shape[0]:
            raise ValueError("labels length must equal intermediate_train row count")

    @property
    def rep_dim(self) -> int:
        return self.intermediate_train.shape[1]

    def entry_count(self) -> int:
        return self.intermediate_train.size + self.intermediate_anchor.size + self.labels.size


@dataclass(frozen=True)
class Download:
    """Per-client return message: the client's mapping into its cluster's
    common space and the cluster model."""

    client_id: int
    cluster_id: int
    mapping: np.ndarray
    model: MLPParams

    def __post_init__(self):
        if self.mapping.shape[1] != self.model.d_in:
            raise ValueError("mapping columns must equal the model input dimension")

    def entry_count(self) -> int:
        return self.mapping.size + self.model.num_params()


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: int
    members: tuple[int, ...]
    integrated_dim: int
    validation_accuracy: float


@dataclass(frozen=True)
class AnalystReport:
    partition: ClusterPartition
    per_cluster: tuple[ClusterSummary, ...]
    chosen_t: float | None
    chosen_hidden_sizes: tuple[int, int]

    def __post_init__(self):
        covered: list[int] = []
        for summary in self.per_cluster:
            covered.extend(summary.members)
        if len(covered) != len(set(covered)):
            raise ValueError("cluster summaries overlap")

    def mean_validation_accuracy(self) -> float:
        vals = [s.validation_accuracy for s in self.per_cluster if np.isfinite(s.validation_accuracy)]
        return float(np.mean(vals)) if vals else float("nan")


@dataclass
class Transcript:
    """In-process message log standing in for a network channel."""

    messages: list[dict] = field(default_factory=list)

    def record_upload(self, upload: Upload) -> None:
        self.messages.append(
            {
                "direction": "upload",
                "client_id": upload.client_id,
                "shapes": {
                    "intermediate_train": list(upload.intermediate_train.shape),
                    "intermediate_anchor": list(upload.intermediate_anchor.shape),
                    "labels": [int(upload.labels.shape[0])],
                },
                "byte_size": 8 * upload.entry_count(),
            }
        )

    def record_download(self, download: Download) -> None:
        self.messages.append(
            {
                "direction": "download",
                "client_id": download.client_id,
                "shapes": {
                    "mapping": list(download.mapping.shape),
                    "model": [list(a.shape) for a in download.model.arrays()],
                },
                "byte_size": 8 * download.entry_count(),
            }
        )

    def count(self, direction: str) -> int:
        return sum(1 for m in self.messages if m["direction"] == direction)

    def dump_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for message in self.messages:
                fh.write(json.dumps(message) + "\n")


def client_prepare_upload(
    shard: ClientShard, anchor: AnchorData, target_dim: int, seed: int = 0
) -> tuple[Reducer, Upload]:
    """Fit the client's private reducer and build its upload message.

    The reducer stays on the client; the upload carries only reduced
    rows.  ``seed`` is reserved for stochastic reducers; the PCA reducer
    is deterministic.
    """
    del seed
    if shard.train.n_samples == 0:
        raise ValueError(f"client {shard.client_id} has an empty train set")
    reducer = fit_reducer(shard.train.features, target_dim)
    upload = Upload(
        client_id=shard.client_id,
        intermediate_train=apply_reducer(reducer, shard.train.features),
        intermediate_anchor=apply_reducer(reducer, anchor.rows),
        labels=shard.train.labels.copy(),
    )
    return reducer, upload


def _validation_split(
    features: np.ndarray, labels: np.ndarray, num_classes: int, seed: int
):
    """Stratified 80/20 split of a cluster's integrated rows."""
    table = LabeledTable(features, labels, num_classes)
    fit, val = split_train_test(table, VALIDATION_RATIO, seed)
    return fit, val


def _train_cluster(
    uploads: list[Upload],
    members: tuple[int, ...],
    by_client: dict[int, Upload],
    num_classes: int,
    rel_cutoff: float,
    cutoff_mode: str,
    hidden_sizes: tuple[int, int],
    train_cfg: TrainConfig,
    seed: int,
    with_final_model: bool,
):
    """Align one cluster, train on its integrated rows, and score validation.

    Returns (alignment, integrated features, labels, validation accuracy,
    final model or None).
    """
    member_uploads = [by_client[m] for m in members]
    alignment = compute_mappings(
        [u.intermediate_anchor for u in member_uploads], rel_cutoff, mode=cutoff_mode
    )
    integrated, _ = integrate([u.intermediate_train for u in member_uploads], alignment.mappings)
    labels = np.concatenate([u.labels for u in member_uploads])
    if integrated.shape[0] == 0:
        raise ValueError("cluster has an empty integrated training set")

    fit_part, val_part = _validation_split(
        integrated, labels, num_classes, derive_seed(seed, "valsplit")
    )
    val_model = train(
        init_mlp(alignment.integrated_dim, hidden_sizes, num_classes, derive_seed(seed, "init-val")),
        fit_part.features,
        fit_part.labels,
        replace(train_cfg, seed=derive_seed(seed, "train-val")),
    )
    if val_part.n_samples > 0:
        val_accuracy = evaluate(val_model, val_part.features, val_part.labels)
    else:
        val_accuracy = float("nan")

    final_model = None
    if with_final_model:
        final_model = train(
            init_mlp(alignment.integrated_dim, hidden_sizes, num_classes, derive_seed(seed, "init")),
            integrated,
            labels,
            replace(train_cfg, seed=derive_seed(seed, "train")),
        )
    return alignment, val_accuracy, final_model


def _cluster_uploads(uploads: list[Upload], num_classes: int, t: float) -> ClusterPartition:
    dists = [label_distribution(u.labels, num_classes) for u in uploads]
    matrix = build_distance_matrix(dists)
    return complete_linkage_clusters(matrix, t)


def analyst_run(
    uploads: list[Upload],
    t: float,
    rel_cutoff: float,
    train_cfg: TrainConfig,
    *,
    num_classes: int,
    hidden_sizes: tuple[int, int] = (64, 32),
    cutoff_mode: str = "relative",
    seed: int = 0,
    force_single_cluster: bool = False,
) -> tuple[list[Download], AnalystReport]:
    """Run the analyst side of one round at a fixed threshold.

    Clusters the uploads by TV distance (or forms one all-client cluster
    when ``force_single_cluster``), aligns and trains per cluster, and
    produces one Download per uploading client.  Validation accuracy is
    scored on a held-out 20% of each cluster's integrated rows; the
    shipped model is retrained on the full rows.
    """
    if not uploads:
        raise ValueError("no uploads")
    by_client = {u.client_id: u for u in uploads}
    if len(by_client) != len(uploads):
        raise ValueError("duplicate client_id in uploads")

    # Clustering operates on upload order; cluster member ids are indices
    # into the uploads list, translated to client ids afterwards.
    if force_single_cluster:
        partition = ClusterPartition(
            clusters=(tuple(range(len(uploads))),), threshold=1.0, merge_log=()
        )
    else:
        partition = _cluster_uploads(uploads, num_classes, t)

    client_ids = [u.client_id for u in uploads]
    downloads: list[Download] = []
    summaries: list[ClusterSummary] = []
    for cluster_id, index_cluster in enumerate(partition.clusters):
        members = tuple(client_ids[i] for i in index_cluster)
        alignment, val_accuracy, model = _train_cluster(
            uploads,
            members,
            by_client,
            num_classes,
            rel_cutoff,
            cutoff_mode,
            hidden_sizes,
            train_cfg,
            derive_seed(seed, "cluster", cluster_id),
            with_final_model=True,
        )
        summaries.append(
            ClusterSummary(
                cluster_id=cluster_id,
                members=members,
                integrated_dim=alignment.integrated_dim,
                validation_accuracy=val_accuracy,
            )
        )
        for member, mapping in zip(members, alignment.mappings):
            downloads.append(
                Download(client_id=member, cluster_id=cluster_id, mapping=mapping, model=model)
            )

    downloads.sort(key=lambda dl: dl.client_id)
    report = AnalystReport(
        partition=partition,
        per_cluster=tuple(summaries),
        chosen_t=None if force_single_cluster else float(t),
        chosen_hidden_sizes=tuple(hidden_sizes),
    )
    return downloads, report


def select_threshold(
    uploads: list[Upload],
    t_candidates: list[float] | tuple[float, ...],
    rel_cutoff: float,
    train_cfg: TrainConfig,
    *,
    num_classes: int,
    hidden_candidates: tuple[tuple[int, int], ...] = ((64, 32),),
    cutoff_mode: str = "relative",
    seed: int = 0,
) -> tuple[float, tuple[int, int], list[dict]]:
    """Pick (t, hidden sizes) by mean per-cluster validation accuracy.

    Uses only the uploads already received, so selection adds no
    communication.  Ties go to the smaller threshold, then to the
    earlier hidden-size candidate.
    """
    if not t_candidates:
        raise ValueError("t_candidates must be nonempty")
    by_client = {u.client_id: u for u in uploads}
    client_ids = [u.client_id for u in uploads]
    table: list[dict] = []
    best = None
    for t in t_candidates:
        partition = _cluster_uploads(uploads, num_classes, t)
        for hidden in hidden_candidates:
            accs = []
            for cluster_id, index_cluster in enumerate(partition.clusters):
                members = tuple(client_ids[i] for i in index_cluster)
                _, val_accuracy, _ = _train_cluster(
                    uploads,
                    members,
                    by_client,
                    num_classes,
                    rel_cutoff,
                    cutoff_mode,
                    hidden,
                    train_cfg,
                    derive_seed(seed, "cluster", cluster_id),
                    with_final_model=False,
                )
                accs.append(val_accuracy)
            finite = [a for a in accs if np.isfinite(a)]
            score = float(np.mean(finite)) if finite else float("-inf")
            table.append(
                {
                    "t": float(t),
                    "hidden": tuple(hidden),
                    "mean_val_accuracy": score,
                    "num_clusters": partition.num_clusters,
                }
            )
            if best is None or score > best[0]:
                best = (score, float(t), tuple(hidden))
    return best[1], best[2], table


def client_infer(reducer: Reducer, download: Download, test_features: np.ndarray) -> np.ndarray:
    """Predict labels for raw client rows via reducer -> mapping -> model."""
    x = np.asarray(test_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != reducer.in_dim:
        raise ValueError(f"expected {reducer.in_dim} feature columns, got shape {x.shape}")
    if reducer.out_dim != download.mapping.shape[0]:
        raise ValueError(
            f"reducer out_dim {reducer.out_dim} != mapping rows {download.mapping.shape[0]}"
        )
    if x.shape[0] == 0:
        return np.empty(0, dtype=np.int64)
    aligned = apply_reducer(reducer, x) @ download.mapping
    return np.argmax(forward(download.model, aligned), axis=1).astype(np.int64)


def evaluate_round(
    shards: list[ClientShard],
    reducers: dict[int, Reducer],
    downloads: list[Download],
) -> tuple[list[float], float]:
    """Per-client test accuracy and its unweighted mean."""
    by_client = {dl.client_id: dl for dl in downloads}
    accuracies = []
    for shard in shards:
        if shard.client_id not in by_client:
            raise ValueError(f"missing download for client {shard.client_id}")
        predictions = client_infer(
            reducers[shard.client_id], by_client[shard.client_id], shard.test.features
        )
        accuracies.append(float(np.mean(predictions == shard.test.labels)))
    return accuracies, float(np.mean(accuracies))
