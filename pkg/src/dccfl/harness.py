"""Experiment driver: seeded repetitions of dc_cfl / dc / local runs,
threshold sweeps, and CSV/JSONL result emission.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import (
    ClientShard,
    LabeledTable,
    PartitionSpec,
    load_dataset,
    partition_class_based,
    partition_dirichlet,
)
from .learner import TrainConfig, evaluate, init_mlp, train
from .protocol import (
    Transcript,
    analyst_run,
    client_prepare_upload,
    evaluate_round,
    select_threshold,
)
from .reduction import apply_reducer, generate_anchor
from .seeds import derive_seed

__all__ = [
    "ExperimentConfig",
    "ResultRecord",
    "SweepRow",
    "run_method",
    "sweep_threshold",
    "write_results",
    "read_results",
    "load_config",
]

METHODS = ("dc_cfl", "dc", "local")
DEFAULT_T_CANDIDATES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one experiment needs; mirrors the config file schema."""

    dataset_path: str
    label_column: str
    partition: PartitionSpec
    method: str = "dc_cfl"
    anchor_size: int = 1000
    target_dim: int | None = None  # None -> n_features - 1 per client
    rel_cutoff: float = 1e-2
    cutoff_mode: str = "relative"
    t_candidates: tuple[float, ...] = DEFAULT_T_CANDIDATES
    train: TrainConfig = field(default_factory=TrainConfig)
    hidden_candidates: tuple[tuple[int, int], ...] = ((64, 32),)
    num_runs: int = 10
    master_seed: int = 0
    num_classes: int | None = None
    dataset_name: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.method == "dc_cfl" and not self.t_candidates:
            raise ValueError("dc_cfl needs a nonempty t candidate set")
        if self.anchor_size < 1 or self.num_runs < 1:
            raise ValueError("anchor_size and num_runs must be >= 1")
        if not self.hidden_candidates:
            raise ValueError("hidden_candidates must be nonempty")

    @property
    def name(self) -> str:
        return self.dataset_name or Path(self.dataset_path).stem


@dataclass(frozen=True)
class ResultRecord:
    """Outcome of one seeded run of one method."""

    dataset: str
    partition: str
    method: str
    seed: int
    t: float | None
    per_client: tuple[float, ...]
    mean_accuracy: float
    wall_seconds: float

    def __post_init__(self):
        if self.per_client and abs(self.mean_accuracy - float(np.mean(self.per_client))) > 1e-12:
            raise ValueError("mean_accuracy inconsistent with per-client accuracies")

    @property
    def n_clients(self) -> int:
        return len(self.per_client)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "partition": self.partition,
            "method": self.method,
            "seed": self.seed,
            "t": self.t,
            "per_client": list(self.per_client),
            "mean_accuracy": self.mean_accuracy,
            "n_clients": self.n_clients,
            "wall_seconds": self.wall_seconds,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ResultRecord":
        return cls(
            dataset=payload["dataset"],
            partition=payload["partition"],
            method=payload["method"],
            seed=int(payload["seed"]),
            t=payload.get("t"),
            per_client=tuple(payload.get("per_client", ())),
            mean_accuracy=float(payload["mean_accuracy"]),
            wall_seconds=float(payload.get("wall_seconds", 0.0)),
        )


@dataclass(frozen=True)
class SweepRow:
    t: float
    mean_validation_accuracy: float
    mean_test_accuracy: float
    mean_num_clusters: float


def _partition_table(table: LabeledTable, spec: PartitionSpec) -> list[ClientShard]:
    if spec.kind == "class_based":
        return partition_class_based(table, spec)
    return partition_dirichlet(table, spec)


def _prepare_round(table, cfg: ExperimentConfig, run_seed: int, transcript: Transcript | None):
    """Partition, generate the shared anchor, and collect client uploads."""
    spec = replace(cfg.partition, seed=derive_seed(run_seed, "partition"))
    shards = _partition_table(table, spec)
    bounds = (table.features.min(axis=0), table.features.max(axis=0))
    anchor = generate_anchor(bounds, cfg.anchor_size, derive_seed(run_seed, "anchor"))
    target = cfg.target_dim if cfg.target_dim is not None else table.n_features - 1
    reducers = {}
    uploads = []
    for shard in shards:
        reducer, upload = client_prepare_upload(
            shard, anchor, target, derive_seed(run_seed, "client", shard.client_id)
        )
        reducers[shard.client_id] = reducer
        uploads.append(upload)
        if transcript is not None:
            transcript.record_upload(upload)
    return shards, reducers, uploads


def _run_local(table, cfg: ExperimentConfig, run_seed: int):
    """Local baseline: every client trains on its own reduced rows only."""
    spec = replace(cfg.partition, seed=derive_seed(run_seed, "partition"))
    shards = _partition_table(table, spec)
    target = cfg.target_dim if cfg.target_dim is not None else table.n_features - 1
    hidden = cfg.hidden_candidates[0]
    accuracies = []
    for shard in shards:
        from .reduction import fit_reducer

        reducer = fit_reducer(shard.train.features, target)
        train_x = apply_reducer(reducer, shard.train.features)
        test_x = apply_reducer(reducer, shard.test.features)
        seed = derive_seed(run_seed, "local", shard.client_id)
        params = init_mlp(reducer.out_dim, hidden, table.num_classes, derive_seed(seed, "init"))
        params = train(
            params, train_x, shard.train.labels, replace(cfg.train, seed=derive_seed(seed, "train"))
        )
        accuracies.append(evaluate(params, test_x, shard.test.labels))
    return accuracies


def _run_collaborative(table, cfg: ExperimentConfig, run_seed: int, transcript: Transcript | None):
    """dc and dc_cfl share this path; dc forces a single cluster."""
    shards, reducers, uploads = _prepare_round(table, cfg, run_seed, transcript)
    analyst_seed = derive_seed(run_seed, "analyst")
    common = dict(
        num_classes=table.num_classes,
        cutoff_mode=cfg.cutoff_mode,
        seed=analyst_seed,
    )
    if cfg.method == "dc":
        chosen_t = None
        downloads, report = analyst_run(
            uploads,
            1.0,
            cfg.rel_cutoff,
            cfg.train,
            hidden_sizes=cfg.hidden_candidates[0],
            force_single_cluster=True,
            **common,
        )
    else:
        if len(cfg.t_candidates) == 1 and len(cfg.hidden_candidates) == 1:
            chosen_t, chosen_hidden = cfg.t_candidates[0], cfg.hidden_candidates[0]
        else:
            chosen_t, chosen_hidden, _ = select_threshold(
                uploads,
                cfg.t_candidates,
                cfg.rel_cutoff,
                cfg.train,
                hidden_candidates=cfg.hidden_candidates,
                **common,
            )
        downloads, report = analyst_run(
            uploads,
            chosen_t,
            cfg.rel_cutoff,
            cfg.train,
            hidden_sizes=chosen_hidden,
            **common,
        )
    if transcript is not None:
        for download in downloads:
            transcript.record_download(download)
    accuracies, _ = evaluate_round(shards, reducers, downloads)
    return accuracies, chosen_t, report


def run_method(cfg: ExperimentConfig, transcripts: list[Transcript] | None = None) -> list[ResultRecord]:
    """Execute ``cfg.num_runs`` seeded repetitions of the configured method.

    When a ``transcripts`` list is passed, one Transcript per run is
    appended to it (local runs produce empty transcripts: nothing is
    communicated).
    """
    table = load_dataset(cfg.dataset_path, cfg.label_column, cfg.num_classes)
    records = []
    for run_index in range(cfg.num_runs):
        run_seed = derive_seed(cfg.master_seed, "run", run_index)
        transcript = Transcript()
        started = time.perf_counter()
        if cfg.method == "local":
            accuracies = _run_local(table, cfg, run_seed)
            chosen_t = None
        else:
            accuracies, chosen_t, _ = _run_collaborative(table, cfg, run_seed, transcript)
        wall = time.perf_counter() - started
        records.append(
            ResultRecord(
                dataset=cfg.name,
                partition=cfg.partition.describe(),
                method=cfg.method,
                seed=run_seed,
                t=chosen_t,
                per_client=tuple(float(a) for a in accuracies),
                mean_accuracy=float(np.mean(accuracies)),
                wall_seconds=wall,
            )
        )
        if transcripts is not None:
            transcripts.append(transcript)
    return records


def sweep_threshold(cfg: ExperimentConfig, t_values: list[float] | tuple[float, ...]) -> list[SweepRow]:
    """Score every threshold on shared partitions and uploads.

    For each run seed the partition and uploads are prepared once;
    clustering, alignment, and training re-run per threshold.  Rows
    aggregate over runs (unweighted means).
    """
    if cfg.method != "dc_cfl":
        raise ValueError("sweep_threshold requires method dc_cfl")
    if not t_values:
        raise ValueError("t_values must be nonempty")
    table = load_dataset(cfg.dataset_path, cfg.label_column, cfg.num_classes)
    hidden = cfg.hidden_candidates[0]
    val_acc = np.zeros(len(t_values))
    test_acc = np.zeros(len(t_values))
    n_clusters = np.zeros(len(t_values))
    for run_index in range(cfg.num_runs):
        run_seed = derive_seed(cfg.master_seed, "run", run_index)
        shards, reducers, uploads = _prepare_round(table, cfg, run_seed, None)
        analyst_seed = derive_seed(run_seed, "analyst")
        for j, t in enumerate(t_values):
            downloads, report = analyst_run(
                uploads,
                float(t),
                cfg.rel_cutoff,
                cfg.train,
                num_classes=table.num_classes,
                hidden_sizes=hidden,
                cutoff_mode=cfg.cutoff_mode,
                seed=analyst_seed,
            )
            _, mean_acc = evaluate_round(shards, reducers, downloads)
            val_acc[j] += report.mean_validation_accuracy()
            test_acc[j] += mean_acc
            n_clusters[j] += report.partition.num_clusters
    rows = []
    for j, t in enumerate(t_values):
        rows.append(
            SweepRow(
                t=float(t),
                mean_validation_accuracy=val_acc[j] / cfg.num_runs,
                mean_test_accuracy=test_acc[j] / cfg.num_runs,
                mean_num_clusters=n_clusters[j] / cfg.num_runs,
            )
        )
    return rows


CSV_HEADER = ["dataset", "partition", "method", "seed", "t", "mean_acc", "n_clients", "wall_s"]


def write_results(records: list[ResultRecord], path: str | Path, format: str = "csv") -> Path:
    """Write records as CSV (summary columns) or JSONL (full, incl. the
    per-client accuracy list)."""
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for rec in records:
                writer.writerow(
                    [
                        rec.dataset,
                        rec.partition,
                        rec.method,
                        rec.seed,
                        "" if rec.t is None else repr(rec.t),
                        repr(rec.mean_accuracy),
                        rec.n_clients,
                        repr(rec.wall_seconds),
                    ]
                )
    elif format == "jsonl":
        with open(path, "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.to_dict()) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")
    return path


def read_results(path: str | Path, format: str | None = None) -> list[ResultRecord]:
    """Parse a results file written by write_results.

    CSV carries only summary columns, so records read back from CSV have
    an empty per-client list; JSONL round-trips exactly.
    """
    path = Path(path)
    if format is None:
        format = "jsonl" if path.suffix == ".jsonl" else "csv"
    records = []
    if format == "jsonl":
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    records.append(ResultRecord.from_dict(json.loads(line)))
    elif format == "csv":
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                records.append(
                    ResultRecord(
                        dataset=row["dataset"],
                        partition=row["partition"],
                        method=row["method"],
                        seed=int(row["seed"]),
                        t=float(row["t"]) if row["t"] else None,
                        per_client=(),
                        mean_accuracy=float(row["mean_acc"]),
                        wall_seconds=float(row["wall_s"]),
                    )
                )
    else:
        raise ValueError(f"unknown format {format!r}")
    return records


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    """Read an ExperimentConfig from a JSON or TOML file.

    Keyword overrides replace top-level fields (the CLI uses this for
    flags like --runs and --method).
    """
    path = Path(path)
    if path.suffix == ".toml":
        try:
            import tomllib  # py >= 3.11
        except ModuleNotFoundError:
            import tomli as tomllib
        payload = tomllib.loads(path.read_text())
    else:
        payload = json.loads(path.read_text())
    payload.update({k: v for k, v in overrides.items() if v is not None})

    part = payload.pop("partition")
    spec = PartitionSpec(
        kind=part["kind"],
        num_clients=int(part["num_clients"]),
        classes_per_client=part.get("classes_per_client"),
        alpha=part.get("alpha"),
        min_samples=int(part.get("min_samples", 20)),
        seed=int(part.get("seed", 0)),
        test_ratio=float(part.get("test_ratio", 0.2)),
    )
    train_part = payload.pop("train", {})
    train_cfg = TrainConfig(
        learning_rate=float(train_part.get("learning_rate", 0.01)),
        momentum=float(train_part.get("momentum", 0.5)),
        batch_size=int(train_part.get("batch_size", 32)),
        epochs=int(train_part.get("epochs", 50)),
        seed=int(train_part.get("seed", 0)),
    )
    hidden = payload.pop("hidden_candidates", [[64, 32]])
    t_candidates = payload.pop("t_candidates", list(DEFAULT_T_CANDIDATES))
    return ExperimentConfig(
        dataset_path=payload["dataset_path"],
        label_column=payload["label_column"],
        partition=spec,
        method=payload.get("method", "dc_cfl"),
        anchor_size=int(payload.get("anchor_size", 1000)),
        target_dim=payload.get("target_dim"),
        rel_cutoff=float(payload.get("rel_cutoff", 1e-2)),
        cutoff_mode=payload.get("cutoff_mode", "relative"),
        t_candidates=tuple(float(t) for t in t_candidates),
        train=train_cfg,
        hidden_candidates=tuple(tuple(h) for h in hidden),
        num_runs=int(payload.get("num_runs", 10)),
        master_seed=int(payload.get("master_seed", 0)),
        num_classes=payload.get("num_classes"),
        dataset_name=payload.get("dataset_name"),
    )
