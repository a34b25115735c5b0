"""Tabular datasets, per-client train/test splitting, and non-IID partitioners.

Clients are simulated by slicing one labeled table into disjoint shards.
Two label-skew partitioners are provided: a class-based split where each
client holds exactly ``k`` distinct classes, and a Dirichlet split where
per-class allocation proportions are drawn from Dir(alpha).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .seeds import derive_seed

__all__ = [
    "LabeledTable",
    "ClientShard",
    "PartitionSpec",
    "load_dataset",
    "split_train_test",
    "partition_class_based",
    "partition_dirichlet",
    "dump_shards",
]


@dataclass(frozen=True)
class LabeledTable:
    """A feature matrix with integer class labels.

    Labels are contiguous integers in ``[0, num_classes)``; remapping
    happens once at load time so downstream code can build one-hot
    targets and label histograms without bookkeeping.
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        labs = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64)).ravel()
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if feats.shape[0] != labs.shape[0]:
            raise ValueError(
                f"row count mismatch: {feats.shape[0]} feature rows vs {labs.shape[0]} labels"
            )
        if feats.shape[1] < 2:
            raise ValueError("at least 2 feature columns are required")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labs.size and (labs.min() < 0 or labs.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def label_histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ClientShard:
    """One client's local data, already split into train and test."""

    client_id: int
    train: LabeledTable
    test: LabeledTable

    def __post_init__(self):
        if self.train.num_classes != self.test.num_classes:
            raise ValueError("train and test must share num_classes")
        if self.train.n_features != self.test.n_features:
            raise ValueError("train and test must share the feature count")


@dataclass(frozen=True)
class PartitionSpec:
    """Configuration for slicing a table into client shards.

    ``min_samples`` is a floor on each client's *training* rows; the
    Dirichlet partitioner re-draws and then tops up to honor it, the
    class-based partitioner errors when it cannot be met.
    """

    kind: str
    num_clients: int
    classes_per_client: int | None = None
    alpha: float | None = None
    min_samples: int = 20
    seed: int = 0
    test_ratio: float = 0.2

    def __post_init__(self):
        if self.kind not in ("class_based", "dirichlet"):
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.num_clients < 1:
            raise ValueError("num_clients must be >= 1")
        if not 0.0 < self.test_ratio < 1.0:
            raise ValueError("test_ratio must lie in (0, 1)")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.kind == "class_based":
            if self.classes_per_client is None or self.classes_per_client < 1:
                raise ValueError("class_based requires classes_per_client >= 1")
        if self.kind == "dirichlet":
            if self.alpha is None or self.alpha <= 0:
                raise ValueError("dirichlet requires alpha > 0")

    def describe(self) -> str:
        if self.kind == "class_based":
            return f"class_based(c={self.num_clients},k={self.classes_per_client})"
        return f"dirichlet(c={self.num_clients},alpha={self.alpha:g})"


def load_dataset(path: str | Path, label_column: str, num_classes: int | None = None) -> LabeledTable:
    """Load a CSV classification table.

    The label column may hold strings or numbers; distinct values are
    remapped to ``0..K-1`` in sorted order.  All remaining columns must
    be numeric and finite.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    df = pd.read_csv(path)
    if label_column not in df.columns:
        raise ValueError(f"label column {label_column!r} not in {list(df.columns)}")
    raw_labels = df[label_column].to_numpy()
    feature_df = df.drop(columns=[label_column])
    columns = []
    for name in feature_df.columns:
        try:
            col = feature_df[name].to_numpy(dtype=np.float64)
        except (ValueError, TypeError) as exc:
            raise ValueError(f"feature column {name!r} is not numeric: {exc}") from exc
        if not np.all(np.isfinite(col)):
            raise ValueError(f"feature column {name!r} contains missing or non-finite values")
        columns.append(col)
    features = np.column_stack(columns)

    classes, labels = np.unique(raw_labels, return_inverse=True)
    if classes.size < 2:
        raise ValueError(f"need at least 2 classes, found {classes.size}")
    k = int(classes.size)
    if num_classes is not None:
        if num_classes < k:
            raise ValueError(f"num_classes={num_classes} but {k} distinct labels observed")
        k = int(num_classes)
    return LabeledTable(features=features, labels=labels.astype(np.int64), num_classes=k)


def _stratum_test_count(n: int, test_ratio: float) -> int:
    """Test-row count for one class stratum: half-up rounding, at least
    one row always kept on the train side."""
    raw = int(np.floor(test_ratio * n + 0.5))
    return max(0, min(raw, n - 1))


def split_train_test(
    table: LabeledTable, test_ratio: float, seed: int
) -> tuple[LabeledTable, LabeledTable]:
    """Stratified train/test split.

    Each class contributes ``round(test_ratio * n_class)`` rows to the
    test side (classes too small to stratify stay in train).  The union
    of the outputs is exactly the input, and the split is deterministic
    for a fixed seed.
    """
    if not 0.0 < test_ratio < 1.0:
        raise ValueError("test_ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    test_idx = []
    train_idx = []
    for cls in np.unique(table.labels):
        idx = np.flatnonzero(table.labels == cls)
        perm = rng.permutation(idx)
        n_test = _stratum_test_count(idx.size, test_ratio)
        test_idx.append(perm[:n_test])
        train_idx.append(perm[n_test:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx)) if test_idx else np.empty(0, dtype=np.int64)
    make = lambda idx: LabeledTable(table.features[idx], table.labels[idx], table.num_classes)
    return make(train), make(test)


def _shard_from_rows(table, rows, client_id, spec, *, enforce_min=True) -> ClientShard:
    local = LabeledTable(table.features[rows], table.labels[rows], table.num_classes)
    train, test = split_train_test(local, spec.test_ratio, derive_seed(spec.seed, "split", client_id))
    if enforce_min and train.n_samples < spec.min_samples:
        raise ValueError(
            f"client {client_id} has {train.n_samples} train rows < min_samples={spec.min_samples}"
        )
    return ClientShard(client_id=client_id, train=train, test=test)


def _deal_class_slots(num_clients: int, classes_per_client: int, num_classes: int, rng) -> list[list[int]]:
    """Assign each client ``k`` distinct classes, using every class nearly
    equally often (round-robin slot list, shuffled, duplicate-repaired)."""
    c, k = num_clients, classes_per_client
    slots = np.array([i % num_classes for i in range(c * k)])
    slots = rng.permutation(slots)
    hands = [list(slots[i * k : (i + 1) * k]) for i in range(c)]

    # Swap-repair: a client dealt the same class twice trades one copy with
    # another client; each swap strictly reduces the duplicate count.
    def duplicates(hand):
        seen, dups = set(), []
        for pos, cls in enumerate(hand):
            if cls in seen:
                dups.append(pos)
            seen.add(cls)
        return dups

    for _ in range(c * k):
        dup_positions = [(i, p) for i in range(c) for p in duplicates(hands[i])]
        if not dup_positions:
            break
        i, p = dup_positions[0]
        cls = hands[i][p]
        fixed = False
        for j in range(c):
            if j == i or cls in hands[j]:
                continue
            for q, other in enumerate(hands[j]):
                if other not in hands[i]:
                    hands[i][p], hands[j][q] = hands[j][q], hands[i][p]
                    fixed = True
                    break
            if fixed:
                break
        if not fixed:
            raise ValueError("infeasible class-based spec: cannot deal distinct classes")
    else:
        raise ValueError("infeasible class-based spec: cannot deal distinct classes")
    return [sorted(int(x) for x in hand) for hand in hands]


def partition_class_based(table: LabeledTable, spec: PartitionSpec) -> list[ClientShard]:
    """Pathological non-IID split: every client holds exactly ``k`` classes.

    Each class's rows are divided equally among the clients it was dealt
    to; a class dealt to more clients than it has samples is an error
    (a client would otherwise end up with fewer than ``k`` classes).
    """
    if spec.kind != "class_based":
        raise ValueError("spec.kind must be 'class_based'")
    k, c, big_k = spec.classes_per_client, spec.num_clients, table.num_classes
    if k > big_k:
        raise ValueError(f"classes_per_client={k} exceeds num_classes={big_k}")
    if c * k < big_k:
        raise ValueError(
            f"infeasible spec: {c * k} class slots cannot cover {big_k} classes with samples"
        )
    rng = np.random.default_rng(derive_seed(spec.seed, "deal"))
    hands = _deal_class_slots(c, k, big_k, rng)

    holders: dict[int, list[int]] = {cls: [] for cls in range(big_k)}
    for client, hand in enumerate(hands):
        for cls in hand:
            holders[cls].append(client)

    client_rows: list[list[int]] = [[] for _ in range(c)]
    for cls in range(big_k):
        rows = np.flatnonzero(table.labels == cls)
        members = holders[cls]
        if rows.size == 0:
            continue
        if not members:
            raise ValueError(f"infeasible spec: class {cls} assigned to zero clients")
        if rows.size < len(members):
            raise ValueError(
                f"class {cls} has {rows.size} samples for {len(members)} clients; "
                "a client would lose the class entirely"
            )
        perm = rng.permutation(rows)
        chunks = np.array_split(perm, len(members))
        for client, chunk in zip(members, chunks):
            client_rows[client].extend(int(r) for r in chunk)

    return [_shard_from_rows(table, np.array(sorted(rows)), i, spec) for i, rows in enumerate(client_rows)]


def _proportions_to_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of proportions into integer counts."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    remainder = total - counts.sum()
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _prospective_train_rows(counts: np.ndarray, test_ratio: float) -> int:
    """Train rows a client would keep after the stratified split, given its
    per-class counts."""
    total = int(counts.sum())
    test = sum(_stratum_test_count(int(n), test_ratio) for n in counts if n > 0)
    return total - test


def partition_dirichlet(table: LabeledTable, spec: PartitionSpec) -> list[ClientShard]:
    """Dirichlet label-skew split: per class, client proportions ~ Dir(alpha).

    Draws are rejected (up to 100 attempts) while any client's resulting
    train rows would fall below ``min_samples``; after that, counts are
    topped up by moving samples from the largest clients.
    """
    if spec.kind != "dirichlet":
        raise ValueError("spec.kind must be 'dirichlet'")
    c, big_k = spec.num_clients, table.num_classes
    if table.n_samples < c * spec.min_samples:
        raise ValueError(
            f"{table.n_samples} samples cannot give {c} clients >= {spec.min_samples} each"
        )
    class_sizes = table.label_histogram()

    counts = None
    for attempt in range(100):
        rng = np.random.default_rng(derive_seed(spec.seed, "attempt", attempt))
        trial = np.zeros((big_k, c), dtype=np.int64)
        for cls in range(big_k):
            props = rng.dirichlet(np.full(c, float(spec.alpha)))
            trial[cls] = _proportions_to_counts(props, int(class_sizes[cls]))
        trains = [_prospective_train_rows(trial[:, i], spec.test_ratio) for i in range(c)]
        if min(trains) >= spec.min_samples:
            counts = trial
            break
    if counts is None:
        counts = trial
        _top_up_counts(counts, spec)

    assign_rng = np.random.default_rng(derive_seed(spec.seed, "assign"))
    client_rows: list[list[int]] = [[] for _ in range(c)]
    for cls in range(big_k):
        rows = assign_rng.permutation(np.flatnonzero(table.labels == cls))
        start = 0
        for client in range(c):
            n = int(counts[cls, client])
            client_rows[client].extend(int(r) for r in rows[start : start + n])
            start += n

    return [_shard_from_rows(table, np.array(sorted(rows)), i, spec) for i, rows in enumerate(client_rows)]


def _top_up_counts(counts: np.ndarray, spec: PartitionSpec) -> None:
    """Move samples from the largest clients until every client clears the
    train-row floor.  Mutates ``counts`` (classes x clients) in place."""
    c = counts.shape[1]
    for _ in range(int(counts.sum()) + 1):
        trains = np.array([_prospective_train_rows(counts[:, i], spec.test_ratio) for i in range(c)])
        needy = int(np.argmin(trains))
        if trains[needy] >= spec.min_samples:
            return
        donors = np.array([t if i != needy else -1 for i, t in enumerate(trains)])
        donor = int(np.argmax(donors))
        if donors[donor] <= spec.min_samples:
            raise ValueError("cannot satisfy min_samples: no client can donate samples")
        cls = int(np.argmax(counts[:, donor]))
        counts[cls, donor] -= 1
        counts[cls, needy] += 1


def dump_shards(shards: list[ClientShard], out_dir: str | Path) -> Path:
    """Write one train/test CSV pair per client plus a JSON manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for shard in shards:
        for part_name, part in (("train", shard.train), ("test", shard.test)):
            df = pd.DataFrame(part.features, columns=[f"f{j}" for j in range(part.n_features)])
            df["label"] = part.labels
            df.to_csv(out_dir / f"client_{shard.client_id:04d}_{part_name}.csv", index=False)
        hist = (shard.train.label_histogram() + shard.test.label_histogram()).tolist()
        manifest.append(
            {
                "client_id": shard.client_id,
                "n_train": shard.train.n_samples,
                "n_test": shard.test.n_samples,
                "label_histogram": hist,
            }
        )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2))
    return manifest_path
