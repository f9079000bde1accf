"""Tabular datasets: ingestion, synthesis, splitting and non-IID partitioning."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import nn

logger = logging.getLogger(__name__)


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"
    class_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be (n, d) with one label per row")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        if np.isnan(self.features).any():
            raise ValueError("features contain NaN")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name: str | None = None) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features[idx],
            self.labels[idx],
            self.n_classes,
            name or self.name,
            self.class_names,
            self.feature_names,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(str(self.n_classes).encode())
        return h.hexdigest()


# ---------------------------------------------------------------- ingestion


@dataclass
class CsvSchema:
    label: str
    drop: tuple[str, ...] = ()
    categorical: tuple[str, ...] = ()
    classes: tuple[str, ...] | None = None

    @classmethod
    def from_file(cls, path) -> CsvSchema:
        """Read a schema from TOML (``.toml``) or JSON."""
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".json":
            raw = json.loads(text)
        else:
            from ._toml import loads

            raw = loads(text)
        unknown = set(raw) - {"label", "drop", "categorical", "classes"}
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        if "label" not in raw:
            raise ValueError("schema must name the label column")
        classes = raw.get("classes")
        return cls(
            label=raw["label"],
            drop=tuple(raw.get("drop", ())),
            categorical=tuple(raw.get("categorical", ())),
            classes=tuple(str(c) for c in classes) if classes is not None else None,
        )


def load_csv(path, schema: CsvSchema, name: str | None = None) -> Dataset:
    """Load a flow-feature CSV into a normalized Dataset.

    Drops the schema's columns, rows with missing (or infinite) values and
    duplicate rows, one-hot encodes the categorical columns and min-max
    scales every feature into [0, 1]. A constant column maps to 0.

    Raises ValueError when a label is not among ``schema.classes`` (the
    message carries the 0-based data row) or when nothing survives cleaning.
    """
    df = pd.read_csv(path)
    cols = set(df.columns)
    for col in (schema.label, *schema.drop, *schema.categorical):
        if col not in cols:
            raise ValueError(f"column {col!r} not found in {path}")
    df = df.drop(columns=list(schema.drop))
    df = df.replace([np.inf, -np.inf], np.nan).dropna(axis=0, how="any")
    df = df.drop_duplicates()
    if df.empty:
        raise ValueError(f"no rows left in {path} after cleaning")

    raw_labels = df[schema.label].astype(str)
    if schema.classes is not None:
        classes = list(schema.classes)
        bad = ~raw_labels.isin(classes)
        if bad.any():
            row = int(raw_labels.index[bad.to_numpy()][0])
            raise ValueError(
                f"row {row}: unknown label {raw_labels.loc[row]!r}, expected one of {classes}"
            )
    else:
        classes = sorted(raw_labels.unique())
    lookup = {c: i for i, c in enumerate(classes)}
    labels = raw_labels.map(lookup).to_numpy(dtype=np.int64)

    feats = df.drop(columns=[schema.label])
    if schema.categorical:
        feats = pd.get_dummies(feats, columns=list(schema.categorical), dtype=float)
    try:
        feats = feats.apply(pd.to_numeric)
    except (ValueError, TypeError) as exc:
        raise ValueError(f"non-numeric feature column not declared categorical: {exc}") from exc
    X = feats.to_numpy(dtype=np.float64)
    lo = X.min(axis=0)
    span = X.max(axis=0) - lo
    X = np.where(span > 0, (X - lo) / np.where(span > 0, span, 1.0), 0.0)

    return Dataset(
        X,
        labels,
        len(classes),
        name or Path(path).stem,
        tuple(classes),
        tuple(str(c) for c in feats.columns),
    )


def synthesize(
    n_classes: int,
    dim: int,
    per_class_counts,
    separation: float = 3.0,
    seed=0,
    noise: float = 0.1,
    name: str = "synthetic",
) -> Dataset:
    """Gaussian blobs in [0, 1]^dim, one per class.

    Center coordinates are ``0.5 + U(-1, 1) * separation * noise / 2`` and
    samples add isotropic N(0, noise^2), so larger ``separation`` pushes the
    blobs further apart in units of the noise std. Everything is clipped to
    the unit cube.
    """
    if separation <= 0:
        raise ValueError("separation must be > 0")
    counts = [int(c) for c in per_class_counts]
    if len(counts) != n_classes or any(c < 0 for c in counts) or sum(counts) == 0:
        raise ValueError("per_class_counts needs one non-negative count per class")
    rng = np.random.default_rng(seed)
    offsets = rng.uniform(-1.0, 1.0, size=(n_classes, dim))
    centers = np.clip(0.5 + offsets * separation * noise / 2, 0.0, 1.0)
    X = np.concatenate(
        [centers[c] + rng.normal(0.0, noise, size=(counts[c], dim)) for c in range(n_classes)]
    )
    y = np.repeat(np.arange(n_classes), counts)
    order = rng.permutation(len(y))
    return Dataset(np.clip(X[order], 0.0, 1.0), y[order], n_classes, name)


# ------------------------------------------------------------ split / partition


def split(dataset: Dataset, test_fraction: float = 0.2, seed=0):
    """Stratified train/test split.

    Each class sends ``round(test_fraction * n_c)`` samples to the test side.
    Singleton classes stay in train; their ids are returned in the warning list.

    Returns ``(train_idx, test_idx, warnings)`` as index arrays into ``dataset``.
    """
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test, warnings = [], [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size == 0:
            continue
        if idx.size == 1:
            warnings.append(f"class {c} has a single sample; kept in train")
            train.append(idx)
            continue
        idx = rng.permutation(idx)
        k = min(round_half_up(test_fraction * idx.size), idx.size - 1)
        test.append(idx[:k])
        train.append(idx[k:])
    for w in warnings:
        logger.warning(w)
    return (
        np.sort(np.concatenate(train)),
        np.sort(np.concatenate(test)) if test else np.zeros(0, dtype=np.int64),
        warnings,
    )


@dataclass
class PartitionPlan:
    eta: float
    client_count: int
    seed: int
    assignments: list[np.ndarray] = field(default_factory=list)

    def sizes(self) -> list[int]:
        return [len(a) for a in self.assignments]

    def to_json(self) -> str:
        return json.dumps(
            {
                "eta": self.eta,
                "client_count": self.client_count,
                "seed": self.seed,
                "assignments": {
                    str(i): sorted(int(j) for j in a) for i, a in enumerate(self.assignments)
                },
            },
            indent=1,
        )


def dirichlet_partition(
    labels, n_classes: int, client_count: int = 20, eta: float = 0.4, seed: int = 0
) -> PartitionPlan:
    """Spread each class over clients with proportions drawn from Dirichlet(eta).

    A client left empty receives one sample taken from the currently largest
    client; that repeats until nobody is empty.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if eta <= 0:
        raise ValueError("eta must be > 0")
    if client_count < 2:
        raise ValueError("client_count must be >= 2")
    if labels.size < client_count:
        raise ValueError(f"{labels.size} samples cannot cover {client_count} clients")
    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(client_count)]
    for c in range(n_classes):
        idx = rng.permutation(np.flatnonzero(labels == c))
        if idx.size == 0:
            continue
        share = rng.dirichlet(np.full(client_count, eta))
        cuts = (np.cumsum(share)[:-1] * idx.size).astype(int)
        for k, part in enumerate(np.split(idx, cuts)):
            buckets[k].extend(part.tolist())
    for k in range(client_count):
        if not buckets[k]:
            donor = max(range(client_count), key=lambda j: (len(buckets[j]), -j))
            buckets[donor].sort()
            buckets[k].append(buckets[donor].pop())
    return PartitionPlan(
        eta, client_count, seed, [np.array(sorted(b), dtype=np.int64) for b in buckets]
    )


# ---------------------------------------------------------------- auxiliary


@dataclass
class AuxiliaryDataset:
    data: Dataset
    confidence_threshold: float
    volume_fraction: float
    source_indices: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.data)


def build_auxiliary(
    arch: nn.MlpArchitecture,
    reference: np.ndarray,
    pool: Dataset,
    threshold: float = 0.9,
    volume_fraction: float = 1.0,
    seed=0,
) -> AuxiliaryDataset:
    """Keep pool samples the reference model gets right with confidence > threshold.

    Survivors are then subsampled per class to ``volume_fraction`` of their
    count (rounded half up, at least one per surviving class).
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if not 0 < volume_fraction <= 1:
        raise ValueError("volume_fraction must lie in (0, 1]")
    probs = nn.forward(arch, reference, pool.features)
    pred = probs.argmax(axis=1)
    ok = (pred == pool.labels) & (probs.max(axis=1) > threshold)

    rng = np.random.default_rng(seed)
    keep, warnings = [], []
    for c in np.unique(pool.labels):
        idx = np.flatnonzero(ok & (pool.labels == c))
        if idx.size == 0:
            warnings.append(f"class {c} has no confident samples in the auxiliary set")
            continue
        if volume_fraction < 1:
            k = max(1, round_half_up(volume_fraction * idx.size))
            idx = np.sort(rng.choice(idx, size=k, replace=False))
        keep.append(idx)
    for w in warnings:
        logger.warning(w)
    if not keep:
        raise ValueError("auxiliary dataset is empty; the reference model has no confident hits")
    keep = np.sort(np.concatenate(keep))
    return AuxiliaryDataset(
        pool.subset(keep, name=f"{pool.name}-aux"), threshold, volume_fraction, keep, warnings
    )
