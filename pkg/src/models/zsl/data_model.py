"""
Data Model Module for the semantic feature expansion toolkit
Handles dataset and prototype containers, CSV ingestion and emission,
feature normalization and synthetic benchmark generation
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from src.models.zsl.exceptions import DataFormatError, ShapeError, ValidationError

logger = logging.getLogger("DataModel")

FLOAT_FORMAT = ".17g"
SPLIT_SEEN = "seen"
SPLIT_UNSEEN = "unseen"
PARTITIONS = ("train", "test", "all")


def format_float(value):
    """17 significant digits: enough for a lossless float64 round trip."""
    return format(float(value), FLOAT_FORMAT)


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.flags.writeable = False
    return array


def _require_finite(array, what):
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class ClassInfo:
    class_id: str
    seen: bool


@dataclass(frozen=True)
class LabeledDataset:
    """
    Visual feature matrix with per-example class labels

    Args:
        features: l×d matrix of visual features
        labels: l class identifiers
        class_list: ordered ClassInfo entries; this order indexes every
            class-level matrix downstream
        partition: 'train' (seen classes only, each present), 'test'
            (unseen classes only) or 'all'
        example_ids: optional l identifiers, defaults to positional ids
    """

    features: np.ndarray
    labels: Tuple[str, ...]
    class_list: Tuple[ClassInfo, ...]
    partition: str = "all"
    example_ids: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        features = _frozen(self.features)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise ShapeError(f"features must be a non-empty l×d matrix, got shape {features.shape}")
        _require_finite(features, "features")
        labels = tuple(str(label) for label in self.labels)
        if len(labels) != features.shape[0]:
            raise ShapeError(f"{len(labels)} labels for {features.shape[0]} examples")
        class_list = tuple(self.class_list)
        ids = [info.class_id for info in class_list]
        if len(set(ids)) != len(ids):
            raise ValidationError("class_list contains duplicate class ids")
        known = {info.class_id: info.seen for info in class_list}
        for label in labels:
            if label not in known:
                raise ValidationError(f"label {label!r} is not in class_list")
        if self.partition not in PARTITIONS:
            raise ValidationError(f"unknown partition {self.partition!r}")
        if self.partition == "train":
            present = set(labels)
            for info in class_list:
                if info.seen and info.class_id not in present:
                    raise ValidationError(f"seen class {info.class_id!r} has no training examples")
                if not info.seen and info.class_id in present:
                    raise ValidationError(f"unseen class {info.class_id!r} has examples in the training partition")
        elif self.partition == "test":
            for label in set(labels):
                if known[label]:
                    raise ValidationError(f"seen class {label!r} has examples in the test partition")
        example_ids = self.example_ids
        if example_ids is None:
            example_ids = tuple(f"x{i:06d}" for i in range(len(labels)))
        example_ids = tuple(str(e) for e in example_ids)
        if len(example_ids) != len(labels):
            raise ShapeError("example_ids length does not match labels")

        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_list", class_list)
        object.__setattr__(self, "example_ids", example_ids)

    @property
    def n_examples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    @property
    def class_ids(self):
        return tuple(info.class_id for info in self.class_list)

    @property
    def seen_classes(self):
        return tuple(info.class_id for info in self.class_list if info.seen)

    @property
    def unseen_classes(self):
        return tuple(info.class_id for info in self.class_list if not info.seen)

    def label_positions(self, class_ids):
        """
        Map every label to its position in ``class_ids``

        Args:
            class_ids (sequence): Ordered class identifiers

        Returns:
            np.ndarray: int index per example, -1 when the label is absent
        """
        lookup = {cid: i for i, cid in enumerate(class_ids)}
        return np.array([lookup.get(label, -1) for label in self.labels], dtype=np.int64)

    def with_features(self, features, partition=None):
        return LabeledDataset(
            features=features,
            labels=self.labels,
            class_list=self.class_list,
            partition=partition or self.partition,
            example_ids=self.example_ids,
        )

    def subset(self, mask, partition):
        mask = np.asarray(mask, dtype=bool)
        return LabeledDataset(
            features=self.features[mask],
            labels=tuple(label for label, keep in zip(self.labels, mask) if keep),
            class_list=self.class_list,
            partition=partition,
            example_ids=tuple(e for e, keep in zip(self.example_ids, mask) if keep),
        )


@dataclass(frozen=True)
class PrototypeTable:
    """
    Per-class semantic vectors split into predefined and expanded segments

    Args:
        class_ids: unique class identifiers, in class_list order
        predefined: (m+v)×n predefined prototypes
        seen: seen/unseen flag per class
        expanded: optional (m+v)×k expanded prototypes
    """

    class_ids: Tuple[str, ...]
    predefined: np.ndarray
    seen: Tuple[bool, ...]
    expanded: Optional[np.ndarray] = None

    def __post_init__(self):
        class_ids = tuple(str(c) for c in self.class_ids)
        if len(set(class_ids)) != len(class_ids):
            raise ValidationError("prototype class ids must be unique")
        predefined = _frozen(self.predefined)
        if predefined.ndim != 2 or predefined.shape[1] < 1:
            raise ShapeError(f"predefined prototypes must be (m+v)×n with n ≥ 1, got {predefined.shape}")
        if predefined.shape[0] != len(class_ids):
            raise ShapeError(f"{predefined.shape[0]} prototype rows for {len(class_ids)} classes")
        _require_finite(predefined, "predefined prototypes")
        seen = tuple(bool(s) for s in self.seen)
        if len(seen) != len(class_ids):
            raise ShapeError("split flags do not match class ids")
        expanded = self.expanded
        if expanded is not None:
            expanded = _frozen(expanded)
            if expanded.ndim != 2 or expanded.shape[1] < 1:
                raise ShapeError(f"expanded prototypes must be (m+v)×k with k ≥ 1, got {expanded.shape}")
            if expanded.shape[0] != predefined.shape[0]:
                raise ShapeError("expanded and predefined row counts differ")
            _require_finite(expanded, "expanded prototypes")
        object.__setattr__(self, "class_ids", class_ids)
        object.__setattr__(self, "predefined", predefined)
        object.__setattr__(self, "seen", seen)
        object.__setattr__(self, "expanded", expanded)

    @property
    def n(self):
        return self.predefined.shape[1]

    @property
    def k(self):
        return 0 if self.expanded is None else self.expanded.shape[1]

    @property
    def seen_ids(self):
        return tuple(c for c, s in zip(self.class_ids, self.seen) if s)

    @property
    def unseen_ids(self):
        return tuple(c for c, s in zip(self.class_ids, self.seen) if not s)

    @property
    def class_list(self):
        return tuple(ClassInfo(c, s) for c, s in zip(self.class_ids, self.seen))

    def index_of(self, class_id):
        try:
            return self.class_ids.index(class_id)
        except ValueError:
            raise ValidationError(f"unknown class id {class_id!r}") from None

    def combined(self):
        """Predefined segment first, expanded second."""
        if self.expanded is None:
            return self.predefined.copy()
        return np.hstack([self.predefined, self.expanded])

    def segment(self, mode):
        """
        Prototype matrix for one ablation mode

        Args:
            mode (str): 'P' predefined only, 'E' expanded only, 'P+E' both

        Returns:
            np.ndarray: (m+v)×(n | k | n+k) matrix
        """
        if mode == "P":
            return self.predefined.copy()
        if mode == "E":
            if self.expanded is None:
                raise ValidationError("table has no expanded segment")
            return self.expanded.copy()
        if mode == "P+E":
            return self.combined()
        raise ValidationError(f"unknown prototype segment {mode!r}")

    def restrict(self, seen):
        """Sub-table holding only seen (True) or unseen (False) classes."""
        rows = [i for i, s in enumerate(self.seen) if s == seen]
        return PrototypeTable(
            class_ids=tuple(self.class_ids[i] for i in rows),
            predefined=self.predefined[rows],
            seen=tuple(self.seen[i] for i in rows),
            expanded=None if self.expanded is None else self.expanded[rows],
        )

    def with_expanded(self, expanded):
        return PrototypeTable(self.class_ids, self.predefined, self.seen, expanded)

    def rows_for(self, class_ids, mode="P+E"):
        matrix = self.segment(mode)
        return matrix[[self.index_of(c) for c in class_ids]]


@dataclass(frozen=True)
class FeatureSchema:
    """
    What a features.csv must conform to

    Args:
        class_split: class id -> seen flag, in prototypes-file order
        dim: expected visual dimension, or None to accept the header's
    """

    class_split: Dict[str, bool]
    dim: Optional[int] = None

    @classmethod
    def from_prototypes(cls, table, dim=None):
        return cls(class_split=dict(zip(table.class_ids, table.seen)), dim=dim)

    @property
    def class_list(self):
        return tuple(ClassInfo(cid, seen) for cid, seen in self.class_split.items())


@dataclass(frozen=True)
class DatasetDims:
    d: int
    n: int
    m: int
    v: int


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    visual_dim: int
    semantic_dim: int
    expanded_dim: int
    seen: int
    unseen: int
    examples: int


# Benchmark shapes: GoogleNet visual features, predefined semantic dims and
# the expanded dims used for each benchmark.
DATASET_PRESETS = {
    "awa": DatasetPreset("AWA", 1024, 85, 65, 40, 10, 30475),
    "cub": DatasetPreset("CUB", 1024, 312, 138, 150, 50, 11788),
    "apy": DatasetPreset("aPa&Y", 1024, 64, 26, 20, 12, 15339),
    "sun": DatasetPreset("SUN", 1024, 102, 58, 645, 72, 14340),
    "imagenet": DatasetPreset("ImageNet", 1024, 1000, 12, 1000, 360, 254000),
}


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Parameters of a seeded synthetic zero-shot benchmark

    With ``factor_dim`` r > 0 every class draws r latent factors; its
    predefined prototype is a shared offset plus a linear read-out of those
    factors, and its ``hidden_dim`` hidden factors are smooth quadratic
    functions of them that the prototypes do not describe linearly. With
    ``factor_dim`` 0 prototypes and hidden factors are independent Gaussians.
    The visual center is an isometric image of [prototype, hidden_scale·hidden];
    with ``hidden_dim`` 0 it is an image of the predefined prototype alone.
    """

    seed: int
    m_seen: int
    v_unseen: int
    d: int
    n: int
    cluster_spread: float
    examples_per_class: int
    hidden_dim: int = 0
    factor_dim: int = 0
    hidden_scale: float = 1.0

    def __post_init__(self):
        for name in ("m_seen", "v_unseen", "d", "n", "examples_per_class"):
            if int(getattr(self, name)) < 1:
                raise ValidationError(f"{name} must be ≥ 1")
        if int(self.hidden_dim) < 0:
            raise ValidationError("hidden_dim must be ≥ 0")
        if not 0 <= int(self.factor_dim) < self.n:
            raise ValidationError(f"factor_dim must be in [0, n) with n = {self.n}")
        if self.n + self.hidden_dim > self.d:
            raise ValidationError(f"n + hidden_dim = {self.n + self.hidden_dim} exceeds d = {self.d}")
        if not math.isfinite(self.cluster_spread) or self.cluster_spread < 0:
            raise ValidationError("cluster_spread must be a finite value ≥ 0")
        if not math.isfinite(self.hidden_scale) or self.hidden_scale < 0:
            raise ValidationError("hidden_scale must be a finite value ≥ 0")

    @classmethod
    def from_preset(
        cls, name, seed, examples_per_class=20, cluster_spread=0.3, hidden_dim=0, factor_dim=0, hidden_scale=1.0
    ):
        try:
            preset = DATASET_PRESETS[name.lower()]
        except KeyError:
            raise ValidationError(f"unknown dataset preset {name!r}") from None
        return cls(
            seed=seed,
            m_seen=preset.seen,
            v_unseen=preset.unseen,
            d=preset.visual_dim,
            n=preset.semantic_dim,
            cluster_spread=cluster_spread,
            examples_per_class=examples_per_class,
            hidden_dim=hidden_dim,
            factor_dim=factor_dim,
            hidden_scale=hidden_scale,
        )

    @property
    def dims(self):
        return DatasetDims(d=self.d, n=self.n, m=self.m_seen, v=self.v_unseen)


# norms of the shared prototype offset and of the factor read-out per unit factor
PROTOTYPE_OFFSET = 0.8
FACTOR_SCALE = 0.5


def _synthetic_streams(spec):
    children = np.random.SeedSequence(int(spec.seed)).spawn(4)
    return [np.random.default_rng(child) for child in children]


def synthetic_mixing_matrix(spec):
    """
    The fixed random isometry from class factors to visual space

    Returns:
        np.ndarray: d×(n + hidden_dim) matrix M with orthonormal columns
    """
    _, mix_rng, _, _ = _synthetic_streams(spec)
    width = spec.n + spec.hidden_dim
    Q, R = np.linalg.qr(mix_rng.standard_normal((spec.d, width)))
    return Q * np.where(np.diag(R) < 0, -1.0, 1.0)


def _class_factors(spec, proto_rng, hidden_rng, total):
    """Predefined prototypes and hidden factors for every class."""
    if spec.factor_dim == 0:
        predefined = proto_rng.standard_normal((total, spec.n)) / math.sqrt(spec.n)
        return predefined, hidden_rng.standard_normal((total, spec.hidden_dim))

    r = spec.factor_dim
    basis, _ = np.linalg.qr(proto_rng.standard_normal((spec.n, r + 1)))
    factors = proto_rng.standard_normal((total, r))
    predefined = PROTOTYPE_OFFSET * basis[:, 0] + FACTOR_SCALE * factors @ basis[:, 1:].T

    # even in the factors, so uncorrelated with the linear read-out
    directions = hidden_rng.standard_normal((spec.hidden_dim, r))
    sq_norms = np.sum(directions ** 2, axis=1)
    hidden = ((factors @ directions.T) ** 2 - sq_norms) / (math.sqrt(2.0) * sq_norms)
    return predefined, hidden


def generate_synthetic(spec):
    """
    Generate a seeded synthetic benchmark

    Seen classes get ``examples_per_class`` examples each, as do unseen
    classes; ``split_partitions`` separates the seen (training) examples
    from the unseen (test) ones.

    Args:
        spec (SyntheticSpec): Benchmark parameters

    Returns:
        tuple: (LabeledDataset with partition 'all', PrototypeTable)
    """
    proto_rng, _, hidden_rng, noise_rng = _synthetic_streams(spec)
    total = spec.m_seen + spec.v_unseen
    predefined, hidden = _class_factors(spec, proto_rng, hidden_rng, total)
    mixing = synthetic_mixing_matrix(spec)
    centers = np.hstack([predefined, spec.hidden_scale * hidden]) @ mixing.T

    class_ids = tuple(f"c{i:03d}" for i in range(total))
    seen = tuple(i < spec.m_seen for i in range(total))
    blocks = []
    labels = []
    for c in range(total):
        noise = noise_rng.standard_normal((spec.examples_per_class, spec.d))
        blocks.append(centers[c] + spec.cluster_spread * noise)
        labels.extend([class_ids[c]] * spec.examples_per_class)

    table = PrototypeTable(class_ids=class_ids, predefined=predefined, seen=seen)
    dataset = LabeledDataset(
        features=np.vstack(blocks),
        labels=tuple(labels),
        class_list=table.class_list,
        partition="all",
    )
    logger.debug(
        "Generated synthetic benchmark seed=%d: %d examples, d=%d, n=%d",
        spec.seed, dataset.n_examples, spec.d, spec.n,
    )
    return dataset, table


def split_partitions(ds):
    """
    Split a dataset into the seen-class training partition and the
    unseen-class test partition

    Returns:
        tuple: (train LabeledDataset, test LabeledDataset or None)
    """
    seen = set(ds.seen_classes)
    is_seen = np.array([label in seen for label in ds.labels], dtype=bool)
    train = ds.subset(is_seen, "train")
    test = ds.subset(~is_seen, "test") if (~is_seen).any() else None
    return train, test


def l2_normalize_rows(features):
    """
    Scale each nonzero row to unit Euclidean norm; zero rows pass through

    Args:
        features (np.ndarray): l×d matrix

    Returns:
        np.ndarray: normalized copy
    """
    features = np.asarray(features, dtype=np.float64)
    out = features.copy()
    norms = np.linalg.norm(features, axis=1)
    nonzero = norms > 0
    out[nonzero] = features[nonzero] / norms[nonzero, None]
    return out


def normalize_dataset(ds):
    return ds.with_features(l2_normalize_rows(ds.features))


def class_centers(ds):
    """
    Arithmetic mean of each seen class's examples, in class_list order

    Args:
        ds (LabeledDataset): Dataset holding the seen-class examples

    Returns:
        np.ndarray: m×d matrix of class centers
    """
    seen = ds.seen_classes
    positions = ds.label_positions(seen)
    centers = np.empty((len(seen), ds.dim))
    for i, class_id in enumerate(seen):
        members = positions == i
        if not members.any():
            raise ValidationError(f"seen class {class_id!r} has no examples")
        centers[i] = ds.features[members].mean(axis=0)
    return centers


def _parse_float(cell, path, line, column):
    try:
        value = float(cell)
    except ValueError:
        raise DataFormatError(f"non-numeric value {cell!r} in column {column!r}", path, line) from None
    if not math.isfinite(value):
        raise DataFormatError(f"non-finite value {cell!r} in column {column!r}", path, line)
    return value


def _check_indexed_columns(header, start, prefix, path):
    names = header[start:]
    for i, name in enumerate(names):
        if name != f"{prefix}{i}":
            raise DataFormatError(f"expected column {prefix}{i}, found {name!r}", path, 1)
    return len(names)


def read_features_header(path):
    """Return the visual dimension declared by a features.csv header."""
    with open(path, "r", newline="") as f:
        header = next(csv.reader(f), None)
    if not header or header[:2] != ["example_id", "class_id"]:
        raise DataFormatError("header must start with example_id,class_id", path, 1)
    dim = _check_indexed_columns(header, 2, "f", path)
    if dim < 1:
        raise DataFormatError("no feature columns", path, 1)
    return dim


def load_features(path, schema):
    """
    Load a features.csv file

    Args:
        path (str): File path
        schema (FeatureSchema): Known classes and optional expected dimension

    Returns:
        LabeledDataset: rows in file order, partition 'all'
    """
    path = str(path)
    dim = read_features_header(path)
    if schema.dim is not None and dim != schema.dim:
        raise DataFormatError(f"expected {schema.dim} feature columns, found {dim}", path, 1)
    example_ids, labels, rows = [], [], []
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != dim + 2:
                raise DataFormatError(f"expected {dim + 2} columns, found {len(record)}", path, line)
            class_id = record[1]
            if class_id not in schema.class_split:
                raise DataFormatError(f"unknown class id {class_id!r}", path, line)
            example_ids.append(record[0])
            labels.append(class_id)
            rows.append([_parse_float(cell, path, line, f"f{j}") for j, cell in enumerate(record[2:])])
    if not rows:
        raise DataFormatError("file contains no examples", path)
    return LabeledDataset(
        features=np.array(rows, dtype=np.float64),
        labels=tuple(labels),
        class_list=schema.class_list,
        partition="all",
        example_ids=tuple(example_ids),
    )


def save_features(ds, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["example_id", "class_id"] + [f"f{j}" for j in range(ds.dim)])
        for example_id, label, row in zip(ds.example_ids, ds.labels, ds.features):
            writer.writerow([example_id, label] + [format_float(v) for v in row])
    return str(path)


def load_prototypes(path):
    """
    Load prototypes.csv (or prototypes_expanded.csv with e-columns)

    Returns:
        PrototypeTable
    """
    path = str(path)
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["class_id", "split"]:
            raise DataFormatError("header must start with class_id,split", path, 1)
        attr_cols = [c for c in header[2:] if c.startswith("a")]
        n = _check_indexed_columns(header[: 2 + len(attr_cols)], 2, "a", path)
        k = _check_indexed_columns(header, 2 + n, "e", path)
        if n < 1:
            raise DataFormatError("no predefined attribute columns", path, 1)
        class_ids, seen, rows = [], [], []
        for record in reader:
            line = reader.line_num
            if not record:
                continue
            if len(record) != len(header):
                raise DataFormatError(f"expected {len(header)} columns, found {len(record)}", path, line)
            if record[1] not in (SPLIT_SEEN, SPLIT_UNSEEN):
                raise DataFormatError(f"split must be seen or unseen, found {record[1]!r}", path, line)
            if record[0] in class_ids:
                raise DataFormatError(f"duplicate class id {record[0]!r}", path, line)
            class_ids.append(record[0])
            seen.append(record[1] == SPLIT_SEEN)
            rows.append([_parse_float(cell, path, line, header[2 + j]) for j, cell in enumerate(record[2:])])
    if not rows:
        raise DataFormatError("file contains no classes", path)
    values = np.array(rows, dtype=np.float64)
    return PrototypeTable(
        class_ids=tuple(class_ids),
        predefined=values[:, :n],
        seen=tuple(seen),
        expanded=values[:, n:] if k else None,
    )


def save_prototypes(table, path):
    header = ["class_id", "split"] + [f"a{j}" for j in range(table.n)] + [f"e{j}" for j in range(table.k)]
    values = table.combined()
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for class_id, seen, row in zip(table.class_ids, table.seen, values):
            split = SPLIT_SEEN if seen else SPLIT_UNSEEN
            writer.writerow([class_id, split] + [format_float(v) for v in row])
    return str(path)


def dims_from_files(features_path, prototypes_path):
    """Resolve (d, n, m, v) without reading the feature rows."""
    table = load_prototypes(prototypes_path)
    return DatasetDims(
        d=read_features_header(features_path),
        n=table.n,
        m=len(table.seen_ids),
        v=len(table.unseen_ids),
    )
