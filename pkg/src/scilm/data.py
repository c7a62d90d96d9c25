"""Datasets: in-memory representation, on-disk format, statistics, synthesis."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DatasetError

FEATURES_MAGIC = b"ZSLF"
ATTRIBUTES_MAGIC = b"ZSLA"
_HEADER = struct.Struct("<4sII")

SPLIT_FILES = ("train_idx.txt", "test_seen_idx.txt", "test_unseen_idx.txt")


@dataclass(eq=False)
class Dataset:
    features: np.ndarray  # N x p
    labels: np.ndarray  # N, class ids
    attributes: np.ndarray  # C x q, row per class id
    seen_classes: list[int]
    unseen_classes: list[int]
    train_idx: np.ndarray
    test_seen_idx: np.ndarray
    test_unseen_idx: np.ndarray
    class_names: list[str] | None = None
    # unseen class id -> seen class id whose attribute it was derived from
    # (synthetic datasets only; not persisted)
    attr_links: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.attributes = np.ascontiguousarray(self.attributes, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.train_idx = np.asarray(self.train_idx, dtype=np.int64)
        self.test_seen_idx = np.asarray(self.test_seen_idx, dtype=np.int64)
        self.test_unseen_idx = np.asarray(self.test_unseen_idx, dtype=np.int64)
        self.seen_classes = [int(c) for c in self.seen_classes]
        self.unseen_classes = [int(c) for c in self.unseen_classes]

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def q(self) -> int:
        return self.attributes.shape[1]

    @property
    def n_classes(self) -> int:
        return self.attributes.shape[0]

    @cached_property
    def train_by_class(self) -> dict[int, np.ndarray]:
        """Training indices grouped by seen class, in ``train_idx`` order."""
        labels = self.labels[self.train_idx]
        return {c: self.train_idx[labels == c] for c in self.seen_classes}

    def class_name(self, c: int) -> str:
        if self.class_names and c < len(self.class_names):
            return self.class_names[c]
        return str(c)

    def validate(self, source: str = "dataset") -> None:
        """Raise :class:`DatasetError` if any structural invariant is broken."""
        n = self.n_instances
        if self.features.ndim != 2 or self.attributes.ndim != 2:
            raise DatasetError(f"{source}: features and attributes must be matrices")
        if self.labels.shape != (n,):
            raise DatasetError(f"{source}: {self.labels.size} labels for {n} feature rows")
        if not np.all(np.isfinite(self.features)) or not np.all(np.isfinite(self.attributes)):
            raise DatasetError(f"{source}: non-finite feature or attribute values")
        C = self.n_classes
        if n and (self.labels.min() < 0 or self.labels.max() >= C):
            raise DatasetError(f"{source}: label out of range [0, {C})")
        for name, classes in (("seen", self.seen_classes), ("unseen", self.unseen_classes)):
            if len(set(classes)) != len(classes):
                raise DatasetError(f"{source}: duplicate class id in {name} list")
            if any(c < 0 or c >= C for c in classes):
                raise DatasetError(f"{source}: {name} class id out of range [0, {C})")
        if set(self.seen_classes) & set(self.unseen_classes):
            raise DatasetError(f"{source}: seen and unseen class lists overlap")

        splits = {
            "train_idx": (self.train_idx, set(self.seen_classes)),
            "test_seen_idx": (self.test_seen_idx, set(self.seen_classes)),
            "test_unseen_idx": (self.test_unseen_idx, set(self.unseen_classes)),
        }
        taken: set[int] = set()
        for name, (idx, allowed) in splits.items():
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise DatasetError(f"{source}: {name} references an index outside [0, {n})")
            as_set = set(idx.tolist())
            if len(as_set) != idx.size:
                raise DatasetError(f"{source}: {name} repeats an index")
            if taken & as_set:
                raise DatasetError(f"{source}: {name} overlaps another split")
            taken |= as_set
            bad = set(self.labels[idx].tolist()) - allowed
            if bad:
                raise DatasetError(f"{source}: {name} holds instances of classes {sorted(bad)} not allowed there")
        counts = np.bincount(self.labels[self.train_idx], minlength=C)
        empty = [c for c in self.seen_classes if counts[c] == 0]
        if empty:
            raise DatasetError(f"{source}: seen classes {empty} have no training instances")


# --- file format -------------------------------------------------------------

def _write_matrix_bin(path: Path, magic: bytes, m: np.ndarray) -> None:
    rows, cols = m.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(magic, rows, cols))
        fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


def _read_matrix_bin(path: Path, magic: bytes) -> np.ndarray:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetError(f"{path}: truncated header")
    got, rows, cols = _HEADER.unpack_from(raw)
    if got != magic:
        raise DatasetError(f"{path}: bad magic {got!r}, expected {magic!r}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise DatasetError(f"{path}: header declares {rows}x{cols} but file holds {len(raw)} bytes (expected {expected})")
    return np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)


def _read_matrix_csv(path: Path) -> np.ndarray:
    try:
        m = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    return m


def _read_matrix(directory: Path, stem: str, magic: bytes) -> np.ndarray:
    bin_path = directory / f"{stem}.bin"
    if bin_path.exists():
        return _read_matrix_bin(bin_path, magic)
    csv_path = directory / f"{stem}.csv"
    if csv_path.exists():
        return _read_matrix_csv(csv_path)
    raise DatasetError(f"{directory}: missing {stem}.bin (or {stem}.csv)")


def _read_ints(path: Path) -> np.ndarray:
    if not path.exists():
        raise DatasetError(f"{path}: missing file")
    values = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            values.append(int(line))
        except ValueError:
            raise DatasetError(f"{path}:{lineno}: not an integer: {line!r}") from None
    return np.asarray(values, dtype=np.int64)


def _write_ints(path: Path, values) -> None:
    path.write_text("".join(f"{int(v)}\n" for v in values))


def load_dataset(dir_path: str | os.PathLike) -> Dataset:
    """Read a dataset directory; 32-bit stored values are widened to float64."""
    d = Path(dir_path)
    if not d.is_dir():
        raise DatasetError(f"{d}: not a directory")
    features = _read_matrix(d, "features", FEATURES_MAGIC)
    attributes = _read_matrix(d, "attributes", ATTRIBUTES_MAGIC)
    labels = _read_ints(d / "labels.txt")
    if labels.size != features.shape[0]:
        raise DatasetError(f"{d / 'labels.txt'}: {labels.size} labels for {features.shape[0]} feature rows")
    C = attributes.shape[0]
    bad = np.flatnonzero((labels < 0) | (labels >= C))
    if bad.size:
        raise DatasetError(f"{d / 'labels.txt'}:{bad[0] + 1}: label {labels[bad[0]]} out of range [0, {C})")
    seen = _read_ints(d / "seen.txt").tolist()
    unseen = _read_ints(d / "unseen.txt").tolist()
    splits = {}
    n = features.shape[0]
    for name in SPLIT_FILES:
        idx = _read_ints(d / name)
        out = np.flatnonzero((idx < 0) | (idx >= n))
        if out.size:
            raise DatasetError(f"{d / name}: index {idx[out[0]]} outside [0, {n})")
        splits[name] = idx
    names = None
    names_path = d / "classes.txt"
    if names_path.exists():
        names = names_path.read_text().splitlines()
    ds = Dataset(
        features=features,
        labels=labels,
        attributes=attributes,
        seen_classes=seen,
        unseen_classes=unseen,
        train_idx=splits["train_idx.txt"],
        test_seen_idx=splits["test_seen_idx.txt"],
        test_unseen_idx=splits["test_unseen_idx.txt"],
        class_names=names,
    )
    ds.validate(str(d))
    return ds


def save_dataset(ds: Dataset, dir_path: str | os.PathLike) -> None:
    d = Path(dir_path)
    try:
        d.mkdir(parents=True, exist_ok=True)
        _write_matrix_bin(d / "features.bin", FEATURES_MAGIC, ds.features)
        _write_matrix_bin(d / "attributes.bin", ATTRIBUTES_MAGIC, ds.attributes)
        _write_ints(d / "labels.txt", ds.labels)
        _write_ints(d / "seen.txt", ds.seen_classes)
        _write_ints(d / "unseen.txt", ds.unseen_classes)
        _write_ints(d / "train_idx.txt", ds.train_idx)
        _write_ints(d / "test_seen_idx.txt", ds.test_seen_idx)
        _write_ints(d / "test_unseen_idx.txt", ds.test_unseen_idx)
        if ds.class_names:
            (d / "classes.txt").write_text("".join(f"{name}\n" for name in ds.class_names))
    except OSError as exc:
        raise DatasetError(f"{d}: cannot write dataset: {exc}") from exc


# --- statistics --------------------------------------------------------------

@dataclass
class ClassStats:
    """Per seen class training-instance counts.

    Counts are taken over the training split only, and ``std`` is the
    population standard deviation across seen classes.
    """

    counts: dict[int, int]
    std: float

    @property
    def sorted_counts(self) -> list[tuple[int, int]]:
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))


def class_stats(ds: Dataset) -> ClassStats:
    per_class = np.bincount(ds.labels[ds.train_idx], minlength=ds.n_classes)
    counts = {c: int(per_class[c]) for c in ds.seen_classes}
    values = np.array(list(counts.values()), dtype=np.float64)
    std = float(values.std()) if values.size else 0.0
    return ClassStats(counts=counts, std=std)


# --- synthetic long-tailed data ----------------------------------------------

@dataclass
class SyntheticSpec:
    k_seen: int = 20
    t_unseen: int = 5
    p: int = 32
    q: int = 16
    head_count: int = 500
    tail_count: int = 5
    noise_sigma: float = 0.2
    attr_link: int = 3
    test_per_class: int = 50
    seed: int = 0
    nonneg_features: bool = True

    def validate(self) -> None:
        if self.k_seen < 1 or self.t_unseen < 0:
            raise ConfigurationError("k_seen must be >= 1 and t_unseen >= 0")
        if self.p < 1 or self.q < 1:
            raise ConfigurationError("p and q must be positive")
        if not (self.head_count >= self.tail_count >= 1):
            raise ConfigurationError("need head_count >= tail_count >= 1")
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be nonnegative")
        if not (0 <= self.attr_link <= min(self.t_unseen, self.k_seen)):
            raise ConfigurationError("attr_link must lie in [0, min(t_unseen, k_seen)]")
        if self.test_per_class < 0:
            raise ConfigurationError("test_per_class must be nonnegative")

    @property
    def decay(self) -> float:
        """Ratio between the counts of adjacent seen classes."""
        if self.k_seen == 1:
            return 1.0
        return (self.tail_count / self.head_count) ** (1.0 / (self.k_seen - 1))

    def train_counts(self) -> list[int]:
        counts = [
            max(1, int(round(self.head_count * self.decay**i))) for i in range(self.k_seen)
        ]
        counts[-1] = self.tail_count if self.k_seen > 1 else self.head_count
        return counts


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def make_synthetic_longtail(spec: SyntheticSpec) -> Dataset:
    """Deterministic long-tailed dataset driven by a random linear map.

    Seen classes are ``0..k-1`` (training counts decay geometrically with the
    class id), unseen classes are ``k..k+t-1``. The first ``attr_link`` unseen
    classes get attributes that perturb the attributes of the smallest seen
    classes, the last seen class first.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    k, t = spec.k_seen, spec.t_unseen
    G = rng.standard_normal((spec.p, spec.q))
    attrs = np.empty((k + t, spec.q))
    for c in range(k + t):
        attrs[c] = _unit(rng.standard_normal(spec.q))
    links = {}
    for j in range(spec.attr_link):
        unseen, tail = k + j, k - 1 - j
        attrs[unseen] = _unit(attrs[tail] + 0.1 * rng.standard_normal(spec.q))
        links[unseen] = tail
    means = attrs @ G.T
    if spec.nonneg_features:
        means = np.abs(means)

    train_counts = spec.train_counts()
    blocks, labels = [], []
    train_idx, test_seen_idx, test_unseen_idx = [], [], []
    offset = 0

    def draw(c: int, m: int) -> np.ndarray:
        x = means[c] + spec.noise_sigma * rng.standard_normal((m, spec.p))
        return np.abs(x) if spec.nonneg_features else x

    for c in range(k + t):
        n_train = train_counts[c] if c < k else 0
        m = n_train + spec.test_per_class
        blocks.append(draw(c, m))
        labels.extend([c] * m)
        ids = list(range(offset, offset + m))
        train_idx.extend(ids[:n_train])
        (test_seen_idx if c < k else test_unseen_idx).extend(ids[n_train:])
        offset += m

    features = np.concatenate(blocks, axis=0) if blocks else np.zeros((0, spec.p))
    return Dataset(
        features=features,
        labels=np.asarray(labels),
        attributes=attrs,
        seen_classes=list(range(k)),
        unseen_classes=list(range(k, k + t)),
        train_idx=np.asarray(train_idx),
        test_seen_idx=np.asarray(test_seen_idx),
        test_unseen_idx=np.asarray(test_unseen_idx),
        attr_links=links,
    )


def attribute_similarity(ds: Dataset) -> np.ndarray:
    """Cosine similarity between unseen (rows) and seen (columns) attributes."""
    a = ds.attributes
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    unit = a / np.maximum(norms, 1e-12)
    return unit[ds.unseen_classes] @ unit[ds.seen_classes].T
