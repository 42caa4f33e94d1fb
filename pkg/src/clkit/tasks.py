"""Dataset loading and task-sequence construction.

A task sequence is an ordered list of (train, validation, test) dataset
triples sharing one label space.  Class-incremental sequences split a
dataset into consecutive class blocks; domain-incremental sequences keep
the same row partition but relabel every class into one of two groups.

The built-in classical tables ship inside the package in the same
feature-file format accepted from disk: a ``#k=<K>,d=<D>`` header line
followed by ``label,f1,...,fD`` rows with ``.`` as the radix and LF line
endings.
"""

import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

BUILTIN_NAMES = ("iris", "wine", "iris2d")

TEST_FRACTION = 0.2
VAL_FRACTION = 0.2


class FeatureFileError(ValueError):
    """A feature file failed to parse; the message carries the line number."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, integer labels, and the size of the shared label space."""

    X: np.ndarray
    y: np.ndarray
    n_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a nonempty 2-D matrix")
        if y.shape != (X.shape[0],):
            raise ValueError("y must have one label per row of X")
        if not np.isfinite(X).all():
            raise ValueError("X contains non-finite entries")
        if self.n_classes < 1:
            raise ValueError("n_classes must be positive")
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n_rows(self):
        return self.X.shape[0]

    @property
    def n_features(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class TaskTriple:
    train: Dataset
    val: Dataset
    test: Dataset


@dataclass(frozen=True)
class TaskSequence:
    """Ordered task triples with a mode tag, CI or DI."""

    tasks: tuple
    mode: str
    n_classes: int

    def __post_init__(self):
        if self.mode not in ("CI", "DI"):
            raise ValueError("mode must be 'CI' or 'DI'")
        if not self.tasks:
            raise ValueError("a task sequence needs at least one task")
        object.__setattr__(self, "tasks", tuple(self.tasks))

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)


def load_feature_file(path):
    """Parse a feature CSV with a ``#k=<K>,d=<D>`` header into a Dataset."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FeatureFileError(f"{path}: line 1: empty file")
    header = lines[0]
    if not header.startswith("#k=") or ",d=" not in header:
        raise FeatureFileError(f"{path}: line 1: header must look like '#k=<K>,d=<D>'")
    try:
        k_part, d_part = header[1:].split(",")
        n_classes = int(k_part.removeprefix("k="))
        width = int(d_part.removeprefix("d="))
    except ValueError as err:
        raise FeatureFileError(f"{path}: line 1: bad header: {err}") from None
    if n_classes < 1 or width < 1:
        raise FeatureFileError(f"{path}: line 1: k and d must be positive")
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != width + 1:
            raise FeatureFileError(
                f"{path}: line {lineno}: expected {width + 1} fields, got {len(fields)}"
            )
        try:
            label = int(fields[0])
            values = [float(v) for v in fields[1:]]
        except ValueError:
            raise FeatureFileError(f"{path}: line {lineno}: non-numeric field") from None
        if not 0 <= label < n_classes:
            raise FeatureFileError(
                f"{path}: line {lineno}: label {label} outside [0, {n_classes})"
            )
        if not all(math.isfinite(v) for v in values):
            raise FeatureFileError(f"{path}: line {lineno}: non-finite value")
        labels.append(label)
        rows.append(values)
    if not rows:
        raise FeatureFileError(f"{path}: line 2: no data rows")
    return Dataset(X=np.array(rows), y=np.array(labels), n_classes=n_classes)


def write_feature_file(path, ds):
    """Write a Dataset in the feature CSV format, exact float round-trip."""
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(f"#k={ds.n_classes},d={ds.n_features}\n")
        for label, row in zip(ds.y, ds.X):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")


def load_builtin(name):
    """One of the embedded classical datasets: iris, wine, or iris2d.

    iris2d keeps only the petal length and petal width columns of iris.
    """
    if name not in BUILTIN_NAMES:
        raise ValueError(f"unknown builtin dataset {name!r}; choose from {BUILTIN_NAMES}")
    source = "iris" if name == "iris2d" else name
    ref = resources.files("clkit").joinpath(f"_data/{source}.csv")
    with resources.as_file(ref) as path:
        ds = load_feature_file(path)
    if name == "iris2d":
        ds = Dataset(X=ds.X[:, [2, 3]], y=ds.y, n_classes=ds.n_classes)
    return ds


def standardize(ds):
    """Zero-mean unit-variance feature scaling; constant columns are left as zero."""
    mean = ds.X.mean(axis=0)
    std = ds.X.std(axis=0)
    std[std == 0] = 1.0
    return Dataset(X=(ds.X - mean) / std, y=ds.y, n_classes=ds.n_classes)


def split_train_val_test(ds, seed):
    """Stratified 64/16/20 split: 20% test, then 20% of the rest as validation.

    Within every class the split sizes are floored and the remainder goes
    to the training part, so the partition is deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    train_idx, val_idx, test_idx = [], [], []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.y == c)
        if members.size and members.size < 3:
            raise ValueError(
                f"class {c} has only {members.size} examples; need at least 3 to split"
            )
        members = members[rng.permutation(members.size)]
        n_test = int(members.size * TEST_FRACTION)
        rest = members[n_test:]
        n_val = int(rest.size * VAL_FRACTION)
        test_idx.append(members[:n_test])
        val_idx.append(rest[:n_val])
        train_idx.append(rest[n_val:])
    parts = []
    for idx in (train_idx, val_idx, test_idx):
        merged = np.sort(np.concatenate(idx))
        parts.append(Dataset(X=ds.X[merged], y=ds.y[merged], n_classes=ds.n_classes))
    return tuple(parts)


def split_by_class(triple, classes_per_task):
    """Class-incremental sequence: task i holds the i-th consecutive class block.

    Labels keep their global indices, so every task shares one output
    space of n_classes entries.
    """
    train, val, test = triple
    K = train.n_classes
    if classes_per_task < 1 or K % classes_per_task != 0:
        raise ValueError(f"{K} classes are not divisible into blocks of {classes_per_task}")
    tasks = []
    for start in range(0, K, classes_per_task):
        block = set(range(start, start + classes_per_task))
        parts = []
        for part in (train, val, test):
            keep = np.isin(part.y, list(block))
            if not keep.any():
                raise ValueError(f"classes {sorted(block)} have no rows in one of the splits")
            parts.append(Dataset(X=part.X[keep], y=part.y[keep], n_classes=K))
        tasks.append(TaskTriple(*parts))
    return TaskSequence(tasks=tuple(tasks), mode="CI", n_classes=K)


def relabel_binary(seq, group_of):
    """Domain-incremental sequence: same rows, labels mapped into {0, 1}."""
    if seq.mode != "CI":
        raise ValueError("relabel_binary expects a class-incremental sequence")
    mapping = {int(k): int(v) for k, v in dict(group_of).items()}
    missing = [c for c in range(seq.n_classes) if c not in mapping]
    if missing:
        raise ValueError(f"group mapping is missing classes {missing}")
    if any(v not in (0, 1) for v in mapping.values()):
        raise ValueError("group mapping values must be 0 or 1")
    lut = np.array([mapping[c] for c in range(seq.n_classes)], dtype=np.int64)
    tasks = []
    for triple in seq:
        parts = []
        for part in (triple.train, triple.val, triple.test):
            parts.append(Dataset(X=part.X, y=lut[part.y], n_classes=2))
        tasks.append(TaskTriple(*parts))
    return TaskSequence(tasks=tuple(tasks), mode="DI", n_classes=2)
