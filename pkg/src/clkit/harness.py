"""Experiment orchestration: configs, runs, grid search, persistence, reports.

An experiment is described by a JSON document with five sections
(``sequence``, ``model``, ``method``, ``train``, plus top-level ``seed``,
``out_dir`` and ``max_params``).  Unknown keys anywhere are errors, so a
config either runs exactly as written or fails before any training.

Each run writes one records CSV with the fixed header
``method,hparams,seed,task_trained,dataset_index,split,accuracy``, one
pickled final estimator, and appends one line to ``index.csv`` in the
output directory.  Nothing persisted contains timestamps, so identical
seeded runs produce byte-identical files.
"""

import csv
import inspect
import itertools
import json
import os
import pickle
from dataclasses import dataclass

import numpy as np

from . import nn, tasks
from .autodiff import EvaluationError
from .methods import METHOD_REGISTRY
from .optim import TrainingError

RECORD_FIELDS = ("method", "hparams", "seed", "task_trained", "dataset_index", "split", "accuracy")
INDEX_FIELDS = ("file", "sequence", "model", "method", "hparams", "seed", "val_faa", "test_faa")
OUT_DIR_ENV = "CLKIT_OUT_DIR"
DEFAULT_MAX_PARAMS = 20000


class ConfigError(ValueError):
    """The experiment configuration is invalid."""


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def accuracy(predicted, labels):
    """Fraction of exact matches between two label arrays."""
    predicted = np.asarray(predicted)
    labels = np.asarray(labels)
    if predicted.shape != labels.shape or predicted.ndim != 1:
        raise ValueError("predictions and labels must be 1-D arrays of equal length")
    if labels.size == 0:
        raise ValueError("cannot score an empty dataset")
    return float(np.mean(predicted == labels))


def final_average_accuracy(per_dataset_accuracies):
    """Unweighted mean of the per-dataset accuracies under the final model."""
    accs = [float(a) for a in per_dataset_accuracies]
    if not accs:
        raise ValueError("no accuracies given")
    if any(a < 0 or a > 1 for a in accs):
        raise ValueError("accuracies must lie in [0, 1]")
    return float(np.mean(accs))


@dataclass(frozen=True)
class MetricsRecord:
    method: str
    hparams: str
    seed: int
    task_trained: int
    dataset_index: int
    split: str
    accuracy: float

    def row(self):
        return [
            self.method,
            self.hparams,
            str(self.seed),
            str(self.task_trained),
            str(self.dataset_index),
            self.split,
            repr(self.accuracy),
        ]


def hparams_tag(params):
    """Canonical short form of a hyperparameter dict, '-' when empty."""
    if not params:
        return "-"
    parts = []
    for key in sorted(params):
        value = params[key]
        parts.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
    return ";".join(parts)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

_SCHEMA = {
    "sequence": {
        "builtin": str,
        "files": list,
        "mode": str,
        "classes_per_task": int,
        "groups": dict,
        "standardize": bool,
    },
    "model": {"hidden_sizes": list},
    "method": {"name": str, "params": dict, "grid": dict},
    "train": {
        "epochs": int,
        "batch_size": int,
        "base_lr": (int, float),
        "adam_beta1": (int, float),
        "adam_beta2": (int, float),
        "adam_eps": (int, float),
    },
    "seed": int,
    "out_dir": str,
    "max_params": int,
}


def _check_section(name, value, schema):
    if not isinstance(value, dict):
        raise ConfigError(f"section '{name}' must be an object")
    for key, sub in value.items():
        if key not in schema:
            raise ConfigError(f"unknown key '{name}.{key}'")
        expected = schema[key]
        if isinstance(expected, dict):
            _check_section(f"{name}.{key}", sub, expected)
        elif not isinstance(sub, expected) or (isinstance(sub, bool) and expected is not bool):
            raise ConfigError(f"key '{name}.{key}' has the wrong type")


@dataclass
class ExperimentConfig:
    sequence: dict
    model: dict
    method: dict
    train: dict
    seed: int = 0
    out_dir: str = "results"
    max_params: int = DEFAULT_MAX_PARAMS

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key, value in raw.items():
            if key not in _SCHEMA:
                raise ConfigError(f"unknown key '{key}'")
            expected = _SCHEMA[key]
            if isinstance(expected, dict):
                _check_section(key, value, expected)
            elif not isinstance(value, expected) or isinstance(value, bool):
                raise ConfigError(f"key '{key}' has the wrong type")
        for required in ("sequence", "method"):
            if required not in raw:
                raise ConfigError(f"missing required section '{required}'")
        cfg = cls(
            sequence=dict(raw["sequence"]),
            model=dict(raw.get("model", {})),
            method=dict(raw["method"]),
            train=dict(raw.get("train", {})),
            seed=int(raw.get("seed", 0)),
            out_dir=str(raw.get("out_dir", "results")),
            max_params=int(raw.get("max_params", DEFAULT_MAX_PARAMS)),
        )
        if "name" not in cfg.method:
            raise ConfigError("method.name is required")
        if cfg.method["name"] not in METHOD_REGISTRY:
            raise ConfigError(
                f"unknown method '{cfg.method['name']}'; "
                f"choose from {sorted(METHOD_REGISTRY)}"
            )
        return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON: {err}") from None
    return ExperimentConfig.from_dict(raw)


def resolve_out_dir(cfg, override=None):
    """Precedence: explicit override, then environment, then the config value."""
    if override:
        return override
    return os.environ.get(OUT_DIR_ENV) or cfg.out_dir


def build_sequence(cfg):
    """Construct the task sequence an experiment config describes."""
    spec = cfg.sequence
    if ("builtin" in spec) == ("files" in spec):
        raise ConfigError("sequence needs exactly one of 'builtin' or 'files'")
    if "builtin" in spec:
        ds = tasks.load_builtin(spec["builtin"])
        name = spec["builtin"]
        if spec.get("standardize", False):
            ds = tasks.standardize(ds)
        triple = tasks.split_train_val_test(ds, cfg.seed)
        seq = tasks.split_by_class(triple, spec.get("classes_per_task", 1))
    else:
        triples = []
        n_classes = None
        for group in spec["files"]:
            if not isinstance(group, list) or len(group) != 3:
                raise ConfigError("sequence.files must be a list of [train, val, test] triples")
            parts = [tasks.load_feature_file(p) for p in group]
            if spec.get("standardize", False):
                parts = [tasks.standardize(p) for p in parts]
            if n_classes is None:
                n_classes = parts[0].n_classes
            if any(p.n_classes != n_classes for p in parts):
                raise ConfigError("all feature files in a sequence must declare the same k")
            triples.append(tasks.TaskTriple(*parts))
        seq = tasks.TaskSequence(tasks=tuple(triples), mode="CI", n_classes=n_classes)
        name = "files"
        if spec.get("mode", "CI") == "CI":
            seen = set()
            for i, triple in enumerate(seq):
                classes = set()
                for part in (triple.train, triple.val, triple.test):
                    classes |= set(np.unique(part.y).tolist())
                if classes & seen:
                    raise ConfigError(
                        f"task {i + 1} reuses classes {sorted(classes & seen)}; "
                        "CI tasks must hold disjoint class sets"
                    )
                seen |= classes
            if seen != set(range(n_classes)):
                raise ConfigError(
                    f"CI tasks cover classes {sorted(seen)} but the label space is 0..{n_classes - 1}"
                )
    mode = spec.get("mode", seq.mode)
    if mode == "DI":
        groups = spec.get("groups")
        if groups is None:
            raise ConfigError("a DI sequence requires 'sequence.groups'")
        seq = tasks.relabel_binary(seq, groups)
        for i, triple in enumerate(seq):
            if np.unique(triple.train.y).size < 2:
                raise ConfigError(
                    f"task {i + 1} is degenerate after relabeling: "
                    "its training split has a single class"
                )
    elif mode != "CI":
        raise ConfigError("sequence.mode must be 'CI' or 'DI'")
    return seq, name


def _model_tag(hidden_sizes):
    return "sr" if not hidden_sizes else "fcnn" + "x".join(str(h) for h in hidden_sizes)


def build_estimator(cfg, seq, params):
    """Instantiate the configured method with validated hyperparameters."""
    cls = METHOD_REGISTRY[cfg.method["name"]]
    accepted = set(inspect.signature(cls.__init__).parameters) - {"self"}
    kwargs = {
        "hidden_sizes": tuple(cfg.model.get("hidden_sizes", ())),
        "head": "bernoulli" if seq.mode == "DI" else "categorical",
        "epochs": cfg.train.get("epochs", 100),
        "batch_size": cfg.train.get("batch_size", 16),
        "base_lr": cfg.train.get("base_lr", 0.1),
        "beta_1": cfg.train.get("adam_beta1", 0.9),
        "beta_2": cfg.train.get("adam_beta2", 0.999),
        "epsilon": cfg.train.get("adam_eps", 1e-8),
        "random_state": cfg.seed,
    }
    for key, value in params.items():
        if key not in accepted:
            raise ConfigError(f"method '{cfg.method['name']}' has no hyperparameter '{key}'")
        kwargs[key] = value
    return cls(**kwargs)


# ---------------------------------------------------------------------------
# running and persistence
# ---------------------------------------------------------------------------


def _write_records(path, records):
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RECORD_FIELDS)
        for rec in records:
            writer.writerow(rec.row())


def read_records(path):
    """Load a records CSV back into MetricsRecord objects."""
    out = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != RECORD_FIELDS:
            raise ValueError(f"{path} is not a records file")
        for row in reader:
            out.append(
                MetricsRecord(
                    method=row[0],
                    hparams=row[1],
                    seed=int(row[2]),
                    task_trained=int(row[3]),
                    dataset_index=int(row[4]),
                    split=row[5],
                    accuracy=float(row[6]),
                )
            )
    return out


def _append_index(out_dir, row):
    path = os.path.join(out_dir, "index.csv")
    fresh = not os.path.exists(path)
    with open(path, "a", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if fresh:
            writer.writerow(INDEX_FIELDS)
        writer.writerow(row)


def read_index(out_dir):
    path = os.path.join(out_dir, "index.csv")
    rows = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(row)
    return rows


def _experiment_slug(seq_name, model_tag, method, hparams, seed):
    tag = hparams.replace(";", "_").replace("=", "").replace(".", "p")
    return f"{seq_name}_{model_tag}_{method}_{tag}_s{seed}"


def faa_from_records(records, split, n_tasks):
    """Recompute the final average accuracy of one split from records."""
    accs = [
        r.accuracy
        for r in records
        if r.split == split and r.task_trained == n_tasks
    ]
    if len(accs) != n_tasks:
        raise ValueError(f"expected {n_tasks} final {split} accuracies, found {len(accs)}")
    return final_average_accuracy(accs)


def run_experiment(cfg, params=None, out_dir=None, persist=True):
    """Run one method over one task sequence and evaluate after every task.

    Returns ``(records, estimator)``.  After each task the current model
    is scored on the validation and test splits of every dataset in the
    sequence.  When persistence is on, the records CSV, the pickled final
    estimator, and an index line are written under the output directory.
    On a numeric failure the records so far are flushed together with an
    error record before the exception is re-raised.
    """
    params = dict(cfg.method.get("params", {})) if params is None else dict(params)
    seq, seq_name = build_sequence(cfg)
    estimator = build_estimator(cfg, seq, params)
    d_model = nn.ModelSpec(
        input_dim=seq.tasks[0].train.n_features,
        hidden_sizes=tuple(cfg.model.get("hidden_sizes", ())),
        output_dim=1 if seq.mode == "DI" else seq.n_classes,
        head="bernoulli" if seq.mode == "DI" else "categorical",
    ).param_count
    if d_model > cfg.max_params:
        raise ConfigError(
            f"model has {d_model} parameters, above the configured limit {cfg.max_params}; "
            "raise 'max_params' to proceed"
        )
    method = cfg.method["name"]
    tag = hparams_tag(params)
    classes = np.arange(seq.n_classes)
    records = []
    out_dir = resolve_out_dir(cfg, out_dir)
    failure = None
    try:
        for t, triple in enumerate(seq, start=1):
            estimator.partial_fit(triple.train.X, triple.train.y, classes=classes)
            for i, other in enumerate(seq, start=1):
                for split_name, part in (("val", other.val), ("test", other.test)):
                    acc = accuracy(estimator.predict(part.X), part.y)
                    records.append(
                        MetricsRecord(method, tag, cfg.seed, t, i, split_name, acc)
                    )
    except (TrainingError, EvaluationError) as err:
        records.append(
            MetricsRecord(method, tag, cfg.seed, estimator.task_count_ + 1, -1, "error", float("nan"))
        )
        failure = err
    if persist:
        os.makedirs(out_dir, exist_ok=True)
        slug = _experiment_slug(seq_name, _model_tag(cfg.model.get("hidden_sizes", ())), method, tag, cfg.seed)
        rec_path = os.path.join(out_dir, slug + ".csv")
        _write_records(rec_path, records)
        if failure is None:
            with open(os.path.join(out_dir, slug + ".pkl"), "wb") as fh:
                pickle.dump(estimator, fh)
            val_faa = faa_from_records(records, "val", len(seq))
            test_faa = faa_from_records(records, "test", len(seq))
            _append_index(
                out_dir,
                [
                    slug + ".csv",
                    seq_name,
                    _model_tag(cfg.model.get("hidden_sizes", ())),
                    method,
                    tag,
                    str(cfg.seed),
                    repr(val_faa),
                    repr(test_faa),
                ],
            )
    if failure is not None:
        raise failure
    return records, estimator


def expand_grid(grid):
    """Cartesian product of a {name: [values]} grid, in declared key order."""
    if not grid:
        raise ConfigError("the hyperparameter grid is empty")
    names = list(grid)
    for name in names:
        if not isinstance(grid[name], list) or not grid[name]:
            raise ConfigError(f"grid entry '{name}' must be a nonempty list")
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def select_best(cells):
    """Argmax of validation FAA; ties keep the earliest cell in grid order."""
    if not cells:
        raise ConfigError("no grid cells to select from")
    best = cells[0]
    for cell in cells[1:]:
        if cell["val_faa"] > best["val_faa"]:
            best = cell
    return best


@dataclass
class GridSearchResult:
    best_params: dict
    best_val_faa: float
    best_test_faa: float
    cells: list


def grid_search(cfg, out_dir=None, persist=True):
    """Run every cell of the configured grid and pick the validation winner.

    Methods without hyperparameters tune over a single empty cell.
    """
    grid = cfg.method.get("grid")
    if grid is not None:
        cells_params = expand_grid(grid)
    elif cfg.method.get("params"):
        cells_params = [dict(cfg.method["params"])]
    else:
        cells_params = [{}]
    seq, _ = build_sequence(cfg)
    n_tasks = len(seq)
    cells = []
    for params in cells_params:
        records, _est = run_experiment(cfg, params=params, out_dir=out_dir, persist=persist)
        cells.append(
            {
                "params": params,
                "hparams": hparams_tag(params),
                "val_faa": faa_from_records(records, "val", n_tasks),
                "test_faa": faa_from_records(records, "test", n_tasks),
                "records": records,
            }
        )
    best = select_best(cells)
    result = GridSearchResult(
        best_params=best["params"],
        best_val_faa=best["val_faa"],
        best_test_faa=best["test_faa"],
        cells=cells,
    )
    if persist:
        target = resolve_out_dir(cfg, out_dir)
        os.makedirs(target, exist_ok=True)
        summary = {
            "method": cfg.method["name"],
            "best_params": result.best_params,
            "best_val_faa": result.best_val_faa,
            "best_test_faa": result.best_test_faa,
            "cells": [
                {"params": c["params"], "val_faa": c["val_faa"], "test_faa": c["test_faa"]}
                for c in cells
            ],
        }
        name = f"best_{cfg.method['name']}_s{cfg.seed}.json"
        with open(os.path.join(target, name), "w", encoding="ascii") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result


# ---------------------------------------------------------------------------
# probability grid export
# ---------------------------------------------------------------------------


def export_prob_grid(spec, theta, X, resolution=100, bounds=None, path=None):
    """Class probabilities of a 2-feature model on a uniform lattice.

    ``bounds`` is (x_min, x_max, y_min, y_max); when omitted it is the
    data range of X padded by 10% on each side.  Returns an array with
    rows ``x, y, p1..pK`` and optionally writes it as CSV.
    """
    if spec.input_dim != 2:
        raise ValueError(f"probability grids need a 2-feature model, got {spec.input_dim}")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    X = np.asarray(X, dtype=np.float64)
    if bounds is None:
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        pad = 0.1 * (hi - lo)
        bounds = (lo[0] - pad[0], hi[0] + pad[0], lo[1] - pad[1], hi[1] + pad[1])
    x_min, x_max, y_min, y_max = bounds
    xs = np.linspace(x_min, x_max, resolution)
    ys = np.linspace(y_min, y_max, resolution)
    gx, gy = np.meshgrid(xs, ys)
    points = np.column_stack([gx.ravel(), gy.ravel()])
    probs = nn.predict_proba(spec, theta, points)
    if spec.head == "bernoulli":
        probs = np.column_stack([1.0 - probs[:, 0], probs[:, 0]])
    table = np.column_stack([points, probs])
    if path is not None:
        header = ["x", "y"] + [f"p{i + 1}" for i in range(probs.shape[1])]
        with open(path, "w", encoding="ascii", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in table:
                writer.writerow([repr(float(v)) for v in row])
    return table


# ---------------------------------------------------------------------------
# reporting
# ---------------------------------------------------------------------------


def report(out_dir):
    """Summarize an output directory: best cell per method and model kind.

    For every (sequence, model, method) the hyperparameters with the best
    mean validation FAA are chosen, then the test FAA of that cell is
    aggregated over seeds: mean, and standard deviation when more than
    one seed exists.  Returns the formatted table as a string.
    """
    rows = read_index(out_dir)
    if not rows:
        return "no experiments recorded\n"
    groups = {}
    for row in rows:
        key = (row["sequence"], row["model"], row["method"], row["hparams"])
        groups.setdefault(key, []).append(row)
    best = {}
    for (seq_name, model, method, hparams), members in groups.items():
        val = float(np.mean([float(m["val_faa"]) for m in members]))
        tests = [float(m["test_faa"]) for m in members]
        slot = (seq_name, model, method)
        entry = {
            "hparams": hparams,
            "val_faa": val,
            "test_mean": float(np.mean(tests)),
            "test_std": float(np.std(tests)),
            "n_seeds": len(tests),
        }
        if slot not in best or val > best[slot]["val_faa"]:
            best[slot] = entry
    lines = []
    header = f"{'sequence':<12}{'model':<10}{'method':<12}{'hparams':<24}{'test FAA':>10}"
    lines.append(header)
    lines.append("-" * len(header))
    for (seq_name, model, method), entry in sorted(best.items()):
        value = f"{100 * entry['test_mean']:.4f}"
        if entry["n_seeds"] > 1:
            value += f" ±{100 * entry['test_std']:.2f}"
        lines.append(
            f"{seq_name:<12}{model:<10}{method:<12}{entry['hparams']:<24}{value:>10}"
        )
    return "\n".join(lines) + "\n"
