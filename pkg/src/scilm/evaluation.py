"""Nearest-prototype prediction and TZSC / GZSC metrics."""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset, attribute_similarity
from .errors import ContractViolation, EvaluationError
from .model import SenParams, sen_forward

DISTANCES = ("euclidean", "cosine")


def harmonic_mean(u: float, s: float) -> float:
    return 2.0 * u * s / (u + s) if u + s > 0 else 0.0


@dataclass
class EvalResult:
    mode: str
    per_class: dict[int, tuple[int, float]]  # class id -> (n_test, accuracy)
    confusion: Counter = field(default_factory=Counter)  # (true, predicted) -> count
    T: float | None = None
    u: float | None = None
    s: float | None = None
    H: float | None = None

    def write(self, out_dir: str | os.PathLike, ds: Dataset | None = None) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fmt = lambda x: "" if x is None else repr(float(x))  # noqa: E731
        with open(out / "metrics.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["mode", "T", "u", "s", "H"])
            w.writerow([self.mode, fmt(self.T), fmt(self.u), fmt(self.s), fmt(self.H)])
        with open(out / "per_class.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["class_id", "class_name", "n_test", "acc"])
            for c, (n, acc) in sorted(self.per_class.items()):
                name = ds.class_name(c) if ds is not None else str(c)
                w.writerow([c, name, n, repr(acc)])


def embed_unseen_prototypes(A_U, theta: SenParams) -> np.ndarray:
    """One visual-space prototype per attribute row."""
    A_U = np.asarray(A_U, dtype=np.float64)
    if A_U.ndim != 2:
        raise ContractViolation(f"expected a matrix of attribute rows, got shape {A_U.shape}")
    return sen_forward(A_U, theta)


def _distances(x: np.ndarray, prototypes: np.ndarray, distance: str) -> np.ndarray:
    if distance == "euclidean":
        d = x[:, None, :] - prototypes[None, :, :]
        return np.sum(d * d, axis=-1)
    if distance == "cosine":
        xn = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-12)
        pn = prototypes / np.maximum(np.linalg.norm(prototypes, axis=1, keepdims=True), 1e-12)
        return 1.0 - xn @ pn.T
    raise ContractViolation(f"unknown distance {distance!r}; expected one of {DISTANCES}")


def predict_many(X, prototypes, class_ids, distance: str = "euclidean", chunk: int = 512) -> np.ndarray:
    """Class of the nearest prototype for every row of ``X``; ties go to the lowest class id."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    prototypes = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    class_ids = np.asarray(class_ids, dtype=np.int64)
    if prototypes.shape[0] < 1 or prototypes.shape[0] != class_ids.size:
        raise ContractViolation("need at least one prototype and one class id per prototype")
    order = np.argsort(class_ids, kind="stable")
    P, ids = prototypes[order], class_ids[order]
    out = np.empty(X.shape[0], dtype=np.int64)
    for start in range(0, X.shape[0], chunk):
        d = _distances(X[start:start + chunk], P, distance)
        out[start:start + chunk] = ids[np.argmin(d, axis=1)]  # argmin keeps the first minimum
    return out


def predict(x_u, prototypes, class_ids, distance: str = "euclidean") -> int:
    return int(predict_many(np.asarray(x_u)[None, :], prototypes, class_ids, distance)[0])


def per_class_accuracy(true: np.ndarray, pred: np.ndarray) -> dict[int, tuple[int, float]]:
    table = {}
    for c in np.unique(true):
        mask = true == c
        table[int(c)] = (int(mask.sum()), float(np.mean(pred[mask] == c)))
    return table


def _score(ds: Dataset, theta: SenParams, idx: np.ndarray, candidates: list[int], distance: str):
    if len(candidates) == 0:
        raise EvaluationError("no candidate classes")
    protos = embed_unseen_prototypes(ds.attributes[candidates], theta)
    pred = predict_many(ds.features[idx], protos, candidates, distance)
    true = ds.labels[idx]
    return true, pred


def _macro(table: dict[int, tuple[int, float]]) -> float:
    return float(np.mean([acc for _, acc in table.values()]))


def tzsc_accuracy(theta: SenParams, ds: Dataset, distance: str = "euclidean") -> EvalResult:
    """Per-class top-1 accuracy over unseen classes, unseen candidates only."""
    idx = ds.test_unseen_idx
    if idx.size == 0:
        raise EvaluationError("test_unseen_idx is empty")
    true, pred = _score(ds, theta, idx, ds.unseen_classes, distance)
    table = per_class_accuracy(true, pred)
    return EvalResult("tzsc", table, Counter(zip(true.tolist(), pred.tolist())), T=_macro(table))


def gzsc_metrics(theta: SenParams, ds: Dataset, distance: str = "euclidean",
                 candidates: list[int] | None = None) -> EvalResult:
    """Seen and unseen per-class accuracy over the joint label space, plus H.

    ``candidates`` overrides the default search space (all seen and unseen classes).
    """
    if ds.test_unseen_idx.size == 0 or ds.test_seen_idx.size == 0:
        raise EvaluationError("gzsc needs both test_seen_idx and test_unseen_idx")
    if candidates is None:
        candidates = sorted(ds.seen_classes + ds.unseen_classes)
    true_u, pred_u = _score(ds, theta, ds.test_unseen_idx, candidates, distance)
    true_s, pred_s = _score(ds, theta, ds.test_seen_idx, candidates, distance)
    table_u = per_class_accuracy(true_u, pred_u)
    table_s = per_class_accuracy(true_s, pred_s)
    u, s = _macro(table_u), _macro(table_s)
    confusion = Counter(zip(true_u.tolist(), pred_u.tolist()))
    confusion.update(zip(true_s.tolist(), pred_s.tolist()))
    return EvalResult("gzsc", {**table_s, **table_u}, confusion, u=u, s=s, H=harmonic_mean(u, s))


def mean_accuracy(result: EvalResult, classes) -> float:
    """Macro accuracy over the listed classes that have test instances."""
    accs = [result.per_class[c][1] for c in classes if c in result.per_class]
    if not accs:
        raise EvaluationError("none of the requested classes has test instances")
    return float(np.mean(accs))


def write_similarity_matrix(ds: Dataset, path: str | os.PathLike) -> None:
    """Unseen x seen attribute cosine similarities as CSV."""
    sim = attribute_similarity(ds)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["unseen_class", *[ds.class_name(c) for c in ds.seen_classes]])
        for row, c in zip(sim, ds.unseen_classes):
            w.writerow([ds.class_name(c), *(repr(float(v)) for v in row)])
