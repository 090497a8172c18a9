"""Interpretable value estimators: linear ``w @ x`` and quadratic ``x @ W @ x``.

Both are fitted by full-batch gradient descent on the mean squared error
against state values read off the Q-network.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)


class EstimatorKind(str, Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"


class FitDivergenceError(FloatingPointError):
    pass


@dataclass
class EstimatorParams:
    kind: EstimatorKind
    values: np.ndarray  # shape (d,) for linear, (d, d) for quadratic

    def __post_init__(self):
        self.kind = EstimatorKind(self.kind)
        self.values = np.asarray(self.values, dtype=float)
        want = 1 if self.kind is EstimatorKind.LINEAR else 2
        if self.values.ndim != want or (want == 2 and self.values.shape[0] != self.values.shape[1]):
            raise ValueError(f"{self.kind.value} estimator needs a {'vector' if want == 1 else 'square matrix'}, "
                             f"got shape {self.values.shape}")

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, kind: "EstimatorKind | str", dim: int) -> "EstimatorParams":
        kind = EstimatorKind(kind)
        shape = (dim,) if kind is EstimatorKind.LINEAR else (dim, dim)
        return cls(kind, np.zeros(shape))

    def copy(self) -> "EstimatorParams":
        return EstimatorParams(self.kind, self.values.copy())

    def to_json(self) -> dict:
        return {"kind": self.kind.value, "dim": self.dim, "values": self.values.ravel().tolist()}

    @classmethod
    def from_json(cls, data: dict) -> "EstimatorParams":
        kind = EstimatorKind(data["kind"])
        dim = int(data["dim"])
        shape = (dim,) if kind is EstimatorKind.LINEAR else (dim, dim)
        return cls(kind, np.array(data["values"], dtype=float).reshape(shape))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path: str | Path) -> "EstimatorParams":
        return cls.from_json(json.loads(Path(path).read_text()))


def predict(params: EstimatorParams, x: np.ndarray) -> "float | np.ndarray":
    """Estimated value of one feature vector, or of each row of a feature matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise ValueError(f"feature dimension {x.shape[-1]} does not match estimator dimension {params.dim}")
    if params.kind is EstimatorKind.LINEAR:
        out = x @ params.values
    else:
        out = np.einsum("...i,ij,...j->...", x, params.values, x)
    return float(out) if np.ndim(out) == 0 else out


def _gradient(params: EstimatorParams, X: np.ndarray, residual: np.ndarray) -> np.ndarray:
    n = X.shape[0]
    if params.kind is EstimatorKind.LINEAR:
        return (2.0 / n) * (X.T @ residual)
    return (2.0 / n) * ((X * residual[:, None]).T @ X)


@dataclass
class FitResult:
    params: EstimatorParams
    losses: list[float] = field(default_factory=list)  # loss before each epoch, then the final loss
    stopped_early: bool = False


def fit(
    X: np.ndarray,
    y: np.ndarray,
    kind: "EstimatorKind | str",
    epochs: int = 50,
    lr: float = 1e-2,
    init: Optional[EstimatorParams] = None,
) -> FitResult:
    """Full-batch gradient descent on ``mean((y - V(x))**2)``.

    Starts from zeros unless ``init`` is given (warm start).  If an epoch ever
    increases the loss the fit stops there and logs a warning; a non-finite
    loss raises :class:`FitDivergenceError`.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("dataset must be a non-empty (n, d) feature matrix")
    if y.shape != (X.shape[0],):
        raise ValueError(f"targets shape {y.shape} does not match {X.shape[0]} samples")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    kind = EstimatorKind(kind)
    params = init.copy() if init is not None else EstimatorParams.zeros(kind, X.shape[1])
    if params.kind is not kind or params.dim != X.shape[1]:
        raise ValueError("warm-start parameters do not match the requested kind/dimension")

    residual = predict(params, X) - y
    losses = [float(np.mean(residual ** 2))]
    result = FitResult(params, losses)
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(epochs):
            params.values -= lr * _gradient(params, X, residual)
            residual = predict(params, X) - y
            loss = float(np.mean(residual ** 2))
            if not np.isfinite(loss):
                raise FitDivergenceError(f"estimator fit diverged at epoch {epoch} with lr={lr}")
            losses.append(loss)
            if loss > losses[-2] * (1 + 1e-12) + 1e-300:
                log.warning("estimator loss rose from %.6g to %.6g at epoch %d (lr=%g); stopping",
                            losses[-2], loss, epoch, lr)
                result.stopped_early = True
                break
    return result


@dataclass
class AttributionReport:
    mean: EstimatorParams
    feature_names: list[str]
    # Linear: feature indices from highest to lowest mean weight.
    ranking: Optional[list[int]] = None
    # Quadratic: symmetrised mean matrix (W + W.T) / 2.
    symmetric: Optional[np.ndarray] = None

    def rows(self) -> list[tuple]:
        if self.mean.kind is EstimatorKind.LINEAR:
            return [(self.feature_names[i], float(self.mean.values[i])) for i in self.ranking]
        d = self.mean.dim
        return [(self.feature_names[i], self.feature_names[j], float(self.symmetric[i, j]))
                for i in range(d) for j in range(d)]

    def write_csv(self, path: str | Path) -> None:
        header = (["feature_name", "mean_weight"] if self.mean.kind is EstimatorKind.LINEAR
                  else ["feature_i", "feature_j", "mean_weight"])
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in self.rows():
                writer.writerow([*row[:-1], repr(row[-1])])


def attribution_report(params_list: Sequence[EstimatorParams],
                       feature_names: Optional[Sequence[str]] = None) -> AttributionReport:
    """Average estimator parameters over runs and rank or symmetrise them."""
    if not params_list:
        raise ValueError("attribution_report needs at least one parameter set")
    kind, dim = params_list[0].kind, params_list[0].dim
    if any(p.kind is not kind or p.dim != dim for p in params_list):
        raise ValueError("all parameter sets must share kind and dimension")
    mean = EstimatorParams(kind, np.mean([p.values for p in params_list], axis=0))
    names = list(feature_names) if feature_names is not None else [f"x{i}" for i in range(dim)]
    if len(names) != dim:
        raise ValueError(f"{len(names)} feature names for dimension {dim}")
    if kind is EstimatorKind.LINEAR:
        ranking = [int(i) for i in np.argsort(-mean.values, kind="stable")]
        return AttributionReport(mean, names, ranking=ranking)
    return AttributionReport(mean, names, symmetric=(mean.values + mean.values.T) / 2)
