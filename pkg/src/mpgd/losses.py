"""Loss models and the airfoil regression data path.

A loss exposes ``value`` and ``gradient``; analytic test beds also expose
``hessian``, ``hessian_of_gradient_component`` (the Hessian of the j-th
gradient coordinate, i.e. a slice of the third-derivative tensor) and
``hessian_trace``.  Capabilities that a model lacks raise
:class:`NotImplementedError`.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

import numpy as np


class LossModel:
    dim: int
    # set where every third derivative is identically zero, so lambda_k = 0
    third_derivatives_vanish = False

    def value(self, x) -> float:
        raise NotImplementedError

    def gradient(self, x) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, x) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no Hessian")

    def hessian_of_gradient_component(self, x, j: int) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no third derivatives")

    def hessian_trace(self, x) -> float:
        return float(np.trace(self.hessian(x)))

    @property
    def has_hessian(self) -> bool:
        try:
            self.hessian(np.zeros(self.dim))
        except NotImplementedError:
            return False
        return True

    @property
    def has_third_derivatives(self) -> bool:
        try:
            self.hessian_of_gradient_component(np.zeros(self.dim), 0)
        except NotImplementedError:
            return False
        return True


class QuadraticLoss(LossModel):
    """0.5 x^T A x; every third derivative vanishes."""

    third_derivatives_vanish = True

    def __init__(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, rtol=0, atol=1e-12):
            raise ValueError("A must be a symmetric square matrix")
        self.A = A
        self.dim = A.shape[0]

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.5 * np.sum((x @ self.A) * x, axis=-1)
        return out if out.ndim else float(out)

    def gradient(self, x):
        return np.asarray(x, dtype=float) @ self.A

    def hessian(self, x):
        return self.A.copy()

    def hessian_of_gradient_component(self, x, j):
        return np.zeros((self.dim, self.dim))


def quadratic_loss(A) -> QuadraticLoss:
    return QuadraticLoss(A)


class QuarticLoss(LossModel):
    """0.5 x^T A x + (c/4) sum_i x_i^4, a smooth test bed with nonzero third derivatives."""

    def __init__(self, A, c: float = 1.0):
        self._quad = QuadraticLoss(A)
        self.A = self._quad.A
        self.c = float(c)
        self.dim = self._quad.dim

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self._quad.value(x) + 0.25 * self.c * np.sum(x**4, axis=-1)
        return out if np.ndim(out) else float(out)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.A + self.c * x**3

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        return self.A + np.diag(3.0 * self.c * x**2)

    def hessian_of_gradient_component(self, x, j):
        out = np.zeros((self.dim, self.dim))
        out[j, j] = 6.0 * self.c * float(np.asarray(x, dtype=float)[j])
        return out


class WideningValley(LossModel):
    """l(u, v) = v^2 |u|^2 / 2 with x = (u_1..u_d, v)."""

    def __init__(self, d_u: int = 10):
        self.d_u = d_u
        self.dim = d_u + 1

    @staticmethod
    def split(x):
        x = np.asarray(x, dtype=float)
        return x[..., :-1], x[..., -1]

    def value(self, x):
        return widening_valley_value(*self.split(x))

    def gradient(self, x):
        return widening_valley_gradient(*self.split(x))

    def hessian(self, x):
        u, v = self.split(x)
        H = np.zeros((self.dim, self.dim))
        H[: self.d_u, : self.d_u] = v**2 * np.eye(self.d_u)
        H[: self.d_u, -1] = H[-1, : self.d_u] = 2.0 * v * u
        H[-1, -1] = u @ u
        return H

    def hessian_of_gradient_component(self, x, j):
        u, v = self.split(x)
        d = self.d_u
        out = np.zeros((self.dim, self.dim))
        if j < d:
            # d/dx of grad_j = v^2 u_j
            out[j, -1] = out[-1, j] = 2.0 * v
            out[-1, -1] = 2.0 * u[j]
        else:
            # grad_v = |u|^2 v
            out[:d, :d] = 2.0 * v * np.eye(d)
            out[:d, -1] = out[-1, :d] = 2.0 * u
        return out

    def hessian_trace(self, x):
        return widening_valley_hessian_trace(*self.split(x))


def widening_valley_value(u, v):
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    out = 0.5 * v**2 * np.sum(u * u, axis=-1)
    return out if out.ndim else float(out)


def widening_valley_gradient(u, v) -> np.ndarray:
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    sq = np.sum(u * u, axis=-1)
    return np.concatenate([v[..., None] ** 2 * u, (sq * v)[..., None]], axis=-1)


def widening_valley_hessian_trace(u, v):
    u, v = np.asarray(u, dtype=float), np.asarray(v, dtype=float)
    out = u.shape[-1] * v**2 + np.sum(u * u, axis=-1)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- regression data


@dataclass
class Dataset:
    """Standardised table with a fixed train/test split.

    ``features``/``targets`` hold all rows after standardisation with train
    statistics; ``train_idx``/``test_idx`` select the split.
    """

    features: np.ndarray
    targets: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    feature_mean: np.ndarray
    feature_sd: np.ndarray
    target_mean: float
    target_sd: float
    source: str = ""

    @property
    def X_train(self):
        return self.features[self.train_idx]

    @property
    def y_train(self):
        return self.targets[self.train_idx]

    @property
    def X_test(self):
        return self.features[self.test_idx]

    @property
    def y_test(self):
        return self.targets[self.test_idx]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def summary(self) -> dict:
        return {
            "source": self.source,
            "n_rows": int(self.features.shape[0]),
            "n_features": self.n_features,
            "n_train": int(self.train_idx.size),
            "n_test": int(self.test_idx.size),
            "feature_mean": self.feature_mean.tolist(),
            "feature_sd": self.feature_sd.tolist(),
            "target_mean": self.target_mean,
            "target_sd": self.target_sd,
        }

    def summary_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


class DataParseError(ValueError):
    pass


def _parse_table(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = [c for c in re.split(r"[,\s]+", line) if c]
            vals = []
            for col, cell in enumerate(cells, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataParseError(
                        f"{path}: non-numeric cell {cell!r} at row {lineno}, column {col}"
                    ) from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise DataParseError(
                    f"{path}: row {lineno} has {len(vals)} columns, expected {width}"
                )
            rows.append(vals)
    if not rows:
        raise DataParseError(f"{path}: no data rows")
    table = np.array(rows)
    if not np.all(np.isfinite(table)):
        r, c = np.argwhere(~np.isfinite(table))[0]
        raise DataParseError(f"{path}: missing/non-finite value at row {r + 1}, column {c + 1}")
    return table


def ingest_csv(path, target_column: int = -1, train_count: int = 1202,
               test_count: int = 301, seed: int = 0) -> Dataset:
    """Read a whitespace- or comma-delimited numeric table and split it.

    The split is a seeded random permutation; features and target are both
    standardised with training-split statistics.
    """
    table = _parse_table(path)
    n = table.shape[0]
    if train_count + test_count > n:
        raise ValueError(f"requested {train_count}+{test_count} rows but file has {n}")
    target_column = target_column % table.shape[1]
    y = table[:, target_column]
    X = np.delete(table, target_column, axis=1)

    perm = np.random.default_rng(seed).permutation(n)
    train_idx = np.sort(perm[:train_count])
    test_idx = np.sort(perm[train_count:train_count + test_count])

    mu = X[train_idx].mean(axis=0)
    sd = X[train_idx].std(axis=0)
    sd[sd == 0] = 1.0
    y_mu = float(y[train_idx].mean())
    y_sd = float(y[train_idx].std()) or 1.0
    return Dataset(
        features=(X - mu) / sd,
        targets=(y - y_mu) / y_sd,
        train_idx=train_idx,
        test_idx=test_idx,
        feature_mean=mu,
        feature_sd=sd,
        target_mean=y_mu,
        target_sd=y_sd,
        source=str(path),
    )


# ---------------------------------------------------------------- shallow network


@dataclass(frozen=True)
class ShallowMLP:
    """p -> hidden (ReLU) -> 1, parameters flattened as [W1, b1, W2, b2]."""

    n_inputs: int
    n_hidden: int = 16
    _shapes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        p, h = self.n_inputs, self.n_hidden
        object.__setattr__(self, "_shapes", ((h, p), (h,), (1, h), (1,)))

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self._shapes)

    def unflatten(self, x):
        x = np.asarray(x, dtype=float)
        if x.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {x.size}")
        out, i = [], 0
        for s in self._shapes:
            k = int(np.prod(s))
            out.append(x[i:i + k].reshape(s))
            i += k
        return out

    @staticmethod
    def flatten(W1, b1, W2, b2):
        return np.concatenate([np.ravel(W1), np.ravel(b1), np.ravel(W2), np.ravel(b2)])

    def init(self, seed) -> np.ndarray:
        """Uniform in +-1/sqrt(fan_in) per layer."""
        rng = np.random.default_rng(seed)
        p, h = self.n_inputs, self.n_hidden
        b_in, b_hid = 1.0 / np.sqrt(p), 1.0 / np.sqrt(h)
        return self.flatten(
            rng.uniform(-b_in, b_in, (h, p)), rng.uniform(-b_in, b_in, h),
            rng.uniform(-b_hid, b_hid, (1, h)), rng.uniform(-b_hid, b_hid, 1),
        )

    def forward(self, x, X):
        W1, b1, W2, b2 = self.unflatten(x)
        H = np.maximum(X @ W1.T + b1, 0.0)
        return H @ W2[0] + b2[0]


class MLPLoss(LossModel):
    """Training-split mean squared error of a :class:`ShallowMLP`."""

    def __init__(self, dataset: Dataset, net: ShallowMLP):
        if dataset.n_features != net.n_inputs:
            raise ValueError(
                f"dataset has {dataset.n_features} features, net expects {net.n_inputs}"
            )
        self.net = net
        self.dataset = dataset
        self.X = dataset.X_train
        self.y = dataset.y_train
        self.dim = net.n_params

    def value(self, x):
        r = self.net.forward(x, self.X) - self.y
        return float(np.mean(r**2))

    def gradient(self, x):
        W1, b1, W2, b2 = self.net.unflatten(x)
        Z = self.X @ W1.T + b1
        H = np.maximum(Z, 0.0)
        r = 2.0 * (H @ W2[0] + b2[0] - self.y) / self.y.size
        dZ = np.outer(r, W2[0]) * (Z > 0)
        return self.net.flatten(dZ.T @ self.X, dZ.sum(axis=0), r @ H, [r.sum()])

    def rmse(self, x, split: str = "test") -> float:
        X, y = (self.dataset.X_test, self.dataset.y_test) if split == "test" else (self.X, self.y)
        return float(np.sqrt(np.mean((self.net.forward(x, X) - y) ** 2)))


def mlp_loss(dataset: Dataset, net: ShallowMLP) -> MLPLoss:
    return MLPLoss(dataset, net)


# ---------------------------------------------------------------- derivative checks


def fd_gradient(loss: LossModel, x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (loss.value(x + e) - loss.value(x - e)) / (2 * h)
    return g


def fd_hessian(loss: LossModel, x, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    H = np.empty((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        H[:, i] = (loss.gradient(x + e) - loss.gradient(x - e)) / (2 * h)
    return 0.5 * (H + H.T)


def fd_third(loss: LossModel, x, j: int, h: float = 1e-5) -> np.ndarray:
    """Central differences of the Hessian's j-th row, i.e. Hess(grad_j)."""
    x = np.asarray(x, dtype=float)
    T = np.empty((x.size, x.size))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        T[:, i] = (loss.hessian(x + e)[j] - loss.hessian(x - e)[j]) / (2 * h)
    return 0.5 * (T + T.T)


def relative_error(a, b) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12))
