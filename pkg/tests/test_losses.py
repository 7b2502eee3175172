import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpgd.losses import (DataParseError, MLPLoss, QuadraticLoss, QuarticLoss, ShallowMLP,
                         WideningValley, fd_gradient, fd_hessian, fd_third, ingest_csv,
                         mlp_loss, quadratic_loss, relative_error, widening_valley_gradient,
                         widening_valley_hessian_trace, widening_valley_value)

A3 = np.array([[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 0.0]])


def write_table(path, n=60, p=5, seed=0, sep=" "):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p)) * [100, 5, 0.1, 30, 0.01] + [2000, 6, 0.1, 50, 0.003]
    y = 120 + X @ rng.normal(size=p) * 1e-3 + rng.normal(size=n)
    with open(path, "w") as fh:
        for row in np.column_stack([X, y]):
            fh.write(sep.join(repr(float(c)) for c in row) + "\n")
    return path


@pytest.fixture
def table(tmp_path):
    return write_table(tmp_path / "t.dat")


@pytest.fixture
def mlp(table):
    ds = ingest_csv(table, train_count=40, test_count=15, seed=3)
    return mlp_loss(ds, ShallowMLP(ds.n_features, 16))


def analytic_models():
    return [QuadraticLoss(A3), QuarticLoss(A3, 0.7), WideningValley(10), WideningValley(3)]


@pytest.mark.parametrize("model", analytic_models(), ids=lambda m: type(m).__name__)
def test_finite_difference_suite(model):
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.normal(size=model.dim)
        assert relative_error(model.gradient(x), fd_gradient(model, x)) <= 1e-5
        H = model.hessian(x)
        assert np.array_equal(H, H.T)
        assert relative_error(H, fd_hessian(model, x)) <= 1e-4
        assert model.hessian_trace(x) == pytest.approx(np.trace(fd_hessian(model, x)), rel=1e-4)
        for j in range(model.dim):
            T = model.hessian_of_gradient_component(x, j)
            ref = fd_third(model, x, j)
            assert np.max(np.abs(T - ref)) <= 1e-4 * max(1.0, np.max(np.abs(ref)))


def smooth_probes(mlp, n, seed=1, margin=1e-3):
    """Parameter draws whose pre-activations all sit at least ``margin`` from the ReLU kink."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < n:
        x = mlp.net.init(int(rng.integers(1 << 30)))
        W1, b1, _, _ = mlp.net.unflatten(x)
        if np.min(np.abs(mlp.X @ W1.T + b1)) > margin:
            out.append(x)
    return out


def test_mlp_gradient_finite_differences(mlp):
    for x in smooth_probes(mlp, 10):
        assert relative_error(mlp.gradient(x), fd_gradient(mlp, x)) <= 1e-5
    assert not mlp.has_hessian


def test_widening_valley_values():
    e1 = np.eye(10)[0]
    assert widening_valley_value(np.arange(10.0), 0.0) == 0.0
    assert widening_valley_value(e1, 1.0) == 0.5
    assert np.array_equal(widening_valley_gradient(np.arange(10.0), 0.0), np.zeros(11))
    assert np.array_equal(widening_valley_gradient(e1, 1.0), np.append(e1, 1.0))
    assert widening_valley_hessian_trace(np.zeros(10), 0.0) == 0.0
    assert widening_valley_hessian_trace(e1, 1.0) == 11.0


def test_widening_valley_initial_norm_mean():
    u0 = 5 * np.random.default_rng(2).random((100_000, 10))
    sq = np.sum(u0**2, axis=1)
    assert sq.mean() == pytest.approx(25 * 10 / 3, abs=4 * sq.std() / np.sqrt(sq.size))


@given(arrays(float, 4, elements=st.floats(-10, 10)), st.floats(-10, 10))
def test_widening_valley_nonnegative_and_zero_set(u, v):
    val = widening_valley_value(u, v)
    assert val >= 0
    if v == 0 or not np.any(u):
        assert val == 0
    wv = WideningValley(4)
    assert wv.value(np.append(u, v)) == val


def test_batched_evaluation_matches_rowwise():
    rng = np.random.default_rng(3)
    for model in analytic_models():
        X = rng.normal(size=(6, model.dim))
        assert np.allclose(model.value(X), [model.value(x) for x in X], rtol=1e-14)
        assert np.allclose(model.gradient(X), [model.gradient(x) for x in X], rtol=1e-14)


def test_quadratic_basics():
    q = quadratic_loss(np.eye(3))
    assert q.value(np.eye(3)[0]) == 0.5
    assert np.array_equal(q.gradient(np.zeros(3)), np.zeros(3))
    assert all(not q.hessian_of_gradient_component(np.ones(3), j).any() for j in range(3))
    with pytest.raises(ValueError):
        QuadraticLoss([[1.0, 2.0], [0.0, 1.0]])


def test_ingest_split_and_standardisation(table):
    ds = ingest_csv(table, train_count=40, test_count=15, seed=3)
    assert ds.features.shape == (60, 5) and ds.n_features == 5
    assert np.intersect1d(ds.train_idx, ds.test_idx).size == 0
    assert np.allclose(ds.X_train.mean(axis=0), 0, atol=1e-12)
    assert np.allclose(ds.X_train.std(axis=0), 1, atol=1e-12)
    assert ds.y_train.mean() == pytest.approx(0, abs=1e-12)
    again = ingest_csv(table, train_count=40, test_count=15, seed=3)
    assert np.array_equal(ds.train_idx, again.train_idx)
    other = ingest_csv(table, train_count=40, test_count=15, seed=4)
    assert not np.array_equal(ds.train_idx, other.train_idx)
    summary = json.loads(ds.summary_json())
    assert summary["n_train"] == 40 and len(summary["feature_sd"]) == 5


def test_ingest_comma_delimited(tmp_path):
    a = ingest_csv(write_table(tmp_path / "a.dat"), train_count=40, test_count=15)
    b = ingest_csv(write_table(tmp_path / "b.csv", sep=","), train_count=40, test_count=15)
    assert np.array_equal(a.features, b.features)


def test_ingest_errors(tmp_path, table):
    with pytest.raises(ValueError, match="requested"):
        ingest_csv(table, train_count=50, test_count=15)
    bad = tmp_path / "bad.dat"
    bad.write_text("1 2 3\n4 x 6\n")
    with pytest.raises(DataParseError, match="row 2, column 2"):
        ingest_csv(bad, train_count=1, test_count=1)
    ragged = tmp_path / "ragged.dat"
    ragged.write_text("1 2 3\n4 5\n")
    with pytest.raises(DataParseError, match="row 2"):
        ingest_csv(ragged, train_count=1, test_count=1)
    missing = tmp_path / "nan.dat"
    missing.write_text("1 2 3\n4 nan 6\n")
    with pytest.raises(DataParseError, match="missing"):
        ingest_csv(missing, train_count=1, test_count=1)
    with pytest.raises(OSError):
        ingest_csv(tmp_path / "absent.dat")


def test_mlp_structure(mlp):
    net = mlp.net
    x = net.init(0)
    assert np.array_equal(net.flatten(*net.unflatten(x)), x)
    zero = np.zeros(net.n_params)
    zero[-1] = 0.37
    assert np.allclose(net.forward(zero, mlp.X), 0.37)
    zero[-1] = 0.0
    assert mlp.value(zero) == pytest.approx(np.mean(mlp.y**2), rel=1e-14)
    with pytest.raises(ValueError):
        net.unflatten(x[:-1])


def test_mlp_output_layer_homogeneous(mlp):
    net = mlp.net
    x = net.init(5)
    W1, b1, W2, b2 = net.unflatten(x)
    scaled = net.flatten(W1, b1, 2.5 * W2, 0.0 * b2)
    base = net.flatten(W1, b1, W2, 0.0 * b2)
    assert np.allclose(net.forward(scaled, mlp.X), 2.5 * net.forward(base, mlp.X), rtol=1e-13)


def test_mlp_duplicated_rows_leave_value(mlp):
    x = mlp.net.init(7)
    dup = MLPLoss(mlp.dataset, mlp.net)
    dup.X = np.vstack([mlp.X, mlp.X])
    dup.y = np.concatenate([mlp.y, mlp.y])
    assert dup.value(x) == pytest.approx(mlp.value(x), rel=1e-13)


def test_mlp_dimension_mismatch(table):
    ds = ingest_csv(table, train_count=40, test_count=15)
    with pytest.raises(ValueError):
        MLPLoss(ds, ShallowMLP(4))


def test_rmse_splits(mlp):
    x = mlp.net.init(1)
    assert mlp.rmse(x, "train") == pytest.approx(np.sqrt(mlp.value(x)), rel=1e-13)
    assert np.isfinite(mlp.rmse(x, "test"))
