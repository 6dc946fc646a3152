"""Tests for the flat-parameter dense network and its finite-difference oracles."""

import numpy as np
import pytest

from hiercl.model import (
    Batch,
    ModelSpec,
    accuracy_eval,
    fd_gradient,
    fd_hessian_from_grad,
    finite_diff_hessian,
    init_params,
    loss_and_grad,
    per_sample_grads,
    predict,
)

CLS = ModelSpec((4, 6, 3))
REG = ModelSpec((3, 5, 2), task_kind="regression")


def _cls_batch(rng, n=8, spec=CLS):
    x = rng.normal(size=(n, spec.input_dim))
    y = rng.integers(0, spec.output_dim, size=n)
    return Batch(x, y)


def _reg_batch(rng, n=8, spec=REG):
    x = rng.normal(size=(n, spec.input_dim))
    y = rng.normal(size=(n, spec.output_dim))
    return Batch(x, y)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec((4,))
    with pytest.raises(ValueError):
        ModelSpec((4, 0, 2))
    with pytest.raises(ValueError):
        ModelSpec((4, 3), activation="sigmoid")
    with pytest.raises(ValueError):
        ModelSpec((4, 3), task_kind="ranking")


def test_param_count():
    # (4*6 + 6) + (6*3 + 3) = 51
    assert CLS.param_count == 51
    assert init_params(CLS, 0).shape == (51,)


def test_init_deterministic_and_bias_zero():
    a = init_params(CLS, 7)
    b = init_params(CLS, 7)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, init_params(CLS, 8))
    # biases sit after each weight block and start at zero
    off = 4 * 6
    assert np.all(a[off : off + 6] == 0.0)


def test_batch_validation():
    with pytest.raises(ValueError):
        Batch(np.zeros(4), np.zeros(4))  # 1-D inputs
    with pytest.raises(ValueError):
        Batch(np.zeros((3, 4)), np.zeros(2))  # count mismatch
    with pytest.raises(ValueError):
        Batch(np.zeros((0, 4)), np.zeros(0))


def test_label_range_checked():
    w = init_params(CLS, 0)
    bad = Batch(np.zeros((2, 4)), np.array([0, 3]))  # only 3 classes
    with pytest.raises(ValueError):
        loss_and_grad(w, bad, CLS)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    for spec, make in ((CLS, _cls_batch), (REG, _reg_batch)):
        for _ in range(5):
            w = init_params(spec, int(rng.integers(1 << 16))) + 0.1 * rng.normal(
                size=spec.param_count
            )
            batch = make(rng)
            _, g = loss_and_grad(w, batch, spec)
            g_fd = fd_gradient(lambda v: loss_and_grad(v, batch, spec)[0], w)
            assert np.max(np.abs(g - g_fd)) < 1e-6


def test_per_sample_grads_mean_is_batch_grad():
    rng = np.random.default_rng(1)
    for spec, make in ((CLS, _cls_batch), (REG, _reg_batch)):
        w = init_params(spec, 3) + 0.1 * rng.normal(size=spec.param_count)
        batch = make(rng, n=12)
        rows = per_sample_grads(w, batch, spec)
        assert rows.shape == (12, spec.param_count)
        _, g = loss_and_grad(w, batch, spec)
        assert np.max(np.abs(rows.mean(axis=0) - g)) < 1e-10


def test_per_sample_rows_match_singleton_batches():
    rng = np.random.default_rng(2)
    w = init_params(CLS, 5) + 0.1 * rng.normal(size=CLS.param_count)
    batch = _cls_batch(rng, n=6)
    rows = per_sample_grads(w, batch, CLS)
    for i in range(batch.n):
        one = Batch(batch.inputs[i : i + 1], batch.targets[i : i + 1])
        _, gi = loss_and_grad(w, one, CLS)
        assert np.max(np.abs(rows[i] - gi)) < 1e-12


def test_accuracy_classification():
    w = init_params(CLS, 0)
    batch = _cls_batch(np.random.default_rng(3), n=20)
    pred = predict(w, batch.inputs, CLS).argmax(axis=1)
    want = float(np.mean(pred == batch.targets))
    assert accuracy_eval(w, batch, CLS) == want


def test_accuracy_regression_in_unit_interval():
    rng = np.random.default_rng(4)
    w = init_params(REG, 0)
    batch = _reg_batch(rng, n=20)
    score = accuracy_eval(w, batch, REG)
    assert 0.0 < score <= 1.0
    # perfect targets give exactly 1
    perfect = Batch(batch.inputs, predict(w, batch.inputs, REG))
    assert accuracy_eval(w, perfect, REG) == 1.0


def test_fd_hessian_symmetric_and_matches_quadratic():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(6, 6))
    a = a + a.T
    fn_grad = lambda w: a @ w
    h = fd_hessian_from_grad(fn_grad, rng.normal(size=6))
    assert np.allclose(h, h.T)
    assert np.max(np.abs(h - a)) < 1e-6


def test_fd_hessian_dim_guard():
    with pytest.raises(ValueError):
        fd_hessian_from_grad(lambda w: w, np.zeros(201))
    with pytest.raises(ValueError):
        fd_hessian_from_grad(lambda w: w, np.zeros(3), h=0.0)


def test_model_hessian_matches_loss_curvature():
    rng = np.random.default_rng(6)
    spec = ModelSpec((2, 3, 2))
    w = init_params(spec, 1) + 0.1 * rng.normal(size=spec.param_count)
    batch = Batch(rng.normal(size=(5, 2)), rng.integers(0, 2, size=5))
    h = finite_diff_hessian(w, batch, spec)
    assert h.shape == (spec.param_count, spec.param_count)
    assert np.allclose(h, h.T)
    # directional second difference of the loss agrees with u'Hu
    u = rng.normal(size=spec.param_count)
    u /= np.linalg.norm(u)
    eps = 1e-4
    f = lambda v: loss_and_grad(v, batch, spec)[0]
    second = (f(w + eps * u) - 2.0 * f(w) + f(w - eps * u)) / eps**2
    assert abs(second - u @ h @ u) < 1e-4
