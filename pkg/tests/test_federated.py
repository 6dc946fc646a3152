"""Tests for the federated-averaging baselines."""

import numpy as np
import pytest

from hiercl.federated import FedConfig, fed_compare_run, fedavg_aggregate, fedprox_train_local
from hiercl.learners import LearnerConfig, train_on_task
from hiercl.model import ModelSpec, init_params
from hiercl.pipeline import derive_seed
from hiercl.tasks import Permutation, gen_split_gaussians

SPEC = ModelSpec((4, 6, 6))


def _tasks(seed=0):
    return gen_split_gaussians(
        num_classes=6, classes_per_task=2, dim=4, samples_per_class=10,
        spread=3.0, seed=seed, val_per_class=4, test_per_class=8,
    )


def test_fed_config_validation():
    with pytest.raises(ValueError):
        FedConfig(kind="fedsgd")
    with pytest.raises(ValueError):
        FedConfig(kind="fedprox", prox_mu=-1.0)
    with pytest.raises(ValueError):
        FedConfig(kind="fedavg", prox_mu=0.5)
    with pytest.raises(ValueError):
        FedConfig(aggregate="median")
    FedConfig(kind="fedprox", prox_mu=0.0)  # allowed: reduces to plain


def test_aggregate_hand_values():
    assert np.array_equal(
        fedavg_aggregate([np.array([0.0, 0.0]), np.array([2.0, 4.0])]),
        np.array([1.0, 2.0]),
    )
    assert fedavg_aggregate([np.array([0.0]), np.array([4.0])], (0.25, 0.75))[0] == 3.0
    same = np.array([1.5, -2.0])
    assert np.array_equal(fedavg_aggregate([same, same, same]), same)


def test_aggregate_validation_and_normalization():
    with pytest.raises(ValueError):
        fedavg_aggregate([])
    with pytest.raises(ValueError):
        fedavg_aggregate([np.zeros(2)], (0.5, 0.5))
    with pytest.raises(ValueError):
        fedavg_aggregate([np.zeros(2), np.ones(2)], (-1.0, 2.0))
    # unnormalized weights are scaled to sum 1
    out = fedavg_aggregate([np.array([0.0]), np.array([4.0])], (1.0, 3.0))
    assert out[0] == 3.0


def test_aggregate_permutation_invariant_with_uniform_weights():
    rng = np.random.default_rng(0)
    models = [rng.normal(size=5) for _ in range(4)]
    a = fedavg_aggregate(models)
    b = fedavg_aggregate(models[::-1])
    assert np.max(np.abs(a - b)) < 1e-15


def test_prox_mu_zero_is_bitwise_plain_training():
    tasks = _tasks()
    anchor = init_params(SPEC, 0)
    cfg = LearnerConfig(kind="sgd", epochs_per_task=2, seed=7)
    prox = fedprox_train_local(tasks[0], anchor, cfg, 0.0, SPEC)
    plain = train_on_task(anchor, tasks[0], cfg, SPEC, np.random.default_rng(7), buffer=None)
    assert np.array_equal(prox, plain)


def test_prox_pull_is_monotone_in_mu():
    tasks = _tasks()
    anchor = init_params(SPEC, 1)
    cfg = LearnerConfig(kind="sgd", epochs_per_task=3, seed=3)
    dists = []
    for mu in (0.0, 0.1, 1.0, 10.0):
        out = fedprox_train_local(tasks[0], anchor, cfg, mu, SPEC)
        dists.append(float(np.linalg.norm(out - anchor)))
    assert all(b <= a + 1e-12 for a, b in zip(dists, dists[1:]))
    assert dists[-1] < dists[0]


def test_fed_compare_run_single_task_global_equals_local():
    tasks = _tasks()[:1]
    cfg = LearnerConfig(kind="sgd", epochs_per_task=1)
    init = init_params(SPEC, 0)
    for agg in ("running", "pairwise"):
        fed = FedConfig(kind="fedavg", aggregate=agg)
        global_w, matrix = fed_compare_run(tasks, Permutation((0,)), fed, cfg, SPEC, 0, init=init)
        local = fedprox_train_local(tasks[0], init, cfg.reseeded(derive_seed(0, 2, 0)), 0.0, SPEC)
        if agg == "running":
            assert np.array_equal(global_w, local)
        else:
            assert np.array_equal(global_w, fedavg_aggregate([init, local]))
        assert matrix.values.shape == (1, 1)


def test_fed_compare_run_running_average_identity():
    tasks = _tasks()
    cfg = LearnerConfig(kind="sgd", epochs_per_task=1)
    fed = FedConfig(kind="fedavg")
    init = init_params(SPEC, 4)
    perm = Permutation((2, 0, 1))
    global_w, matrix = fed_compare_run(tasks, perm, fed, cfg, SPEC, 4, init=init)
    # replay the protocol by hand
    locals_ = []
    g = init.copy()
    for i, tid in enumerate(perm):
        child = cfg.reseeded(derive_seed(4, 2, i))
        locals_.append(fedprox_train_local(tasks[tid], g, child, 0.0, SPEC))
        g = fedavg_aggregate(locals_)
    assert np.array_equal(global_w, g)
    assert matrix.values.shape == (3, 3)
    with pytest.raises(ValueError):
        fed_compare_run(tasks, Permutation((0, 1)), fed, cfg, SPEC, 0)


def test_fedavg_and_fedprox_mu_zero_agree_end_to_end():
    tasks = _tasks()
    # two epochs: after the first step the weights leave the prox anchor,
    # so a nonzero mu actually changes the trajectory
    cfg = LearnerConfig(kind="sgd", epochs_per_task=2)
    init = init_params(SPEC, 5)
    perm = Permutation((0, 1, 2))
    g_avg, m_avg = fed_compare_run(tasks, perm, FedConfig(kind="fedavg"), cfg, SPEC, 5, init=init)
    g_prox, m_prox = fed_compare_run(
        tasks, perm, FedConfig(kind="fedprox", prox_mu=0.0), cfg, SPEC, 5, init=init
    )
    assert np.array_equal(g_avg, g_prox)
    assert np.array_equal(m_avg.values, m_prox.values)
    g_tight, _ = fed_compare_run(
        tasks, perm, FedConfig(kind="fedprox", prox_mu=5.0), cfg, SPEC, 5, init=init
    )
    assert not np.array_equal(g_avg, g_tight)
