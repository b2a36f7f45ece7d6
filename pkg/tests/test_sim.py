"""Synthetic ridge tasks with closed-form optima, the local-SGD loop over
the protocol, and trace accounting."""

import csv

import numpy as np
import pytest

from sparsesecagg.errors import ConfigError
from sparsesecagg.protocol import ProtocolConfig
from sparsesecagg.sim import (
    TRACE_COLUMNS,
    TrainingConfig,
    fedavg_reference,
    local_sgd,
    make_synthetic_task,
    measure_communication,
    run_training,
    sample_dropouts,
    write_trace_csv,
    _rng,
)


def small_task(h=0.5, n=4, d=6):
    return make_synthetic_task(n=n, d=d, mu=1.0, ell=10.0, heterogeneity=h, master_seed=1)


def test_training_config_schedule():
    tcfg = TrainingConfig(local_steps=5, rounds=10, mu=1.0, ell=10.0)
    assert tcfg.nu == 80.0  # 8L/mu dominates E
    assert tcfg.learning_rate(0) == pytest.approx(2.0 / 80.0)
    assert tcfg.learning_rate(20) == pytest.approx(2.0 / 100.0)
    with pytest.raises(ConfigError):
        TrainingConfig(local_steps=0, rounds=1, mu=1.0, ell=2.0)
    with pytest.raises(ConfigError):
        TrainingConfig(local_steps=1, rounds=1, mu=3.0, ell=2.0)


def test_task_optimum_is_exact():
    task = small_task()
    # the stated optimum really minimizes the weighted objective
    assert task.global_loss(task.w_star) == pytest.approx(task.f_star, abs=1e-12)
    grad = np.zeros(task.d)
    for i, u in enumerate(task.users):
        eps = 1e-6
        for k in range(task.d):
            e = np.zeros(task.d)
            e[k] = eps
            grad[k] += u.weight * (
                task.user_loss(i, task.w_star + e) - task.user_loss(i, task.w_star - e)
            ) / (2 * eps)
    np.testing.assert_allclose(grad, 0.0, atol=1e-5)
    assert task.betas.sum() == pytest.approx(1.0)


def test_dataset_moments_match_declared_spectrum():
    task = small_task()
    for u in task.users:
        moment = u.features.T @ u.features / u.size
        np.testing.assert_allclose(moment, np.diag(task.lam_data), atol=1e-9)


def test_heterogeneity_scaling():
    base = small_task(h=0.0)
    mid = small_task(h=0.5)
    high = small_task(h=1.0)
    assert base.gamma_heterogeneity == 0.0
    assert 0.0 < mid.gamma_heterogeneity < high.gamma_heterogeneity
    # doubling h scales the disagreement term quadratically
    assert high.gamma_heterogeneity == pytest.approx(4 * mid.gamma_heterogeneity)
    # centering pins the optimum across h
    np.testing.assert_allclose(base.w_star, high.w_star, atol=1e-9)


def test_task_validation():
    with pytest.raises(ConfigError):
        make_synthetic_task(n=2, d=1, mu=1.0, ell=2.0, heterogeneity=0.0)
    with pytest.raises(ConfigError):
        make_synthetic_task(n=2, d=4, mu=1.0, ell=2.0, heterogeneity=0.0, sizes=[8])
    with pytest.raises(ConfigError):
        make_synthetic_task(n=2, d=4, mu=0.0, ell=2.0, heterogeneity=0.0)


def test_local_sgd_returns_accumulated_update():
    task = small_task()
    tcfg = TrainingConfig(local_steps=3, rounds=1, mu=1.0, ell=10.0, batch_size=4)
    w0 = np.ones(task.d)
    y = local_sgd(task, 0, w0, tcfg, 0, _rng(7, 99))
    # replay by hand with the same draws
    rng = _rng(7, 99)
    w = w0.copy()
    for j in range(3):
        idx = rng.integers(0, task.users[0].size, size=4)
        w -= tcfg.learning_rate(j) * task.batch_gradient(0, w, idx)
    np.testing.assert_allclose(y, w0 - w)


def test_sample_dropouts():
    rng = _rng(0, 1)
    assert sample_dropouts(rng, 10, 0.0) == frozenset()
    counts = sum(len(sample_dropouts(rng, 20, 0.3)) for _ in range(500))
    assert abs(counts / (500 * 20) - 0.3) < 0.02


def make_run(rounds=6, theta=0.2, seed=5):
    task = small_task()
    pcfg = ProtocolConfig(
        n=task.n,
        d=task.d,
        alpha=0.5,
        theta=theta,
        gamma=0.0,
        c=2**16,
        clip_bound=4.0,
        betas=tuple(task.betas),
    )
    tcfg = TrainingConfig(local_steps=5, rounds=rounds, mu=1.0, ell=10.0)
    return task, pcfg, tcfg, run_training(pcfg, tcfg, task, master_seed=seed)


def test_training_is_exact_and_deterministic():
    task, pcfg, tcfg, result = make_run()
    assert len(result.traces) == 6
    assert all(tr.matches_oracle for tr in result.traces)
    assert all(tr.loss is not None and tr.gap_to_optimum is not None for tr in result.traces)
    again = run_training(pcfg, tcfg, task, master_seed=5)
    np.testing.assert_array_equal(result.w_final, again.w_final)
    assert [len(t.dropouts) for t in result.traces] == [
        len(t.dropouts) for t in again.traces
    ]
    different = run_training(pcfg, tcfg, task, master_seed=6)
    assert not np.array_equal(result.w_final, different.w_final)


def test_training_reduces_gap():
    _, _, _, result = make_run(rounds=40, theta=0.0)
    assert result.gaps[-1] < 0.05 * result.initial_gap


def test_betas_mismatch_rejected():
    task = small_task()
    pcfg = ProtocolConfig(
        n=task.n, d=task.d, alpha=0.5, theta=0.0, gamma=0.0, c=2**16, clip_bound=4.0
    )
    tcfg = TrainingConfig(local_steps=2, rounds=1, mu=1.0, ell=10.0)
    with pytest.raises(ConfigError) as err:
        run_training(pcfg, tcfg, task, master_seed=0)
    assert err.value.field == "betas"


def test_fedavg_reference_converges():
    task = small_task()
    tcfg = TrainingConfig(local_steps=5, rounds=40, mu=1.0, ell=10.0)
    losses, w = fedavg_reference(task, tcfg, master_seed=3)
    assert losses[-1] - task.f_star < 0.05 * (task.global_loss(np.zeros(task.d)) - task.f_star)
    assert losses[-1] == min(losses[-5:]) or losses[-1] < losses[0]
    np.testing.assert_allclose(w.shape, task.d)


def test_communication_stats_and_csv(tmp_path):
    task, pcfg, tcfg, result = make_run()
    stats = measure_communication(result.traces, pcfg.d)
    assert stats.rounds == len(result.traces)
    assert 0.0 < stats.mean_selection_fraction <= 1.0
    assert stats.mean_bytes_sparse == pytest.approx(
        8 + 12 * stats.mean_selection_fraction * pcfg.d
    )

    path = tmp_path / "trace.csv"
    write_trace_csv(str(path), result.traces)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(result.traces)
    assert tuple(rows[0]) == TRACE_COLUMNS
    assert float(rows[0]["loss"]) == pytest.approx(result.traces[0].loss)
    assert int(rows[-1]["t"]) == len(rows) - 1
