import itertools

import numpy as np
import pytest

from hesskit.autodiff import NonFiniteError, ScalarFunction, ops
from hesskit.hessian import (
    HessianBlock,
    ProbeDistribution,
    TruthSlice,
    batch_relative_difference,
    batch_relative_loss,
    default_fd_steps,
    exact_block,
    fd_hessian,
    fd_step_sweep,
    hutchinson_diag,
    hutchinson_diag_matvec,
    log_grid,
    partial_relative_l2_loss,
    probe,
    probes,
    relative_frobenius_error,
    relative_l2_difference,
)
from hesskit.model import SingleLayer, restricted_loss

from conftest import quadratic, random_symmetric, w1_sq_w2


def _matvec(H):
    return lambda V: V @ H


def _rademacher_patterns(m):
    return np.array(list(itertools.product([-1.0, 1.0], repeat=m)))


# exact blocks --------------------------------------------------------------------

def test_exact_block_quadratic():
    A = random_symmetric(np.random.default_rng(0), 7)
    blk = exact_block(quadratic(A), np.ones(7))
    np.testing.assert_allclose(blk.H, A, atol=1e-13)
    np.testing.assert_array_equal(blk.diagonal(), np.diag(blk.H))
    assert blk.is_symmetric()
    assert "wall_time" in blk.meta


def test_exact_block_is_deterministic(params, batch):
    f, imap = restricted_loss(params, SingleLayer(0, 25), batch)
    a = exact_block(f, imap.gather(params), imap)
    b = exact_block(f, imap.gather(params), imap)
    assert a.H.tobytes() == b.H.tobytes()
    assert a.index_map is imap


def test_block_asymmetry_measure():
    blk = HessianBlock(np.array([[1.0, 2.0], [2.5, 1.0]]))
    assert blk.asymmetry() == 0.5
    assert not blk.is_symmetric()


# finite differences ---------------------------------------------------------------------

@pytest.mark.parametrize("h", [1e-4, 1e-3, 1e-2, 1e-1])
def test_fd_exact_on_quadratics(h):
    rng = np.random.default_rng(1)
    A = random_symmetric(rng, 6)
    u0 = 0.01 * rng.normal(size=6)
    assert relative_frobenius_error(fd_hessian(quadratic(A), u0, h), A) < 1e-8


def test_fd_cubic_example():
    H = fd_hessian(w1_sq_w2(), np.array([1.0, 1.0]), 1e-3)
    np.testing.assert_allclose(H, [[2.0, 2.0], [2.0, 0.0]], atol=1e-5 * 1e3)
    H = fd_hessian(lambda u: u[0] ** 2 * u[1], np.array([1.0, 1.0]), 1e-3)
    assert np.max(np.abs(H - [[2.0, 2.0], [2.0, 0.0]])) < 1e-2


def test_fd_accepts_plain_callables_and_default_steps():
    f = lambda u: float(u @ u)
    np.testing.assert_allclose(fd_hessian(f, np.zeros(3)), 2 * np.eye(3), rtol=1e-6)
    np.testing.assert_allclose(default_fd_steps([0.0, -2.0]), np.finfo(float).eps ** 0.25 * np.array([1, 3]))


def test_fd_rejects_bad_steps_and_non_finite():
    with pytest.raises(ValueError):
        fd_hessian(lambda u: 0.0, np.zeros(2), 0.0)
    with pytest.raises(NonFiniteError):
        fd_hessian(lambda u: np.inf, np.zeros(2), 1e-3)


def test_log_grid():
    grid = log_grid(1e-8, 1e-1, 8)
    assert len(grid) == 8
    assert grid[0] == pytest.approx(1e-1) and grid[-1] == pytest.approx(1e-8)


def test_toy_fd_sweep_is_u_shaped(params, batch):
    f, imap = restricted_loss(params, SingleLayer(0, 8), batch)
    u0 = imap.gather(params)
    H = exact_block(f, u0).H
    errors = [e for _, e in fd_step_sweep(f, u0, H, log_grid(1e-8, 1e-1, 8))]
    best = int(np.argmin(errors))
    assert 0 < best < len(errors) - 1
    assert errors[best] < 1e-3


# probes and Hutchinson ------------------------------------------------------------------------

def test_probes_are_indexed_substreams():
    a = probes("rademacher", 5, seed=3, start=0, stop=4)
    np.testing.assert_array_equal(a[2], probe(ProbeDistribution.RADEMACHER, 5, 3, 2))
    assert set(np.unique(a)) <= {-1.0, 1.0}
    g = probes("gaussian", 5, seed=3, start=2, stop=4)
    np.testing.assert_array_equal(g[0], probe("gaussian", 5, 3, 2))
    with pytest.raises(ValueError):
        probe("uniform", 3, 0, 0)


def test_brute_force_unbiasedness():
    H = random_symmetric(np.random.default_rng(2), 4)
    V = _rademacher_patterns(4)
    est = np.mean(V * (V @ H), axis=0)
    assert np.max(np.abs(est - np.diag(H))) < 1e-12


def test_two_by_two_expectation():
    H = np.array([[2.0, 1.0], [1.0, 3.0]])
    V = _rademacher_patterns(2)
    np.testing.assert_array_equal(np.mean(V * (V @ H), axis=0), [2.0, 3.0])
    errors = []
    for K in (100, 10000):
        est = hutchinson_diag_matvec(_matvec(H), 2, K, seed=4)
        errors.append(np.linalg.norm(est.running_mean - [2, 3]) / np.linalg.norm([2, 3]))
    assert errors[1] < errors[0]
    assert errors[1] < 0.05


def test_single_probe_exact_on_diagonal():
    d = np.array([1.5, -2.0, 0.25, 7.0, 3.0])
    est = hutchinson_diag(quadratic(np.diag(d)), np.zeros(5), K=1, seed=11)
    assert np.max(np.abs(est.running_mean - d)) < 1e-14


@pytest.mark.parametrize("m", [3, 8, 12])
def test_exact_block_diagonal_matches_enumeration(params, batch, m):
    f, imap = restricted_loss(params, SingleLayer(2, m), batch)
    H = exact_block(f, imap.gather(params)).H
    V = _rademacher_patterns(m)
    from hesskit.autodiff import hvp
    HV = hvp(f, imap.gather(params), V)
    assert np.max(np.abs(np.mean(V * HV, axis=0) - np.diag(H))) < 1e-9


def test_recomputable_and_schedule_independent():
    H = random_symmetric(np.random.default_rng(5), 9)
    a = hutchinson_diag_matvec(_matvec(H), 9, 300, seed=7, chunk=64, threads=1)
    b = hutchinson_diag_matvec(_matvec(H), 9, 300, seed=7, chunk=17, threads=4)
    assert a.running_mean.tobytes() == b.running_mean.tobytes()
    assert a.rel_diff == b.rel_diff
    c = hutchinson_diag_matvec(_matvec(H), 9, 300, seed=8)
    assert c.running_mean.tobytes() != a.running_mean.tobytes()


def test_history_rows_and_truth_slice():
    H = random_symmetric(np.random.default_rng(6), 6)
    truth = TruthSlice(np.arange(3), np.diag(H)[:3])
    est = hutchinson_diag_matvec(_matvec(H), 6, 50, seed=0, truth_slice=truth)
    rows = est.history()
    assert len(rows) == 50 and rows[0][0] == 1 and rows[-1][0] == 50
    assert rows[0][1] == 1.0
    assert rows[-1][2] == partial_relative_l2_loss(est.running_mean[:3], np.diag(H)[:3])
    with pytest.raises(ValueError):
        hutchinson_diag_matvec(_matvec(H), 6, 0)


def test_rademacher_variance_not_above_gaussian():
    H = random_symmetric(np.random.default_rng(7), 16)
    K = 10_000
    var = {}
    for dist in ("rademacher", "gaussian"):
        V = probes(dist, 16, seed=1, start=0, stop=K)
        samples = V * (V @ H)
        var[dist] = samples.var(axis=0, ddof=1).sum()
        se = np.sqrt(np.sum(((samples - samples.mean(0)) ** 2).var(axis=0, ddof=1)) / K)
        var[dist + "_se"] = se
    margin = 3 * np.hypot(var["rademacher_se"], var["gaussian_se"])
    assert var["rademacher"] <= var["gaussian"] + margin


def test_toy_partial_loss_trends_down(params, batch):
    f, imap = restricted_loss(params, SingleLayer(0, 32), batch)
    u0 = imap.gather(params)
    truth = np.diag(exact_block(f, u0).H)
    est = hutchinson_diag(f, u0, K=2000, seed=0, truth_slice=TruthSlice(np.arange(16), truth[:16]))
    losses = est.partial_loss
    assert np.mean(losses[-100:]) < 0.5 * np.mean(losses[:10])


# metrics ----------------------------------------------------------------------------------------

def test_partial_loss_examples():
    t = np.array([1.0, -2.0, 3.0])
    assert partial_relative_l2_loss(t, t) == 0.0
    assert partial_relative_l2_loss(np.zeros(3), t) == 1.0
    assert abs(partial_relative_l2_loss(1.1 * t, t) - 0.1) < 1e-12
    assert partial_relative_l2_loss([9.0, -2.0, 3.0], t, index_set=[1, 2]) == 0.0
    with pytest.raises(ValueError):
        partial_relative_l2_loss(t, np.zeros(3))


def test_relative_difference_examples():
    x = np.array([1.0, 2.0])
    assert relative_l2_difference(x, x) == 0.0
    assert relative_l2_difference(np.zeros(2), x) == 1.0
    assert relative_l2_difference([1.0, 0.0], [0.0, 1.0]) == pytest.approx(np.sqrt(2), rel=1e-15)


def test_batch_metrics_examples():
    H = random_symmetric(np.random.default_rng(8), 4)
    assert batch_relative_loss(H, H) == 0.0
    assert batch_relative_loss(2 * H, H) == pytest.approx(1.0, rel=1e-15)
    assert batch_relative_difference(H, H) == 0.0
