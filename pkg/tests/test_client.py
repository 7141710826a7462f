import math

import numpy as np
import pytest

from fedocvqa.client import (
    ClientShard,
    LinearMapObjective,
    LogisticObjective,
    QuadraticObjective,
    TrainerConfig,
    local_train,
    make_synthetic_federation,
)
from fedocvqa.core import DomainError, NumericError


def central_diff(f, theta, h=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def objectives():
    rng = np.random.default_rng(0)
    yield QuadraticObjective(rng.normal(size=(12, 4)), rng.normal(size=12))
    yield LogisticObjective(rng.normal(size=(15, 3)), rng.integers(0, 3, size=15), 3)
    yield LinearMapObjective(rng.random((10, 5)), rng.random((10, 4)))


@pytest.mark.parametrize("obj", list(objectives()), ids=["quadratic", "logistic", "linear-map"])
def test_gradient_matches_finite_differences(obj):
    rng = np.random.default_rng(1)
    for _ in range(3):
        theta = rng.normal(size=obj.dim)
        idx = rng.choice(obj.n_examples, size=5, replace=False)
        g = obj.gradient(theta, idx)
        fd = central_diff(lambda t: obj.loss(t, idx), theta)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-5


def quad_shard(n=8, d=3, seed=0):
    rng = np.random.default_rng(seed)
    return ClientShard(0, QuadraticObjective(rng.normal(size=(n, d)), rng.normal(size=n)), n)


def test_zero_epochs_gives_zero_delta():
    sh = quad_shard()
    upd = local_train(np.ones(3), sh, TrainerConfig(epochs=0), np.random.default_rng(0))
    np.testing.assert_array_equal(upd.delta, 0.0)
    assert upd.n_k == 8


def test_full_batch_gd_is_one_gradient_step():
    sh = quad_shard()
    theta = np.array([0.3, -1.0, 2.0])
    cfg = TrainerConfig(eta_l=0.05, weight_decay=0.0, optimizer="gd", batch_size=100, epochs=1)
    upd = local_train(theta, sh, cfg, np.random.default_rng(0))
    A, b = sh.objective.A, sh.objective.b
    grad = A.T @ (A @ theta - b) / len(b)  # closed form
    np.testing.assert_allclose(upd.delta, 0.05 * grad, rtol=0, atol=1e-12)


def adamw_scalar_oracle(theta, a, b, lr, wd, b1, b2, eps, steps):
    """Scalar AdamW on f(x) = 0.5 * (a*x - b)**2, bias-corrected, decay applied before the moment update."""
    m = v = 0.0
    xs = []
    for t in range(1, steps + 1):
        g = a * (a * theta - b)
        theta = theta * (1 - lr * wd)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1**t)
        vh = v / (1 - b2**t)
        theta = theta - lr * mh / (math.sqrt(vh) + eps)
        xs.append(theta)
    return xs


def test_adam_matches_scalar_oracle():
    a, b = 1.7, -0.4
    sh = ClientShard(0, QuadraticObjective(np.array([[a]]), np.array([b])), 1)
    cfg = TrainerConfig(eta_l=0.1, weight_decay=0.01, batch_size=1, epochs=3)
    upd = local_train(np.array([2.0]), sh, cfg, np.random.default_rng(0))
    expected = adamw_scalar_oracle(2.0, a, b, 0.1, 0.01, 0.9, 0.999, 1e-8, 3)[-1]
    assert 2.0 - upd.delta[0] == pytest.approx(expected, abs=1e-12)


def test_optimizer_state_resets_between_calls():
    sh = quad_shard(n=40)
    cfg = TrainerConfig(eta_l=0.01, batch_size=7, epochs=2)
    u1 = local_train(np.zeros(3), sh, cfg, np.random.default_rng(5))
    u2 = local_train(np.zeros(3), sh, cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(u1.delta, u2.delta)
    assert u1.train_loss == u2.train_loss


def test_gd_loss_non_increasing_below_2_over_L():
    sh = quad_shard(n=20, d=4, seed=2)
    L = np.linalg.eigvalsh(sh.objective.hessian()).max()
    theta = np.full(4, 3.0)
    losses = [sh.objective.loss(theta)]
    cfg = TrainerConfig(eta_l=1.9 / L, weight_decay=0.0, optimizer="gd", batch_size=20, epochs=1)
    for _ in range(25):
        theta = theta - local_train(theta, sh, cfg, np.random.default_rng(0)).delta
        losses.append(sh.objective.loss(theta))
    assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))


def test_last_partial_batch_is_trained():
    # 5 examples, batch 2 -> 3 steps per epoch; gd on separable rows means every row moves theta
    obj = QuadraticObjective(np.eye(5), np.ones(5))
    sh = ClientShard(0, obj, 5)
    cfg = TrainerConfig(eta_l=0.5, weight_decay=0.0, optimizer="gd", batch_size=2, epochs=1)
    upd = local_train(np.zeros(5), sh, cfg, np.random.default_rng(0))
    assert np.all(upd.delta != 0)


def test_divergence_names_client():
    obj = QuadraticObjective(np.array([[1e200]]), np.array([1.0]))
    sh = ClientShard(7, obj, 1)
    with pytest.raises(NumericError, match="client 7"):
        local_train(np.array([1e200]), sh, TrainerConfig(), np.random.default_rng(0))


def test_config_validation():
    with pytest.raises(DomainError):
        TrainerConfig(eta_l=0)
    with pytest.raises(DomainError):
        TrainerConfig(batch_size=0)


def test_synthetic_federation_iid_limit():
    fed = make_synthetic_federation(5, [2, 3], 0.0, dims=(10, 4), seed=3)
    for obj in fed.objectives[1:]:
        np.testing.assert_array_equal(obj.A, fed.objectives[0].A)
        np.testing.assert_array_equal(obj.b, fed.objectives[0].b)


def test_synthetic_federation_clusters():
    fed = make_synthetic_federation(3, [1, 1, 1], 1.0, dims=(10, 4), seed=3)
    assert fed.cluster_of == (0, 1, 2)
    opts = [o.minimizer() for o in fed.objectives]
    assert min(np.linalg.norm(opts[i] - opts[j]) for i in range(3) for j in range(i)) > 0.1
    fed30 = make_synthetic_federation(30, [2, 13, 15], 1.0, seed=1)
    assert [fed30.cluster_of.count(c) for c in range(3)] == [2, 13, 15]


def test_synthetic_federation_deterministic_and_checked():
    a = make_synthetic_federation(4, [2, 2], 0.5, seed=9)
    b = make_synthetic_federation(4, [2, 2], 0.5, seed=9)
    for x, y in zip(a.objectives, b.objectives):
        np.testing.assert_array_equal(x.A, y.A)
    with pytest.raises(DomainError):
        make_synthetic_federation(4, [1, 1], 0.5)
    lg = make_synthetic_federation(3, [1, 1, 1], 0.0, dims=(9, 2), kind="logistic")
    np.testing.assert_array_equal(lg.objectives[0].X, lg.objectives[2].X)


def test_empty_shard_rejected():
    obj = QuadraticObjective(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DomainError):
        local_train(np.zeros(2), ClientShard(0, obj, 1), TrainerConfig(), np.random.default_rng(0))
