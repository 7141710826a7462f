import numpy as np
import pytest

from fedocvqa.client import ClientShard, QuadraticObjective, TrainerConfig, make_synthetic_federation
from fedocvqa.core import ClientUpdate, ProtocolError, population_weights
from fedocvqa.orchestrator import (
    ClientTrainingError,
    FederationConfig,
    Phase,
    Population,
    aggregate,
    clients_per_round,
    csv_header,
    records_to_csv,
    run_round,
    run_training,
    sample_clients,
)


def test_sample_clients_examples():
    assert sample_clients(3, 1.0, 0, 0) == [0, 1, 2]
    assert len(sample_clients(3, 0.35, 0, 0)) == 1
    a = sample_clients(10, 0.7, 4, 123)
    assert a == sample_clients(10, 0.7, 4, 123)
    assert len(a) == 7 == len(set(a)) and a == sorted(a)
    assert all(0 <= k < 10 for k in a)


@pytest.mark.parametrize("K, C, m", [(3, 0.35, 1), (10, 0.35, 4), (30, 0.35, 11), (10, 0.7, 7), (30, 0.7, 21), (1, 0.01, 1), (10, 0.05, 1), (10, 0.15, 2)])
def test_clients_per_round_rounding(K, C, m):
    assert clients_per_round(K, C) == m


def test_sampling_marginals():
    K, C, rounds = 10, 0.35, 10_000
    m = clients_per_round(K, C)
    hits = np.zeros(K)
    for t in range(rounds):
        hits[sample_clients(K, C, t, 99)] += 1
    p = m / K
    sigma = np.sqrt(rounds * p * (1 - p))
    assert np.all(np.abs(hits - rounds * p) <= 3 * sigma)


def upd(k, delta, n):
    return ClientUpdate(k, np.array(delta, float), n)


def test_aggregate_examples():
    w1 = population_weights([7])
    np.testing.assert_array_equal(aggregate([upd(0, [2, 2], 7)], w1, "literal"), [2, 2])
    w = population_weights([1, 3])
    ups = [upd(1, [0, 8], 3), upd(0, [4, 0], 1)]
    np.testing.assert_allclose(aggregate(ups, w, "literal"), [0.5, 3.0], atol=1e-15)
    np.testing.assert_allclose(aggregate(ups, w, "normalized"), [1.0, 6.0], atol=1e-15)
    zeros = [upd(0, [0, 0], 1), upd(1, [0, 0], 3)]
    for mode in ("literal", "normalized"):
        np.testing.assert_array_equal(aggregate(zeros, w, mode), [0, 0])
    with pytest.raises(ProtocolError):
        aggregate([], w)


def quad_population(K=3, h=1.0, seed=0, dims=(16, 4)):
    fed = make_synthetic_federation(K, [1] * K if K == 3 else [K], h, dims=dims, seed=seed)
    return Population(fed.shards())


def test_run_round_homogeneous_moves_toward_optimum():
    pop = quad_population(h=0.0)
    cfg = FederationConfig(3, 1.0, rounds=1, trainer=TrainerConfig(eta_l=0.05, optimizer="gd", weight_decay=0.0, batch_size=64))
    st0 = cfg.initial_state(np.zeros(pop.dim))
    st1, rec = run_round(st0, cfg, pop, 0)
    opt = pop.shards[0].objective.minimizer()
    assert np.linalg.norm(st1.theta - opt) < np.linalg.norm(st0.theta - opt)
    assert rec.delta_norm > 0 and st1.round == 1
    assert rec.selected == (0, 1, 2)


def test_run_round_guards():
    pop = quad_population()
    cfg = FederationConfig(3, 1.0, rounds=0)
    with pytest.raises(ProtocolError, match="no rounds remaining"):
        run_round(cfg.initial_state(np.zeros(pop.dim)), cfg, pop, 0)
    cfg = FederationConfig(3, 1.0, rounds=2)
    with pytest.raises(ProtocolError):
        run_round(cfg.initial_state(np.zeros(pop.dim)), cfg, pop, 1)


def test_client_failure_identifies_client():
    good = QuadraticObjective(np.eye(2), np.ones(2))
    bad = QuadraticObjective(np.full((1, 2), 1e300), np.ones(1))
    pop = Population([ClientShard(0, good, 2), ClientShard(1, bad, 1)])
    cfg = FederationConfig(2, 1.0, rounds=1)
    with pytest.raises(ClientTrainingError) as err:
        run_round(cfg.initial_state(np.full(2, 1e10)), cfg, pop, 0)
    assert err.value.client_id == 1 and err.value.numeric


def test_run_training_single_round_equals_run_round():
    pop = quad_population()
    cfg = FederationConfig(3, 1.0, rounds=1, seed=4, trainer=TrainerConfig(eta_l=0.01))
    run = run_training(cfg, pop)
    _, rec = run_round(cfg.initial_state(np.zeros(pop.dim)), cfg, pop, 0)
    assert run.records == [rec]


def test_validation_loss_settles():
    pop = quad_population(h=1.0)
    cfg = FederationConfig(3, 1.0, rounds=10, aggregation_mode="normalized",
                           trainer=TrainerConfig(eta_l=0.05, optimizer="gd", weight_decay=0.0, batch_size=4))
    losses = [r.val_loss for r in run_training(cfg, pop).records]
    tail = losses[3:]
    assert all(b <= a for a, b in zip(tail, tail[1:]))


def run_records(workers):
    pop = quad_population(K=10, h=1.0, dims=(24, 5))
    cfg = FederationConfig(10, 0.7, rounds=4, seed=8, workers=workers, server_opt="fedadam",
                           trainer=TrainerConfig(eta_l=0.01, batch_size=5))
    return run_training(cfg, pop)


def test_determinism_independent_of_workers():
    a, b, c = run_records(1), run_records(1), run_records(4)
    assert records_to_csv(a.records) == records_to_csv(b.records) == records_to_csv(c.records)
    np.testing.assert_array_equal(a.theta, c.theta)


def test_two_phase_schedule_starts_from_pretrained_model():
    pop_pt = quad_population(seed=1)
    pop_ft = quad_population(seed=2)
    tr = TrainerConfig(eta_l=0.01)
    pt = Phase(FederationConfig(3, 0.35, rounds=3, phase="pretrain", trainer=tr, server_opt="fedadam"), pop_pt)
    ft_cfg = FederationConfig(3, 0.35, rounds=2, trainer=tr)
    run = run_training(ft_cfg, pop_ft, pretrain=pt)
    assert [r.phase for r in run.records] == ["pretrain"] * 3 + ["finetune"] * 2
    assert all(len(r.selected) == 1 for r in run.records)
    pre_only = run_training(pt.config, pop_pt)
    direct = run_training(ft_cfg, pop_ft, theta0=pre_only.theta)
    np.testing.assert_array_equal(direct.theta, run.theta)


def test_csv_schema():
    assert csv_header(["DocVQA", "TabFact", "WTQ"]) == [
        "round", "phase", "clients_per_round", "selected_ids", "delta_norm", "train_loss", "val_loss",
        "metric_DocVQA", "metric_TabFact", "metric_WTQ", "two_step",
    ]
