"""
A federated round loop on quadratic clients
===========================================

Each round samples clients, trains them locally from the broadcast model and
hands the weighted mean delta to the server optimizer. With full-batch
gradient-descent clients and one local epoch, FedAvg matches plain gradient
descent on the weighted global objective.
"""

import numpy as np

from fedocvqa.client import TrainerConfig, make_synthetic_federation
from fedocvqa.orchestrator import FederationConfig, Population, run_training, sample_clients

fed = make_synthetic_federation(K=3, client_counts_per_cluster=(1, 1, 1), heterogeneity=1.0, dims=(32, 6), seed=0)
pop = Population(fed.shards())
lr = 0.05
cfg = FederationConfig(
    total_clients=3, rounds=50, aggregation_mode="normalized", server_opt="fedavg",
    trainer=TrainerConfig(eta_l=lr, weight_decay=0.0, batch_size=32, optimizer="gd"),
)
run = run_training(cfg, pop)

theta = np.zeros(pop.dim)
for _ in range(50):
    theta = theta - lr * sum(pop.weights[k] * s.objective.gradient(theta) for k, s in enumerate(pop.shards))
print("max gap to centralized GD:", np.max(np.abs(run.theta - theta)))

# Partial participation: ten clients, C=0.35 gives four per round.
print([sample_clients(10, 0.35, t, seed=1) for t in range(3)])

# Heterogeneous clients with Adam on the client side and FedAdam on the server.
fed = make_synthetic_federation(K=10, client_counts_per_cluster=(1, 4, 5), heterogeneity=2.0, seed=0)
cfg = FederationConfig(total_clients=10, client_fraction=0.7, rounds=20, server_opt="fedadam",
                       server_hparams={"eta_s": 0.05}, trainer=TrainerConfig(eta_l=0.01, batch_size=8))
run = run_training(cfg, Population(fed.shards()))
print("validation loss by round:", [round(r.val_loss, 3) for r in run.records[::5]])
