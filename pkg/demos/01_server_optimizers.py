"""
Server optimizers on a fixed pseudo-gradient
============================================

The server treats the aggregated client delta as a gradient. Here the same
delta is fed to FedAvg, FedAvgM and FedAdam for a few rounds to see how each
one moves the global model.
"""

import numpy as np

from fedocvqa.server import ServerState, server_step

theta0 = np.zeros(3)
delta = np.array([0.02, -0.5, 3.0])

# FedAvg takes the delta as is. FedAvgM smooths it with momentum beta.
# FedAdam divides by the root of a running second moment, so every coordinate
# moves by roughly eta_s no matter how large its delta is.
for name in ("fedavg", "fedavgm", "fedadam"):
    state = ServerState.initial(theta0, eta_s=0.001, beta=0.9, beta1=0.9, beta2=0.99, epsilon=1e-5)
    for _ in range(5):
        state = server_step(name, state, delta)
    print(f"{name:8s} theta after 5 rounds: {np.round(state.theta, 5)}  (round={state.round})")

# States are immutable, so stepping twice from one state gives the same answer.
s = ServerState.initial(theta0)
assert np.array_equal(server_step("fedadam", s, delta).theta, server_step("fedadam", s, delta).theta)
