"""
Embedding states and the risk bound
===================================

Builds the ZZ feature map for a few inputs, checks the fidelity between
them and shows how the trace distance of two class ensembles sets the
lowest loss any measurement can reach.
"""

import numpy as np

from nqe import metrics as M
from nqe.embedding import EmbeddingSpec, classical_feature_map, zz_feature_states

# four qubits, one layer, ring couplings: 8 angles per input
spec = EmbeddingSpec(4)
rng = np.random.default_rng(0)
x = rng.uniform(0, np.pi, size=(6, 4))
states = zz_feature_states(classical_feature_map(x, spec), spec)
print("angles per input:", spec.n_angles)
print("norms:", np.round(np.linalg.norm(states, axis=1), 12))

# pairwise fidelities |<x_i|x_j>|^2
fid = np.abs(states.conj() @ states.T) ** 2
print("fidelities:\n", np.round(fid, 3))

# split into two classes and look at the bound 1/2 - D_tr
labels = np.array([-1, -1, -1, 1, 1, 1])
ens = M.ensemble_from_labels(states, labels)
print("reported distance:", round(M.reported_trace_distance(ens), 4))
print("loss bound:", round(M.risk_lower_bound(ens), 4))

# the Helstrom measurement attains it
e_plus, _ = M.helstrom_povm(ens)
print("Helstrom loss:", round(M.povm_loss(ens, e_plus), 4))
