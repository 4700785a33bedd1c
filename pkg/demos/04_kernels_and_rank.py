"""
Quantum kernels: generalization bound, concentration and rank
=============================================================

Builds fidelity Gram matrices on 200 images for the fixed map and a
trained PCA-NQE, then reports the bound G(lambda), the off-diagonal
variance and the numerical rank under two eigenvalue cutoffs.
"""

import warnings

import numpy as np

from nqe import data as D
from nqe import experiments as X
from nqe import kernels as K
from nqe import metrics as M
from nqe.trainer import NqeTrainConfig

warnings.simplefilter("ignore")

setup = X.prepare_mnist()
model, _ = X.build_nqe(setup, "pca_nqe", NqeTrainConfig(iterations=200, seed=0))
pool = D.load_mnist_pool(0, 1)
idx = D.balanced_sample(pool, 200, np.random.default_rng(0))
x, y = pool.features[idx], pool.labels[idx]

for name, states in (("fixed", setup.fixed_states(x)), ("pca_nqe", model.states(x))):
    km = K.kernel_matrix(states)
    g = K.generalization_bound(km, y, K.DEFAULT_LAMBDAS)
    print(name)
    print("  G(lambda):", np.round(g, 3))
    print("  off-diagonal variance:", round(K.kernel_variance(km), 4))
    print("  rank (machine cutoff):", K.kernel_rank(km), " rank (rel 1e-3):", K.kernel_rank(km, rel_tol=1e-3))
    print("  expressibility eps2:", round(M.expressibility_deviation(states, 2).epsilon, 3))
