"""
Training a neural embedding on MNIST 0 vs 1
===========================================

Trains the PCA-NQE network for 200 iterations and compares the class
separation (reported trace distance) against the fixed ZZ map. Uses the
bundled subset unless official MNIST files are found under NQE_DATA_DIR.
"""

import warnings

from nqe import experiments as X
from nqe.trainer import NqeTrainConfig

warnings.simplefilter("ignore")

setup = X.prepare_mnist(4, (0, 1), train_limit=400)
print("training images:", len(setup.train), setup.train.provenance)

cfg = NqeTrainConfig(iterations=200, batch_pairs=10, lr=0.1, seed=0)
result = X.run_separability(setup, cfg, seeds=(0,))

# history of the reported distance on a fixed evaluation subset
hist = result["runs"][0]["history"]
for it, td in zip(hist.td_iterations[::8], hist.trace_distance[::8]):
    print(f"iteration {it:4d}  reported distance {td:.3f}")

print(f"fixed map: {result['baseline']:.3f}  trained NQE: {result['mean_final']:.3f}")
