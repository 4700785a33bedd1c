"""
QCNN classification with and without NQE
========================================

Trains a 4-qubit QCNN on top of the fixed map and on top of a trained
PCA-NQE, then under the desk noise preset. The final training loss is
compared with its bound 1/2 - D_tr.
"""

import warnings

from nqe import experiments as X
from nqe import qcnn as Q
from nqe.sim import desk_nisq
from nqe.trainer import NqeTrainConfig

warnings.simplefilter("ignore")

setup = X.prepare_mnist()
model, _ = X.build_nqe(setup, "pca_nqe", NqeTrainConfig(iterations=200, seed=0))
models = {"pca_nqe": model}

clean = Q.QcnnTrainConfig(iterations=300, batch_size=128, lr=0.01, seed=0)
report = X.run_qcnn_study(setup, models, ["fixed", "pca_nqe"], Q.QcnnSpec.standard(4), clean)
for v, r in report.items():
    print(f"noiseless {v:8s} loss {r['final_loss']:.3f} bound {r['bound']:.3f} accuracy {r['test_accuracy']:.3f}")

# density-matrix simulation with gate noise and readout errors
noisy = Q.QcnnTrainConfig(iterations=50, batch_size=10, lr=0.1, seed=0, noise=desk_nisq())
report = X.run_qcnn_study(setup, models, ["fixed", "pca_nqe"], Q.QcnnSpec.hardware(4, "su4"), noisy)
for v, r in report.items():
    print(f"noisy     {v:8s} loss {r['final_loss']:.3f} bound {r['bound']:.3f} accuracy {r['test_accuracy']:.3f}")
