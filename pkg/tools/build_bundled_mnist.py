"""Rebuild the bundled MNIST 0/1 IDX fixtures.

Source: the 5000-image MNIST training excerpt shipped as
``mlxtend/data/data/mnist_5k.csv.gz`` in the mlxtend wheel (785 columns,
pixels 0-255, label last). Per digit the first 300 images in file order
become the bundled train split and the next 200 the bundled test split.

    python tools/build_bundled_mnist.py path/to/mnist_5k.csv.gz
"""
import gzip
import sys

import numpy as np

from nqe.data import BUNDLED_DIR, BUNDLED_PREFIX, OFFICIAL_FILES, IdxTensor, write_idx

N_TRAIN, N_TEST = 300, 200


def main(src):
    with gzip.open(src, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    pixels, labels = table[:, :-1].astype(np.uint8), table[:, -1].astype(np.uint8)
    splits = {"train": [], "test": []}
    for digit in (0, 1):
        idx = np.flatnonzero(labels == digit)
        splits["train"].append(idx[:N_TRAIN])
        splits["test"].append(idx[N_TRAIN : N_TRAIN + N_TEST])
    for split, parts in splits.items():
        idx = np.sort(np.concatenate(parts))
        img_name, lab_name = OFFICIAL_FILES[split]
        write_idx(BUNDLED_DIR / f"{BUNDLED_PREFIX}-{img_name}.gz",
                  IdxTensor(0x08, (len(idx), 28, 28), pixels[idx].reshape(-1, 28, 28)))
        write_idx(BUNDLED_DIR / f"{BUNDLED_PREFIX}-{lab_name}.gz", IdxTensor(0x08, (len(idx),), labels[idx]))
        print(split, len(idx))


if __name__ == "__main__":
    main(sys.argv[1])
