"""Datasets: IDX parsing, binary MNIST loading, PCA, range scaling, synthetic clusters."""
from __future__ import annotations

import gzip
import os
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BUNDLED_DIR = Path(__file__).parent / "data"
BUNDLED_PREFIX = "mnist01"

# IDX type code -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

OFFICIAL_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    provenance: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        if np.isnan(self.features).any():
            raise ValueError("features contain NaN")

    def __len__(self):
        return len(self.labels)

    def subset(self, idx, tag: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.features[idx], self.labels[idx], tag or self.provenance)

    def with_features(self, features, tag: str | None = None) -> "Dataset":
        return Dataset(features, self.labels, tag or self.provenance)


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


@dataclass
class IdxTensor:
    dtype_code: int
    dims: tuple[int, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dtype_code not in IDX_DTYPES:
            raise ValueError(f"unsupported dtype 0x{self.dtype_code:02x}")
        self.dims = tuple(int(d) for d in self.dims)
        if self.data.size != int(np.prod(self.dims, dtype=np.int64)):
            raise ValueError("payload size does not match dims")


def parse_idx(raw: bytes) -> IdxTensor:
    if len(raw) < 4:
        raise ValueError("truncated: header shorter than 4 bytes")
    if raw[0] != 0 or raw[1] != 0:
        raise ValueError("bad magic")
    code, ndim = raw[2], raw[3]
    if code not in IDX_DTYPES:
        raise ValueError(f"unsupported dtype 0x{code:02x}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise ValueError("truncated: missing dimension words")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    dtype = IDX_DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64))
    need = head + count * dtype.itemsize
    if len(raw) < need:
        raise ValueError(f"truncated: payload needs {need} bytes, got {len(raw)}")
    if len(raw) > need:
        raise ValueError(f"trailing bytes after payload ({len(raw) - need})")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=head).reshape(dims)
    return IdxTensor(code, dims, data)


def serialize_idx(t: IdxTensor) -> bytes:
    head = bytes([0, 0, t.dtype_code, len(t.dims)]) + struct.pack(f">{len(t.dims)}I", *t.dims)
    return head + np.ascontiguousarray(t.data, dtype=IDX_DTYPES[t.dtype_code]).tobytes()


def read_idx(path) -> IdxTensor:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def write_idx(path, t: IdxTensor):
    raw = serialize_idx(t)
    path = Path(path)
    if path.suffix == ".gz":
        # mtime=0 keeps the compressed bytes reproducible
        raw = gzip.compress(raw, mtime=0)
    path.write_bytes(raw)


# ---------------------------------------------------------------------------
# MNIST
# ---------------------------------------------------------------------------


def _find(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = directory / name
        if p.exists():
            return p
    return None


def _official_paths(split: str, data_dir) -> tuple[Path, Path] | None:
    roots = [data_dir] if data_dir is not None else []
    if os.environ.get("NQE_DATA_DIR"):
        roots.append(os.environ["NQE_DATA_DIR"])
    for root in roots:
        root = Path(root)
        for d in (root, root / "MNIST" / "raw", root / "mnist"):
            img, lab = (_find(d, s) for s in OFFICIAL_FILES[split])
            if img is not None and lab is not None:
                return img, lab
    return None


def official_mnist_available(data_dir=None) -> bool:
    return all(_official_paths(s, data_dir) is not None for s in OFFICIAL_FILES)


def _filter(images, labels, class_a, class_b, limit):
    keep_a = np.flatnonzero(labels == class_a)
    keep_b = np.flatnonzero(labels == class_b)
    if limit is not None:
        # balanced: the first limit//2 of each class in file order
        half = limit // 2
        keep_a, keep_b = keep_a[: limit - half], keep_b[:half]
    idx = np.sort(np.concatenate([keep_a, keep_b]))
    x = images[idx].reshape(len(idx), -1).astype(float) / 255.0
    y = np.where(labels[idx] == class_a, -1, 1)
    return x, y


def load_binary_mnist(class_a: int = 0, class_b: int = 1, split: str = "train",
                      limit: int | None = None, data_dir=None) -> Dataset:
    """Two-class MNIST with class_a -> -1, class_b -> +1 and pixels in [0, 1].

    Official IDX files are searched in ``data_dir`` and ``$NQE_DATA_DIR``.
    Without them the bundled 0/1 subset is used and a warning is issued.
    """
    if split not in OFFICIAL_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    if class_a == class_b:
        raise ValueError("need two distinct classes")
    paths = _official_paths(split, data_dir)
    if paths is not None:
        images, labels = read_idx(paths[0]).data, read_idx(paths[1]).data
        x, y = _filter(images, labels, class_a, class_b, limit)
        return Dataset(x, y, f"mnist-{split}:{class_a}v{class_b}")
    warnings.warn("official MNIST files not found; using the bundled 0/1 subset", stacklevel=2)
    if {class_a, class_b} != {0, 1}:
        raise FileNotFoundError("the bundled subset only holds digits 0 and 1")
    images, labels = load_bundled_raw(split)
    x, y = _filter(images, labels, class_a, class_b, limit)
    return Dataset(x, y, f"bundled-{split}:{class_a}v{class_b}")


def load_bundled_raw(split: str) -> tuple[np.ndarray, np.ndarray]:
    img = read_idx(BUNDLED_DIR / f"{BUNDLED_PREFIX}-{OFFICIAL_FILES[split][0]}.gz").data
    lab = read_idx(BUNDLED_DIR / f"{BUNDLED_PREFIX}-{OFFICIAL_FILES[split][1]}.gz").data
    return np.asarray(img), np.asarray(lab)


def load_mnist_pool(class_a: int = 0, class_b: int = 1, data_dir=None) -> Dataset:
    """Train and test splits concatenated; the pool the kernel studies resample from."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        parts = [load_binary_mnist(class_a, class_b, s, data_dir=data_dir) for s in ("train", "test")]
    return Dataset(np.concatenate([p.features for p in parts]),
                   np.concatenate([p.labels for p in parts]), parts[0].provenance + "+test")


def balanced_sample(ds: Dataset, n: int, rng, exclude=None) -> np.ndarray:
    """Indices of n samples, n/2 per class, drawn without replacement."""
    rng = np.random.default_rng(rng)
    avail = np.ones(len(ds), bool)
    if exclude is not None:
        avail[np.asarray(exclude, dtype=int)] = False
    out = []
    for lab, k in ((-1, n - n // 2), (1, n // 2)):
        pool = np.flatnonzero(avail & (ds.labels == lab))
        if len(pool) < k:
            raise ValueError(f"only {len(pool)} samples left for class {lab}, need {k}")
        out.append(rng.choice(pool, size=k, replace=False))
    return np.sort(np.concatenate(out))


# ---------------------------------------------------------------------------
# PCA and scaling
# ---------------------------------------------------------------------------


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (k, m), orthonormal rows
    variances: np.ndarray  # (k,), descending

    @property
    def k(self):
        return self.components.shape[0]


def pca_fit(features, k: int) -> PcaModel:
    x = np.asarray(features, dtype=float)
    n, m = x.shape
    if n < 2:
        raise ValueError("PCA needs at least 2 samples")
    if not 1 <= k <= min(n, m):
        raise ValueError(f"k={k} must lie in [1, {min(n, m)}]")
    mean = x.mean(axis=0)
    xc = x - mean
    if not np.any(xc):
        raise ValueError("zero variance: all samples are identical")
    cov = xc.T @ xc / (n - 1)
    eig, vec = np.linalg.eigh(cov)
    order = np.argsort(eig)[::-1][:k]
    comps = vec[:, order].T
    # sign convention: the largest-magnitude entry of each component is positive
    pivot = comps[np.arange(k), np.argmax(np.abs(comps), axis=1)]
    comps = comps * np.where(pivot < 0, -1.0, 1.0)[:, None]
    return PcaModel(mean, comps, np.clip(eig[order], 0.0, None))


def pca_transform(model: PcaModel, x) -> np.ndarray:
    return (np.asarray(x, dtype=float) - model.mean) @ model.components.T


@dataclass
class RangeScaler:
    data_min: np.ndarray
    data_max: np.ndarray
    lo: float = 0.0
    hi: float = float(np.pi)

    def transform(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        span = self.data_max - self.data_min
        const = span == 0
        unit = np.where(const, 0.5, (x - self.data_min) / np.where(const, 1.0, span))
        return self.lo + (self.hi - self.lo) * np.clip(unit, 0.0, 1.0)

    def inverse(self, z) -> np.ndarray:
        unit = (np.asarray(z, dtype=float) - self.lo) / (self.hi - self.lo)
        return self.data_min + unit * (self.data_max - self.data_min)


def fit_scaler(features, lo: float = 0.0, hi: float = float(np.pi)) -> RangeScaler:
    x = np.asarray(features, dtype=float)
    if x.size == 0:
        raise ValueError("cannot fit a scaler on empty features")
    if hi <= lo:
        raise ValueError("hi must exceed lo")
    return RangeScaler(x.min(axis=0), x.max(axis=0), lo, hi)


def scale_to_range(features, lo: float = 0.0, hi: float = float(np.pi)):
    """Min-max scale each feature to [lo, hi]; returns (scaled, scaler).

    A constant feature maps to the midpoint of the range.
    """
    sc = fit_scaler(features, lo, hi)
    return sc.transform(features), sc


@dataclass
class Preprocessor:
    """PCA to k features followed by range scaling, both fit on training data."""

    pca: PcaModel
    scaler: RangeScaler

    def __call__(self, x) -> np.ndarray:
        return self.scaler.transform(pca_transform(self.pca, x))


def fit_preprocessor(features, k: int) -> Preprocessor:
    pca = pca_fit(features, k)
    return Preprocessor(pca, fit_scaler(pca_transform(pca, features)))


# ---------------------------------------------------------------------------
# Synthetic clusters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 400
    n_features: int = 4
    clusters_per_class: int = 4
    class_sep: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_samples, self.n_features, self.clusters_per_class) < 1:
            raise ValueError("counts must be positive")
        if 2 * self.clusters_per_class > 2**self.n_features:
            raise ValueError("not enough hypercube vertices for the requested clusters")
        if self.class_sep <= 0:
            raise ValueError("class_sep must be positive")


def make_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> Dataset:
    """Unit-variance Gaussian clusters centred on distinct random vertices of
    the hypercube [-class_sep, class_sep]^m; classes are balanced."""
    rng = np.random.default_rng(spec.seed)
    m, c = spec.n_features, spec.clusters_per_class
    vertex_ids = rng.choice(2**m, size=2 * c, replace=False)
    bits = (vertex_ids[:, None] >> np.arange(m)) & 1
    centres = spec.class_sep * (2.0 * bits - 1.0)
    per_class = [spec.n_samples - spec.n_samples // 2, spec.n_samples // 2]
    xs, ys = [], []
    for cls, label in enumerate((-1, 1)):
        counts = np.full(c, per_class[cls] // c)
        counts[: per_class[cls] % c] += 1
        for j in range(c):
            centre = centres[cls * c + j]
            xs.append(centre + rng.normal(size=(counts[j], m)))
            ys.append(np.full(counts[j], label))
    x, y = np.concatenate(xs), np.concatenate(ys)
    perm = rng.permutation(len(y))
    return Dataset(x[perm], y[perm], f"synthetic:seed={spec.seed},sep={spec.class_sep}")
