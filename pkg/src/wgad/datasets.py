"""Toy mixture, MNIST and HAR ingestion, anomaly splits and recurrence images."""
from __future__ import annotations

import csv
import gzip
import importlib.util
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import kernels

# --------------------------------------------------------------------------
# labeled splits
# --------------------------------------------------------------------------


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    split: str
    note: str = ""
    classes: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.samples) != len(self.labels):
            raise ValueError(f"{len(self.samples)} samples but {len(self.labels)} labels")
        if self.split not in ("train", "test"):
            raise ValueError("split must be 'train' or 'test'")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if self.split == "train" and self.labels.any():
            raise ValueError("the train split must not contain anomalies")

    def __len__(self):
        return len(self.labels)

    @property
    def prevalence(self) -> float:
        return float(self.labels.mean()) if len(self) else 0.0

    def to_csv(self, path) -> None:
        d = self.samples.reshape(len(self), -1)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"x{i}" for i in range(d.shape[1])] + ["label"])
            for row, lab in zip(d, self.labels):
                w.writerow([repr(float(v)) for v in row] + [int(lab)])


def read_dataset_csv(path, split="test") -> LabeledDataset:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return LabeledDataset(data[:, :-1], data[:, -1].astype(np.int64), split, note=str(path))


def _class_out_split(samples, classes, abnormal, seed, train_fraction=0.8):
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    normal_idx = np.flatnonzero(classes != abnormal)
    abnormal_idx = np.flatnonzero(classes == abnormal)
    normal_idx = normal_idx[rng.permutation(len(normal_idx))]
    n_train = int(round(train_fraction * len(normal_idx)))
    tr, te_norm = normal_idx[:n_train], normal_idx[n_train:]
    te = np.concatenate([te_norm, abnormal_idx])
    labels = np.concatenate([np.zeros(len(te_norm), np.int64), np.ones(len(abnormal_idx), np.int64)])
    train = LabeledDataset(samples[tr], np.zeros(len(tr), np.int64), "train", classes=classes[tr])
    test = LabeledDataset(samples[te], labels, "test", classes=classes[te])
    return train, test


# --------------------------------------------------------------------------
# toy Gaussian mixture
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianMixtureSpec:
    k: int = 7
    radius: float = 1.0
    sigma: float = 0.05
    phase: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")

    @property
    def centers(self) -> np.ndarray:
        ang = self.phase + 2 * np.pi * np.arange(self.k) / self.k
        return self.radius * np.c_[np.cos(ang), np.sin(ang)]

    def density(self, points) -> np.ndarray:
        pts = np.ascontiguousarray(np.atleast_2d(points), dtype=np.float64)
        return kernels.mixture_density(pts, np.ascontiguousarray(self.centers), self.sigma)


def sample_gaussian_mixture(spec: GaussianMixtureSpec, n: int, seed=None, sigma=None) -> np.ndarray:
    """``n`` points: a uniformly chosen center plus isotropic normal noise.

    ``seed`` overrides ``spec.seed``; ``sigma`` overrides the noise scale
    (``0`` puts every sample exactly on a center).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    modes = rng.integers(0, spec.k, n)
    s = spec.sigma if sigma is None else sigma
    return spec.centers[modes] + s * rng.standard_normal((n, 2))


def density_threshold(spec: GaussianMixtureSpec, mass: float = 0.99, draws: int = 1_000_000,
                      seed: int = 12345) -> float:
    """Density level whose super-level set holds ``mass`` of the mixture.

    Monte-Carlo quantile of the density evaluated at ``draws`` seeded samples.
    """
    pts = sample_gaussian_mixture(spec, draws, seed=seed)
    return float(np.quantile(spec.density(pts), 1.0 - mass))


_THRESHOLDS: dict = {}


def toy_anomaly_label(spec: GaussianMixtureSpec, points, threshold: float | None = None) -> np.ndarray:
    """1 where the mixture density falls below the 99%-mass level, else 0."""
    if threshold is None:
        key = (spec.k, spec.radius, spec.sigma, spec.phase)
        if key not in _THRESHOLDS:
            _THRESHOLDS[key] = density_threshold(spec)
        threshold = _THRESHOLDS[key]
    return (spec.density(points) < threshold).astype(np.int64)


def sample_toy_anomalies(spec: GaussianMixtureSpec, n: int, seed, box: float = 2.0,
                         threshold: float | None = None) -> np.ndarray:
    """Rejection-sample ``n`` uniform points in ``[-box, box]^2`` labeled anomalous."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = []
    have = 0
    while have < n:
        cand = rng.uniform(-box, box, size=(2 * n, 2))
        keep = cand[toy_anomaly_label(spec, cand, threshold) == 1]
        out.append(keep)
        have += len(keep)
    return np.concatenate(out)[:n]


# --------------------------------------------------------------------------
# MNIST
# --------------------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


def _open(path):
    return gzip.open(path, "rb") if str(path).endswith(".gz") else open(path, "rb")


def load_idx(path, scale: bool = True) -> np.ndarray:
    """Read an IDX image (``N x rows*cols``, scaled to [0,1]) or label file."""
    with _open(path) as fh:
        blob = fh.read()
    if len(blob) < 8:
        raise ValueError(f"{path}: truncated header")
    (magic,) = struct.unpack(">I", blob[:4])
    if magic == IDX_IMAGES:
        if len(blob) < 16:
            raise ValueError(f"{path}: truncated header")
        n, rows, cols = struct.unpack(">III", blob[4:16])
        need = n * rows * cols
        body = blob[16:]
        if len(body) < need:
            raise ValueError(f"{path}: truncated file ({len(body)} of {need} pixel bytes)")
        if len(body) > need:
            raise ValueError(f"{path}: dimension mismatch ({len(body)} bytes for {n}x{rows}x{cols})")
        arr = np.frombuffer(body, dtype=np.uint8).reshape(n, rows * cols)
        return arr / 255.0 if scale else arr.copy()
    if magic == IDX_LABELS:
        (n,) = struct.unpack(">I", blob[4:8])
        body = blob[8:]
        if len(body) < n:
            raise ValueError(f"{path}: truncated file ({len(body)} of {n} labels)")
        if len(body) > n:
            raise ValueError(f"{path}: dimension mismatch ({len(body)} bytes for {n} labels)")
        return np.frombuffer(body, dtype=np.uint8).astype(np.int64)
    raise ValueError(f"{path}: bad magic 0x{magic:08x}")


def write_idx(path, array) -> None:
    """Write uint8 data as IDX: 2-D/3-D arrays as images, 1-D as labels."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("IDX payload must fit in uint8")
        arr = arr.astype(np.uint8)
    if arr.ndim == 1:
        head = struct.pack(">II", IDX_LABELS, len(arr))
    else:
        if arr.ndim == 2:
            side = int(round(np.sqrt(arr.shape[1])))
            if side * side != arr.shape[1]:
                raise ValueError("flat images must be square")
            arr = arr.reshape(len(arr), side, side)
        head = struct.pack(">IIII", IDX_IMAGES, *arr.shape)
    with open(path, "wb") as fh:
        fh.write(head + arr.tobytes())


MNIST_FILES = {
    "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
    "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
    "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
    "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
}


def _find(directory, names):
    for name in names:
        for suffix in ("", ".gz"):
            p = os.path.join(directory, name + suffix)
            if os.path.exists(p):
                return p
    raise FileNotFoundError(f"no file matching {names[0]} in {directory}")


def load_mnist(directory):
    """Both MNIST splits from a directory of IDX files, concatenated.

    Returns ``(images, labels)``; the leave-one-out protocol pools the
    original train and test splits before re-splitting.
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"MNIST directory not found: {directory}")
    imgs, labs = [], []
    for split in ("train", "test"):
        x = load_idx(_find(directory, MNIST_FILES[f"{split}_images"]))
        y = load_idx(_find(directory, MNIST_FILES[f"{split}_labels"]))
        if len(x) != len(y):
            raise ValueError(f"{split}: {len(x)} images but {len(y)} labels")
        imgs.append(x)
        labs.append(y)
    return np.concatenate(imgs), np.concatenate(labs)


def bundled_mnist_sample_path() -> str | None:
    """Location of the 5000-digit MNIST sample shipped inside ``mlxtend``, if installed."""
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        return None
    path = os.path.join(list(spec.submodule_search_locations)[0], "data", "data", "mnist_5k.csv.gz")
    return path if os.path.exists(path) else None


def load_mnist_sample(path=None):
    """The 5000-image MNIST sample (500 per digit) as ``(images in [0,1], labels)``."""
    path = path or bundled_mnist_sample_path()
    if path is None or not os.path.exists(path):
        raise FileNotFoundError("MNIST sample not found (install the 'mnist-sample' extra "
                                "or set dataset.path to a directory of IDX files)")
    with gzip.open(path, "rt") as fh:
        data = np.loadtxt(fh, delimiter=",", dtype=np.float64)
    return data[:, :-1] / 255.0, data[:, -1].astype(np.int64)


def leave_one_digit_out_split(images, labels, abnormal_digit: int, seed):
    """80% of the normal digits for training; the rest plus every abnormal image for testing."""
    if abnormal_digit not in range(10):
        raise ValueError(f"digit must be in 0..9, got {abnormal_digit}")
    labels = np.asarray(labels)
    if len(images) != len(labels):
        raise ValueError("images and labels differ in length")
    return _class_out_split(np.asarray(images), labels, abnormal_digit, seed)


def downsample_images(images, factor: int, side: int | None = None) -> np.ndarray:
    """Average non-overlapping ``factor x factor`` blocks of square images.

    Accepts flat rows (``N x side^2``) or stacks (``N x side x side``) and
    returns the same layout.
    """
    arr = np.asarray(images, dtype=np.float64)
    flat = arr.ndim == 2
    if flat:
        side = side or int(round(np.sqrt(arr.shape[1])))
        if side * side != arr.shape[1]:
            raise ValueError("flat images must be square")
        arr = arr.reshape(len(arr), side, side)
    h, w = arr.shape[1:]
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"factor {factor} does not divide image size {h}x{w}")
    out = arr.reshape(len(arr), h // factor, factor, w // factor, factor).mean(axis=(2, 4))
    return out.reshape(len(out), -1) if flat else out


# --------------------------------------------------------------------------
# HAR
# --------------------------------------------------------------------------

HAR_SIGNALS = tuple(f"{kind}_{axis}" for kind in ("total_acc", "body_acc", "body_gyro")
                    for axis in "xyz")
HAR_ACTIVITIES = {1: "walking", 2: "walking upstairs", 3: "walking downstairs",
                  4: "sitting", 5: "standing", 6: "laying"}
HAR_RATE_HZ = 50.0


@dataclass
class TimeSeriesWindow:
    values: np.ndarray
    activity: str
    rate_hz: float = HAR_RATE_HZ

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("window values must be T x C")
        if not np.isfinite(self.values).all():
            raise ValueError("window holds non-finite values")


def _har_paths(directory, split):
    sig_dir = os.path.join(directory, "Inertial Signals")
    if not os.path.isdir(sig_dir):
        sig_dir = directory
    signals = [os.path.join(sig_dir, f"{name}_{split}.txt") for name in HAR_SIGNALS]
    labels = os.path.join(directory, f"y_{split}.txt")
    return signals, labels


def load_har(directory, split: str | None = None):
    """Windows of the nine inertial signals, channel order total/body acc then gyro.

    ``directory`` is either a split directory (holding ``Inertial Signals/``
    and ``y_<split>.txt``) or the dataset root with ``train``/``test``
    subdirectories, in which case both splits are loaded.
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"HAR directory not found: {directory}")
    if split is None:
        subs = [s for s in ("train", "test") if os.path.isdir(os.path.join(directory, s))]
        if subs:
            out = []
            for s in subs:
                out += load_har(os.path.join(directory, s), s)
            return out
        split = os.path.basename(os.path.normpath(directory))
    signals, label_path = _har_paths(directory, split)
    for p in signals + [label_path]:
        if not os.path.exists(p):
            raise FileNotFoundError(f"missing HAR file: {p}")
    mats = [np.loadtxt(p, ndmin=2) for p in signals]
    labels = np.loadtxt(label_path, dtype=np.int64, ndmin=1).reshape(-1)
    for p, m in zip(signals, mats):
        if len(m) != len(labels):
            raise ValueError(f"row-count mismatch: {p} has {len(m)} rows, labels have {len(labels)}")
    if len({m.shape[1] for m in mats}) != 1:
        raise ValueError("signal files disagree on window length")
    stacked = np.stack(mats, axis=2)
    bad = set(labels.tolist()) - set(HAR_ACTIVITIES)
    if bad:
        raise ValueError(f"unknown activity labels {sorted(bad)}")
    return [TimeSeriesWindow(stacked[i], HAR_ACTIVITIES[int(labels[i])]) for i in range(len(labels))]


def recurrence_matrix(series) -> np.ndarray:
    """Unthresholded distance plot ``R[i, j] = |s_i - s_j|`` (per channel for 2-D input)."""
    s = np.asarray(series, dtype=np.float64)
    if s.ndim not in (1, 2) or s.shape[0] < 1:
        raise ValueError("series must be a nonempty T-vector or T x C matrix")
    out = kernels.recurrence_matrix(np.ascontiguousarray(s.reshape(len(s), -1)))
    return out[:, :, 0] if s.ndim == 1 else out


def har_anomaly_split(windows, abnormal_activity: str, seed, channels=None,
                      transform: str = "raw", standardize: bool = True):
    """Leave-one-activity-out split of HAR windows.

    ``channels`` selects a subset of the nine channels (names or indices);
    ``transform`` is ``"raw"`` (flattened T x C) or ``"recurrence"``
    (flattened T x T x C).  Standardization statistics come from the train
    split only and are stored in ``train.meta``.
    """
    names = {w.activity for w in windows}
    if abnormal_activity not in HAR_ACTIVITIES.values():
        raise ValueError(f"unknown activity {abnormal_activity!r}")
    if transform not in ("raw", "recurrence"):
        raise ValueError("transform must be 'raw' or 'recurrence'")
    if not windows:
        raise ValueError("no windows")
    idx = _channel_indices(channels)
    values = np.stack([w.values[:, idx] for w in windows])
    acts = np.array([w.activity for w in windows])
    codes = np.array([sorted(names).index(a) for a in acts])
    abnormal = sorted(names).index(abnormal_activity) if abnormal_activity in names else -1
    order_ids = np.arange(len(windows))
    train, test = _class_out_split(order_ids, codes, abnormal, seed)
    tr_vals, te_vals = values[train.samples], values[test.samples]
    meta = {"channels": [HAR_SIGNALS[i] for i in idx], "transform": transform}
    if standardize:
        mu = tr_vals.mean(axis=(0, 1))
        sd = tr_vals.std(axis=(0, 1))
        sd = np.where(sd > 0, sd, 1.0)
        tr_vals = (tr_vals - mu) / sd
        te_vals = (te_vals - mu) / sd
        meta.update(mean=mu.tolist(), std=sd.tolist())

    def feats(v):
        if transform == "recurrence":
            v = np.stack([recurrence_matrix(w) for w in v])
        return v.reshape(len(v), -1)

    train = LabeledDataset(feats(tr_vals), train.labels, "train", meta=meta,
                           classes=acts[train.samples])
    test = LabeledDataset(feats(te_vals), test.labels, "test", meta=meta,
                          classes=acts[test.samples])
    return train, test


def _channel_indices(channels):
    if channels is None:
        return list(range(len(HAR_SIGNALS)))
    if isinstance(channels, str):
        channels = [channels]
    out = []
    for c in channels:
        if isinstance(c, str):
            if c == "total_acc":
                out += [0, 1, 2]
                continue
            if c not in HAR_SIGNALS:
                raise ValueError(f"unknown channel {c!r}")
            out.append(HAR_SIGNALS.index(c))
        else:
            if not 0 <= int(c) < len(HAR_SIGNALS):
                raise ValueError(f"channel index {c} out of range")
            out.append(int(c))
    return out


def synthetic_har(n_per_activity: int = 40, seed: int = 0, length: int = 128):
    """Stand-in HAR windows: per-activity sinusoid mixtures plus noise.

    Static activities carry a fixed gravity offset with little motion;
    dynamic ones oscillate at activity-specific frequencies.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(length) / HAR_RATE_HZ
    out = []
    for code, name in HAR_ACTIVITIES.items():
        dynamic = code <= 3
        freq = 1.0 + 0.4 * code
        gravity = np.zeros(3)
        gravity[0 if code != 6 else 2] = 1.0
        for _ in range(n_per_activity):
            phase = rng.uniform(0, 2 * np.pi, 9)
            amp = (0.3 if dynamic else 0.02) * rng.uniform(0.7, 1.3, 9)
            v = amp * np.sin(2 * np.pi * freq * t[:, None] + phase) + 0.01 * rng.standard_normal((length, 9))
            v[:, :3] += gravity
            out.append(TimeSeriesWindow(v, name))
    return out


def write_har_fixture(directory, windows, split="train") -> None:
    """Write windows in the HAR text layout (for fixtures and round-trip tests)."""
    sig_dir = os.path.join(directory, "Inertial Signals")
    os.makedirs(sig_dir, exist_ok=True)
    inv = {v: k for k, v in HAR_ACTIVITIES.items()}
    for c, name in enumerate(HAR_SIGNALS):
        np.savetxt(os.path.join(sig_dir, f"{name}_{split}.txt"),
                   np.stack([w.values[:, c] for w in windows]), fmt="%.17e")
    np.savetxt(os.path.join(directory, f"y_{split}.txt"),
               np.array([inv[w.activity] for w in windows]), fmt="%d")
