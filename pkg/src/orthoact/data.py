"""Deterministic 2-D toy classification datasets."""

import csv
import io
from dataclasses import dataclass

import numpy as np

NAMES = ("moons", "circles", "blobs")

CIRCLE_RATIO = 0.5
MOON_OFFSET = 0.5
BLOB_CENTERS = np.array([[-1.0, -1.0], [1.0, 1.0]])
BLOB_BASE_STD = 0.5


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    name: str
    noise: float
    seed: int

    @property
    def x_train(self):
        return self.features[self.train_mask]

    @property
    def y_train(self):
        return self.labels[self.train_mask]

    @property
    def x_test(self):
        return self.features[~self.train_mask]

    @property
    def y_test(self):
        return self.labels[~self.train_mask]

    def __len__(self):
        return len(self.labels)


def _moons(half):
    theta = np.linspace(0.0, np.pi, half)
    outer = np.column_stack([np.cos(theta), np.sin(theta)])
    inner = np.column_stack([1.0 - np.cos(theta), 1.0 - np.sin(theta) - MOON_OFFSET])
    return outer, inner


def _circles(half):
    theta = np.linspace(0.0, 2.0 * np.pi, half, endpoint=False)
    outer = np.column_stack([np.cos(theta), np.sin(theta)])
    return outer, CIRCLE_RATIO * outer


def generate(name, n=1000, noise=0.2, seed=0):
    """Generate ``n`` labelled points (``n/2`` per class) with a stratified 80/20 split.

    * ``moons``: two interleaved unit half-circles, the lower one shifted by
      ``(1, -0.5)``, plus isotropic Gaussian noise of std ``noise``.
    * ``circles``: class 0 on the unit circle, class 1 on radius 0.5, plus
      isotropic Gaussian noise of std ``noise``.
    * ``blobs``: Gaussian clusters at (-1, -1) and (1, 1) with per-axis std
      ``0.5 + noise``.
    """
    if name == "blobs-classification":
        name = "blobs"
    if name not in NAMES:
        raise ValueError(f"unknown dataset {name!r}; expected one of {NAMES}")
    n = int(n)
    if n < 4 or n % 2:
        raise ValueError(f"n must be an even integer >= 4, got {n}")
    if not noise >= 0:
        raise ValueError(f"noise must be >= 0, got {noise}")
    half = n // 2
    rng = np.random.default_rng(seed)

    if name == "blobs":
        std = BLOB_BASE_STD + noise
        class0 = BLOB_CENTERS[0] + std * rng.standard_normal((half, 2))
        class1 = BLOB_CENTERS[1] + std * rng.standard_normal((half, 2))
    else:
        class0, class1 = _moons(half) if name == "moons" else _circles(half)
        if noise > 0:
            class0 = class0 + noise * rng.standard_normal(class0.shape)
            class1 = class1 + noise * rng.standard_normal(class1.shape)

    features = np.vstack([class0, class1])
    labels = np.repeat(np.array([0, 1]), half)
    order = rng.permutation(n)
    features, labels = features[order], labels[order]

    train_mask = np.zeros(n, dtype=bool)
    n_train = (4 * half) // 5
    for cls in (0, 1):
        idx = np.flatnonzero(labels == cls)
        train_mask[rng.permutation(idx)[:n_train]] = True
    return Dataset(features, labels, train_mask, name, float(noise), int(seed))


def to_csv(dataset):
    """CSV text with columns ``x1,x2,label,split`` and 17 significant digits."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["x1", "x2", "label", "split"])
    for (x1, x2), y, tr in zip(dataset.features, dataset.labels, dataset.train_mask):
        writer.writerow([f"{x1:.17g}", f"{x2:.17g}", int(y), "train" if tr else "test"])
    return buf.getvalue()


def from_csv(text, name="csv", noise=float("nan"), seed=-1):
    rows = list(csv.DictReader(io.StringIO(text)))
    features = np.array([[float(r["x1"]), float(r["x2"])] for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    train_mask = np.array([r["split"] == "train" for r in rows])
    return Dataset(features, labels, train_mask, name, noise, seed)


def save_csv(dataset, path):
    with open(path, "w", newline="") as fh:
        fh.write(to_csv(dataset))


def load_csv(path, **kwargs):
    with open(path) as fh:
        return from_csv(fh.read(), **kwargs)
