"""Dataset loaders used by the tests, the benchmarks and the CLI.

Real data is preferred whenever it is available offline:

* California Housing: ``$EGD_CALIFORNIA_CSV`` (8 features + target, with a
  header row), or scikit-learn's download cache. Without either a
  surrogate with the same shape, value ranges and decimal precision is
  generated; ``Tabular.source`` records which one was used.
* MNIST: the 5,000-digit sample that ships inside mlxtend.
* Credit default: ``Default.csv`` shipped inside ISLP.
* CIFAR-style images: 32x32 patches cut from the colour photographs
  bundled with scikit-image, one photograph per class.
"""

from __future__ import annotations

import gzip
import importlib.util
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CALIFORNIA_FEATURES = ("MedInc", "HouseAge", "AveRooms", "AveBedrms", "Population", "AveOccup",
                       "Latitude", "Longitude")
CALIFORNIA_TARGET = "MedHouseVal"


@dataclass
class Tabular:
    columns: dict[str, np.ndarray]
    target: str
    source: str

    @property
    def feature_names(self) -> list[str]:
        return [k for k in self.columns if k != self.target]

    @property
    def n(self) -> int:
        return len(self.columns[self.target])

    @property
    def X(self) -> np.ndarray:
        return np.column_stack([np.asarray(self.columns[k], dtype=np.float64) for k in self.feature_names])

    @property
    def y(self) -> np.ndarray:
        return np.asarray(self.columns[self.target], dtype=np.float64)

    def subset(self, idx) -> "Tabular":
        return Tabular({k: v[idx] for k, v in self.columns.items()}, self.target, self.source)

    def split(self, test_fraction: float = 0.2, seed: int = 0) -> tuple["Tabular", "Tabular"]:
        perm = np.random.default_rng(seed).permutation(self.n)
        k = int(round(self.n * (1 - test_fraction)))
        return self.subset(perm[:k]), self.subset(perm[k:])


def _package_file(package: str, *parts: str) -> Path | None:
    spec = importlib.util.find_spec(package)
    if spec is None or not spec.submodule_search_locations:
        return None
    path = Path(list(spec.submodule_search_locations)[0], *parts)
    return path if path.exists() else None


# -- California Housing ----------------------------------------------------


def _california_real() -> Tabular | None:
    path = os.environ.get("EGD_CALIFORNIA_CSV")
    if path:
        raw = np.genfromtxt(path, delimiter=",", skip_header=1)
        cols = {name: raw[:, j] for j, name in enumerate(CALIFORNIA_FEATURES + (CALIFORNIA_TARGET,))}
        return Tabular(cols, CALIFORNIA_TARGET, f"california_housing:{path}")
    try:
        from sklearn.datasets import fetch_california_housing

        bunch = fetch_california_housing(download_if_missing=False)
    except (OSError, ImportError):
        return None
    cols = {name: bunch.data[:, j] for j, name in enumerate(CALIFORNIA_FEATURES)}
    cols[CALIFORNIA_TARGET] = bunch.target
    return Tabular(cols, CALIFORNIA_TARGET, "california_housing:sklearn")


def california_surrogate(n: int = 20640, seed: int = 0) -> Tabular:
    """Synthetic stand-in for California Housing.

    Block groups sit around two coastal metros or spread inland; counts
    (households, rooms, bedrooms, people) are integers and the averaged
    columns are true ratios of them, so they carry full float64 mantissas
    like the original. Income has 4 decimals, coordinates 2, the target is
    in units of $100k with $100 resolution and is capped at 5.00001.
    """
    rng = np.random.default_rng(seed)
    metro = rng.choice(3, size=n, p=[0.42, 0.28, 0.30])
    centers = np.array([[34.05, -118.25], [37.77, -122.42], [36.5, -119.8]])
    spread = np.array([[0.45, 0.55], [0.40, 0.35], [1.6, 1.4]])
    loc = centers[metro] + rng.normal(size=(n, 2)) * spread[metro]
    lat = np.round(np.clip(loc[:, 0], 32.54, 41.95), 2)
    lon = np.round(np.clip(loc[:, 1], -124.35, -114.31), 2)
    # distance to the nearer coastal metro, in degrees
    d_coast = np.minimum(np.hypot(lat - 34.05, lon + 118.25), np.hypot(lat - 37.77, lon + 122.42))

    income = np.exp(rng.normal(1.28 - 0.08 * d_coast, 0.45))
    income = np.round(np.clip(income, 0.4999, 15.0001), 4)
    age = np.clip(np.round(rng.normal(29 - 2.5 * d_coast, 12.5)), 1, 52).astype(np.int64)
    age[rng.random(n) < 0.05] = 52

    households = np.maximum(1, np.round(np.exp(rng.normal(6.0, 0.55, n)))).astype(np.int64)
    rooms_per = np.exp(rng.normal(np.log(4.6) + 0.05 * (income - 3.9), 0.22))
    rooms = np.maximum(households, np.round(households * rooms_per)).astype(np.int64)
    beds = np.maximum(1, np.round(households * np.exp(rng.normal(np.log(1.05), 0.09, n)))).astype(np.int64)
    occ = np.exp(rng.normal(np.log(2.9) - 0.03 * (income - 3.9), 0.25))
    pop = np.maximum(3, np.round(households * occ)).astype(np.int64)

    value = (0.45 * income + 1.6 * np.exp(-d_coast / 0.9) + 0.006 * age
             - 0.08 * (rooms_per - 4.6) + 0.25 * (beds / households - 1.05) * 4
             - 0.15 * np.log(occ) + rng.normal(0, 0.55, n) + 0.1)
    value = np.clip(np.round(value * 1000) / 1000, 0.14999, 5.00001)
    value[value >= 5.0] = 5.00001
    value[value <= 0.15] = 0.14999

    cols = {
        "MedInc": income,
        "HouseAge": age.astype(np.float64),
        "AveRooms": rooms / households,
        "AveBedrms": beds / households,
        "Population": pop.astype(np.float64),
        "AveOccup": pop / households,
        "Latitude": lat,
        "Longitude": lon,
        CALIFORNIA_TARGET: value,
    }
    return Tabular(cols, CALIFORNIA_TARGET, f"california_surrogate(seed={seed})")


def california_housing(allow_surrogate: bool = True, seed: int = 0) -> Tabular:
    real = _california_real()
    if real is not None:
        return real
    if not allow_surrogate:
        raise FileNotFoundError("California Housing not available offline; set EGD_CALIFORNIA_CSV")
    return california_surrogate(seed=seed)


# -- other tabular sets ----------------------------------------------------


def credit_default() -> Tabular:
    """ISLP ``Default``: default (0/1), student (0/1), balance, income."""
    path = _package_file("ISLP", "data", "Default.csv")
    if path is None:
        raise FileNotFoundError("ISLP is not installed; `pip install --no-deps ISLP`")
    raw = np.genfromtxt(path, delimiter=",", skip_header=1, dtype=None, encoding="utf-8")
    cols = {
        "student": np.asarray([r[1] == "Yes" for r in raw], dtype=np.int64),
        "balance": np.asarray([r[2] for r in raw], dtype=np.float64),
        "income": np.asarray([r[3] for r in raw], dtype=np.float64),
        "default": np.asarray([r[0] == "Yes" for r in raw], dtype=np.int64),
    }
    return Tabular(cols, "default", f"ISLP:{path.name}")


def synthetic_regression(kind: int, n: int = 4000, seed: int = 0) -> Tabular:
    """Five small regression problems with different column types and noise."""
    rng = np.random.default_rng(seed + 1000 * kind)
    if kind == 0:  # gaussian features, linear target
        X = rng.normal(size=(n, 4))
        y = X @ np.array([1.5, -2.0, 0.5, 0.0]) + rng.normal(0, 0.5, n)
    elif kind == 1:  # log-normal features with 3-decimal precision
        X = np.round(np.exp(rng.normal(0, 0.7, size=(n, 5))), 3)
        y = X @ np.array([2.0, 1.0, -1.0, 0.5, 0.0]) + rng.normal(0, 1.0, n)
    elif kind == 2:  # integer counts plus a float
        X = np.column_stack([rng.poisson(20, n), rng.integers(0, 100, n), rng.normal(50, 10, n)]).astype(float)
        y = 0.3 * X[:, 0] - 0.05 * X[:, 1] + 0.1 * X[:, 2] + rng.normal(0, 1.0, n)
    elif kind == 3:  # correlated uniform features
        z = rng.uniform(0, 10, size=(n, 1))
        X = np.hstack([z + rng.normal(0, 1, (n, 1)), z + rng.normal(0, 2, (n, 1)), rng.uniform(0, 10, (n, 2))])
        y = X @ np.array([1.0, 0.5, -0.7, 0.2]) + rng.normal(0, 1.5, n)
    elif kind == 4:  # heavy-tailed target
        X = rng.uniform(-3, 3, size=(n, 3))
        y = X @ np.array([3.0, -1.0, 2.0]) + rng.standard_t(4, n)
    else:
        raise ValueError("kind must be in 0..4")
    cols = {f"x{j}": X[:, j] for j in range(X.shape[1])}
    cols["y"] = y
    return Tabular(cols, "y", f"synthetic_regression({kind})")


def synthetic_classification(n: int = 6000, d: int = 6, seed: int = 0) -> Tabular:
    """Two overlapping gaussian classes, labels 0/1."""
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    mu = np.linspace(0.6, 0.1, d)
    X = rng.normal(size=(n, d)) + np.outer(2 * y - 1, mu)
    cols = {f"x{j}": np.round(X[:, j], 4) for j in range(d)}
    cols["label"] = y.astype(np.int64)
    return Tabular(cols, "label", "synthetic_classification")


# -- images ------------------------------------------------------------------


def mnist_sample() -> tuple[np.ndarray, np.ndarray]:
    """The 5,000-image MNIST sample bundled with mlxtend: ``(images[N,28,28] uint8, labels)``."""
    path = _package_file("mlxtend", "data", "data", "mnist_5k.csv.gz")
    if path is None:
        raise FileNotFoundError("mlxtend is not installed; `pip install --no-deps mlxtend`")
    with gzip.open(path, "rt") as fh:
        raw = np.loadtxt(fh, delimiter=",", dtype=np.int64)
    return raw[:, :-1].reshape(-1, 28, 28).astype(np.uint8), raw[:, -1]


def _skimage_photos() -> dict[str, np.ndarray]:
    from skimage import data

    out = {}
    for name in ("astronaut", "chelsea", "coffee", "hubble_deep_field", "immunohistochemistry", "retina",
                 "rocket"):
        out[name] = getattr(data, name)()
    out["motorcycle"] = data.stereo_motorcycle()[0]
    return out


def cifar_style(per_class: int = 500, seed: int = 0, size: int = 32) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Random ``size x size`` RGB crops, one source photograph per class.

    Crop windows are 48-160 px and are area-averaged down to ``size``.
    Returns ``(images[N,size,size,3] uint8, labels, class_names)``.
    """
    from skimage.transform import resize

    rng = np.random.default_rng(seed)
    photos = _skimage_photos()
    images, labels = [], []
    for label, (_, photo) in enumerate(photos.items()):
        h, w = photo.shape[:2]
        for _ in range(per_class):
            win = int(rng.integers(48, min(160, h, w) + 1))
            r, c = rng.integers(0, h - win + 1), rng.integers(0, w - win + 1)
            crop = photo[r:r + win, c:c + win, :3]
            small = resize(crop, (size, size), anti_aliasing=True, preserve_range=True)
            images.append(np.clip(np.rint(small), 0, 255).astype(np.uint8))
            labels.append(label)
    return np.stack(images), np.asarray(labels, dtype=np.int64), list(photos)
