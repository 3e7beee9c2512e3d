"""Synthetic gamma benchmark: generator, Bayes-optimal oracle, dataset files.

Generative process, per bag: label y ~ Uniform(4, 8); every coordinate of
every point is (1/y) * Gamma(shape = y/2, rate = 1/2) + Normal(0, noise_sd^2).
Under the rate reading of the second gamma parameter each coordinate has mean
1 and variance 2/y, so the label is carried purely by higher-order shape, not
by the mean.  The scale reading is available behind `gamma_convention` but the
rate reading is the default.

The Bayes-optimal oracle computes the true posterior over y on a uniform grid:
with no additive noise the gamma likelihood reduces to sufficient statistics
(sum x, sum log x); with noise the gamma-normal convolution density is
tabulated once per (noise_sd, convention) by Gauss-Hermite quadrature and
bags are scored against the table.

Datasets are newline-delimited records, one bag per line, with a sidecar
manifest carrying per-file checksums.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .embeddings import Bag, BagDataset
from .errors import DataFormatError, InvalidArgumentError
from .predictive import PredictiveDistribution, grid_predictive

SPLIT_NAMES = ("train", "early", "val", "test")
MIXED_SIZES = (5, 20, 100, 1000)
LABEL_LO, LABEL_HI = 4.0, 8.0


@dataclass(frozen=True)
class GammaConfig:
    n_train: int = 1000
    n_early: int = 500
    n_val: int = 500
    n_test: int = 1000
    dim: int = 5
    fixed_size: Optional[int] = None  # Fixed(N) bag sizes
    s5: Optional[float] = None  # Mixed sizes: s5% at 5, 25% at 20, 25% at 100, rest at 1000
    noise_sd: float = 0.0
    seed: int = 0
    gamma_convention: str = "rate"

    def __post_init__(self):
        if (self.fixed_size is None) == (self.s5 is None):
            raise InvalidArgumentError("exactly one of fixed_size and s5 must be set")
        if self.fixed_size is not None and self.fixed_size < 1:
            raise InvalidArgumentError("fixed_size must be >= 1")
        if self.s5 is not None and not (0.0 <= self.s5 <= 50.0):
            raise InvalidArgumentError("s5 must lie in [0, 50]")
        if self.noise_sd < 0:
            raise InvalidArgumentError("noise_sd must be nonnegative")
        if self.dim < 1:
            raise InvalidArgumentError("dim must be >= 1")
        if min(self.n_train, self.n_early, self.n_val, self.n_test) < 1:
            raise InvalidArgumentError("split sizes must be >= 1")
        if self.gamma_convention not in ("rate", "scale"):
            raise InvalidArgumentError("gamma_convention must be 'rate' or 'scale'")

    @property
    def counts(self) -> dict:
        return {
            "train": self.n_train,
            "early": self.n_early,
            "val": self.n_val,
            "test": self.n_test,
        }

    def to_dict(self) -> dict:
        return {
            "n_train": self.n_train,
            "n_early": self.n_early,
            "n_val": self.n_val,
            "n_test": self.n_test,
            "dim": self.dim,
            "fixed_size": self.fixed_size,
            "s5": self.s5,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "gamma_convention": self.gamma_convention,
        }


def mixed_size_counts(n: int, s5: float) -> dict:
    """Exact deterministic bag counts per size (largest-remainder apportionment)."""
    fracs = {5: s5 / 100.0, 20: 0.25, 100: 0.25, 1000: (50.0 - s5) / 100.0}
    quotas = {size: n * f for size, f in fracs.items()}
    counts = {size: int(math.floor(q)) for size, q in quotas.items()}
    short = n - sum(counts.values())
    remainders = sorted(
        MIXED_SIZES, key=lambda size: quotas[size] - counts[size], reverse=True
    )
    for size in remainders[:short]:
        counts[size] += 1
    return counts


def _bag_sizes(n: int, config: GammaConfig, rng) -> np.ndarray:
    if config.fixed_size is not None:
        return np.full(n, config.fixed_size, dtype=int)
    counts = mixed_size_counts(n, config.s5)
    sizes = np.concatenate([np.full(c, size, dtype=int) for size, c in counts.items()])
    return rng.permutation(sizes)


def gamma_generate(config: GammaConfig) -> dict:
    """Generate the four splits from independent RNG substreams.

    Deterministic given config.seed; each split's stream is independent, so
    changing one split's count leaves the others byte-identical.
    """
    children = np.random.SeedSequence(config.seed).spawn(len(SPLIT_NAMES))
    gamma_scale = 2.0 if config.gamma_convention == "rate" else 0.5
    splits = {}
    for name, child in zip(SPLIT_NAMES, children):
        rng = np.random.default_rng(child)
        n = config.counts[name]
        sizes = _bag_sizes(n, config, rng)
        bags = []
        for i in range(n):
            y = rng.uniform(LABEL_LO, LABEL_HI)
            pts = rng.gamma(shape=y / 2.0, scale=gamma_scale, size=(sizes[i], config.dim)) / y
            if config.noise_sd > 0:
                pts = pts + rng.normal(0.0, config.noise_sd, size=pts.shape)
            bags.append(Bag(id=f"{name}-{i:05d}", points=pts, y=y))
        splits[name] = BagDataset(bags)
    return splits


# -- Bayes-optimal oracle ----------------------------------------------------

GRID_SIZE = 2048
X_GRID_SIZE = 4096
GH_NODES = 64


def _x_rate(y: np.ndarray, convention: str) -> np.ndarray:
    # coordinate value x = g / y; dividing a Gamma by y multiplies its rate by y
    if convention == "rate":
        return y / 2.0  # g has rate 1/2
    return 2.0 * y  # g has rate 2 (scale 1/2)


class BayesOptimalOracle:
    """True posterior over the label under the gamma generative process.

    Posterior over y on a uniform grid; the prior is Uniform(4, 8).  For
    noise_sd > 0 a log-density table over (y, x) is built once via
    Gauss-Hermite quadrature of the gamma-normal convolution and reused for
    every bag; values outside the table's x-range fall back to exact
    quadrature.
    """

    def __init__(
        self,
        noise_sd: float,
        gamma_convention: str = "rate",
        n_grid: int = GRID_SIZE,
        x_grid_size: int = X_GRID_SIZE,
        gh_nodes: int = GH_NODES,
    ):
        if noise_sd < 0:
            raise InvalidArgumentError("noise_sd must be nonnegative")
        self.noise_sd = float(noise_sd)
        self.convention = gamma_convention
        self.grid = np.linspace(LABEL_LO, LABEL_HI, n_grid)
        self.shape = self.grid / 2.0
        self.rate = _x_rate(self.grid, gamma_convention)
        self.log_norm = self.shape * np.log(self.rate) - gammaln(self.shape)
        self._table = None
        self._x_grid = None
        if self.noise_sd > 0:
            self._gh_x, self._gh_w = np.polynomial.hermite.hermgauss(gh_nodes)
            self._build_table(x_grid_size)

    def _gamma_logpdf(self, t: np.ndarray) -> np.ndarray:
        """log Gamma(t; shape, rate) for t broadcast against the y-grid axis 0."""
        with np.errstate(divide="ignore", invalid="ignore"):
            lp = (
                (self.shape[:, None] - 1.0) * np.log(t)
                - self.rate[:, None] * t
                + self.log_norm[:, None]
            )
        return np.where(t > 0, lp, -np.inf)

    def _build_table(self, x_grid_size: int):
        sd = self.noise_sd
        lo = -6.0 * sd
        hi = 12.0 + 6.0 * sd
        x = np.linspace(lo, hi, x_grid_size)
        dens = np.zeros((self.grid.size, x_grid_size))
        # p(x|y) = E_{u~N(0,sd^2)} Gamma(x - u); Gauss-Hermite over u
        for xi, wi in zip(self._gh_x, self._gh_w):
            t = x[None, :] - math.sqrt(2.0) * sd * xi
            dens += wi * np.exp(self._gamma_logpdf(t))
        dens /= math.sqrt(math.pi)
        self._table = np.log(np.maximum(dens, 1e-300))
        self._x_grid = x

    def _noisy_loglik_exact(self, values: np.ndarray) -> np.ndarray:
        """Exact per-value convolution for the rare values beyond the table."""
        sd = self.noise_sd
        out = np.zeros(self.grid.size)
        for v in values:
            t = v - math.sqrt(2.0) * sd * self._gh_x  # (Q,)
            dens = (np.exp(self._gamma_logpdf(t[None, :])) * self._gh_w).sum(axis=1)
            out += np.log(np.maximum(dens / math.sqrt(math.pi), 1e-300))
        return out

    def loglik_grid(self, points: np.ndarray) -> np.ndarray:
        """Log-likelihood of a bag's points at every grid label."""
        values = np.asarray(points, dtype=float).ravel()
        if self.noise_sd == 0:
            if np.any(values <= 0):
                raise InvalidArgumentError(
                    "coordinate <= 0 violates the gamma support when noise_sd = 0"
                )
            n_v = values.size
            s_log = float(np.sum(np.log(values)))
            s_x = float(np.sum(values))
            return (self.shape - 1.0) * s_log - self.rate * s_x + n_v * self.log_norm
        x = self._x_grid
        inside = (values >= x[0]) & (values <= x[-1])
        loglik = np.zeros(self.grid.size)
        if np.any(inside):
            v = values[inside]
            pos = (v - x[0]) / (x[1] - x[0])
            j = np.clip(pos.astype(int), 0, x.size - 2)
            frac = pos - j
            weights = np.zeros(x.size)
            np.add.at(weights, j, 1.0 - frac)
            np.add.at(weights, j + 1, frac)
            loglik = self._table @ weights
        if np.any(~inside):
            loglik = loglik + self._noisy_loglik_exact(values[~inside])
        return loglik

    def posterior(self, points: np.ndarray) -> PredictiveDistribution:
        lp = self.loglik_grid(points)
        w = np.exp(lp - np.max(lp))
        return grid_predictive(self.grid, w)

    def flat_posterior(self) -> PredictiveDistribution:
        """The no-data limit: the Uniform(4, 8) prior (mean 6, variance 4/3)."""
        return grid_predictive(self.grid, np.ones_like(self.grid))


_ORACLE_CACHE: dict = {}


def bayes_optimal_predict(
    bag: Bag, noise_sd: float, gamma_convention: str = "rate"
) -> PredictiveDistribution:
    """Posterior over the label for one bag under the true generative process."""
    key = (float(noise_sd), gamma_convention)
    oracle = _ORACLE_CACHE.get(key)
    if oracle is None:
        oracle = BayesOptimalOracle(noise_sd, gamma_convention)
        _ORACLE_CACHE.clear()  # tables are ~70 MB; keep one
        _ORACLE_CACHE[key] = oracle
    return oracle.posterior(bag.points)


# -- dataset files -----------------------------------------------------------


def _bag_record(bag: Bag) -> str:
    rec = {"id": bag.id}
    if bag.y is not None:
        rec["y"] = bag.y
    rec["points"] = [[float(v) for v in row] for row in bag.points]
    return json.dumps(rec, separators=(",", ":"))


def write_dataset(dataset: BagDataset, path) -> None:
    """One bag per line; floats serialized exactly (shortest round-trip decimal)."""
    with open(path, "w") as fh:
        for bag in dataset:
            fh.write(_bag_record(bag))
            fh.write("\n")


def _parse_bag_line(line: str, lineno: int, path) -> Bag:
    where = f"{path}:{lineno}"
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{where}: invalid record ({e.msg})") from None
    if not isinstance(rec, dict):
        raise DataFormatError(f"{where}: bag record must be an object")
    bag_id = rec.get("id")
    if not isinstance(bag_id, str) or not bag_id:
        raise DataFormatError(f"{where}: missing or invalid 'id'")
    y = rec.get("y")
    if y is not None and not isinstance(y, (int, float)):
        raise DataFormatError(f"{where}: 'y' must be a number")
    points = rec.get("points")
    if not isinstance(points, list) or len(points) == 0:
        raise DataFormatError(f"{where}: bag must contain at least one point")
    width = None
    for row in points:
        if not isinstance(row, list) or not all(isinstance(v, (int, float)) for v in row):
            raise DataFormatError(f"{where}: points must be arrays of numbers")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise DataFormatError(f"{where}: inconsistent point dimension")
    if width == 0:
        raise DataFormatError(f"{where}: points must have at least one coordinate")
    try:
        return Bag(id=bag_id, points=np.array(points, dtype=float), y=y)
    except InvalidArgumentError as e:
        raise DataFormatError(f"{where}: {e}") from None


def read_dataset(path) -> BagDataset:
    bags = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            bags.append(_parse_bag_line(line, lineno, path))
    if not bags:
        raise DataFormatError(f"{path}: dataset is empty")
    try:
        return BagDataset(bags)
    except InvalidArgumentError as e:
        raise DataFormatError(f"{path}: {e}") from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


MANIFEST_NAME = "manifest.json"


def write_splits(splits: dict, out_dir, config: Optional[GammaConfig] = None) -> dict:
    """Write every split plus a manifest with checksums; returns the manifest."""
    os.makedirs(out_dir, exist_ok=True)
    checksums = {}
    counts = {}
    dim = None
    for name, ds in splits.items():
        fname = f"{name}.ndjson"
        fpath = os.path.join(out_dir, fname)
        write_dataset(ds, fpath)
        checksums[fname] = sha256_file(fpath)
        counts[name] = len(ds)
        dim = ds.dim
    manifest = {
        "format_version": 1,
        "generator": "gamma" if config is not None else "external",
        "dim": dim,
        "counts": counts,
        "checksums": checksums,
    }
    if config is not None:
        manifest["config"] = config.to_dict()
    with open(os.path.join(out_dir, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def read_manifest(data_dir) -> dict:
    path = os.path.join(data_dir, MANIFEST_NAME)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise DataFormatError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid manifest ({e.msg})") from None
    if not isinstance(manifest, dict) or "checksums" not in manifest:
        raise DataFormatError(f"{path}: manifest missing 'checksums'")
    return manifest


def load_splits(data_dir, names=SPLIT_NAMES, verify: bool = True) -> dict:
    """Read named splits from a directory, verifying manifest checksums."""
    manifest = read_manifest(data_dir) if verify else None
    splits = {}
    for name in names:
        fname = f"{name}.ndjson"
        fpath = os.path.join(data_dir, fname)
        if verify:
            recorded = manifest["checksums"].get(fname)
            if recorded is None:
                raise DataFormatError(f"{data_dir}: manifest lists no checksum for {fname}")
            actual = sha256_file(fpath)
            if actual != recorded:
                raise DataFormatError(
                    f"{fpath}: checksum mismatch (file changed since generation?)"
                )
        splits[name] = read_dataset(fpath)
    return splits
