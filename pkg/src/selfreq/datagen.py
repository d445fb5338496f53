"""Synthetic labeled datasets with known relevant features.

Two generators: independent Gaussian features where the relevant ones carry a
class-dependent mean shift, and correlated feature vectors drawn from a
mean/covariance fitted to a source matrix, with a label effect subtracted
inside a region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .forest import Dataset
from .null_model import ParameterError


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(None if seed is None else seed % 2**64)


def balanced_labels(sample_count: int, rng: np.random.Generator) -> np.ndarray:
    """floor(S/2) ones and the rest zeros, shuffled."""
    y = np.zeros(sample_count, dtype=np.int8)
    y[: sample_count // 2] = 1
    rng.shuffle(y)
    return y


def _check_rho(rho: float) -> None:
    if not 0 <= rho < 1:
        raise ParameterError(f"rho must lie in [0, 1), got {rho}")


def effect_size(rho: float) -> float:
    """Class mean difference, in standard deviations, giving point-biserial correlation rho."""
    _check_rho(rho)
    return 2 * rho / math.sqrt(1 - rho * rho)


@dataclass(frozen=True)
class IndepGenConfig:
    sample_count: int
    feature_count: int
    relevant_count: int = 0
    rho: float = 0.5
    sigma: float = 5.0
    rng_seed: int = 0

    def __post_init__(self):
        _check_rho(self.rho)
        if self.sample_count < 2:
            raise ParameterError("sample_count must be >= 2")
        if not 0 <= self.relevant_count <= self.feature_count:
            raise ParameterError("relevant_count must lie in [0, feature_count]")
        if self.sigma <= 0:
            raise ParameterError("sigma must be positive")


def gen_independent(config: IndepGenConfig) -> tuple[Dataset, np.ndarray]:
    """Independent N(0, sigma^2) features; the last N get a mean shift on class 1.

    Returns the dataset and the sorted indices of the relevant features.
    """
    rng = _rng(config.rng_seed)
    S, F, N = config.sample_count, config.feature_count, config.relevant_count
    y = balanced_labels(S, rng)
    X = rng.normal(0.0, config.sigma, size=(S, F))
    shift = effect_size(config.rho) * config.sigma
    if N:
        X[:, F - N :] += shift * y[:, None]
    return Dataset(X, y), np.arange(F - N, F)


@dataclass(frozen=True)
class LatentModel:
    mean: np.ndarray
    factor: np.ndarray  # U @ diag(s), F x M
    diag_cov: np.ndarray

    @property
    def feature_count(self) -> int:
        return self.mean.size

    @property
    def source_columns(self) -> int:
        return self.factor.shape[1]

    def covariance(self) -> np.ndarray:
        return self.factor @ self.factor.T / self.source_columns


def fit_latent_model(source) -> LatentModel:
    """Demean the F x M source by its column mean and factor it with an SVD."""
    Xt = np.asarray(source, dtype=float)
    if Xt.ndim != 2 or Xt.shape[1] < 2:
        raise ParameterError("source must be an F x M matrix with M >= 2")
    if not np.all(np.isfinite(Xt)):
        raise ParameterError("source contains non-finite entries")
    if not np.any(Xt):
        raise ParameterError("source matrix has rank 0")
    M = Xt.shape[1]
    mu = Xt.mean(axis=1)
    X = Xt - mu[:, None]
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    factor = U * s
    if factor.shape[1] < M:
        # F < M: pad so v keeps one coordinate per source column
        factor = np.hstack([factor, np.zeros((factor.shape[0], M - factor.shape[1]))])
    diag = np.einsum("ij,ij->i", X, X) / M
    return LatentModel(mu, factor, diag)


@dataclass(frozen=True)
class Region:
    mask: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        object.__setattr__(self, "mask", m)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @classmethod
    def empty(cls, feature_count: int) -> "Region":
        return cls(np.zeros(feature_count, dtype=bool))


def gen_correlated(
    model: LatentModel, region: Region, rho: float, sample_count: int, rng_seed=0
) -> tuple[Dataset, np.ndarray]:
    """Draw x = (U S) v + mu - y * r * effect * sqrt(diag C), v ~ N(0, I/M)."""
    _check_rho(rho)
    if region.mask.shape != (model.feature_count,):
        raise ParameterError("region length does not match the model")
    rng = _rng(rng_seed)
    M = model.source_columns
    y = balanced_labels(sample_count, rng)
    V = rng.standard_normal((sample_count, M)) / math.sqrt(M)
    X = V @ model.factor.T + model.mean
    if region.size and rho > 0:
        delta = effect_size(rho) * np.sqrt(model.diag_cov) * region.mask
        X -= y[:, None] * delta
    return Dataset(X, y), region.indices


def make_synthetic_source(grid_size: int, smoothness: float, columns: int, rng_seed=0) -> np.ndarray:
    """Smooth Gaussian random fields on a grid, one per column, plus a smooth mean surface.

    Returns an (grid_size**2) x columns matrix.
    """
    if columns < 2:
        raise ParameterError("need at least 2 columns")
    if smoothness < 0:
        raise ParameterError("smoothness must be nonnegative")
    rng = _rng(rng_seed)
    g = grid_size
    ii, jj = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    base = 2.5 + 0.4 * np.sin(2 * np.pi * ii / g) * np.cos(np.pi * jj / g)
    noise = rng.standard_normal((columns, g, g))
    if smoothness > 0:
        fields = gaussian_filter(noise, sigma=(0, smoothness, smoothness), mode="wrap")
        # keep unit marginal variance regardless of bandwidth
        fields /= fields.reshape(columns, -1).std(axis=1).mean()
    else:
        fields = noise
    out = base[None] + 0.3 * fields
    return out.reshape(columns, g * g).T.copy()


def patch_region(grid_size: int, fraction: float, center=None) -> Region:
    """Contiguous near-square patch covering round(fraction * F) grid cells."""
    F = grid_size * grid_size
    n = int(round(fraction * F))
    if n == 0:
        return Region.empty(F)
    ci, cj = center if center is not None else (grid_size // 2, grid_size // 2)
    ii, jj = np.meshgrid(np.arange(grid_size), np.arange(grid_size), indexing="ij")
    # Chebyshev distance then row-major index gives a deterministic square-ish patch
    dist = np.maximum(np.abs(ii - ci), np.abs(jj - cj)).ravel()
    order = np.lexsort((np.arange(F), dist))
    mask = np.zeros(F, dtype=bool)
    mask[order[:n]] = True
    return Region(mask)
