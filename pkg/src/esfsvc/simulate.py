"""Synthetic SVC scenarios on a unit-square grid, and estimate scoring.

The default design has six coefficients: a spatially varying intercept
(b = 0, tau² = 1, an assumption the generator makes explicit), three SVC
slopes (b = 1, 2, −0.5 with tau² = 1, 2, 1: one strong, two weak), and
two constant slopes (b = 1, −1). Covariates are half white noise, half a
unit-variance GP with range 1; the noise is standard normal.

All randomness derives from one integer seed through named Philox
streams: stream (0, k) draws coefficient process k, stream (1, k) the
k-th covariate, stream (2, 0) the noise. Scenarios are therefore
bit-reproducible and streams never entangle across k.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from .geometry import Dataset, pairwise_distance

DEFAULT_B = (0.0, 1.0, 2.0, -0.5, 1.0, -1.0)
DEFAULT_TAU2 = (1.0, 1.0, 2.0, 1.0, 0.0, 0.0)

_JITTER = 1e-10
_JITTER_STEPS = 3


@dataclass(frozen=True)
class SimConfig:
    """Scenario parameters.

    ``include_constant_covariates`` False drops the trailing two
    constant-coefficient terms of the design (the small-scale degeneracy
    experiments use only the intercept and three SVC slopes).
    """

    grid_side: int
    b: tuple = DEFAULT_B
    tau2: tuple = DEFAULT_TAU2
    r: object = 1.0          # scalar or per-coefficient tuple
    seed: int = 0
    include_constant_covariates: bool = True

    def __post_init__(self):
        if self.grid_side < 2:
            raise InputError("grid_side must be at least 2")
        b = tuple(float(v) for v in np.atleast_1d(self.b))
        tau2 = tuple(float(v) for v in np.atleast_1d(self.tau2))
        if len(b) != len(tau2) or not b:
            raise InputError("b and tau2 must be equal-length, nonempty")
        if any(t < 0 for t in tau2):
            raise InputError("tau2 must be nonnegative")
        if np.isscalar(self.r):
            r = (float(self.r),) * len(b)
        else:
            r = tuple(float(v) for v in self.r)
            if len(r) != len(b):
                raise InputError("per-coefficient r must match b in length")
        if any(v <= 0 for v in r):
            raise InputError("r must be positive")
        if not self.include_constant_covariates and len(b) < 3:
            raise InputError(
                "dropping the constant-coefficient terms needs at least 3 entries")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "tau2", tau2)
        object.__setattr__(self, "r", r)

    @property
    def k(self):
        full = len(self.b)
        return full if self.include_constant_covariates else full - 2

    @property
    def n(self):
        return self.grid_side ** 2


@dataclass(frozen=True)
class SimTruth:
    """A generated dataset together with its true coefficient surfaces."""

    dataset: Dataset
    beta_true: np.ndarray   # (N, K)

    def __post_init__(self):
        beta = np.asarray(self.beta_true, dtype=float)
        if beta.shape != (self.dataset.n, self.dataset.k):
            raise InputError("beta_true must be N×K matching the dataset")
        object.__setattr__(self, "beta_true", beta)


def _seedseq(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def _stream(seed, domain, index):
    return np.random.Generator(np.random.Philox(
        np.random.SeedSequence(entropy=seed, spawn_key=(domain, index))))


def grid_sites(side):
    """side² sites on the unit square, boundary inclusive, spacing
    1/(side−1), x varying fastest."""
    if side < 2:
        raise InputError("side must be at least 2")
    coords = np.linspace(0.0, 1.0, side)
    xx, yy = np.meshgrid(coords, coords)
    return np.column_stack([xx.ravel(), yy.ravel()])


def sample_gp(sites, variance, r, seed):
    """One draw from a zero-mean GP with covariance variance·exp(−d/r).

    The covariance factorization retries with diagonal jitter 1e−10,
    escalating tenfold up to 3 times before giving up.
    """
    if variance < 0:
        raise InputError("variance must be nonnegative")
    if not r > 0:
        raise InputError("r must be positive")
    sites = np.asarray(sites, dtype=float)
    n = sites.shape[0]
    if variance == 0:
        return np.zeros(n)
    # unlike the connectivity convention, the covariance keeps its diagonal
    cov = variance * np.exp(-pairwise_distance(sites) / r)
    factor = None
    jitter = 0.0
    for step in range(_JITTER_STEPS + 1):
        try:
            factor = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter = _JITTER * 10 ** step
    if factor is None:
        raise NumericalError(
            f"GP covariance is not factorizable even with jitter {jitter:g}")
    rng = np.random.Generator(np.random.Philox(_seedseq(seed)))
    return factor @ rng.standard_normal(n)


def generate_covariate(sites, seed):
    """Covariate draw: 0.5·(iid standard normal) + 0.5·(unit GP, range 1)."""
    ss = _seedseq(seed)
    s_white, s_gp = ss.spawn(2)
    rng = np.random.Generator(np.random.Philox(s_white))
    white = rng.standard_normal(np.asarray(sites).shape[0])
    return 0.5 * white + 0.5 * sample_gp(sites, 1.0, 1.0, s_gp)


def generate_scenario(config):
    """Assemble a SimTruth: sites, covariates, true SVC surfaces, response."""
    k = config.k
    b = np.asarray(config.b[:k])
    tau2 = np.asarray(config.tau2[:k])
    r = np.asarray(config.r[:k])
    sites = grid_sites(config.grid_side)
    n = sites.shape[0]

    X = np.ones((n, k))
    for j in range(1, k):
        X[:, j] = generate_covariate(
            sites, np.random.SeedSequence(entropy=config.seed, spawn_key=(1, j)))

    beta = np.tile(b, (n, 1))
    for j in range(k):
        if tau2[j] > 0:
            beta[:, j] += sample_gp(
                sites, tau2[j], r[j],
                np.random.SeedSequence(entropy=config.seed, spawn_key=(0, j)))

    noise = _stream(config.seed, 2, 0).standard_normal(n)
    y = (X * beta).sum(axis=1) + noise
    names = ("const",) + tuple(f"x{j}" for j in range(1, k))
    return SimTruth(dataset=Dataset(sites=sites, y=y, X=X, names=names),
                    beta_true=beta)


def score(beta_hat, beta_true):
    """Per-coefficient RMSE and MAE of estimated surfaces."""
    bh = np.asarray(beta_hat, dtype=float)
    bt = np.asarray(beta_true, dtype=float)
    if bh.ndim != 2:
        raise InputError(f"surfaces must be (N, K), got {bh.shape}")
    if bh.shape != bt.shape:
        raise InputError(f"shape mismatch: {bh.shape} vs {bt.shape}")
    diff = bh - bt
    rmse = np.sqrt((diff ** 2).mean(axis=0))
    mae = np.abs(diff).mean(axis=0)
    return rmse, mae
