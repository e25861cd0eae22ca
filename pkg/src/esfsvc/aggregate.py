"""Prior weights, product-of-experts fusion, and the aggregated fit.

The pipeline: partition the sites by k-means, give every site a prior
weight for each sub-model (indicator weights, or distance-decaying
weights with a cutoff at threshold_factor times the cluster's kernel
range, plus an optional global sub-model with unit unnormalized weight),
fit the sub-models independently on their supports, then fuse:

    posterior weight  w_c(s_i)/σ̂_c²
    β_k*(s_i) = Σ_c w_c(s_i;σ̂_c²) β_{k,c}(s_i) / Σ_c w_c(s_i;σ̂_c²)
    σ*²(s_i)  = (Σ_c w_c(s_i)/σ̂_c²)^{-1}

Constant (non-SVC) coefficients are averaged with total posterior mass
per sub-model instead of per-site weights. The total restricted
log-likelihood is the sum over sub-models and BIC charges C(3K+1)
parameters.
"""

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from multiprocessing import get_context

import numpy as np
from scipy.spatial import cKDTree

from .basis import ConnectivityConfig, connectivity_matrix, moran_basis
from .errors import ConfigError, CoverageError, DegenerateGeometryError, EsfError, InputError
from .estimator import FitOptions, build_design, fit_submodel, predict_sub_svc
from .geometry import choose_cluster_count, kmeans_partition, mst_range, pairwise_distance


@dataclass(frozen=True)
class WeightScheme:
    """How prior weights link sites to sub-models."""

    variant: str                    # "disjoint" or "overlap"
    threshold_factor: float = 2.2   # cutoff multiple of r_c (overlap only)
    include_global: bool = False

    def __post_init__(self):
        if self.variant not in ("disjoint", "overlap"):
            raise ConfigError(f"unknown weight variant {self.variant!r}")
        if not self.threshold_factor > 0:
            raise ConfigError("threshold_factor must be positive")


def variant_scheme(name, threshold_factor=2.2):
    """The four standard configurations: l0 (disjoint), gl0 (disjoint +
    global), l (overlap), gl (overlap + global)."""
    key = name.lower()
    if key not in ("l0", "gl0", "l", "gl"):
        raise ConfigError(f"unknown variant {name!r}; expected l0, gl0, l, gl")
    return WeightScheme(
        variant="disjoint" if key.endswith("0") else "overlap",
        threshold_factor=threshold_factor,
        include_global=key.startswith("g"),
    )


@dataclass(frozen=True)
class WeightMatrix:
    """Normalized prior weights, one row per site, one column per
    sub-model (global column last when present)."""

    entries: np.ndarray    # (N, C) rows summing to 1
    W: np.ndarray          # (C,) column totals
    supports: tuple        # per-model arrays of site indices with w > 0
    include_global: bool

    @property
    def n_models(self):
        return self.entries.shape[1]


@dataclass(frozen=True)
class AggregatedFit:
    """Fused output of all sub-models plus the plumbing that produced it."""

    sub_fits: tuple        # SubModelFit per sub-model, global last
    beta_star: np.ndarray  # (N, K) fused coefficient surfaces
    sigma2_star: np.ndarray  # (N,) fused noise variance
    loglik: float          # Σ_c ℓ(θ̂_c)
    bic: float
    n_params: int          # C(3K+1)
    partition: object      # ClusterPartition
    weights: WeightMatrix
    ranges: tuple          # kernel range per sub-model (global last)
    timings: dict          # stage wall-clock seconds (not part of the model)


@dataclass(frozen=True)
class AggregateConfig:
    """Settings for fit_aggregated."""

    scheme: WeightScheme = WeightScheme("overlap", include_global=True)
    target_cluster_size: int = 600
    n_clusters: int = None   # explicit cluster count, overriding the target
    global_l: int = 200
    svc: tuple = None        # per-covariate SVC flags; None = all enabled
    seed: int = 0
    workers: int = 1
    dense_cap: int = None    # forwarded to moran_basis when set
    ridge: bool = False
    maxiter: int = 200
    ftol: float = 1e-8


def prior_weights(partition, sites, ranges, scheme):
    """Row-normalized prior weights per the scheme.

    Overlap weights decay as exp(−d_{i(c)}/r_c) from the nearest core
    member of cluster c and are zero beyond threshold_factor·r_c
    (inclusive at the boundary, so a site exactly at the cutoff keeps its
    weight). The global column, when enabled, enters the normalization
    with unnormalized weight 1.
    """
    sites = np.asarray(sites, dtype=float)
    n = sites.shape[0]
    cl = partition.n_clusters
    ranges = np.asarray(ranges, dtype=float)
    if ranges.shape != (cl,):
        raise InputError(f"need one range per cluster, got {ranges.shape}")
    if np.any(ranges <= 0):
        raise InputError("cluster ranges must be positive")

    cols = cl + (1 if scheme.include_global else 0)
    unnorm = np.zeros((n, cols))
    if scheme.variant == "disjoint":
        unnorm[np.arange(n), partition.assignments] = 1.0
    else:
        for c in range(cl):
            members = partition.members(c)
            d, _ = cKDTree(sites[members]).query(sites)
            w = np.exp(-d / ranges[c])
            w[d > scheme.threshold_factor * ranges[c]] = 0.0
            unnorm[:, c] = w
    if scheme.include_global:
        unnorm[:, cl] = 1.0

    rowsum = unnorm.sum(axis=1)
    uncovered = np.flatnonzero(rowsum == 0)
    if uncovered.size:
        raise CoverageError(
            f"{uncovered.size} site(s) have zero total prior weight "
            f"(first: {uncovered[0]})")
    entries = unnorm / rowsum[:, None]
    return WeightMatrix(
        entries=entries,
        W=entries.sum(axis=0),
        supports=tuple(np.flatnonzero(entries[:, j] > 0) for j in range(cols)),
        include_global=scheme.include_global,
    )


def posterior_weights(prior, sigma2):
    """w_c(s_i)/σ̂_c², not renormalized (fusion formulas normalize)."""
    w = np.asarray(prior, dtype=float)
    s = np.asarray(sigma2, dtype=float)
    if np.any(s <= 0):
        raise InputError("noise variances must be positive")
    return w / s


def aggregate_svc(sub_surfaces, posterior):
    """Fused SVC surfaces: per-site weighted average of C sub-model
    surfaces (C×N×K) with posterior weights (N×C). Surface values at
    zero-weight sites are ignored."""
    surf = np.asarray(sub_surfaces, dtype=float)
    post = np.asarray(posterior, dtype=float)
    if surf.ndim != 3 or post.shape != (surf.shape[1], surf.shape[0]):
        raise InputError(
            f"shape mismatch: surfaces {surf.shape}, posterior {post.shape}")
    total = post.sum(axis=1)
    if np.any(total <= 0):
        raise CoverageError("a site has no positive posterior weight")
    masked = np.where(post.T[:, :, None] > 0, surf, 0.0)
    return np.einsum("cnk,nc->nk", masked, post) / total[:, None]


def aggregate_variance(prior, sigma2):
    """Fused noise variance σ*² = (Σ_c w_c/σ_c²)^{-1}; accepts one row or
    the whole weight matrix."""
    w = np.asarray(prior, dtype=float)
    s = np.asarray(sigma2, dtype=float)
    if np.any(s <= 0):
        raise InputError("noise variances must be positive")
    precision = w @ (1.0 / s)
    if np.any(precision <= 0):
        raise CoverageError("zero total weight; fused variance undefined")
    out = 1.0 / precision
    return float(out) if np.ndim(out) == 0 else out


def aggregate_constant(sub_fits, weight_matrix, sigma2, k):
    """Constant-coefficient estimate b_k*: double-sum average of the
    sub-model b_{k,c} with weights w_c(s_i)/σ_c². The inner sum over sites
    collapses to the per-model posterior mass W_c/σ_c²."""
    flags = np.array([f.params.svc_enabled[k] for f in sub_fits])
    if flags.any():
        if not flags.all():
            raise ConfigError(
                f"covariate {k} is SVC in some sub-models and constant in others")
        raise ConfigError(
            f"covariate {k} is SVC-enabled; constant aggregation is undefined")
    s = np.asarray(sigma2, dtype=float)
    mass = weight_matrix.W / s
    b = np.array([f.b[k] for f in sub_fits])
    return float((mass * b).sum() / mass.sum())


def total_loglik_and_bic(sub_fits, k, c, n):
    """Σ_c ℓ(θ̂_c) and BIC = −2ℓ + C(3K+1)·log N."""
    loglik = float(sum(f.loglik for f in sub_fits))
    p = c * (3 * k + 1)
    return loglik, -2.0 * loglik + p * np.log(n)


def _tag(exc, label):
    exc.args = ((f"{label}: {exc.args[0]}" if exc.args else label),) + exc.args[1:]
    return exc


def _run_fits(designs, labels, options, workers):
    if workers <= 1:
        fits = []
        for design, label in zip(designs, labels):
            try:
                fits.append(fit_submodel(design, options))
            except EsfError as exc:
                raise _tag(exc, label)
        return fits
    # spawned workers: fork would inherit BLAS state mid-flight, and spawn
    # keeps worker numerics identical to the serial path
    with ProcessPoolExecutor(max_workers=workers,
                             mp_context=get_context("spawn")) as pool:
        futures = [pool.submit(fit_submodel, d, options) for d in designs]
        fits = []
        for future, label in zip(futures, labels):
            try:
                fits.append(future.result())
            except EsfError as exc:
                raise _tag(exc, label)
    return fits


def fit_aggregated(dataset, config=None):
    """Full aggregated fit: partition, weights, independent sub-model
    fits (one per cluster, plus a truncated-basis global model when the
    scheme asks for one), product-of-experts fusion, total likelihood.

    Deterministic for a fixed config seed at any worker count: bases are
    built in the driver, fits are pure functions of their designs, and
    fusion reduces in fixed sub-model order.
    """
    config = config or AggregateConfig()
    scheme = config.scheme
    sites = dataset.sites
    n, k = dataset.n, dataset.k

    t0 = time.perf_counter()
    cl = config.n_clusters if config.n_clusters is not None \
        else choose_cluster_count(n, config.target_cluster_size)
    partition = kmeans_partition(sites, cl, config.seed)
    ranges = []
    for c in range(cl):
        members = partition.members(c)
        if members.size < 2:
            raise DegenerateGeometryError(
                f"cluster {c} has {members.size} site(s); no kernel range")
        ranges.append(mst_range(sites[members]))
    weights = prior_weights(partition, sites, ranges, scheme)
    t1 = time.perf_counter()

    bases = []
    for c in range(cl):
        support = weights.supports[c]
        try:
            C = connectivity_matrix(pairwise_distance(sites[support]),
                                    ConnectivityConfig(r=ranges[c]))
            bases.append(_basis(C, None, config.dense_cap))
        except EsfError as exc:
            raise _tag(exc, f"cluster {c}")
    if scheme.include_global:
        r_global = mst_range(sites)
        ranges.append(r_global)
        try:
            C = connectivity_matrix(pairwise_distance(sites),
                                    ConnectivityConfig(r=r_global))
            bases.append(_basis(C, config.global_l, config.dense_cap))
        except EsfError as exc:
            raise _tag(exc, "global sub-model")
    t2 = time.perf_counter()

    options = FitOptions(svc=config.svc, ridge=config.ridge,
                         maxiter=config.maxiter, ftol=config.ftol)
    labels = [f"cluster {c}" for c in range(cl)]
    if scheme.include_global:
        labels.append("global sub-model")
    designs = []
    for j, basis in enumerate(bases):
        try:
            designs.append(build_design(
                dataset, basis, weights.supports[j],
                weights.entries[weights.supports[j], j]))
        except EsfError as exc:
            raise _tag(exc, labels[j])
    fits = _run_fits(designs, labels, options, config.workers)
    t3 = time.perf_counter()

    sigma2 = np.array([f.sigma2 for f in fits])
    n_models = len(fits)
    surfaces = np.zeros((n_models, n, k))
    for j, (fit, basis) in enumerate(zip(fits, bases)):
        surfaces[j, weights.supports[j], :] = predict_sub_svc(fit, basis.E).T
    beta_star = aggregate_svc(surfaces, posterior_weights(weights.entries, sigma2))
    sigma2_star = aggregate_variance(weights.entries, sigma2)
    svc = np.ones(k, dtype=bool) if config.svc is None \
        else np.asarray(config.svc, dtype=bool)
    for kk in np.flatnonzero(~svc):
        beta_star[:, kk] = aggregate_constant(fits, weights, sigma2, kk)
    loglik, bic = total_loglik_and_bic(fits, k, n_models, n)
    t4 = time.perf_counter()

    return AggregatedFit(
        sub_fits=tuple(fits),
        beta_star=beta_star,
        sigma2_star=sigma2_star,
        loglik=loglik,
        bic=bic,
        n_params=n_models * (3 * k + 1),
        partition=partition,
        weights=weights,
        ranges=tuple(ranges),
        timings={
            "partition": t1 - t0,
            "eigen": t2 - t1,
            "fits": t3 - t2,
            "fusion": t4 - t3,
            "total": t4 - t0,
        },
    )


def _basis(C, max_l, dense_cap):
    if dense_cap is None:
        return moran_basis(C, max_l=max_l)
    return moran_basis(C, max_l=max_l, dense_cap=dense_cap)
