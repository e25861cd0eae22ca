"""Coordinates, distances, MST range, and k-means partitioning.

Everything here is a pure function over immutable inputs. The only N^2
object ever materialized is the pairwise distance matrix itself;
``mst_range`` works row-at-a-time so the range parameter of very large site
sets can be computed in O(N) memory.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateGeometryError, InputError


@dataclass(frozen=True)
class Dataset:
    """A regression input: sites, response, covariates.

    ``X`` carries the intercept as column 0 (identically one); ``names``
    labels every column of ``X`` including the intercept.
    """

    sites: np.ndarray        # (N, 2) coordinates
    y: np.ndarray            # (N,) response
    X: np.ndarray            # (N, K) covariates, column 0 == 1
    names: tuple             # K labels

    def __post_init__(self):
        sites = np.asarray(self.sites, dtype=float)
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if sites.ndim != 2 or sites.shape[1] != 2:
            raise InputError(f"sites must be (N, 2), got {sites.shape}")
        n = sites.shape[0]
        if n < 2:
            raise InputError(f"need at least 2 sites, got {n}")
        if y.shape != (n,):
            raise InputError(f"y must have length {n}, got shape {y.shape}")
        if X.ndim != 2 or X.shape[0] != n:
            raise InputError(f"X must be (N, K) with N={n}, got {X.shape}")
        if not np.all(np.isfinite(sites)):
            raise InputError("non-finite coordinates")
        if not np.all(np.isfinite(y)):
            raise InputError("non-finite response values")
        if not np.all(np.isfinite(X)):
            raise InputError("non-finite covariate values")
        if not np.all(X[:, 0] == 1.0):
            raise InputError("X column 0 must be the all-ones intercept")
        if len(self.names) != X.shape[1]:
            raise InputError("names must label every covariate column")
        object.__setattr__(self, "sites", sites)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "names", tuple(self.names))

    @property
    def n(self):
        return self.sites.shape[0]

    @property
    def k(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class ClusterPartition:
    """k-means output: every site belongs to exactly one local cluster.

    ``assignments`` holds 0-based cluster indices; ``n_clusters`` is the
    number of local clusters (a global sub-model, when enabled, is a
    property of the weight scheme, not of the partition).
    """

    assignments: np.ndarray   # (N,) ints in [0, n_clusters)
    centroids: np.ndarray     # (n_clusters, 2)
    n_clusters: int

    def members(self, c):
        """Indices of the sites assigned to cluster ``c``."""
        return np.flatnonzero(self.assignments == c)


def pairwise_distance(sites):
    """Dense symmetric matrix of Euclidean distances.

    The diagonal is exactly zero and symmetry is exact (the upper triangle
    is mirrored), so downstream kernels see a clean input.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != 2:
        raise InputError(f"sites must be (N, 2), got {sites.shape}")
    if sites.shape[0] < 2:
        raise InputError("need at least 2 sites")
    if not np.all(np.isfinite(sites)):
        raise InputError("non-finite coordinates")
    d = cdist(sites, sites)
    d = np.triu(d, 1)
    d = d + d.T
    return d


def _rows_to_all(sites, i):
    """Distances from site i to every site, computed without an N^2 matrix."""
    diff = sites - sites[i]
    return np.hypot(diff[:, 0], diff[:, 1])


def mst_range(sites):
    """Longest edge of a minimum spanning tree of the complete Euclidean
    graph over the sites.

    Prim's algorithm over implicit edges: O(N^2) time, O(N) memory. The
    longest MST edge is the same for every MST of a graph, so ties in edge
    weights cannot change the answer.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != 2:
        raise InputError(f"sites must be (N, 2), got {sites.shape}")
    n = sites.shape[0]
    if n < 2:
        raise InputError("need at least 2 sites")
    if not np.all(np.isfinite(sites)):
        raise InputError("non-finite coordinates")

    in_tree = np.zeros(n, dtype=bool)
    best = np.full(n, np.inf)
    best[0] = 0.0
    longest = 0.0
    for _ in range(n):
        i = int(np.argmin(np.where(in_tree, np.inf, best)))
        longest = max(longest, best[i])
        in_tree[i] = True
        row = _rows_to_all(sites, i)
        np.minimum(best, row, out=best)
    if longest == 0.0:
        raise DegenerateGeometryError(
            "all sites coincide; the kernel range is undefined")
    return float(longest)


def choose_cluster_count(n, target_per_cluster):
    """Number of local clusters so the average cluster holds roughly
    ``target_per_cluster`` sites: max(1, round(n / target)).

    Uses Python's round() (banker's rounding at exact .5 ties).
    """
    if n < 1:
        raise InputError("n must be at least 1")
    if target_per_cluster < 1:
        raise InputError("target_per_cluster must be at least 1")
    return max(1, round(n / target_per_cluster))


def kmeans_partition(sites, n_clusters, seed):
    """Lloyd's algorithm over raw coordinates with farthest-point seeding.

    Deterministic for a fixed seed: the first centroid index comes from the
    seeded generator, the remaining seeds are argmax picks (ties resolve to
    the lowest index), assignment ties resolve to the lowest cluster index,
    and centroid updates are plain per-cluster means. Runs to an assignment
    fixpoint or 100 iterations. Empty clusters are re-seeded from the site
    farthest from every current centroid.
    """
    sites = np.asarray(sites, dtype=float)
    if sites.ndim != 2 or sites.shape[1] != 2:
        raise InputError(f"sites must be (N, 2), got {sites.shape}")
    n = sites.shape[0]
    if not np.all(np.isfinite(sites)):
        raise InputError("non-finite coordinates")
    if not 1 <= n_clusters <= n:
        raise InputError(
            f"n_clusters must be in [1, {n}], got {n_clusters}")

    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    centroids = np.empty((n_clusters, 2))
    centroids[0] = sites[first]
    # farthest-point continuation: maximize the distance to the chosen set
    mind = _sq_dist_to(sites, centroids[0])
    for j in range(1, n_clusters):
        centroids[j] = sites[int(np.argmax(mind))]
        np.minimum(mind, _sq_dist_to(sites, centroids[j]), out=mind)

    assignments = np.full(n, -1, dtype=np.int64)
    for _ in range(100):
        d2 = _sq_dist_matrix(sites, centroids)
        new_assignments = np.argmin(d2, axis=1)
        # re-seed any cluster that lost all members
        for c in range(n_clusters):
            if not np.any(new_assignments == c):
                far = int(np.argmax(np.min(d2, axis=1)))
                centroids[c] = sites[far]
                d2[:, c] = _sq_dist_to(sites, centroids[c])
                new_assignments = np.argmin(d2, axis=1)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for c in range(n_clusters):
            mask = assignments == c
            centroids[c] = sites[mask].mean(axis=0)

    return ClusterPartition(
        assignments=assignments,
        centroids=centroids,
        n_clusters=int(n_clusters),
    )


def _sq_dist_to(sites, point):
    diff = sites - point
    return diff[:, 0] ** 2 + diff[:, 1] ** 2


def _sq_dist_matrix(sites, centroids):
    # (N, C) squared distances, pure numpy so the result is bit-stable
    # across BLAS builds and thread counts
    diff = sites[:, None, :] - centroids[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)
