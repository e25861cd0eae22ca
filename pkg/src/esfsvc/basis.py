"""Exponential connectivity matrices and the Moran eigenvector basis.

The basis is the positive-eigenvalue part of the eigendecomposition of
MCM, where C is the kernel matrix and M = I - 11'/N is the centering
projector. Positive eigenvalues correspond to positively autocorrelated
map patterns; the negative side is deliberately not represented.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh
from scipy.sparse.linalg import LinearOperator, eigsh

from .errors import BasisEmptyError, ConfigError, InputError, UndefinedStatisticError

# relative cutoff separating genuinely positive eigenvalues from the
# floating-point zeros the centering introduces
EIG_RTOL = 1e-9

# largest matrix handed to the dense symmetric solver; above this the
# truncated iterative solver takes over (and needs an explicit max_l)
DENSE_EIG_CAP = 4000


@dataclass(frozen=True)
class ConnectivityConfig:
    """Exponential-decay kernel c(d) = exp(-d/r)."""

    r: float
    kernel: str = "exponential"

    def __post_init__(self):
        if not self.r > 0:
            raise InputError(f"kernel range must be positive, got {self.r}")
        if self.kernel != "exponential":
            raise ConfigError(f"unsupported kernel {self.kernel!r}")


@dataclass(frozen=True)
class MoranBasis:
    """Positive-eigenvalue eigenpairs of MCM, eigenvalues descending.

    ``lambda_max`` is kept separately because the estimator normalizes
    eigenvalues by it inside the variance function; truncating the basis
    must not change the normalization reference.
    """

    E: np.ndarray          # (N, L), orthonormal columns, each mean zero
    lambdas: np.ndarray    # (L,), descending, all positive
    lambda_max: float      # the largest positive eigenvalue of MCM

    def __post_init__(self):
        object.__setattr__(self, "E", np.asarray(self.E, dtype=float))
        object.__setattr__(self, "lambdas", np.asarray(self.lambdas, dtype=float))

    @property
    def n(self):
        return self.E.shape[0]

    @property
    def L(self):
        return self.E.shape[1]


def connectivity_matrix(distances, config):
    """exp(-d_ij/r) off the diagonal, exactly zero on it."""
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise InputError(f"distances must be square, got {d.shape}")
    C = np.exp(-d / config.r)
    np.fill_diagonal(C, 0.0)
    return C


def _double_center(C):
    # MCM = C - rowmean - colmean + totalmean, computed by broadcasting;
    # C is symmetric so row and column means coincide
    rowmean = C.mean(axis=1)
    total = rowmean.mean()
    return C - rowmean[:, None] - rowmean[None, :] + total


def _center_vec(x):
    return x - x.mean()


def _fix_signs(E):
    # first component above noise level is made positive so that a basis
    # is reproducible across eigensolvers and site orderings
    for j in range(E.shape[1]):
        col = E[:, j]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            E[:, j] = -col
    return E


def moran_basis(C, max_l=None, dense_cap=DENSE_EIG_CAP):
    """Extract the Moran basis of a connectivity matrix.

    Keeps eigenpairs with lambda > EIG_RTOL * lambda_1, truncated to the
    ``max_l`` largest when requested. Matrices larger than ``dense_cap``
    go through a truncated iterative solver, which requires ``max_l``.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    if C.ndim != 2 or C.shape[1] != n:
        raise InputError(f"connectivity matrix must be square, got {C.shape}")
    if n < 2:
        raise InputError("need at least 2 sites")
    if max_l is not None and max_l < 1:
        raise InputError(f"max_l must be positive, got {max_l}")

    if n <= dense_cap:
        B = _double_center(C)
        if max_l is None or max_l >= n:
            vals, vecs = eigh(B)
        else:
            vals, vecs = eigh(B, subset_by_index=(n - max_l, n - 1))
        vals = vals[::-1]
        vecs = vecs[:, ::-1]
    else:
        if max_l is None:
            raise ConfigError(
                f"N = {n} exceeds the dense eigensolver cap ({dense_cap}); "
                "a truncated basis needs an explicit max_l")
        k = min(max_l, n - 2)
        op = LinearOperator(
            (n, n),
            matvec=lambda x: _center_vec(C @ _center_vec(x)),
            dtype=float,
        )
        # fixed start vector: keeps ARPACK deterministic, and the constant
        # vector is unusable because M annihilates it
        v0 = np.random.default_rng(0).standard_normal(n)
        vals, vecs = eigsh(op, k=k, which="LA", v0=v0)
        order = np.argsort(vals)[::-1]
        vals = vals[order]
        vecs = vecs[:, order]

    # the relative cutoff needs an absolute reference: when MCM has no
    # positive spectrum at all, the largest computed eigenvalue is itself a
    # floating-point zero and must not become the yardstick.  The infinity
    # norm of C bounds every eigenvalue of MCM.
    scale = np.abs(C).sum(axis=1).max()
    lam1 = vals[0]
    if not lam1 > EIG_RTOL * scale:
        raise BasisEmptyError(
            "centered connectivity matrix has no positive eigenvalue; "
            "the kernel range may be degenerate")
    keep = vals > EIG_RTOL * lam1
    vals = vals[keep]
    vecs = np.ascontiguousarray(vecs[:, keep])
    return MoranBasis(E=_fix_signs(vecs), lambdas=vals, lambda_max=float(vals[0]))


def moran_coefficient(v, C):
    """Moran coefficient of v under connectivity C:
    (N / 1'C1) * (v'MCMv / v'Mv)."""
    v = np.asarray(v, dtype=float)
    C = np.asarray(C, dtype=float)
    n = v.shape[0]
    if v.ndim != 1 or C.shape != (n, n):
        raise InputError("v must be a vector matching C")
    vc = _center_vec(v)
    denom = vc @ vc
    if denom == 0.0:
        raise UndefinedStatisticError(
            "Moran coefficient of a constant vector is undefined")
    total = C.sum()
    if total == 0.0:
        raise UndefinedStatisticError("connectivity matrix sums to zero")
    return float((n / total) * (vc @ C @ vc) / denom)
