"""One sub-model fit: profile restricted likelihood over the variance
parameters, mixed-model coefficient solve, and noise-variance estimate.

The model for one (possibly weighted) sub-sample, with working weights
Ẅ = (N_c/W_c)·diag(w):

    y = X b + E V(θ) u + ε,    u ~ N(0, σ²I),    ε ~ N(0, σ²Ẅ⁻¹)

E is the covariate-eigenvector interaction matrix and V(θ) the diagonal
variance function with entries v_l(θ_k) = (τ_k/σ)·(λ_l/λ_1)^{α_k/2}
(eigenvalues normalized by the largest; τ absorbs the scale). The
restricted likelihood

    ℓ(θ) = −(W−K)/2 · log(2π(ε̂'Ẅε̂ + û'û)/(N−K)) − ½ log|M| − W/2

depends on (τ², σ²) only through the ratios γ_k = τ_k²/σ², so the
optimizer works on x = (log γ_k, logit(α_k/α_max)) with σ² recovered
afterwards from the residual quadratic form.

Every evaluation runs on Gram blocks (X'ẄX, X'ẄE, E'ẄE, ...), so its
cost is O((K·L)³) independent of N_c, and the analytic gradient reuses
the Cholesky factor of the mixed-model matrix M.
"""

import re
import warnings
from dataclasses import dataclass
from types import SimpleNamespace

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.linalg.lapack import dpotri
from scipy.optimize import minimize
from scipy.special import expit, logit

from .basis import DENSE_EIG_CAP, ConnectivityConfig, connectivity_matrix, moran_basis
from .errors import (
    InputError,
    InsufficientSampleError,
    NonFiniteLikelihoodError,
    NumericalError,
    ProfileDegenerateError,
    SingularSystemError,
)
from .geometry import mst_range, pairwise_distance

ALPHA_MAX = 10.0

# multi-start values: a small-variance interior start for the quasi-Newton
# run, plus the exact tau² = 0 null model evaluated in closed form (the
# null is a stationary boundary point where the gradient vanishes, so
# starting an optimizer there is pointless)
_START_GAMMA = 0.01
_START_ALPHA = 1.0
_X_BOUND = 30.0

_RIDGE_SCALE = 1e-8

_MINOR_RE = re.compile(r"(\d+)-th leading minor")


@dataclass(frozen=True)
class VarianceParams:
    """Per-covariate variance-function parameters θ_k = (α_k, τ_k²).

    A covariate with svc_enabled False is pinned to a constant
    coefficient: its τ_k² is exactly zero and its eigenvector block drops
    out of every computation.
    """

    alpha: np.ndarray        # (K,) in [0, ALPHA_MAX]
    tau2: np.ndarray         # (K,) nonnegative
    svc_enabled: np.ndarray  # (K,) bool

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=float)
        tau2 = np.asarray(self.tau2, dtype=float)
        svc = np.asarray(self.svc_enabled, dtype=bool)
        if not (alpha.shape == tau2.shape == svc.shape) or alpha.ndim != 1:
            raise InputError("alpha, tau2, svc_enabled must be equal-length vectors")
        if np.any(alpha < 0) or np.any(alpha > ALPHA_MAX):
            raise InputError(f"alpha must lie in [0, {ALPHA_MAX}]")
        if np.any(tau2 < 0):
            raise InputError("tau2 must be nonnegative")
        if np.any(tau2[~svc] != 0.0):
            raise InputError("a pinned covariate must have tau2 exactly 0")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "tau2", tau2)
        object.__setattr__(self, "svc_enabled", svc)

    @property
    def k(self):
        return self.alpha.shape[0]


@dataclass(frozen=True)
class SubModelDesign:
    """Design of one sub-model: weighted sub-sample plus interaction matrix.

    ``E`` holds x_k(s_i)·e_l(s_i) at column k·L + l. Weights are the prior
    weights on the support, all positive; ``W_c`` is their total and
    Ẅ = (N_c/W_c)·diag(w) the working weight matrix.
    """

    y: np.ndarray         # (N_c,)
    X: np.ndarray         # (N_c, K)
    E: np.ndarray         # (N_c, K·L_c)
    lambdas: np.ndarray   # (L_c,) descending positive eigenvalues
    w: np.ndarray         # (N_c,) prior weights in (0, 1]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        X = np.asarray(self.X, dtype=float)
        E = np.asarray(self.E, dtype=float)
        lam = np.asarray(self.lambdas, dtype=float)
        w = np.asarray(self.w, dtype=float)
        n = y.shape[0]
        if X.ndim != 2 or X.shape[0] != n:
            raise InputError("X must be (N_c, K)")
        if E.shape != (n, X.shape[1] * lam.shape[0]):
            raise InputError("E must be (N_c, K·L_c)")
        if w.shape != (n,):
            raise InputError("w must have length N_c")
        if np.any(w <= 0) or np.any(w > 1.0 + 1e-12):
            raise InputError("weights must lie in (0, 1]")
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise InputError("lambdas must be positive and descending")
        for name, val in (("y", y), ("X", X), ("E", E), ("lambdas", lam), ("w", w)):
            object.__setattr__(self, name, val)

    @property
    def n_c(self):
        return self.y.shape[0]

    @property
    def k(self):
        return self.X.shape[1]

    @property
    def l_c(self):
        return self.lambdas.shape[0]

    @property
    def W_c(self):
        return float(self.w.sum())

    @property
    def z_c(self):
        return self.W_c / self.n_c

    @property
    def wdd(self):
        """Diagonal of Ẅ = (N_c/W_c)·diag(w)."""
        return (self.n_c / self.W_c) * self.w


@dataclass(frozen=True)
class SubModelFit:
    """One fitted sub-model."""

    b: np.ndarray            # (K,) fixed coefficients
    u: np.ndarray            # (K·L_c,) random coefficients
    sigma2: float            # noise variance
    params: VarianceParams   # θ̂ with tau2 on the data scale (γ̂·σ̂²)
    loglik: float            # restricted log-likelihood at θ̂
    b_se: np.ndarray         # (K,) approximate standard errors of b
    W_c: float
    N_c: int
    lambdas: np.ndarray      # eigenvalues backing u (needed to predict)

    @property
    def L_c(self):
        return self.lambdas.shape[0]

    @property
    def k(self):
        return self.b.shape[0]


@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings for fit_submodel."""

    svc: tuple = None        # per-covariate SVC flags; None = all enabled
    ridge: bool = False      # add the X-block jitter on singular systems
    maxiter: int = 200
    ftol: float = 1e-8


def build_design(dataset, basis, site_indices, weights):
    """Assemble a SubModelDesign from a dataset slice and its local basis.

    ``basis`` must be built over exactly the sites picked by
    ``site_indices`` (row i of basis.E belongs to site_indices[i]).
    """
    idx = np.asarray(site_indices, dtype=np.intp)
    w = np.asarray(weights, dtype=float)
    if idx.ndim != 1 or w.shape != idx.shape:
        raise InputError("site_indices and weights must be equal-length vectors")
    if basis.n != idx.size:
        raise InputError(
            f"basis has {basis.n} rows but {idx.size} sites were indexed")
    X = dataset.X[idx]
    y = dataset.y[idx]
    n, k = X.shape
    if n <= k:
        raise InsufficientSampleError(
            f"sub-sample has N_c = {n} sites for K = {k} covariates")
    E = (X[:, :, None] * basis.E[:, None, :]).reshape(n, k * basis.L)
    return SubModelDesign(y=y, X=X, E=E, lambdas=basis.lambdas, w=w)


def variance_diagonal(params, lambdas, sigma2):
    """Diagonal of V(θ): entry k·L + l is (τ_k/σ)·(λ_l/λ_1)^{α_k/2}."""
    if not sigma2 > 0:
        raise InputError(f"sigma2 must be positive, got {sigma2}")
    lam = np.asarray(lambdas, dtype=float)
    logr = np.log(lam / lam[0])
    amp = np.sqrt(params.tau2 / sigma2)
    v = amp[:, None] * np.exp(0.5 * np.outer(params.alpha, logr))
    v[~params.svc_enabled] = 0.0
    return v.ravel()


# ---------------------------------------------------------------------------
# Gram-block likelihood machinery
# ---------------------------------------------------------------------------

class _Gram:
    """Per-design sufficient statistics for the restricted likelihood."""

    def __init__(self, design, ridge=False):
        X, E, y = design.X, design.E, design.y
        wdd = design.wdd
        wy = wdd * y
        self.A = X.T @ (wdd[:, None] * X)
        if ridge:
            self.A = self.A + (_RIDGE_SCALE * np.trace(self.A) / X.shape[1]) \
                * np.eye(X.shape[1])
        self.B = X.T @ (wdd[:, None] * E)
        self.G = E.T @ (wdd[:, None] * E)
        self.f = X.T @ wy
        self.h = E.T @ wy
        self.s = float(y @ wy)
        self.n = design.n_c
        self.k = design.k
        self.l = design.l_c
        self.W = design.W_c


def _chol_inverse(cfac):
    c, lower = cfac
    inv, info = dpotri(c, lower=lower)
    if info != 0:
        raise LinAlgError(f"dpotri failed with info = {info}")
    if lower:
        return np.tril(inv) + np.tril(inv, -1).T
    return np.triu(inv) + np.triu(inv, 1).T


def _singular_error(exc, k, active, l):
    """Turn a Cholesky failure on M into an error naming the block."""
    m = _MINOR_RE.search(str(exc))
    if m:
        minor = int(m.group(1))
        if minor <= k:
            block = f"x[{minor - 1}]"
            what = f"covariate column {minor - 1}"
        else:
            col = int(active[minor - 1 - k])
            kk, ll = divmod(col, l)
            block = f"svc[{kk}]"
            what = f"eigenvector block of covariate {kk} (component l = {ll})"
        return SingularSystemError(
            f"mixed-model matrix is singular at the {what}", block=block)
    return SingularSystemError(f"mixed-model matrix is singular ({exc})")


def _evaluate(gram, v, active, need_grad=False, need_inverse=False,
              need_ll=True):
    """Restricted likelihood (and optionally its v-gradient and the
    inverse's b-block diagonal) at one variance diagonal.

    ``active`` indexes the nonzero entries of v; pinned or zero entries
    contribute an identity block to M and zeros to u, so they are simply
    left out of the linear algebra.  ``need_ll=False`` skips the
    likelihood itself, which keeps the coefficient solve usable when the
    fit is exact and Q underflows to zero.
    """
    k, n, W = gram.k, gram.n, gram.W
    va = v[active]
    m = va.size
    if m == gram.l * k:
        gsub = gram.G
        ba = gram.B
        ha = gram.h
    else:
        gsub = gram.G[np.ix_(active, active)]
        ba = gram.B[:, active]
        ha = gram.h[active]

    M = np.empty((k + m, k + m))
    M[:k, :k] = gram.A
    m12 = ba * va[None, :]
    M[:k, k:] = m12
    M[k:, :k] = m12.T
    m22 = gsub * (va[:, None] * va[None, :])
    diag = np.arange(m)
    m22[diag, diag] += 1.0
    M[k:, k:] = m22

    rhs = np.concatenate([gram.f, va * ha])
    try:
        cfac = cho_factor(M, lower=True, overwrite_a=True, check_finite=False)
    except LinAlgError as exc:
        raise _singular_error(exc, k, active, gram.l) from exc
    logdet = 2.0 * np.log(np.diag(cfac[0])).sum()
    q = cho_solve(cfac, rhs, check_finite=False)
    Q = gram.s - q @ rhs
    if not np.isfinite(Q) or (need_ll and Q <= 0):
        raise NumericalError(f"residual quadratic form is not positive ({Q})")

    if need_ll:
        ll = -0.5 * (W - k) * np.log(2.0 * np.pi * Q / (n - k)) \
            - 0.5 * logdet - 0.5 * W
        ll = float(ll)
    else:
        ll = None
    out = SimpleNamespace(ll=ll, Q=float(Q), logdet=float(logdet),
                          b=q[:k], ua=q[k:], active=active)
    if need_grad or need_inverse:
        P = _chol_inverse(cfac)
        if need_inverse:
            out.b_var_unit = np.diag(P)[:k].copy()
        if need_grad:
            # dℓ/dv_i = (W−K)/Q · û_i t_i − δ_i on the active set, where
            # t = E'Ẅε̂ in Gram form and δ_i = [M⁻¹ ∂M/∂v_i]/2 traces
            t = ha - ba.T @ out.b - gsub @ (va * out.ua)
            dg = va[:, None] * gsub
            delta = np.einsum("ij,ji->i", P[k:, :k], ba) \
                + np.einsum("ij,ji->i", P[k:, k:], dg)
            out.grad_v = (W - k) / Q * (out.ua * t) - delta
    return out


def solve_coefficients(design, params, sigma2, ridge=False):
    """Solve the mixed-model block system for (b, u) at fixed θ, σ².

    Returns (b, u, eps_hat) with u on the full K·L_c layout and
    eps_hat = y − Xb − E V u.
    """
    v = variance_diagonal(params, design.lambdas, sigma2)
    gram = _Gram(design, ridge=ridge)
    active = np.flatnonzero(v != 0.0)
    ev = _evaluate(gram, v, active, need_ll=False)
    u = np.zeros(design.k * design.l_c)
    u[active] = ev.ua
    eps = design.y - design.X @ ev.b - design.E @ (v * u)
    return ev.b, u, eps


def restricted_loglik(design, params, sigma2=1.0):
    """Profile restricted log-likelihood ℓ(θ) of one sub-model.

    σ² enters only through the ratios τ_k²/σ², so by default tau2 is read
    directly as that ratio (reference σ² = 1).
    """
    if design.n_c <= design.k:
        raise InsufficientSampleError(
            f"N_c = {design.n_c} with K = {design.k} leaves no residual freedom")
    if design.W_c <= design.k:
        raise ProfileDegenerateError(
            f"total weight W_c = {design.W_c:.6g} must exceed K = {design.k}")
    v = variance_diagonal(params, design.lambdas, sigma2)
    gram = _Gram(design)
    active = np.flatnonzero(v != 0.0)
    return _evaluate(gram, v, active).ll


def estimate_sigma2(eps_hat, u_hat, design):
    """σ̂² = (ε̂'Ẅε̂ + û'û)/(N_c − K)."""
    if design.n_c <= design.k:
        raise InsufficientSampleError(
            f"N_c = {design.n_c} with K = {design.k} leaves no residual freedom")
    eps = np.asarray(eps_hat, dtype=float)
    u = np.asarray(u_hat, dtype=float)
    q = float(eps @ (design.wdd * eps) + u @ u)
    s2 = q / (design.n_c - design.k)
    if s2 == 0.0:
        warnings.warn("residual variance is exactly zero; the fit is degenerate")
    return s2


def predict_sub_svc(fit, basis_rows):
    """SVC surfaces β_k(s) = b_k + Σ_l e_l(s)·v_l(θ_k)·u_{k,l} at the
    given eigenvector rows; returns a K×(row count) matrix."""
    rows = np.asarray(basis_rows, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != fit.L_c:
        raise InputError(
            f"basis rows must have {fit.L_c} columns, got {rows.shape}")
    v = variance_diagonal(fit.params, fit.lambdas, fit.sigma2)
    vu = (v * fit.u).reshape(fit.k, fit.L_c)
    return fit.b[:, None] + vu @ rows.T


# ---------------------------------------------------------------------------
# Likelihood maximization
# ---------------------------------------------------------------------------

def fit_submodel(design, options=None):
    """Maximize the restricted likelihood and assemble a SubModelFit.

    Two candidates are compared: a bounded quasi-Newton (L-BFGS-B) run
    over (log γ_k, logit(α_k/α_max)) from a small-variance start, and the
    exact τ² = 0 null model. The better restricted likelihood wins, so the
    result is never worse than the null.
    """
    options = options or FitOptions()
    k, n = design.k, design.n_c
    if n <= k:
        raise InsufficientSampleError(
            f"N_c = {n} with K = {k} leaves no residual freedom")
    if design.W_c <= k:
        raise ProfileDegenerateError(
            f"total weight W_c = {design.W_c:.6g} must exceed K = {k}")
    svc = np.ones(k, dtype=bool) if options.svc is None \
        else np.asarray(options.svc, dtype=bool)
    if svc.shape != (k,):
        raise InputError(f"svc flags must have length {k}")

    gram = _Gram(design, ridge=options.ridge)
    l = design.l_c
    lam = design.lambdas
    logr = np.log(lam / lam[0])
    en = np.flatnonzero(svc)
    nen = en.size
    active = np.flatnonzero(np.repeat(svc, l))

    # null candidate, exact: v = 0 collapses M to the X block
    try:
        null = _evaluate(gram, np.zeros(k * l), np.empty(0, dtype=np.intp),
                         need_inverse=True)
        null_ll = null.ll
    except NumericalError:
        null = None
        null_ll = -np.inf

    best = {"ll": -np.inf, "x": None}

    def unpack(x):
        gamma = np.zeros(k)
        alpha = np.zeros(k)
        gamma[en] = np.exp(x[:nen])
        alpha[en] = ALPHA_MAX * expit(x[nen:])
        return gamma, alpha

    def objective(x):
        gamma, alpha = unpack(x)
        params = VarianceParams(alpha=alpha, tau2=gamma, svc_enabled=svc)
        v = variance_diagonal(params, lam, 1.0)
        try:
            ev = _evaluate(gram, v, active, need_grad=True)
        except NumericalError:
            return np.inf, np.zeros_like(x)
        if not np.isfinite(ev.ll):
            return np.inf, np.zeros_like(x)
        if ev.ll > best["ll"]:
            best["ll"], best["x"] = ev.ll, x.copy()
        dlv = ev.grad_v.reshape(nen, l)
        ven = v[active].reshape(nen, l)
        g_gamma = 0.5 * (dlv * ven).sum(axis=1)
        s = expit(x[nen:])
        g_t = 0.5 * ((dlv * ven) @ logr) * ALPHA_MAX * s * (1.0 - s)
        return -ev.ll, -np.concatenate([g_gamma, g_t])

    opt_ll = -np.inf
    opt_x = None
    if nen:
        x0 = np.concatenate([
            np.full(nen, np.log(_START_GAMMA)),
            np.full(nen, logit(_START_ALPHA / ALPHA_MAX)),
        ])
        res = minimize(
            objective, x0, jac=True, method="L-BFGS-B",
            bounds=[(-_X_BOUND, _X_BOUND)] * (2 * nen),
            options={"maxiter": options.maxiter, "ftol": options.ftol},
        )
        if np.isfinite(res.fun):
            opt_ll, opt_x = -res.fun, res.x

    if not np.isfinite(opt_ll) and not np.isfinite(null_ll):
        raise NonFiniteLikelihoodError(
            "likelihood is non-finite at every candidate",
            last_valid=None if best["x"] is None else (best["x"], best["ll"]))

    if opt_ll >= null_ll:
        gamma, alpha = unpack(opt_x)
        ratio_params = VarianceParams(alpha=alpha, tau2=gamma, svc_enabled=svc)
        v = variance_diagonal(ratio_params, lam, 1.0)
        ev = _evaluate(gram, v, active, need_inverse=True)
        u = np.zeros(k * l)
        u[active] = ev.ua
        sigma2 = ev.Q / (n - k)
        params = VarianceParams(alpha=alpha, tau2=gamma * sigma2, svc_enabled=svc)
        loglik, b, b_var = ev.ll, ev.b, ev.b_var_unit
    else:
        u = np.zeros(k * l)
        sigma2 = null.Q / (n - k)
        params = VarianceParams(alpha=np.zeros(k), tau2=np.zeros(k),
                                svc_enabled=svc)
        loglik, b, b_var = null_ll, null.b, null.b_var_unit

    if not sigma2 > 0:
        raise NumericalError("estimated noise variance is not positive")
    return SubModelFit(
        b=b, u=u, sigma2=float(sigma2), params=params, loglik=float(loglik),
        b_se=np.sqrt(sigma2 * b_var), W_c=design.W_c, N_c=n, lambdas=lam)


def fit_esf(dataset, max_l=200, svc=None, options=None, dense_cap=None):
    """Plain single-model fit over all sites: basis from the MST-range
    exponential kernel, truncated to the max_l largest eigenvalues.

    Returns (SubModelFit, beta_hat) with beta_hat the N×K coefficient
    surfaces at the sample sites.
    """
    cap = DENSE_EIG_CAP if dense_cap is None else dense_cap
    r = mst_range(dataset.sites)
    C = connectivity_matrix(pairwise_distance(dataset.sites),
                            ConnectivityConfig(r=r))
    basis = moran_basis(C, max_l=max_l, dense_cap=cap)
    opts = options or FitOptions()
    if svc is not None:
        opts = FitOptions(svc=tuple(svc), ridge=opts.ridge,
                          maxiter=opts.maxiter, ftol=opts.ftol)
    design = build_design(dataset, basis, np.arange(dataset.n), np.ones(dataset.n))
    fit = fit_submodel(design, opts)
    beta = predict_sub_svc(fit, basis.E).T
    return fit, beta
