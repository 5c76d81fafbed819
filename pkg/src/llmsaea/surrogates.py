"""The four surrogate model families: GP, RBF, PRS and KNN.

All models train on a shared :class:`TrainingSet` that normalizes inputs
to the unit cube and standardizes targets; predictions are returned in
original target units. Batch prediction (an (m, D) query matrix) is the
fast path used throughout the optimizer.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg as sla
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

log = logging.getLogger(__name__)

_LOG2PI = float(np.log(2.0 * np.pi))


class SurrogateTrainingError(RuntimeError):
    """Raised when a surrogate cannot be fitted on the given data."""


class TrainingSet:
    """Deduplicated, normalized training data.

    Exact duplicate input vectors are collapsed keeping the lowest target.
    Inputs are affinely mapped to [0, 1] per dimension (using the given
    box, or the data range when absent); targets are standardized to zero
    mean and unit variance. Zero-width dimensions and constant targets
    fall back to identity scaling.
    """

    def __init__(self, inputs, targets, lower=None, upper=None):
        X = np.atleast_2d(np.asarray(inputs, dtype=float))
        y = np.asarray(targets, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("inputs and targets must have the same length")
        if y.size < 2:
            raise ValueError("need at least 2 training points")

        seen: dict[bytes, int] = {}
        keep_rows = []
        keep_y = []
        for i in range(X.shape[0]):
            key = X[i].tobytes()
            if key in seen:
                j = seen[key]
                keep_y[j] = min(keep_y[j], y[i])
            else:
                seen[key] = len(keep_rows)
                keep_rows.append(X[i])
                keep_y.append(y[i])
        self.inputs = np.array(keep_rows)
        self.targets = np.array(keep_y)
        self.n, self.dim = self.inputs.shape

        self.lower = (
            np.asarray(lower, dtype=float) if lower is not None else self.inputs.min(axis=0)
        )
        self.upper = (
            np.asarray(upper, dtype=float) if upper is not None else self.inputs.max(axis=0)
        )
        width = self.upper - self.lower
        width = np.where(width > 0.0, width, 1.0)
        self.width = width
        self.x_norm = (self.inputs - self.lower) / width

        self.y_mean = float(self.targets.mean())
        std = float(self.targets.std())
        self.y_std = std if std > 1e-12 else 1.0
        self.y_norm = (self.targets - self.y_mean) / self.y_std

    def normalize(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.lower) / self.width

    def denormalize(self, U) -> np.ndarray:
        return self.lower + np.asarray(U, dtype=float) * self.width

    def unstandardize(self, y_norm):
        return self.y_mean + self.y_std * np.asarray(y_norm, dtype=float)


def _as_batch(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return arr[None, :], True
    return arr, False


# ---------------------------------------------------------------------------
# Gaussian process with anisotropic squared-exponential kernel
# ---------------------------------------------------------------------------

@dataclass
class GPModel:
    train: TrainingSet
    lengthscales: np.ndarray  # normalized input space, shape (D,)
    signal_variance: float
    nugget: float
    chol: np.ndarray  # lower Cholesky factor of K + nugget * I
    alpha: np.ndarray  # (K + nugget I)^{-1} y_norm
    log_likelihood: float


def _sq_dists_per_dim(U: np.ndarray) -> np.ndarray:
    """Per-dimension squared differences, shape (D, n, n)."""
    diff = U.T[:, :, None] - U.T[:, None, :]
    return diff * diff


def gp_log_likelihood(
    data: TrainingSet,
    lengthscales,
    signal_variance: float,
    nugget: float = 1e-8,
    with_gradient: bool = False,
    _sqd: Optional[np.ndarray] = None,
):
    """Marginal log-likelihood of the standardized targets.

    With ``with_gradient`` the gradient with respect to the *log* of each
    hyperparameter (per-dimension lengthscales, then signal variance) is
    returned alongside the value.
    """
    ell = np.asarray(lengthscales, dtype=float)
    sqd = _sqd if _sqd is not None else _sq_dists_per_dim(data.x_norm)
    y = data.y_norm
    n = data.n

    inv_ell2 = 1.0 / (ell * ell)
    q = np.tensordot(inv_ell2, sqd, axes=1)
    kernel = signal_variance * np.exp(-0.5 * q)
    K = kernel.copy()
    K[np.diag_indices(n)] += nugget
    try:
        L = sla.cholesky(K, lower=True, check_finite=False)
    except sla.LinAlgError:
        if with_gradient:
            return -np.inf, np.zeros(ell.size + 1)
        return -np.inf
    alpha = sla.cho_solve((L, True), y, check_finite=False)
    mll = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG2PI
    if not with_gradient:
        return mll

    K_inv = sla.cho_solve((L, True), np.eye(n), check_finite=False)
    outer = np.outer(alpha, alpha) - K_inv
    weighted = outer * kernel
    grad = np.empty(ell.size + 1)
    # d(mll)/d(log ell_d) = 0.5 tr(outer dK/d log ell_d), dK/d log ell_d = kernel * sqd_d / ell_d^2
    grad[:-1] = 0.5 * inv_ell2 * np.tensordot(sqd, weighted, axes=([1, 2], [0, 1]))
    # d(mll)/d(log s) with s the signal variance: dK/d log s = kernel
    grad[-1] = 0.5 * float(np.sum(weighted))
    return mll, grad


def _cholesky_with_escalation(kernel: np.ndarray, nugget: float, max_nugget: float):
    """Lower Cholesky of kernel + nugget*I, escalating tenfold on failure.

    Returns (factor, nugget actually used); raises SurrogateTrainingError
    once the nugget cap is exhausted.
    """
    n = kernel.shape[0]
    ng = nugget
    while True:
        K = kernel.copy()
        K[np.diag_indices(n)] += ng
        try:
            return sla.cholesky(K, lower=True, check_finite=False), ng
        except sla.LinAlgError:
            if ng >= max_nugget:
                raise SurrogateTrainingError(
                    f"kernel matrix singular even with nugget {ng:g} (n={n})"
                )
            ng *= 10.0


def gp_default_starts(data: TrainingSet, warm_start=None) -> list[np.ndarray]:
    """Log-space start points for the likelihood optimization (3 starts)."""
    d = data.dim
    starts = [
        np.concatenate([np.full(d, np.log(0.3)), [0.0]]),
        np.concatenate([np.full(d, np.log(1.5)), [0.0]]),
    ]
    if warm_start is not None:
        starts.append(np.asarray(warm_start, dtype=float))
    else:
        starts.append(np.concatenate([np.full(d, np.log(0.05)), [0.0]]))
    return starts


def fit_gp(
    data: TrainingSet,
    n_restarts: int = 3,
    max_evals: int = 50,
    nugget: float = 1e-8,
    max_nugget: float = 1e-2,
    log_bounds: tuple[float, float] = (np.log(1e-3), np.log(1e3)),
    warm_start=None,
) -> GPModel:
    """Fit GP hyperparameters by multi-start gradient-based likelihood maximization.

    Optimization runs in log space over the per-dimension lengthscales and
    the signal variance, bounded to ``log_bounds`` with at most
    ``max_evals`` likelihood evaluations per start. On Cholesky failure of
    the final kernel matrix the nugget escalates tenfold up to
    ``max_nugget`` before giving up.
    """
    if data.n < 2:
        raise SurrogateTrainingError("GP needs at least 2 distinct training points")
    if not 0.0 < nugget <= max_nugget:
        raise ValueError("nugget must satisfy 0 < nugget <= max_nugget")
    d = data.dim
    sqd = _sq_dists_per_dim(data.x_norm)
    lo, hi = log_bounds
    bounds = [(lo, hi)] * (d + 1)

    def objective(theta):
        mll, grad = gp_log_likelihood(
            data, np.exp(theta[:-1]), float(np.exp(theta[-1])), nugget,
            with_gradient=True, _sqd=sqd,
        )
        if not np.isfinite(mll):
            return 1e12, np.zeros_like(theta)
        return -mll, -grad

    starts = gp_default_starts(data, warm_start)[:n_restarts]
    while len(starts) < n_restarts:
        starts.append(starts[-1])
    candidates = []
    for theta0 in starts:
        theta0 = np.clip(theta0, lo, hi)
        f0, _ = objective(theta0)
        candidates.append((f0, theta0))
        res = minimize(
            objective,
            theta0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxfun": max_evals, "maxiter": max_evals, "ftol": 1e-9},
        )
        candidates.append((float(res.fun), np.asarray(res.x)))
    best_f, best_theta = min(candidates, key=lambda c: c[0])

    ell = np.exp(best_theta[:-1])
    signal = float(np.exp(best_theta[-1]))
    inv_ell2 = 1.0 / (ell * ell)
    kernel = signal * np.exp(-0.5 * np.tensordot(inv_ell2, sqd, axes=1))
    L, ng = _cholesky_with_escalation(kernel, nugget, max_nugget)
    alpha = sla.cho_solve((L, True), data.y_norm, check_finite=False)
    mll = (
        -0.5 * float(data.y_norm @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * data.n * _LOG2PI
    )
    return GPModel(
        train=data,
        lengthscales=ell,
        signal_variance=signal,
        nugget=ng,
        chol=L,
        alpha=alpha,
        log_likelihood=mll,
    )


def predict_gp(model: GPModel, x):
    """Posterior mean and standard deviation in original target units.

    Accepts a single vector or an (m, D) batch; returns floats for the
    former and (m,) arrays for the latter. Predictive variance is clamped
    at zero.
    """
    X, single = _as_batch(x)
    U = model.train.normalize(X)
    scaled_q = U / model.lengthscales
    scaled_t = model.train.x_norm / model.lengthscales
    q = cdist(scaled_q, scaled_t, "sqeuclidean")
    k_star = model.signal_variance * np.exp(-0.5 * q)
    mean_norm = k_star @ model.alpha
    v = sla.solve_triangular(model.chol, k_star.T, lower=True, check_finite=False)
    var_norm = np.maximum(model.signal_variance - np.sum(v * v, axis=0), 0.0)
    mean = model.train.unstandardize(mean_norm)
    std = np.sqrt(var_norm) * model.train.y_std
    if single:
        return float(mean[0]), float(std[0])
    return mean, std


# ---------------------------------------------------------------------------
# Cubic RBF interpolant with linear polynomial tail
# ---------------------------------------------------------------------------

@dataclass
class RBFModel:
    train: TrainingSet
    weights: np.ndarray  # kernel weights, shape (n,)
    poly: np.ndarray  # linear tail coefficients, shape (D + 1,)
    regularized: bool


def fit_rbf(data: TrainingSet) -> RBFModel:
    """Fit the cubic-kernel interpolant phi(r) = r^3 with a linear tail.

    Solves the symmetric block system [[Phi, P], [P^T, 0]] for kernel
    weights and polynomial coefficients. A rank-deficient or numerically
    singular system falls back to an escalating ridge term on the kernel
    block and finally to a least-squares solve, flagged via
    ``regularized``.
    """
    U = data.x_norm
    y = data.y_norm
    n, d = U.shape
    phi = cdist(U, U) ** 3
    P = np.hstack([np.ones((n, 1)), U])
    m = d + 1
    A = np.zeros((n + m, n + m))
    A[:n, :n] = phi
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.concatenate([y, np.zeros(m)])

    regularized = False
    sol = None
    if n >= m:
        # the residual check below decides usability, so scipy's
        # ill-conditioning advisory is redundant noise here
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            try:
                cand = sla.solve(A, rhs, check_finite=False)
                residual = float(np.max(np.abs(A @ cand - rhs)))
                scale = max(1.0, float(np.max(np.abs(y))) if n else 1.0)
                if np.all(np.isfinite(cand)) and residual <= 1e-8 * scale:
                    sol = cand
            except sla.LinAlgError:
                pass
            if sol is None:
                for lam in (1e-10, 1e-8, 1e-6, 1e-4, 1e-2):
                    A_reg = A.copy()
                    A_reg[np.diag_indices(n)] += lam
                    try:
                        cand = sla.solve(A_reg, rhs, check_finite=False)
                    except sla.LinAlgError:
                        continue
                    if np.all(np.isfinite(cand)):
                        sol = cand
                        regularized = True
                        break
    if sol is None:
        sol, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        regularized = True
    return RBFModel(train=data, weights=sol[:n], poly=sol[n:], regularized=regularized)


def predict_rbf(model: RBFModel, x):
    X, single = _as_batch(x)
    U = model.train.normalize(X)
    r = cdist(U, model.train.x_norm)
    vals = (r ** 3) @ model.weights + model.poly[0] + U @ model.poly[1:]
    out = model.train.unstandardize(vals)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Polynomial response surface
# ---------------------------------------------------------------------------

@dataclass
class PRSModel:
    train: TrainingSet
    coef: np.ndarray
    degree: int
    downgraded: bool
    regularized: bool


def _monomial_basis(U: np.ndarray, degree: int) -> np.ndarray:
    n, d = U.shape
    cols = [np.ones(n), *(U[:, j] for j in range(d))]
    if degree == 2:
        for i in range(d):
            for j in range(i, d):
                cols.append(U[:, i] * U[:, j])
    return np.column_stack(cols)


def quadratic_basis_size(dim: int) -> int:
    return 1 + dim + dim * (dim + 1) // 2


def fit_prs(data: TrainingSet, degree: int = 2) -> PRSModel:
    """Least-squares polynomial fit over the full monomial basis.

    Degree 2 downgrades automatically to degree 1 when there are fewer
    points than quadratic basis functions (flagged via ``downgraded``);
    rank deficiency is flagged via ``regularized`` and resolved by the
    minimum-norm least-squares solution.
    """
    if degree not in (1, 2):
        raise ValueError("degree must be 1 or 2")
    downgraded = False
    if degree == 2 and data.n < quadratic_basis_size(data.dim):
        degree = 1
        downgraded = True
    X = _monomial_basis(data.x_norm, degree)
    coef, _, rank, _ = np.linalg.lstsq(X, data.y_norm, rcond=None)
    return PRSModel(
        train=data,
        coef=coef,
        degree=degree,
        downgraded=downgraded,
        regularized=rank < X.shape[1],
    )


def predict_prs(model: PRSModel, x):
    X, single = _as_batch(x)
    U = model.train.normalize(X)
    vals = _monomial_basis(U, model.degree) @ model.coef
    out = model.train.unstandardize(vals)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Inverse-distance-weighted k-nearest-neighbors
# ---------------------------------------------------------------------------

@dataclass
class KNNModel:
    train: TrainingSet
    k: int


def fit_knn(data: TrainingSet, k: Optional[int] = None) -> KNNModel:
    """Store the training set with neighbor count k (default min(5, n))."""
    if k is None:
        k = min(5, data.n)
    if not 1 <= k <= data.n:
        raise ValueError(f"k must be in [1, {data.n}]")
    return KNNModel(train=data, k=k)


def knn_neighbor_indices(model: KNNModel, U: np.ndarray) -> np.ndarray:
    """Indices of the k nearest training points per query row.

    Distances are Euclidean in normalized input space; distance ties are
    broken by lower training index.
    """
    d = cdist(U, model.train.x_norm)
    return np.argsort(d, axis=1, kind="stable")[:, : model.k], d


def predict_knn(model: KNNModel, x):
    """Inverse-distance-weighted mean of the k nearest targets.

    A query coinciding with a training point (distance < 1e-12 in
    normalized space) returns that point's target directly.
    """
    X, single = _as_batch(x)
    U = model.train.normalize(X)
    nbrs, d = knn_neighbor_indices(model, U)
    nd = np.take_along_axis(d, nbrs, axis=1)
    targets = model.train.targets[nbrs]
    out = np.empty(U.shape[0])
    for i in range(U.shape[0]):
        if nd[i, 0] < 1e-12:
            out[i] = targets[i, 0]
        else:
            w = 1.0 / nd[i]
            out[i] = float(w @ targets[i]) / float(w.sum())
    return float(out[0]) if single else out
