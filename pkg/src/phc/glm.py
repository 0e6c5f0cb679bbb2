"""Lasso-penalized logistic regression with cross-validated penalty selection.

The solver minimizes the mean negative Bernoulli log-likelihood plus an l1
penalty over internally standardized columns (intercept unpenalized) and
reports coefficients on the original scale. Fitting is a pure function of its
arguments, so many fits may run concurrently.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._kernels import cd_lasso_logistic
from .data import DataError

EPS_CLIP = 1e-7
W_MIN = 1e-5


class ConvergenceError(RuntimeError):
    """Solver failed to reach the KKT tolerance within its iteration budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics


class UnstratifiedFoldsWarning(UserWarning):
    """Raised when class counts are too small for stratified CV folds."""


@dataclass(frozen=True)
class GlmOptions:
    """Knobs shared by every penalized fit in a run."""

    n_lambda: int = 50
    eps_ratio: float = 1e-3
    n_folds: int = 5
    kkt_tol: float = 1e-7
    max_outer: int = 1000
    max_sweeps: int = 10000


@dataclass(frozen=True)
class FitDiagnostics:
    iterations: int
    sweeps: int
    converged: bool
    kkt: float
    active_set_size: int
    objective_path: tuple[float, ...] = ()
    degenerate: bool = False


@dataclass(frozen=True, eq=False)
class FittedModel:
    """A fitted penalized logistic model, reported on the original feature scale."""

    intercept: float
    coefficients: np.ndarray
    lam: float
    means: np.ndarray
    scales: np.ndarray
    n_train: int
    diagnostics: FitDiagnostics
    feature_names: tuple[str, ...] | None = None

    def to_json_dict(self) -> dict:
        names = self.feature_names or tuple(f"x{j + 1}" for j in range(self.coefficients.size))
        return {
            "intercept": float(self.intercept),
            "coefficients": [
                {"name": name, "value": float(v)} for name, v in zip(names, self.coefficients)
            ],
            "lambda": float(self.lam),
            "n_train": int(self.n_train),
            "converged": bool(self.diagnostics.converged),
        }


@dataclass(frozen=True, eq=False)
class LambdaPath:
    values: np.ndarray
    n_lambda: int
    eps_ratio: float


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _clipped_rate(y: np.ndarray) -> float:
    return float(min(max(float(np.mean(y)), EPS_CLIP), 1.0 - EPS_CLIP))


def standardize(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and scale columns; constant columns get the scale sentinel 1."""
    X = np.asarray(X, dtype=np.float64)
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales = np.where(scales > 0.0, scales, 1.0)
    Xs = (X - means) / scales
    return np.asfortranarray(Xs), means, scales


def lambda_max(Xs: np.ndarray, y: np.ndarray) -> float:
    """Smallest penalty that forces the all-zero coefficient vector.

    ``Xs`` must be standardized. A constant outcome is degenerate and yields
    0.0 (as does a design orthogonal to the centered outcome).
    """
    y = np.asarray(y, dtype=np.float64)
    r = y - y.mean()
    if np.all(r == 0.0):
        return 0.0
    return float(np.max(np.abs(Xs.T @ r)) / y.size)


def make_lambda_path(Xs: np.ndarray, y: np.ndarray, n_lambda: int = 50, eps_ratio: float = 1e-3) -> LambdaPath:
    """Log-spaced decreasing penalty grid from lambda_max down to lambda_max * eps_ratio."""
    if n_lambda < 1:
        raise DataError("n_lambda must be >= 1")
    if not (0.0 < eps_ratio < 1.0):
        raise DataError("eps_ratio must be in (0, 1)")
    lmax = lambda_max(Xs, y)
    if lmax == 0.0:
        return LambdaPath(values=np.asarray([0.0]), n_lambda=1, eps_ratio=eps_ratio)
    if n_lambda == 1:
        values = np.asarray([lmax])
    else:
        exponents = np.arange(n_lambda) / (n_lambda - 1)
        values = lmax * eps_ratio**exponents
    return LambdaPath(values=values, n_lambda=n_lambda, eps_ratio=eps_ratio)


def _degenerate_model(y, lam, n, p, feature_names) -> FittedModel:
    diag = FitDiagnostics(
        iterations=0, sweeps=0, converged=True, kkt=0.0, active_set_size=0, degenerate=True
    )
    return FittedModel(
        intercept=_logit(_clipped_rate(y)),
        coefficients=np.zeros(p),
        lam=float(lam),
        means=np.zeros(p),
        scales=np.ones(p),
        n_train=n,
        diagnostics=diag,
        feature_names=feature_names,
    )


def _destandardized(b0, beta_std, means, scales, lam, n, diag, feature_names) -> FittedModel:
    coef = beta_std / scales
    intercept = float(b0 - np.sum(beta_std * (means / scales)))
    return FittedModel(
        intercept=intercept,
        coefficients=coef,
        lam=float(lam),
        means=means,
        scales=scales,
        n_train=n,
        diagnostics=diag,
        feature_names=feature_names,
    )


def _solve_std(Xs, y, lam, opts, b0, beta):
    """Run the kernel once in standardized coordinates; raise on non-convergence."""
    out = cd_lasso_logistic(
        Xs,
        y,
        float(lam),
        float(b0),
        beta,
        opts.kkt_tol,
        opts.max_outer,
        opts.max_sweeps,
        W_MIN,
    )
    b0_new, beta_new, iters, sweeps, converged, kkt, obj_hist, n_obj = out
    diag = FitDiagnostics(
        iterations=int(iters),
        sweeps=int(sweeps),
        converged=bool(converged),
        kkt=float(kkt),
        active_set_size=int(np.count_nonzero(beta_new)),
        objective_path=tuple(float(v) for v in obj_hist[:n_obj]),
    )
    if not converged:
        raise ConvergenceError(
            f"lasso-logistic solver did not converge (lam={lam:.6g}, kkt={kkt:.3g}, "
            f"iterations={iters}, sweeps={sweeps})",
            diagnostics=diag,
        )
    return b0_new, beta_new, diag


def _validate_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise DataError("X must be a 2-D matrix")
    if y.shape != (X.shape[0],):
        raise DataError("y length must match the number of rows of X")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("y entries must all be 0 or 1")
    return X, y


def fit_lasso_logistic(X, y, lam: float, opts: GlmOptions | None = None, feature_names=None) -> FittedModel:
    """Fit the penalized logistic model at a single penalty value.

    The returned optimum carries a KKT certificate at ``opts.kkt_tol``: for
    active coordinates |grad_j + lam * sign(beta_j)| <= tol, for inactive ones
    |grad_j| <= lam + tol. A constant outcome short-circuits to the
    intercept-only model at the clipped empirical rate.
    """
    opts = opts or GlmOptions()
    X, y = _validate_xy(X, y)
    if lam < 0.0:
        raise DataError("lam must be >= 0")
    n, p = X.shape
    if np.all(y == y[0]):
        return _degenerate_model(y, lam, n, p, feature_names)
    if n < 2:
        raise DataError("need at least 2 rows to fit a non-degenerate model")
    Xs, means, scales = standardize(X)
    b0, beta, diag = _solve_std(Xs, y, lam, opts, _logit(_clipped_rate(y)), np.zeros(p))
    return _destandardized(b0, beta, means, scales, lam, n, diag, feature_names)


def fit_lasso_path(X, y, lambdas, opts: GlmOptions | None = None, feature_names=None) -> list[FittedModel]:
    """Fit a decreasing penalty sequence with warm starts; one model per value."""
    opts = opts or GlmOptions()
    X, y = _validate_xy(X, y)
    values = lambdas.values if isinstance(lambdas, LambdaPath) else np.asarray(lambdas, dtype=np.float64)
    n, p = X.shape
    if np.all(y == y[0]):
        return [_degenerate_model(y, lam, n, p, feature_names) for lam in values]
    Xs, means, scales = standardize(X)
    b0 = _logit(_clipped_rate(y))
    beta = np.zeros(p)
    models = []
    for lam in values:
        b0, beta, diag = _solve_std(Xs, y, lam, opts, b0, beta)
        models.append(_destandardized(b0, beta.copy(), means, scales, lam, n, diag, feature_names))
    return models


def _heldout_loglik_curve(X_tr, y_tr, X_ho, y_ho, values, opts):
    """Held-out log-likelihood per penalty value for one fold, warm-started."""
    n, p = X_tr.shape
    curve = np.empty(values.size)
    if np.all(y_tr == y_tr[0]):
        b0 = _logit(_clipped_rate(y_tr))
        p_hat = np.clip(1.0 / (1.0 + np.exp(-b0)), EPS_CLIP, 1.0 - EPS_CLIP)
        ll = float(np.sum(np.where(y_ho == 1, np.log(p_hat), np.log1p(-p_hat))))
        curve[:] = ll
        return curve
    Xs, means, scales = standardize(X_tr)
    Xs_ho = (X_ho - means) / scales
    b0 = _logit(_clipped_rate(y_tr))
    beta = np.zeros(p)
    for k, lam in enumerate(values):
        b0, beta, _ = _solve_std(Xs, y_tr, lam, opts, b0, beta)
        eta = b0 + Xs_ho @ beta
        p_hat = np.clip(1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700))), EPS_CLIP, 1.0 - EPS_CLIP)
        curve[k] = float(np.sum(np.where(y_ho == 1, np.log(p_hat), np.log1p(-p_hat))))
    return curve


def _fold_codes(y: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold id per row; stratified by class when every class has >= k members."""
    n = y.size
    codes = np.empty(n, dtype=np.int64)
    n_pos = int(np.sum(y == 1))
    n_neg = n - n_pos
    if min(n_pos, n_neg) >= k and n_pos > 0 and n_neg > 0:
        for cls in (0, 1):
            idx = np.flatnonzero(y == cls)
            perm = rng.permutation(idx)
            codes[perm] = np.arange(perm.size) % k
    else:
        warnings.warn(
            "too few members of a class to stratify; using unstratified folds",
            UnstratifiedFoldsWarning,
            stacklevel=3,
        )
        perm = rng.permutation(n)
        codes[perm] = np.arange(n) % k
    return codes


def cv_select_lambda(X, y, path, k_folds: int = 5, seed: int = 0, opts: GlmOptions | None = None):
    """Pick the penalty maximizing mean held-out log-likelihood across folds.

    Ties break toward the larger (sparser) penalty. Deterministic given the
    seed; fold results are combined by index so scheduling cannot matter.
    Returns (lambda_star, cv_curve) with the curve aligned to the path.
    """
    opts = opts or GlmOptions()
    X, y = _validate_xy(X, y)
    values = path.values if isinstance(path, LambdaPath) else np.asarray(path, dtype=np.float64)
    if values.size == 0:
        raise DataError("empty lambda path")
    if values.size == 1:
        return float(values[0]), np.zeros(1)
    if k_folds < 2:
        raise DataError("k_folds must be >= 2")
    n = y.size
    k = min(k_folds, n)
    rng = np.random.default_rng(seed)
    codes = _fold_codes(y, k, rng)
    per_fold = np.empty((k, values.size))
    for f in range(k):
        ho = codes == f
        per_fold[f] = _heldout_loglik_curve(X[~ho], y[~ho], X[ho], y[ho], values, opts)
    curve = per_fold.mean(axis=0)
    best = int(np.argmax(curve))  # first max = largest lambda on a decreasing path
    return float(values[best]), curve


@dataclass(frozen=True, eq=False)
class CVFitResult:
    model: FittedModel
    lambda_star: float
    cv_curve: np.ndarray
    path: LambdaPath


def fit_lasso_logistic_cv(
    X, y, opts: GlmOptions | None = None, seed: int = 0, feature_names=None
) -> CVFitResult:
    """Full pipeline: penalty path, k-fold CV selection, warm-started final fit."""
    opts = opts or GlmOptions()
    X, y = _validate_xy(X, y)
    n, p = X.shape
    if np.all(y == y[0]):
        model = _degenerate_model(y, 0.0, n, p, feature_names)
        return CVFitResult(model=model, lambda_star=0.0, cv_curve=np.zeros(1), path=LambdaPath(np.asarray([0.0]), 1, opts.eps_ratio))
    Xs, _, _ = standardize(X)
    path = make_lambda_path(Xs, y, n_lambda=opts.n_lambda, eps_ratio=opts.eps_ratio)
    lam_star, curve = cv_select_lambda(X, y, path, k_folds=opts.n_folds, seed=seed, opts=opts)
    upto = int(np.flatnonzero(path.values == lam_star)[0]) + 1
    models = fit_lasso_path(X, y, path.values[:upto], opts=opts, feature_names=feature_names)
    return CVFitResult(model=models[-1], lambda_star=lam_star, cv_curve=curve, path=path)


def predict_proba(model: FittedModel, X_new) -> np.ndarray:
    """Predicted event probability, clipped to [EPS_CLIP, 1 - EPS_CLIP]."""
    X_new = np.asarray(X_new, dtype=np.float64)
    if X_new.ndim != 2 or X_new.shape[1] != model.coefficients.size:
        raise DataError(
            f"X_new must have {model.coefficients.size} columns, got shape {X_new.shape}"
        )
    eta = model.intercept + X_new @ model.coefficients
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
    return np.clip(p, EPS_CLIP, 1.0 - EPS_CLIP)


def log_predictive_likelihood(y_test, p_hat) -> float:
    """Sum of Bernoulli log-masses; empty inputs contribute exactly 0."""
    y_test = np.asarray(y_test)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if y_test.shape != p_hat.shape:
        raise DataError("y_test and p_hat must have the same length")
    if y_test.size == 0:
        return 0.0
    return float(np.sum(np.where(y_test == 1, np.log(p_hat), np.log1p(-p_hat))))


def kkt_violation(model: FittedModel, X, y) -> float:
    """Max subgradient-optimality violation of a fit, on its standardized scale."""
    X, y = _validate_xy(X, y)
    eta = model.intercept + X @ model.coefficients
    p = 1.0 / (1.0 + np.exp(-np.clip(eta, -700, 700)))
    r = p - y
    n = y.size
    Xs = (X - model.means) / model.scales
    grad = Xs.T @ r / n
    beta_std = model.coefficients * model.scales
    lam = model.lam
    worst = abs(float(np.mean(r)))
    for j in range(grad.size):
        if beta_std[j] > 0.0:
            v = abs(grad[j] + lam)
        elif beta_std[j] < 0.0:
            v = abs(grad[j] - lam)
        else:
            v = max(abs(grad[j]) - lam, 0.0)
        worst = max(worst, v)
    return worst


class LassoLogistic(BaseEstimator):
    """Sklearn-style front end for a single-penalty lasso logistic fit."""

    def __init__(self, lam=0.01, kkt_tol=1e-7, max_outer=1000, max_sweeps=10000):
        self.lam = lam
        self.kkt_tol = kkt_tol
        self.max_outer = max_outer
        self.max_sweeps = max_sweeps

    def _opts(self) -> GlmOptions:
        return GlmOptions(kkt_tol=self.kkt_tol, max_outer=self.max_outer, max_sweeps=self.max_sweeps)

    def fit(self, X, y):
        self.model_ = fit_lasso_logistic(X, y, self.lam, opts=self._opts())
        self.coef_ = self.model_.coefficients
        self.intercept_ = self.model_.intercept
        self.classes_ = np.asarray([0, 1])
        return self

    def predict_proba(self, X):
        p = predict_proba(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (predict_proba(self.model_, X) >= 0.5).astype(np.int64)


class LassoLogisticCV(BaseEstimator):
    """Lasso logistic regression with the penalty chosen by stratified k-fold CV."""

    def __init__(self, n_lambda=50, eps_ratio=1e-3, n_folds=5, seed=0, kkt_tol=1e-7,
                 max_outer=1000, max_sweeps=10000):
        self.n_lambda = n_lambda
        self.eps_ratio = eps_ratio
        self.n_folds = n_folds
        self.seed = seed
        self.kkt_tol = kkt_tol
        self.max_outer = max_outer
        self.max_sweeps = max_sweeps

    def _opts(self) -> GlmOptions:
        return GlmOptions(
            n_lambda=self.n_lambda,
            eps_ratio=self.eps_ratio,
            n_folds=self.n_folds,
            kkt_tol=self.kkt_tol,
            max_outer=self.max_outer,
            max_sweeps=self.max_sweeps,
        )

    def fit(self, X, y):
        res = fit_lasso_logistic_cv(X, y, opts=self._opts(), seed=self.seed)
        self.model_ = res.model
        self.lambda_ = res.lambda_star
        self.cv_curve_ = res.cv_curve
        self.lambda_path_ = res.path.values
        self.coef_ = self.model_.coefficients
        self.intercept_ = self.model_.intercept
        self.classes_ = np.asarray([0, 1])
        return self

    def predict_proba(self, X):
        p = predict_proba(self.model_, X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (predict_proba(self.model_, X) >= 0.5).astype(np.int64)
