"""Estimation and inference: OLS, quantile regression, and the L1 variant.

OLS (on log-transformed delays) provides the baseline with
heteroskedasticity-consistent covariance options. Quantile regressions on
the raw delays run through the interior-point core in
:mod:`coorddelay.qrsolver`; the L1-penalized variant reuses the same core on
an augmented program whose pseudo-observations encode the penalty. Nested
models are compared with bootstrap-covariance Wald statistics, and slope
equality across quantiles is tested with the conventional asymptotic
covariance built from difference-quotient sparsity estimates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.linalg import qr as scipy_qr

from .metrics import ModelMatrix
from .qrsolver import ConvergenceError, check_loss, solve_qr

log = logging.getLogger(__name__)

DEFAULT_BOOTSTRAP_REPS = 200


class RankDeficiencyError(ValueError):
    """Raised when the design matrix is not of full column rank."""

    def __init__(self, columns: list[str]):
        super().__init__(f"design matrix is rank deficient; collinear columns: {columns}")
        self.columns = columns


@dataclass
class FitResult:
    method: str
    coefficients: np.ndarray
    residuals: np.ndarray
    n: int
    k: int
    column_names: list[str]
    loglik_surrogate: float
    aic: float
    objective: float
    tau: float | None = None
    lam: float | None = None
    covariance: np.ndarray | None = None
    adj_r2: float | None = None
    iterations: int = 0
    duality_gap: float = 0.0
    used_fallback: bool = False
    X: np.ndarray = field(default=None, repr=False)
    y: np.ndarray = field(default=None, repr=False)


@dataclass
class TestResult:
    statistic: float
    df: tuple[float, float]
    p_value: float
    description: str


def _design(X) -> tuple[np.ndarray, list[str]]:
    if isinstance(X, ModelMatrix):
        return np.asarray(X.rows, dtype=float), list(X.column_names)
    arr = np.asarray(X, dtype=float)
    return arr, [f"x{j}" for j in range(arr.shape[1])]


def _check_rank(X: np.ndarray, names: list[str]) -> None:
    _, R, pivots = scipy_qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = max(X.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        collinear = [names[p] for p in pivots[rank:]]
        raise RankDeficiencyError(sorted(collinear))


def ols_fit(X, y_log: np.ndarray) -> FitResult:
    """Least-squares fit of the log-transformed delays.

    The classical covariance is attached; use :func:`hc_covariance` for the
    heteroskedasticity-adjusted variants.
    """
    arr, names = _design(X)
    y_log = np.asarray(y_log, dtype=float).ravel()
    _check_rank(arr, names)
    n, k = arr.shape
    beta, _, _, _ = np.linalg.lstsq(arr, y_log, rcond=None)
    residuals = y_log - arr @ beta
    rss = float(residuals @ residuals)
    sigma2 = rss / (n - k) if n > k else float("nan")
    xtx_inv = np.linalg.inv(arr.T @ arr)
    tss = float(np.sum((y_log - y_log.mean()) ** 2))
    r2 = 1.0 - rss / tss if tss > 0 else float("nan")
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / (n - k) if n > k else float("nan")
    if rss > 0.0:
        loglik = -0.5 * n * (math.log(2.0 * math.pi) + math.log(rss / n) + 1.0)
    else:
        # perfect fit: the Gaussian likelihood diverges, guard surfaces in aic()
        loglik = float("nan")
    return FitResult(
        method="ols",
        coefficients=beta,
        residuals=residuals,
        n=n,
        k=k,
        column_names=names,
        loglik_surrogate=loglik,
        aic=-2.0 * loglik + 2.0 * k,
        objective=rss,
        covariance=sigma2 * xtx_inv,
        adj_r2=adj_r2,
        X=arr,
        y=y_log,
    )


def hc_covariance(fit: FitResult, variant: str = "HC3") -> np.ndarray:
    """Sandwich covariance with the requested small-sample weighting.

    HC0 uses raw squared residuals, HC1 rescales by n/(n-k), and HC2/HC3
    deflate each residual by its leverage once or twice.
    """
    if fit.method != "ols":
        raise ValueError("heteroskedasticity adjustment applies to OLS fits")
    variant = variant.upper()
    X, e = fit.X, fit.residuals
    n, k = fit.n, fit.k
    bread = np.linalg.inv(X.T @ X)
    if variant in ("HC0", "HC1"):
        weights = np.ones(n)
    elif variant in ("HC2", "HC3"):
        leverage = np.einsum("ij,ij->i", X @ bread, X)
        denom = 1.0 - leverage
        weights = 1.0 / denom if variant == "HC2" else 1.0 / denom**2
    else:
        raise ValueError(f"unknown variant {variant!r}; expected HC0..HC3")
    meat = (X * (weights * e**2)[:, None]).T @ X
    cov = bread @ meat @ bread
    if variant == "HC1":
        cov = cov * (n / (n - k))
    return cov


def _qr_loglik(residuals: np.ndarray, tau: float, n: int) -> float:
    mean_loss = check_loss(residuals, tau) / n
    if mean_loss <= 0.0:
        # perfect fit: the surrogate diverges, guard surfaces in aic()
        return float("nan")
    return n * math.log(tau * (1.0 - tau)) - n - n * math.log(mean_loss)


def qr_fit(
    X,
    y: np.ndarray,
    tau: float,
    tol: float = 1e-7,
    max_iter: int = 100,
) -> FitResult:
    """Quantile regression on the raw (untransformed) delays."""
    arr, names = _design(X)
    y = np.asarray(y, dtype=float).ravel()
    _check_rank(arr, names)
    solution = solve_qr(arr, y, tau, tol=tol, max_iter=max_iter)
    n, k = arr.shape
    loglik = _qr_loglik(solution.residuals, tau, n)
    return FitResult(
        method="qr",
        coefficients=solution.beta,
        residuals=solution.residuals,
        n=n,
        k=k,
        column_names=names,
        loglik_surrogate=loglik,
        aic=-2.0 * loglik + 2.0 * k,
        objective=solution.objective,
        tau=tau,
        iterations=solution.iterations,
        duality_gap=solution.duality_gap,
        used_fallback=solution.used_fallback,
        X=arr,
        y=y,
    )


def _augmented_program(
    X: np.ndarray, y: np.ndarray, lam: float
) -> tuple[np.ndarray, np.ndarray]:
    """Append two pseudo-rows per slope so the extra check loss equals the
    L1 penalty; the intercept column stays unpenalized."""
    n, k = X.shape
    slopes = k - 1
    E = np.zeros((slopes, k))
    E[np.arange(slopes), np.arange(1, k)] = lam
    X_aug = np.vstack([X, E, -E])
    y_aug = np.concatenate([y, np.zeros(2 * slopes)])
    return X_aug, y_aug


def qr_lasso_fit(
    X,
    y: np.ndarray,
    tau: float,
    lam: float,
    tol: float = 1e-7,
    max_iter: int = 100,
) -> FitResult:
    """L1-penalized quantile regression via the augmented program.

    A zero penalty reproduces :func:`qr_fit`. Residuals, objective, and the
    information criterion are reported for the original observations; the
    penalty enters only the objective.
    """
    if lam < 0:
        raise ValueError(f"penalty must be nonnegative, got {lam}")
    arr, names = _design(X)
    y = np.asarray(y, dtype=float).ravel()
    _check_rank(arr, names)
    n, k = arr.shape
    if lam == 0.0:
        fit = qr_fit(arr, y, tau, tol=tol, max_iter=max_iter)
        fit.method = "qr-lasso"
        fit.lam = 0.0
        fit.column_names = names
        return fit
    X_aug, y_aug = _augmented_program(arr, y, lam)
    solution = solve_qr(X_aug, y_aug, tau, tol=tol, max_iter=max_iter)
    residuals = y - arr @ solution.beta
    objective = check_loss(residuals, tau) + lam * float(np.sum(np.abs(solution.beta[1:])))
    loglik = _qr_loglik(residuals, tau, n)
    return FitResult(
        method="qr-lasso",
        coefficients=solution.beta,
        residuals=residuals,
        n=n,
        k=k,
        column_names=names,
        loglik_surrogate=loglik,
        aic=-2.0 * loglik + 2.0 * k,
        objective=objective,
        tau=tau,
        lam=lam,
        iterations=solution.iterations,
        duality_gap=solution.duality_gap,
        used_fallback=solution.used_fallback,
        X=arr,
        y=y,
    )


def aic(fit: FitResult) -> float:
    if math.isnan(fit.aic):
        raise ValueError("zero residual loss: information criterion diverges to -inf")
    return fit.aic


def _refit_coefficients(fit: FitResult, idx: np.ndarray) -> np.ndarray:
    Xb, yb = fit.X[idx], fit.y[idx]
    if fit.method == "ols":
        beta, _, rank, _ = np.linalg.lstsq(Xb, yb, rcond=None)
        if rank < fit.k:
            raise np.linalg.LinAlgError("rank-deficient resample")
        return beta
    if np.linalg.matrix_rank(Xb) < fit.k:
        raise np.linalg.LinAlgError("rank-deficient resample")
    if fit.method == "qr":
        return solve_qr(Xb, yb, fit.tau).beta
    X_aug, y_aug = _augmented_program(Xb, yb, fit.lam)
    return solve_qr(X_aug, y_aug, fit.tau).beta


def _bootstrap_coefficients(
    fit: FitResult, reps: int, seed: int, max_retries: int = 10
) -> np.ndarray:
    """Pairs-resampled coefficient replicates, deterministic given the seed.

    Each replicate draws from its own spawned RNG stream, so the result does
    not depend on evaluation order; degenerate (rank-deficient) resamples
    are redrawn up to ``max_retries`` times.
    """
    n = fit.n
    streams = np.random.SeedSequence(seed).spawn(reps)
    out = np.empty((reps, fit.k))
    for i, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        for attempt in range(max_retries + 1):
            idx = rng.integers(0, n, size=n)
            try:
                out[i] = _refit_coefficients(fit, idx)
                break
            except (np.linalg.LinAlgError, ConvergenceError):
                if attempt == max_retries:
                    raise RuntimeError(
                        f"bootstrap replicate {i} degenerate after {max_retries} redraws"
                    )
    return out


def bootstrap_se(
    X,
    y: np.ndarray,
    tau: float,
    reps: int = DEFAULT_BOOTSTRAP_REPS,
    seed: int = 0,
) -> np.ndarray:
    """Pairs-bootstrap standard errors for a quantile regression."""
    if reps < 50:
        raise ValueError(f"need at least 50 bootstrap replicates, got {reps}")
    fit = qr_fit(X, y, tau)
    coefs = _bootstrap_coefficients(fit, reps, seed)
    return np.std(coefs, axis=0, ddof=1)


def bootstrap_covariance(
    fit: FitResult, reps: int = DEFAULT_BOOTSTRAP_REPS, seed: int = 0
) -> np.ndarray:
    coefs = _bootstrap_coefficients(fit, reps, seed)
    return np.cov(coefs, rowvar=False, ddof=1)


def nested_wald_test(
    fit_small: FitResult,
    fit_large: FitResult,
    bootstrap_reps: int = DEFAULT_BOOTSTRAP_REPS,
    seed: int = 0,
) -> TestResult:
    """Wald test that the columns added by the larger model are irrelevant.

    The covariance of the added coefficients comes from pairs resampling of
    the larger model; the statistic is referred to an F distribution.
    """
    k_small, k_large = fit_small.k, fit_large.k
    if k_small >= k_large:
        raise ValueError("small model must have fewer columns than large model")
    if fit_large.column_names[:k_small] != fit_small.column_names:
        raise ValueError("small-model columns must be a prefix of the large model's")
    if not np.array_equal(fit_small.X, fit_large.X[:, :k_small]):
        raise ValueError("models were not fitted on the same observations")
    added = np.arange(k_small, k_large)
    coefs = _bootstrap_coefficients(fit_large, bootstrap_reps, seed)
    V = np.cov(coefs[:, added], rowvar=False, ddof=1)
    V = np.atleast_2d(V)
    b = fit_large.coefficients[added]
    try:
        solved = np.linalg.solve(V, b)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular bootstrap covariance for the added block")
    q = added.size
    wald = float(b @ solved)
    statistic = wald / q
    df = (q, fit_large.n - k_large)
    p_value = float(stats.f.sf(statistic, *df))
    return TestResult(
        statistic=statistic,
        df=df,
        p_value=p_value,
        description=(
            f"nested Wald ({fit_large.method}"
            + (f", tau={fit_large.tau}" if fit_large.tau is not None else "")
            + f"): +{q} columns, {bootstrap_reps} bootstrap reps"
        ),
    )


def hall_sheather_bandwidth(tau: float, n: int, alpha: float = 0.05) -> float:
    """Bandwidth for difference-quotient sparsity estimation."""
    z_tau = stats.norm.ppf(tau)
    z_alpha = stats.norm.ppf(1.0 - alpha / 2.0)
    num = 1.5 * stats.norm.pdf(z_tau) ** 2
    den = 2.0 * z_tau**2 + 1.0
    return float(n ** (-1.0 / 3.0) * z_alpha ** (2.0 / 3.0) * (num / den) ** (1.0 / 3.0))


def sparsity(fit: FitResult, alpha: float = 0.05) -> float:
    """Difference-quotient estimate of 1/f(F^-1(tau)) from fit residuals."""
    tau, n = fit.tau, fit.n
    h = hall_sheather_bandwidth(tau, n, alpha)
    if tau - h <= 0.0 or tau + h >= 1.0:
        raise ValueError(
            f"tau={tau} too close to the boundary for bandwidth h={h:.4f}"
        )
    hi = float(np.quantile(fit.residuals, tau + h))
    lo = float(np.quantile(fit.residuals, tau - h))
    estimate = (hi - lo) / (2.0 * h)
    if estimate <= 0.0:
        raise ValueError("nonpositive sparsity estimate")
    return estimate


def between_quantile_test(fits: list[FitResult], coef_index: int) -> TestResult:
    """Wald test of slope equality for one coefficient across quantiles.

    Uses the joint asymptotic covariance of quantile-regression estimates
    under exchangeable errors, with sparsity estimated by the
    difference-quotient method at the Hall-Sheather bandwidth.
    """
    if len(fits) < 2:
        raise ValueError("need at least two quantile fits")
    fits = sorted(fits, key=lambda f: f.tau)
    taus = [f.tau for f in fits]
    if len(set(taus)) != len(taus):
        raise ValueError("quantile levels must be distinct")
    base = fits[0]
    for fit in fits[1:]:
        if fit.method not in ("qr", "qr-lasso") or base.method not in ("qr", "qr-lasso"):
            raise ValueError("between-quantile test applies to quantile fits")
        if fit.X.shape != base.X.shape or not np.array_equal(fit.X, base.X):
            raise ValueError("all fits must share the same design matrix")
    n, k = base.n, base.k
    m = len(fits)
    xtx_inv = np.linalg.inv(base.X.T @ base.X)
    d_qq = float(xtx_inv[coef_index, coef_index])
    s = np.array([sparsity(fit) for fit in fits])
    t = np.asarray(taus)
    omega = (np.minimum.outer(t, t) - np.outer(t, t)) * np.outer(s, s) * d_qq
    v = np.array([fit.coefficients[coef_index] for fit in fits])
    C = np.diff(np.eye(m), axis=0) * -1.0  # rows: v_i - v_{i+1}
    delta = C @ v
    cov = C @ omega @ C.T
    try:
        solved = np.linalg.solve(cov, delta)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("singular between-quantile covariance")
    wald = float(delta @ solved)
    statistic = wald / (m - 1)
    df = (m - 1, n - k)
    p_value = float(stats.f.sf(statistic, *df))
    return TestResult(
        statistic=statistic,
        df=df,
        p_value=p_value,
        description=f"slope equality across taus {taus} for column {coef_index}",
    )


def coefficient_pvalues(fit: FitResult, se: np.ndarray) -> np.ndarray:
    """Two-sided p-values given standard errors (t for OLS, normal for QR)."""
    se = np.asarray(se, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        zstat = np.abs(fit.coefficients / se)
    if fit.method == "ols":
        return 2.0 * stats.t.sf(zstat, fit.n - fit.k)
    return 2.0 * stats.norm.sf(zstat)
