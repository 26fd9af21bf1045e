"""Interior-point solver for the quantile-regression check-loss program.

The program min_b sum_i rho_tau(y_i - x_i'b) is solved through its bounded
dual: max y'a subject to X'a = (1 - tau) X'1 and a in [0, 1]^n. A primal-dual
path-following iteration with Mehrotra's predictor-corrector steps drives the
complementarity gap below tolerance; the Newton systems reduce to k x k
solves against X' Q X for a positive diagonal Q.

Because an optimal solution sits at a vertex that interpolates k rows of a
full-rank design, the interior-point iterate is finished with an exterior
pivoting pass: starting from the rows with the smallest residual magnitudes,
the pass checks the one-sided directional derivatives of the objective along
all basis-edge directions and pivots simplex-style until no descent
direction remains. The same pass doubles as the fallback when the
interior-point loop fails to converge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 100
STEP_SHRINK = 0.99995


class ConvergenceError(RuntimeError):
    """Neither the interior-point loop nor the exterior pass reached
    optimality; carries the final relative duality gap."""

    def __init__(self, message: str, duality_gap: float):
        super().__init__(message)
        self.duality_gap = duality_gap


@dataclass
class QrSolution:
    beta: np.ndarray
    residuals: np.ndarray
    objective: float
    iterations: int
    duality_gap: float
    used_fallback: bool
    basis: np.ndarray | None


def check_loss(residuals: np.ndarray, tau: float) -> float:
    """Total asymmetric absolute loss sum_i r_i (tau - 1[r_i < 0])."""
    r = np.asarray(residuals, dtype=float)
    return float(np.sum(r * (tau - (r < 0.0))))


def _validate(X: np.ndarray, y: np.ndarray, tau: float) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x k with len(y) == n")
    if X.shape[0] < X.shape[1]:
        raise ValueError("need at least as many observations as columns")
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie strictly inside (0, 1), got {tau}")
    return X, y


def _interior_point(
    X: np.ndarray, y: np.ndarray, tau: float, tol: float, max_iter: int
) -> tuple[np.ndarray, float, int, bool, np.ndarray]:
    n, k = X.shape
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    r = y - X @ beta
    eps0 = max(1e-8, 1e-4 * float(np.mean(np.abs(r))))
    # Multiplier pairing: z complements a (rows at the lower bound have
    # nonpositive residuals), w complements s = 1 - a; z - w = -r throughout.
    z = np.maximum(-r, 0.0) + eps0
    w = np.maximum(r, 0.0) + eps0
    a = np.full(n, 1.0 - tau)
    s = 1.0 - a
    scale = 1.0 + abs(check_loss(r, tau))
    gap = float(z @ a + w @ s)
    iterations = 0
    while gap > tol * scale and iterations < max_iter:
        iterations += 1
        q = 1.0 / (z / a + w / s)
        r_zw = z - w
        Xq = X * q[:, None]
        M = X.T @ Xq
        try:
            factor = cho_factor(M, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            M = M + (1e-12 * np.trace(M) + 1e-300) * np.eye(k)
            factor = cho_factor(M, lower=True, check_finite=False)

        # Affine predictor (mu = 0).
        dbeta_aff = cho_solve(factor, -(Xq.T @ r_zw), check_finite=False)
        da_aff = q * (-(X @ dbeta_aff) - r_zw)
        dz_aff = -z - (z / a) * da_aff
        dw_aff = -w + (w / s) * da_aff
        alpha_p_aff = _step_length(a, s, da_aff)
        alpha_d_aff = _step_length_dual(z, w, dz_aff, dw_aff)
        gap_aff = float(
            (z + alpha_d_aff * dz_aff) @ (a + alpha_p_aff * da_aff)
            + (w + alpha_d_aff * dw_aff) @ (s - alpha_p_aff * da_aff)
        )
        mu = (gap_aff / gap) ** 3 * gap / (2.0 * n)

        # Corrector with second-order complementarity terms.
        xi = (mu - da_aff * dz_aff) / a - (mu + da_aff * dw_aff) / s - r_zw
        dbeta = cho_solve(factor, Xq.T @ xi, check_finite=False)
        da = q * (-(X @ dbeta) + xi)
        dz = (mu - da_aff * dz_aff) / a - z - (z / a) * da
        dw = (mu + da_aff * dw_aff) / s - w + (w / s) * da
        alpha_p = _step_length(a, s, da)
        alpha_d = _step_length_dual(z, w, dz, dw)

        a += alpha_p * da
        s = 1.0 - a
        beta += alpha_d * dbeta
        z += alpha_d * dz
        w += alpha_d * dw
        gap = float(z @ a + w @ s)
    return beta, gap / scale, iterations, gap <= tol * scale, a


def _step_length(a: np.ndarray, s: np.ndarray, da: np.ndarray) -> float:
    alpha = 1.0
    neg = da < 0
    if np.any(neg):
        alpha = min(alpha, STEP_SHRINK * float(np.min(a[neg] / -da[neg])))
    pos = da > 0
    if np.any(pos):
        alpha = min(alpha, STEP_SHRINK * float(np.min(s[pos] / da[pos])))
    return alpha


def _step_length_dual(
    z: np.ndarray, w: np.ndarray, dz: np.ndarray, dw: np.ndarray
) -> float:
    alpha = 1.0
    neg = dz < 0
    if np.any(neg):
        alpha = min(alpha, STEP_SHRINK * float(np.min(z[neg] / -dz[neg])))
    neg = dw < 0
    if np.any(neg):
        alpha = min(alpha, STEP_SHRINK * float(np.min(w[neg] / -dw[neg])))
    return alpha


def _greedy_basis(X: np.ndarray, order: np.ndarray) -> np.ndarray:
    """First k rows, in preference order, that form a nonsingular block."""
    n, k = X.shape
    chosen: list[int] = []
    ortho: list[np.ndarray] = []
    for idx in order:
        row = X[idx].astype(float)
        v = row.copy()
        for u in ortho:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm > 1e-10 * (1.0 + np.linalg.norm(row)):
            ortho.append(v / norm)
            chosen.append(int(idx))
            if len(chosen) == k:
                return np.array(chosen)
    raise np.linalg.LinAlgError("design matrix is rank deficient")


def _one_sided(u: np.ndarray, tau: float) -> np.ndarray:
    """Directional derivative of the check loss at a zero residual."""
    return tau * np.maximum(u, 0.0) + (1.0 - tau) * np.maximum(-u, 0.0)


def _exterior_pivot(
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    start_beta: np.ndarray,
    max_pivots: int,
    a_hint: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, bool, int]:
    """Simplex-style vertex pass; returns (beta, basis, optimal, pivots).

    The starting basis prefers rows whose dual variables sit far from their
    bounds (those are the rows an optimal vertex interpolates), falling
    back to residual magnitudes. Basis exchanges update the inverse and the
    edge-direction table by rank-one corrections, with periodic
    refactorization for stability.
    """
    n, k = X.shape
    ztol = 1e-9 * (1.0 + float(np.max(np.abs(y), initial=0.0)))
    if a_hint is not None:
        order = np.argsort(-np.minimum(a_hint, 1.0 - a_hint), kind="stable")
    else:
        order = np.argsort(np.abs(y - X @ start_beta), kind="stable")
    basis = _greedy_basis(X, order)

    def refactor():
        nonlocal basis
        try:
            D = np.linalg.inv(X[basis])
        except np.linalg.LinAlgError:
            # drift produced a singular block: reseed from the start point
            basis = _greedy_basis(X, np.argsort(np.abs(y - X @ start_beta), kind="stable"))
            D = np.linalg.inv(X[basis])
        beta = D @ y[basis]
        r = y - X @ beta
        r[basis] = 0.0
        return D, X @ D, beta, r

    D, V, beta, r = refactor()
    pivots = 0
    since_refactor = 0
    while True:
        zero = np.abs(r) <= ztol
        psi = np.where(r > 0.0, tau, tau - 1.0)
        psi[zero] = 0.0
        base_grad = -(psi @ V)
        Vz = V[zero]
        grad_plus = base_grad + _one_sided(-Vz, tau).sum(axis=0)
        grad_minus = -base_grad + _one_sided(Vz, tau).sum(axis=0)
        col_scale = 1.0 + np.abs(V).sum(axis=0)
        h_plus = int(np.argmin(grad_plus / col_scale))
        h_minus = int(np.argmin(grad_minus / col_scale))
        if grad_plus[h_plus] / col_scale[h_plus] <= grad_minus[h_minus] / col_scale[h_minus]:
            h, direction, slope = h_plus, 1.0, float(grad_plus[h_plus])
        else:
            h, direction, slope = h_minus, -1.0, float(grad_minus[h_minus])
        if slope >= -1e-9 * col_scale[h]:
            return beta, basis, True, pivots
        if pivots >= max_pivots:
            return beta, basis, False, pivots
        # Ratio test along the chosen edge: walk breakpoints until the
        # objective slope turns nonnegative; that row enters the basis.
        u = -direction * V[:, h]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = -r / u
        t[np.abs(u) < 1e-14] = np.inf
        t[t <= ztol] = np.inf
        t[basis] = np.inf
        finite = np.flatnonzero(np.isfinite(t))
        if finite.size == 0:
            return beta, basis, False, pivots
        walk = finite[np.argsort(t[finite], kind="stable")]
        gains = np.cumsum(np.abs(u[walk]))
        hit = np.searchsorted(gains, -slope)
        if hit >= walk.size:
            return beta, basis, False, pivots
        entering = int(walk[hit])
        pivots += 1
        since_refactor += 1
        x_old = X[basis[h]]
        x_new = X[entering]
        d_col = D[:, h].copy()
        u_vec = (x_new - x_old) @ D
        gamma = 1.0 + u_vec[h]
        basis[h] = entering
        if abs(gamma) < 1e-8 or since_refactor >= 50:
            D, V, beta, r = refactor()
            since_refactor = 0
        else:
            D -= np.outer(d_col, u_vec) / gamma
            V -= np.outer(X @ d_col, u_vec) / gamma
            beta = D @ y[basis]
            r = y - X @ beta
            r[basis] = 0.0


def solve_qr(
    X: np.ndarray,
    y: np.ndarray,
    tau: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    polish: bool = True,
) -> QrSolution:
    """Minimize the check loss; interior point first, vertex pass after.

    With ``polish`` enabled (the default) the returned coefficients
    interpolate k rows exactly. Raises :class:`ConvergenceError` when the
    interior-point loop stalls and the exterior pass cannot certify a
    vertex optimum either.
    """
    X, y = _validate(X, y, tau)
    n, k = X.shape
    beta, gap, iterations, converged, a = _interior_point(X, y, tau, tol, max_iter)
    used_fallback = not converged
    basis = None
    if polish or used_fallback:
        max_pivots = max(500, 20 * k) if used_fallback else max(300, 10 * k)
        polished, pivot_basis, optimal, _ = _exterior_pivot(
            X, y, tau, beta, max_pivots, a_hint=a
        )
        if optimal:
            candidate = check_loss(y - X @ polished, tau)
            incumbent = check_loss(y - X @ beta, tau)
            if candidate <= incumbent + 1e-12 * (1.0 + incumbent):
                beta, basis = polished, pivot_basis
            converged = True
        elif used_fallback:
            raise ConvergenceError(
                f"quantile program did not converge in {max_iter} iterations "
                f"(relative duality gap {gap:.3e}) and the exterior pass "
                f"stalled after {max_pivots} pivots",
                duality_gap=gap,
            )
    residuals = y - X @ beta
    return QrSolution(
        beta=beta,
        residuals=residuals,
        objective=check_loss(residuals, tau),
        iterations=iterations,
        duality_gap=gap,
        used_fallback=used_fallback,
        basis=basis,
    )


def sign_counts(residuals: np.ndarray, scale: float | None = None) -> tuple[int, int]:
    """(#negative, #nonpositive) with a residual-scale zero tolerance.

    At an exact optimum the counts bracket n * tau: the number of strictly
    negative residuals is at most n * tau, which is at most the number of
    nonpositive ones.
    """
    r = np.asarray(residuals, dtype=float)
    if scale is None:
        scale = float(np.max(np.abs(r), initial=0.0))
    ztol = 1e-9 * (1.0 + scale)
    negative = int(np.sum(r < -ztol))
    nonpositive = int(np.sum(r <= ztol))
    return negative, nonpositive
