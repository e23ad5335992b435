"""Interpolation baselines: kriging, multikernel ridge, nuclear-norm completion, KNN.

All estimators take a single-frequency sampled map (``values`` and ``mask``
as ``ny x nx`` arrays) and return a full ``ny x nx`` estimate in the same
units as the input. The benchmark feeds them standardized dB values.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from radiomap.gridmap import Grid

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelConfig:
    sigma_k: float
    ridge: float = 1e-5
    kernel_family: str = "gaussian"
    num_kernels: int = 1

    def __post_init__(self):
        if not self.sigma_k > 0:
            raise ValueError("sigma_k must be positive")
        if not self.ridge > 0:
            raise ValueError("ridge must be positive")
        if self.kernel_family not in ("gaussian", "laplacian"):
            raise ValueError(f"unknown kernel family {self.kernel_family!r}")
        if self.num_kernels < 1:
            raise ValueError("num_kernels must be >= 1")


class ConvergenceWarning(UserWarning):
    pass


def sigma_K(grid: Grid, omega_size: int) -> float:
    """Kernel width ``3 * sqrt(area / |omega|)``, about three mean sensor spacings."""
    if omega_size < 1:
        raise ValueError("sigma_K needs at least one measurement")
    area = grid.delta_y * grid.ny * grid.delta_x * grid.nx
    return 3.0 * np.sqrt(area / omega_size)


def multikernel_widths(sigma_k: float, num_kernels: int = 20) -> np.ndarray:
    """Widths evenly spaced over ``[0.1 * sigma_k, sigma_k]``."""
    if num_kernels == 1:
        return np.array([sigma_k])
    return np.linspace(0.1 * sigma_k, sigma_k, num_kernels)


def _as_slab(values):
    v = np.asarray(values, dtype=float)
    return v[:, :, 0] if v.ndim == 3 else v


def _observations(values, mask, grid):
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("estimator needs a non-empty sampling set")
    pts = grid.points()
    flat = m.ravel()
    return pts[flat], _as_slab(values).ravel()[flat], pts


def _pairwise(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return np.sqrt(d2), d2


def kernel_matrix(a, b, width: float, family: str) -> np.ndarray:
    d, d2 = _pairwise(a, b)
    if family == "gaussian":
        return np.exp(-d2 / width ** 2)
    return np.exp(-d / width)


def _ridge_solve(K, y, ridge):
    n = len(K)
    A = K + ridge * np.eye(n)
    jitter = 0.0
    for _ in range(8):
        try:
            c, low = linalg.cho_factor(A + jitter * np.eye(n), lower=True)
            return linalg.cho_solve((c, low), y)
        except linalg.LinAlgError:
            jitter = ridge if jitter == 0.0 else jitter * 10
    raise linalg.LinAlgError("kernel system is singular even after jitter escalation")


def kriging_weights(obs_pts, y, cfg: KernelConfig) -> np.ndarray:
    K = kernel_matrix(obs_pts, obs_pts, cfg.sigma_k, cfg.kernel_family)
    return _ridge_solve(K, y, cfg.ridge)


def kriging_estimate(values, mask, grid: Grid, cfg: KernelConfig) -> np.ndarray:
    """Kernel ridge regression ``alpha = (K + ridge I)^-1 y`` evaluated on every grid point.

    Observed points are smoothed, not interpolated exactly.
    """
    obs, y, pts = _observations(values, mask, grid)
    alpha = kriging_weights(obs, y, cfg)
    est = kernel_matrix(pts, obs, cfg.sigma_k, cfg.kernel_family) @ alpha
    return est.reshape(grid.shape)


def multikernel_estimate(values, mask, grid: Grid, cfg: KernelConfig) -> np.ndarray:
    """Multi-kernel ridge regression with Laplacian kernels.

    Minimizes ``||y - sum_m K_m a_m||^2 + ridge * sum_m a_m^T K_m a_m``. With
    every ``K_m`` positive definite the stationarity conditions force a common
    ``a_m = a`` with ``(sum_m K_m + ridge I) a = y``, which is what is solved.
    """
    obs, y, pts = _observations(values, mask, grid)
    widths = multikernel_widths(cfg.sigma_k, cfg.num_kernels)
    K = sum(kernel_matrix(obs, obs, s, "laplacian") for s in widths)
    alpha = _ridge_solve(K, y, cfg.ridge)
    k_eval = sum(kernel_matrix(pts, obs, s, "laplacian") for s in widths)
    return (k_eval @ alpha).reshape(grid.shape)


def svt(X: np.ndarray, tau: float) -> np.ndarray:
    """Singular value soft-thresholding, the prox of ``tau * ||X||_*``."""
    u, s, vt = np.linalg.svd(X, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


@dataclass
class NuclearNormResult:
    estimate: np.ndarray
    iterations: int
    converged: bool
    objective: list[float]


def nuclear_norm_objective(X, Y, mask, ridge) -> float:
    r = np.where(mask, X - Y, 0.0)
    return 0.5 * float(np.sum(r * r)) + ridge * float(np.linalg.svd(X, compute_uv=False).sum())


def nuclear_norm_complete(values, mask, ridge: float = 1e-5, tol: float = 1e-6,
                          max_iter: int = 5000, track_objective: bool = False,
                          x0: np.ndarray | None = None, continuation: bool = True,
                          shrink: float = 0.25) -> NuclearNormResult:
    """Minimize ``0.5||P(X - Y)||_F^2 + ridge ||X||_*`` by proximal gradient with step 1.

    The prox step is singular value soft-thresholding. Two standard speedups
    keep the same minimizer: monotone FISTA momentum (a candidate is accepted
    only if it does not raise the objective) and continuation, which starts
    from a threshold of ``shrink * ||Y||_2`` and shrinks it by ``shrink`` per
    stage down to ``ridge``. A stage ends when
    ``||X_k+1 - X_k||_F <= tol * max(||X_k||_F, 1)``; ``max_iter`` bounds the
    total number of prox steps. ``objective`` (if tracked) holds the objective
    at the active threshold after every step.
    """
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise ValueError("nuclear-norm completion needs a non-empty sampling set")
    Y = np.where(m, _as_slab(values), 0.0)
    X = np.zeros_like(Y) if x0 is None else np.asarray(x0, dtype=float).copy()
    mu = max(ridge, shrink * float(np.linalg.norm(Y, 2))) if continuation else ridge
    history = []
    it = 0
    converged = False
    while True:
        F = nuclear_norm_objective(X, Y, m, mu)
        Z, t = X.copy(), 1.0
        stage_done = False
        while it < max_iter:
            it += 1
            U = svt(np.where(m, Y, Z), mu)
            Fu = nuclear_norm_objective(U, Y, m, mu)
            X_old = X
            if Fu <= F:
                X, F = U, Fu
            t_new = (1 + np.sqrt(1 + 4 * t * t)) / 2
            Z = X + (t / t_new) * (U - X) + ((t - 1) / t_new) * (X - X_old)
            t = t_new
            if track_objective:
                history.append(F)
            if np.linalg.norm(U - X_old) <= tol * max(np.linalg.norm(X_old), 1.0):
                stage_done = True
                break
        if mu <= ridge:
            converged = stage_done
            break
        if it >= max_iter:
            break
        mu = max(ridge, mu * shrink)
    if not converged:
        res = np.linalg.norm(np.where(m, X - Y, 0.0))
        log.debug("nuclear-norm completion stopped after %d iterations, residual %.3g", it, res)
    return NuclearNormResult(X, it, converged, history)


def knn_estimate(values, mask, grid: Grid, k: int = 5) -> np.ndarray:
    """Mean of the ``k`` nearest observed grid points; ties go to the lower row-major index."""
    obs, y, pts = _observations(values, mask, grid)
    k = min(k, len(y))
    d2 = ((pts[:, None, :] - obs[None, :, :]) ** 2).sum(axis=2)
    # observed points are already in row-major order, so a stable sort keeps ties ordered
    nearest = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return y[nearest].mean(axis=1).reshape(grid.shape)
