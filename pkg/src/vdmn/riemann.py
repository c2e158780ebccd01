"""Statistics on the cone of symmetric positive definite 3x3 matrices.

Tangent vectors and covariances use the distinct-entry coordinates
``(11, 22, 33, 12, 13, 23)`` (1-based), without sqrt(2) weighting.
The public functions operate on NumPy arrays; the ``*_jax`` variants are
traceable kernels used inside training, with derivative rules that stay
finite when eigenvalues coincide.
"""

from __future__ import annotations

from dataclasses import dataclass

import jax
import jax.numpy as jnp
import numpy as np

__all__ = [
    "GeometryError",
    "ConditioningError",
    "GaussianStiffness",
    "TANGENT_INDEX",
    "vec",
    "unvec",
    "log_map",
    "exp_map",
    "cov_to_tangent_basis",
    "tangent_basis_to_cov",
    "gaussian_nll",
    "log_map_jax",
    "gaussian_nll_jax",
]

TANGENT_INDEX = (np.array([0, 1, 2, 0, 0, 1]), np.array([0, 1, 2, 1, 2, 2]))
_UNVEC = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])
JITTER = 1e-10


class GeometryError(ValueError):
    """A matrix that must be positive definite is not."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ConditioningError(ValueError):
    pass


@dataclass
class GaussianStiffness:
    """Mean stiffness with a 6x6 covariance over distinct-entry coordinates."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)

    @property
    def marginal_std(self) -> np.ndarray:
        """Standard deviation of each tangent coordinate, same order as ``vec``."""
        return np.sqrt(np.clip(np.diagonal(self.cov, axis1=-2, axis2=-1), 0.0, None))

    def scaled(self, a: float) -> "GaussianStiffness":
        return GaussianStiffness(self.mean * a, self.cov * a * a)


def vec(M, xp=np):
    """Distinct entries (11, 22, 33, 12, 13, 23) of symmetric matrices ``(..., 3, 3)``."""
    return M[..., TANGENT_INDEX[0], TANGENT_INDEX[1]]


def unvec(v, xp=np):
    """Inverse of :func:`vec`."""
    return v[..., _UNVEC]


def _checked_eigh(M, name):
    w, U = np.linalg.eigh(M)
    scale = np.max(np.abs(w), axis=-1, keepdims=True)
    if np.any(w <= 1e-12 * scale) or np.any(~np.isfinite(w)):
        bad = w[w <= 1e-12 * np.broadcast_to(scale, w.shape)]
        ev = float(bad.min()) if bad.size else float("nan")
        raise GeometryError(f"{name} is not positive definite (eigenvalue {ev:.6g})", ev)
    return w, U


def _apply(U, fw):
    return (U * fw[..., None, :]) @ np.swapaxes(U, -1, -2)


def log_map(A, B) -> np.ndarray:
    """Riemannian logarithm of ``B`` at base point ``A`` (both SPD).

    ``A^(1/2) log(A^(-1/2) B A^(-1/2)) A^(1/2)``.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    w, U = _checked_eigh(A, "base point")
    _checked_eigh(B, "target")
    sq = _apply(U, np.sqrt(w))
    isq = _apply(U, 1.0 / np.sqrt(w))
    M = isq @ B @ isq
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    wm, Um = np.linalg.eigh(M)
    out = sq @ _apply(Um, np.log(wm)) @ sq
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def exp_map(A, V) -> np.ndarray:
    """Riemannian exponential at ``A``: inverse of :func:`log_map`."""
    A = np.asarray(A, dtype=float)
    V = np.asarray(V, dtype=float)
    w, U = _checked_eigh(A, "base point")
    sq = _apply(U, np.sqrt(w))
    isq = _apply(U, 1.0 / np.sqrt(w))
    M = isq @ V @ isq
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    wm, Um = np.linalg.eigh(M)
    out = sq @ _apply(Um, np.exp(wm)) @ sq
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def cov_to_tangent_basis(S, tol=1e-9) -> np.ndarray:
    """Reshape a 3x3x3x3 covariance tensor into the 6x6 distinct-entry basis."""
    S = np.asarray(S, dtype=float)
    scale = max(np.max(np.abs(S)), 1.0)
    for perm in ((1, 0, 2, 3), (0, 1, 3, 2), (2, 3, 0, 1)):
        if np.max(np.abs(S - S.transpose(perm))) > tol * scale:
            raise ValueError(f"covariance tensor lacks symmetry {perm}")
    i, j = TANGENT_INDEX
    return S[i[:, None], j[:, None], i[None, :], j[None, :]]


def tangent_basis_to_cov(M) -> np.ndarray:
    """Expand a 6x6 distinct-entry covariance back into a 3x3x3x3 tensor."""
    M = np.asarray(M, dtype=float)
    return M[_UNVEC[:, :, None, None], _UNVEC[None, None, :, :]]


def _nll_from_residual(r, cov):
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    d = cov.shape[-1]
    cov = cov + JITTER * np.trace(cov) / d * np.eye(d)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError("covariance not positive definite after jitter") from exc
    y = np.linalg.solve(L, r)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return 0.5 * (d * np.log(2 * np.pi) + logdet + y @ y)


def gaussian_nll(g: GaussianStiffness, C_obs, mode: str = "riemannian") -> float:
    """Negative log density of ``C_obs`` under a (Riemannian) Gaussian stiffness."""
    if mode == "riemannian":
        r = vec(log_map(g.mean, C_obs))
    elif mode == "euclidean":
        r = vec(np.asarray(C_obs, dtype=float) - g.mean)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return float(_nll_from_residual(r, g.cov))


# ---------------------------------------------------------------------------
# traceable kernels


def _spectral(f, divided):
    """Symmetric matrix function with a Daleckii-Krein derivative rule.

    ``divided(a, b)`` must return ``(f(a) - f(b)) / (a - b)`` accurately,
    including its limit ``f'(a)`` when ``a == b``.
    """

    @jax.custom_jvp
    def F(M):
        w, U = jnp.linalg.eigh(M)
        return (U * f(w)) @ U.T

    @F.defjvp
    def F_jvp(primals, tangents):
        (M,), (dM,) = primals, tangents
        w, U = jnp.linalg.eigh(M)
        G = divided(w[:, None], w[None, :])
        dF = U @ (G * (U.T @ dM @ U)) @ U.T
        return (U * f(w)) @ U.T, dF

    return F


def _dd_log(a, b):
    d = a - b
    small = jnp.abs(d) < 1e-300
    return jnp.where(small, 1.0 / b, jnp.log1p(d / b) / jnp.where(small, 1.0, d))


def _dd_sqrt(a, b):
    return 1.0 / (jnp.sqrt(a) + jnp.sqrt(b))


def _dd_isqrt(a, b):
    sa, sb = jnp.sqrt(a), jnp.sqrt(b)
    return -1.0 / (sa * sb * (sa + sb))


sym_log = _spectral(jnp.log, _dd_log)
sym_sqrt = _spectral(jnp.sqrt, _dd_sqrt)
sym_isqrt = _spectral(lambda w: 1.0 / jnp.sqrt(w), _dd_isqrt)


def log_map_jax(A, B):
    """Traceable :func:`log_map` for single 3x3 matrices (no PD checks)."""
    sq = sym_sqrt(A)
    isq = sym_isqrt(A)
    M = isq @ B @ isq
    M = 0.5 * (M + M.T)
    out = sq @ sym_log(M) @ sq
    return 0.5 * (out + out.T)


def vec_jax(M):
    return M[..., TANGENT_INDEX[0], TANGENT_INDEX[1]]


def unvec_jax(v):
    return v[..., _UNVEC]


def nll_from_residual_jax(r, cov):
    d = r.shape[-1]
    cov = 0.5 * (cov + cov.T)
    cov = cov + JITTER * jnp.trace(cov) / d * jnp.eye(d)
    L = jnp.linalg.cholesky(cov)
    y = jax.scipy.linalg.solve_triangular(L, r, lower=True)
    return 0.5 * (d * jnp.log(2 * jnp.pi) + 2.0 * jnp.sum(jnp.log(jnp.diag(L))) + y @ y)


def gaussian_nll_jax(mean, cov, C_obs, mode="riemannian"):
    if mode == "riemannian":
        r = vec_jax(log_map_jax(mean, C_obs))
    else:
        r = vec_jax(C_obs - mean)
    return nll_from_residual_jax(r, cov)
