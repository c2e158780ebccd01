"""Inverse uncertainty quantification of latent phase properties.

The phases are isotropic with random Young's moduli ``E_k ~ N(mu_k, S_k)``
and fixed Poisson ratios. A trained VDMN acts as a stochastic function of
``(E_1, E_2)``; the law of total variance combines the input spread with the
microstructural spread and a known measurement noise ``sigma2 * I``. The
latent parameters ``(mu_E1, logS_E1, mu_E2, logS_E2)`` are estimated by
maximizing the Gaussian likelihood of measured stiffness components.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, replace

import jax
import jax.numpy as jnp
import numpy as np
from scipy import optimize

from .laminate import IsoElastic, isotropic_stiffness
from .propagation import VdmnParams, _finish_total, total_variance_kernel, tree_kernel
from .riemann import GaussianStiffness, JITTER, TANGENT_INDEX, vec

__all__ = [
    "COMPONENTS",
    "LatentConstitutiveModel",
    "InverseFitResult",
    "Landscape",
    "total_uncertainty_model",
    "synthesize_measurements",
    "mask_components",
    "measurement_nll",
    "inverse_fit",
    "likelihood_landscape",
]

COMPONENTS = {"C11": (0, 0), "C12": (0, 1), "C13": (0, 2), "C22": (1, 1), "C23": (1, 2), "C33": (2, 2)}
PARAM_NAMES = ("mu_E1", "logS_E1", "mu_E2", "logS_E2")


@dataclass(frozen=True)
class LatentConstitutiveModel:
    mu_E1: float
    logS_E1: float
    mu_E2: float
    logS_E2: float
    nu1: float = 0.3
    nu2: float = 0.19
    sigma2_meas: float = 0.0

    def __post_init__(self):
        if not (self.mu_E1 > 0 and self.mu_E2 > 0):
            raise ValueError("mean Young's moduli must be positive")
        IsoElastic(1.0, self.nu1)
        IsoElastic(1.0, self.nu2)
        if self.sigma2_meas < 0:
            raise ValueError("measurement noise variance must be nonnegative")

    @property
    def vector(self) -> np.ndarray:
        return np.array([self.mu_E1, self.logS_E1, self.mu_E2, self.logS_E2])

    def with_vector(self, x) -> "LatentConstitutiveModel":
        return replace(self, **dict(zip(PARAM_NAMES, map(float, x))))

    def std(self) -> tuple[float, float]:
        return float(np.exp(0.5 * self.logS_E1)), float(np.exp(0.5 * self.logS_E2))


@dataclass
class InverseFitResult:
    model: LatentConstitutiveModel
    nll: float
    success: bool
    n_iter: int
    message: str


@dataclass
class Landscape:
    x_name: str
    x: np.ndarray
    y_name: str
    y: np.ndarray
    nll: np.ndarray  # shape (len(y), len(x))

    def argmin(self) -> tuple[float, float]:
        iy, ix = np.unravel_index(np.nanargmin(self.nll), self.nll.shape)
        return float(self.x[ix]), float(self.y[iy])

    def rows(self):
        for iy, yv in enumerate(self.y):
            for ix, xv in enumerate(self.x):
                yield xv, yv, self.nll[iy, ix]


def _unit_vectors(latent: LatentConstitutiveModel):
    v1 = vec(isotropic_stiffness(IsoElastic(1.0, latent.nu1)))
    v2 = vec(isotropic_stiffness(IsoElastic(1.0, latent.nu2)))
    return jnp.asarray(v1), jnp.asarray(v2)


def _moments(x4, p, v1, v2, sigma2, *, depth, leaf_phase, order):
    """Total-uncertainty mean (6,) and covariance (6, 6) as a traceable function."""
    z = jnp.zeros((6, 6))

    def fn(E):
        return tree_kernel(p, E[0] * v1, E[1] * v2, z, z, leaf_phase, depth)

    x_mean = jnp.stack([x4[0], x4[2]])
    x_cov = jnp.diag(jnp.exp(jnp.stack([x4[1], x4[3]])))
    mean, cov = total_variance_kernel(x_mean, x_cov, fn, order)
    return mean, cov + sigma2 * jnp.eye(6)


def _masked_nll(mean, cov, y, mask):
    """Gaussian NLL of the observed entries ``mask`` of one distinct-entry vector."""
    M = jnp.diag(mask)
    k = jnp.sum(mask)
    sub = M @ cov @ M
    sub = sub + JITTER * jnp.trace(sub) / jnp.maximum(k, 1.0) * M + (jnp.eye(6) - M)
    r = mask * (y - mean)
    L = jnp.linalg.cholesky(sub)
    w = jax.scipy.linalg.solve_triangular(L, r, lower=True)
    return 0.5 * (k * jnp.log(2 * jnp.pi) + 2.0 * jnp.sum(jnp.log(jnp.diag(L))) + w @ w)


def _total_nll(x4, p, v1, v2, sigma2, y, mask, **kw):
    mean, cov = _moments(x4, p, v1, v2, sigma2, **kw)
    per = jax.vmap(lambda yy, mm: _masked_nll(mean, cov, yy, mm))(y, mask)
    return jnp.sum(per)


@functools.lru_cache(maxsize=None)
def _compiled(depth, leaf_phase_key, order):
    kw = dict(depth=depth, leaf_phase=np.array(leaf_phase_key), order=order)
    nll = functools.partial(_total_nll, **kw)
    return jax.jit(nll), jax.jit(jax.grad(nll)), jax.jit(functools.partial(_moments, **kw))


def _jparams(trained: VdmnParams):
    return {k: jnp.asarray(v) for k, v in trained.trainable().items()}


def total_uncertainty_model(trained: VdmnParams, latent: LatentConstitutiveModel,
                            order: int = 1) -> GaussianStiffness:
    """Distribution of measured homogenized stiffness under the latent model."""
    _, _, moments = _compiled(trained.depth, tuple(trained.leaf_phase.tolist()), order)
    v1, v2 = _unit_vectors(latent)
    mean, cov = moments(jnp.asarray(latent.vector), _jparams(trained), v1, v2, 0.0)
    g = _finish_total(mean, cov)
    return GaussianStiffness(g.mean, g.cov + latent.sigma2_meas * np.eye(6))


def synthesize_measurements(oracle, latent: LatentConstitutiveModel, n: int = 30, seed=None) -> np.ndarray:
    """Draw ``n`` measured stiffnesses from the ground-truth ensemble oracle.

    Each sample draws both moduli, a random ensemble member, and adds
    independent Gaussian noise of variance ``sigma2_meas`` to every distinct
    entry.
    """
    rng = np.random.default_rng(seed)
    s1, s2 = latent.std()
    E1 = latent.mu_E1 + s1 * rng.standard_normal(n)
    E2 = latent.mu_E2 + s2 * rng.standard_normal(n)
    if np.any(E1 <= 0) or np.any(E2 <= 0):
        raise ValueError("sampled a nonpositive Young's modulus")
    C1 = E1[:, None, None] * isotropic_stiffness(IsoElastic(1.0, latent.nu1))
    C2 = E2[:, None, None] * isotropic_stiffness(IsoElastic(1.0, latent.nu2))
    member = rng.integers(len(oracle), size=n)
    C = oracle.homogenize(C1, C2, member)
    if latent.sigma2_meas > 0:
        noise = np.sqrt(latent.sigma2_meas) * rng.standard_normal((n, 6))
        C = C + noise[:, np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])]
    return C


def mask_components(C, components, protocol: str = "combined", seed=None) -> np.ndarray:
    """Keep only measured entries of ``C`` (others become NaN).

    ``protocol="combined"`` measures every listed component on every sample;
    ``"single"`` measures one randomly chosen listed component per sample.
    """
    C = np.array(C, dtype=float, copy=True).reshape(-1, 3, 3)
    names = list(components)
    unknown = [c for c in names if c not in COMPONENTS]
    if unknown or not names:
        raise ValueError(f"unknown or empty component set {unknown or names}")
    keep = np.zeros((len(C), 3, 3), dtype=bool)
    if protocol == "combined":
        chosen = [names] * len(C)
    elif protocol == "single":
        rng = np.random.default_rng(seed)
        chosen = [[names[k]] for k in rng.integers(len(names), size=len(C))]
    else:
        raise ValueError(f"unknown protocol {protocol!r}")
    for i, sel in enumerate(chosen):
        for c in sel:
            a, b = COMPONENTS[c]
            keep[i, a, b] = keep[i, b, a] = True
    C[~keep] = np.nan
    return C


def _observations(measurements):
    C = np.asarray(measurements, dtype=float).reshape(-1, 3, 3)
    y = vec(C)
    mask = np.isfinite(y)
    if np.any(mask.sum(1) == 0):
        raise ValueError("a measurement has no observed components")
    y = np.where(mask, y, 0.0)
    # canonical order makes the summed likelihood independent of input order
    order = np.lexsort(np.concatenate([y, mask], axis=1).T[::-1])
    return jnp.asarray(y[order]), jnp.asarray(mask[order].astype(float))


def measurement_nll(measurements, trained: VdmnParams, latent: LatentConstitutiveModel, order: int = 1) -> float:
    """Negative log-likelihood of (possibly partial) measurements."""
    nll, _, _ = _compiled(trained.depth, tuple(trained.leaf_phase.tolist()), order)
    v1, v2 = _unit_vectors(latent)
    y, mask = _observations(measurements)
    return float(nll(jnp.asarray(latent.vector), _jparams(trained), v1, v2, latent.sigma2_meas, y, mask))


def inverse_fit(measurements, trained: VdmnParams, init: LatentConstitutiveModel, sigma2_meas: float | None = None,
                method: str = "nelder-mead", order: int = 1, maxiter: int = 2000) -> InverseFitResult:
    """Maximum-likelihood estimate of the latent moduli distributions.

    Parameters
    ----------
    measurements : array_like, shape (n, 3, 3)
        Measured stiffnesses; NaN marks components that were not measured
        (see :func:`mask_components`).
    init : LatentConstitutiveModel
        Starting point; also supplies the Poisson ratios and, unless
        ``sigma2_meas`` is given, the known measurement noise.
    method : {"nelder-mead", "cg"}
    """
    if len(np.asarray(measurements).reshape(-1, 3, 3)) < 10:
        raise ValueError("inverse_fit needs at least 10 measurements")
    if sigma2_meas is not None:
        init = replace(init, sigma2_meas=float(sigma2_meas))
    nll, grad, _ = _compiled(trained.depth, tuple(trained.leaf_phase.tolist()), order)
    v1, v2 = _unit_vectors(init)
    y, mask = _observations(measurements)
    p = _jparams(trained)
    s2 = init.sigma2_meas

    def f(x):
        if x[0] <= 0 or x[2] <= 0:
            return np.inf
        val = float(nll(jnp.asarray(x), p, v1, v2, s2, y, mask))
        return val if np.isfinite(val) else np.inf

    x0 = init.vector
    if method == "nelder-mead":
        step = np.where(x0 != 0, 0.1 * np.abs(x0), 0.1)
        simplex = np.vstack([x0, x0 + np.diag(step)])
        res = optimize.minimize(
            f, x0, method="Nelder-Mead",
            options=dict(initial_simplex=simplex, fatol=1e-8, xatol=1e-10, maxiter=maxiter, maxfev=4 * maxiter),
        )
    elif method == "cg":
        res = optimize.minimize(
            f, x0, method="CG", jac=lambda x: np.asarray(grad(jnp.asarray(x), p, v1, v2, s2, y, mask)),
            options=dict(maxiter=maxiter, gtol=1e-8),
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    if not res.success:
        warnings.warn(f"inverse_fit did not converge: {res.message}", RuntimeWarning)
    return InverseFitResult(init.with_vector(res.x), float(res.fun), bool(res.success), int(res.nit), str(res.message))


def likelihood_landscape(measurements, trained: VdmnParams, fixed: LatentConstitutiveModel, x_name: str, x_values,
                         y_name: str, y_values, order: int = 1) -> Landscape:
    """NLL on a grid over two latent parameters, the others held at ``fixed``."""
    for name in (x_name, y_name):
        if name not in PARAM_NAMES:
            raise ValueError(f"unknown latent parameter {name!r}; choose from {PARAM_NAMES}")
    if x_name == y_name:
        raise ValueError("landscape axes must differ")
    nll, _, _ = _compiled(trained.depth, tuple(trained.leaf_phase.tolist()), order)
    v1, v2 = _unit_vectors(fixed)
    y, mask = _observations(measurements)
    p = _jparams(trained)
    xs, ys = np.asarray(x_values, dtype=float), np.asarray(y_values, dtype=float)
    grid = np.full((len(ys), len(xs)), np.nan)
    ix, iy = PARAM_NAMES.index(x_name), PARAM_NAMES.index(y_name)
    for a, yv in enumerate(ys):
        for b, xv in enumerate(xs):
            x = fixed.vector.copy()
            x[ix], x[iy] = xv, yv
            if x[0] <= 0 or x[2] <= 0:
                continue
            val = float(nll(jnp.asarray(x), p, v1, v2, fixed.sigma2_meas, y, mask))
            grid[a, b] = val if np.isfinite(val) else np.nan
    return Landscape(x_name, xs, y_name, ys, grid)
