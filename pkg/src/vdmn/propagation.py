"""Variational DMN: hyper-variational parameters and moment propagation.

Two evaluation modes share one parameter set:

* analytic mode propagates (mean, covariance) pairs bottom-up through the
  laminate tree with a Taylor expansion of every building block;
* sampling mode draws deterministic topologies from the hyper-variational
  Gaussians and homogenizes them exactly.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import jax
import jax.numpy as jnp
import numpy as np

from .laminate import DmnTopology, _homogenize, alternating_phases, orientation_matrix
from .riemann import (
    GaussianStiffness,
    GeometryError,
    TANGENT_INDEX,
    unvec_jax,
    vec_jax,
)

__all__ = [
    "ConfigError",
    "StabilityError",
    "VdmnParams",
    "PropagationConfig",
    "softplus",
    "inverse_softplus",
    "propagate_block",
    "propagate_tree",
    "propagate_batch",
    "sample_dmn",
    "sample_dmns",
    "total_variance_propagate",
    "total_variance_kernel",
    "FRACTION_CLAMP",
]

FRACTION_CLAMP = 1e-4


class ConfigError(ValueError):
    pass


class StabilityError(GeometryError):
    pass


def softplus(x):
    x = np.asarray(x, dtype=float)
    return np.logaddexp(0.0, x)


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    return y + np.log(-np.expm1(-y))


@dataclass
class VdmnParams:
    """Trainable parameters of a VDMN of ``depth`` layers.

    Leaf weights are ``softplus(weight_param)``. Variances are stored as
    natural-log variances. ``df_logvar`` belongs to the ``2**(depth-1)``
    leaf-parent blocks only.
    """

    depth: int
    weight_param: np.ndarray
    angle_mean: np.ndarray
    angle_logvar: np.ndarray
    df_logvar: np.ndarray
    leaf_phase: np.ndarray = None
    normalization: dict = field(default_factory=lambda: {"reference": "C1_11"})

    def __post_init__(self):
        n = self.depth
        self.weight_param = np.asarray(self.weight_param, dtype=float)
        self.angle_mean = np.asarray(self.angle_mean, dtype=float)
        self.angle_logvar = np.asarray(self.angle_logvar, dtype=float)
        self.df_logvar = np.asarray(self.df_logvar, dtype=float)
        if self.leaf_phase is None:
            self.leaf_phase = alternating_phases(n)
        self.leaf_phase = np.asarray(self.leaf_phase, dtype=int)
        expected = {
            "weight_param": 2**n,
            "angle_mean": 2**n - 1,
            "angle_logvar": 2**n - 1,
            "df_logvar": 2 ** (n - 1),
            "leaf_phase": 2**n,
        }
        for name, size in expected.items():
            if getattr(self, name).shape != (size,):
                raise ConfigError(
                    f"{name} must have length {size} for depth {n}, "
                    f"got shape {getattr(self, name).shape}"
                )

    @classmethod
    def initialize(cls, depth: int, seed=0, logvar: float = -6.0) -> "VdmnParams":
        """Equal leaf weights summing to one, angle means uniform in [0, 1)."""
        rng = np.random.default_rng(seed)
        return cls(
            depth=depth,
            weight_param=np.full(2**depth, inverse_softplus(1.0 / 2**depth)),
            angle_mean=rng.random(2**depth - 1),
            angle_logvar=np.full(2**depth - 1, logvar),
            df_logvar=np.full(2 ** (depth - 1), logvar),
        )

    @property
    def leaf_weights(self) -> np.ndarray:
        return softplus(self.weight_param)

    def trainable(self) -> dict:
        return {
            "weight_param": self.weight_param,
            "angle_mean": self.angle_mean,
            "angle_logvar": self.angle_logvar,
            "df_logvar": self.df_logvar,
        }

    def replace(self, **arrays) -> "VdmnParams":
        fields = self.trainable()
        fields.update({k: np.asarray(v, dtype=float) for k, v in arrays.items()})
        return VdmnParams(
            depth=self.depth,
            leaf_phase=self.leaf_phase.copy(),
            normalization=dict(self.normalization),
            **fields,
        )

    def mean_topology(self) -> DmnTopology:
        """The deterministic DMN at the hyper-variational means."""
        return DmnTopology(self.depth, self.leaf_weights, self.angle_mean.copy(), self.leaf_phase)


@dataclass(frozen=True)
class PropagationConfig:
    """Options for analytic propagation.

    ``second_order_theta`` adds orientation Hessians to the mean correction;
    it is unstable and must be unlocked with ``allow_unstable=True``.
    """

    mean_order: int = 1
    second_order_theta: bool = False
    input_cov_1: np.ndarray | None = None
    input_cov_2: np.ndarray | None = None
    allow_unstable: bool = False

    def __post_init__(self):
        if self.mean_order not in (1, 2):
            raise ConfigError(f"mean_order must be 1 or 2, got {self.mean_order}")
        if self.second_order_theta and not self.allow_unstable:
            raise ConfigError(
                "second-order orientation corrections destabilize training; "
                "set allow_unstable=True to use them anyway"
            )
        if self.second_order_theta and self.mean_order != 2:
            raise ConfigError("second_order_theta requires mean_order=2")
        for name in ("input_cov_1", "input_cov_2"):
            v = getattr(self, name)
            if v is not None and np.shape(v) != (6, 6):
                raise ConfigError(f"{name} must be 6x6")

    @property
    def key(self):
        return (self.mean_order, self.second_order_theta)


# ---------------------------------------------------------------------------
# block kernels (traceable)

_I6, _J6 = TANGENT_INDEX
_OFFDIAG = (_I6 != _J6).astype(float)


def _sandwich6(A):
    """6x6 matrix of the map ``V -> A V A^T`` in distinct-entry coordinates."""
    i, j = _I6[:, None], _J6[:, None]
    k, l = _I6[None, :], _J6[None, :]
    return A[i, k] * A[j, l] + _OFFDIAG[None, :] * A[i, l] * A[j, k]


def _block_mean(ca6, cb6, theta, df, fa):
    ch, _, _ = _homogenize(unvec_jax(ca6), unvec_jax(cb6), fa + df, theta, xp=jnp)
    return vec_jax(ch)


def _block_jacobians(ca, cb, fa, theta):
    """Closed-form derivatives of the laminate map w.r.t. the two phases.

    With ``P = H K^{-1} H^T``, a perturbation ``dA`` of the alpha stiffness
    moves the result by ``fa * A_a dA A_a^T`` where ``A_a = I - fb dC P``
    (likewise for beta with ``A_b = I + fa dC P``).
    """
    fb = 1.0 - fa
    H = orientation_matrix(theta, jnp)
    K = H.T @ (fa * cb + fb * ca) @ H
    P = H @ jnp.linalg.solve(K, H.T)
    dC = ca - cb
    eye = jnp.eye(3)
    Ta = fa * _sandwich6(eye - fb * dC @ P)
    Tb = fb * _sandwich6(eye + fa * dC @ P)
    return Ta, Tb


def _block(ma, Sa, mb, Sb, wa, wb, mth, Sth, Sdf, mean_order, second_theta):
    fa = wa / (wa + wb)
    f = functools.partial(_block_mean, fa=fa)
    mean, Jt = jax.jvp(lambda t: f(ma, mb, t, 0.0), (mth,), (jnp.ones_like(mth),))
    _, Jd = jax.jvp(lambda d: f(ma, mb, mth, d), (jnp.zeros_like(mth),), (jnp.ones_like(mth),))
    Ta, Tb = _block_jacobians(unvec_jax(ma), unvec_jax(mb), fa, mth)
    cov = (
        Ta @ Sa @ Ta.T
        + Tb @ Sb @ Tb.T
        + Sth * jnp.outer(Jt, Jt)
        + Sdf * jnp.outer(Jd, Jd)
    )
    if mean_order == 2:
        z = jnp.concatenate([ma, mb, jnp.stack([mth, jnp.zeros_like(mth)])])
        hess = jax.hessian(lambda zz: f(zz[:6], zz[6:12], zz[12], zz[13]))(z)
        corr = jnp.einsum("iab,ab->i", hess[:, :6, :6], Sa)
        corr = corr + jnp.einsum("iab,ab->i", hess[:, 6:12, 6:12], Sb)
        corr = corr + hess[:, 13, 13] * Sdf
        if second_theta:
            corr = corr + hess[:, 12, 12] * Sth
        mean = mean + 0.5 * corr
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def block_kernel(mean_order=1, second_theta=False):
    return functools.partial(_block, mean_order=mean_order, second_theta=second_theta)


def tree_kernel(p, c1, c2, S1, S2, leaf_phase, depth, mean_order=1, second_theta=False):
    """Analytic root moments for one input pair; ``p`` holds trainable arrays.

    ``c1``/``c2`` are 6-vectors, ``S1``/``S2`` their 6x6 covariances.
    """
    vblock = jax.vmap(block_kernel(mean_order, second_theta))
    w = jax.nn.softplus(p["weight_param"])
    is1 = jnp.asarray(leaf_phase == 1)[:, None]
    m = jnp.where(is1, c1[None, :], c2[None, :])
    S = jnp.where(is1[:, :, None], S1[None], S2[None])
    for layer in range(depth - 1, -1, -1):
        start = 2**layer - 1
        sl = slice(start, start + 2**layer)
        Sth = jnp.exp(p["angle_logvar"][sl])
        if layer == depth - 1:
            Sdf = jnp.exp(p["df_logvar"])
        else:
            Sdf = jnp.zeros(2**layer)
        m, S = vblock(
            m[0::2], S[0::2], m[1::2], S[1::2], w[0::2], w[1::2],
            p["angle_mean"][sl], Sth, Sdf,
        )
        w = w[0::2] + w[1::2]
    return m[0], S[0]


@functools.lru_cache(maxsize=None)
def _batched_tree(depth, leaf_phase_key, mean_order, second_theta):
    leaf_phase = np.array(leaf_phase_key)

    def one(p, c1, c2, S1, S2):
        return tree_kernel(p, c1, c2, S1, S2, leaf_phase, depth, mean_order, second_theta)

    return jax.jit(jax.vmap(one, in_axes=(None, 0, 0, None, None)))


def _jnp_params(params: VdmnParams):
    return {k: jnp.asarray(v) for k, v in params.trainable().items()}


def _input_covs(cfg):
    z = np.zeros((6, 6))
    S1 = z if cfg.input_cov_1 is None else np.asarray(cfg.input_cov_1, dtype=float)
    S2 = z if cfg.input_cov_2 is None else np.asarray(cfg.input_cov_2, dtype=float)
    return S1, S2


def propagate_batch(params: VdmnParams, C1, C2, cfg: PropagationConfig | None = None):
    """Analytic root mean ``(B, 3, 3)`` and covariance ``(B, 6, 6)`` for a batch."""
    cfg = cfg or PropagationConfig()
    C1 = np.asarray(C1, dtype=float).reshape(-1, 3, 3)
    C2 = np.asarray(C2, dtype=float).reshape(-1, 3, 3)
    fn = _batched_tree(params.depth, tuple(params.leaf_phase.tolist()), *cfg.key)
    S1, S2 = _input_covs(cfg)
    m, S = fn(_jnp_params(params), C1[:, _I6, _J6], C2[:, _I6, _J6], S1, S2)
    mean = np.asarray(m)[:, np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])]
    cov = np.asarray(S)
    if cfg.mean_order == 2:
        w = np.linalg.eigvalsh(mean)
        if np.any(w[:, 0] <= 0):
            raise StabilityError(
                "second-order mean left the positive definite cone; use mean_order=1",
                float(w[:, 0].min()),
            )
    return mean, cov


def propagate_tree(params: VdmnParams, C1, C2, cfg: PropagationConfig | None = None) -> GaussianStiffness:
    """Analytic homogenized stiffness distribution for one input pair."""
    mean, cov = propagate_batch(params, C1, C2, cfg)
    return GaussianStiffness(mean[0], cov[0])


def propagate_block(ga: GaussianStiffness, gb: GaussianStiffness, wa, wb, mu_theta, S_theta, S_df,
                    cfg: PropagationConfig | None = None) -> GaussianStiffness:
    """Moments of one building block given Gaussian children."""
    cfg = cfg or PropagationConfig()
    if not wa + wb > 0:
        raise ValueError("child weights must have a positive sum")
    if S_theta < 0 or S_df < 0:
        raise ValueError("variances must be nonnegative")
    fn = jax.jit(block_kernel(*cfg.key))
    m, S = fn(
        jnp.asarray(ga.mean[_I6, _J6]), jnp.asarray(ga.cov),
        jnp.asarray(gb.mean[_I6, _J6]), jnp.asarray(gb.cov),
        float(wa), float(wb), float(mu_theta), float(S_theta), float(S_df),
    )
    mean = np.asarray(unvec_jax(m))
    if cfg.mean_order == 2 and np.linalg.eigvalsh(mean)[0] <= 0:
        raise StabilityError("second-order mean left the positive definite cone; use mean_order=1")
    return GaussianStiffness(mean, np.asarray(S))


# ---------------------------------------------------------------------------
# sampling mode


def sample_dmns(params: VdmnParams, n: int, seed=None) -> DmnTopology:
    """Draw ``n`` deterministic topologies (batched arrays) from the VDMN."""
    rng = np.random.default_rng(seed)
    d = params.depth
    angles = params.angle_mean + np.sqrt(np.exp(params.angle_logvar)) * rng.standard_normal((n, 2**d - 1))
    df = np.sqrt(np.exp(params.df_logvar)) * rng.standard_normal((n, 2 ** (d - 1)))
    w = params.leaf_weights
    wa, wb = w[0::2], w[1::2]
    tot = wa + wb
    fa = np.clip(wa / tot + df, FRACTION_CLAMP, 1.0 - FRACTION_CLAMP)
    weights = np.empty((n, 2**d))
    weights[:, 0::2] = fa * tot
    weights[:, 1::2] = (1.0 - fa) * tot
    return DmnTopology(d, weights, angles, params.leaf_phase)


def sample_dmn(params: VdmnParams, rng_seed=None) -> DmnTopology:
    """Draw one deterministic DMN from the hyper-variational distributions."""
    batch = sample_dmns(params, 1, rng_seed)
    return DmnTopology(batch.depth, batch.leaf_weights[0], batch.angles[0], batch.leaf_phase)


# ---------------------------------------------------------------------------
# stochastic functions


def total_variance_kernel(x_mean, x_cov, fn, order: int = 1):
    """Traceable core of :func:`total_variance_propagate` (no PSD repair)."""
    fbar, Sf = fn(x_mean)
    J = jax.jacfwd(lambda x: fn(x)[0])(x_mean)
    mean = fbar
    cov = J @ x_cov @ J.T + Sf
    if order == 2:
        Hm = jax.hessian(lambda x: fn(x)[0])(x_mean)
        mean = mean + 0.5 * jnp.einsum("iab,ab->i", Hm, x_cov)
        Hs = jax.hessian(lambda x: fn(x)[1])(x_mean)
        cov = cov + 0.5 * jnp.einsum("ijab,ab->ij", Hs, x_cov)
    return mean, 0.5 * (cov + cov.T)


def total_variance_propagate(x_mean, x_cov, fn, order: int = 1) -> GaussianStiffness:
    """Propagate Gaussian inputs through a stochastic map by total variance.

    Parameters
    ----------
    x_mean : array_like, shape (n,)
    x_cov : array_like, shape (n, n)
    fn : callable
        Traceable map ``x -> (mean6, cov66)`` giving the conditional mean and
        covariance of the output in distinct-entry coordinates.
    order : {1, 2}
        ``2`` adds the Hessian corrections of both the mean function and the
        conditional covariance.
    """
    mean, cov = total_variance_kernel(jnp.asarray(x_mean, dtype=float), jnp.asarray(x_cov, dtype=float),
                                      fn, order)
    return _finish_total(mean, cov)


def _finish_total(mean, cov) -> GaussianStiffness:
    """Symmetrize, clip a non-PSD covariance with a warning, and wrap."""
    mean, cov = np.asarray(mean), np.asarray(cov)
    cov = 0.5 * (cov + cov.T)
    w, U = np.linalg.eigh(cov)
    if w[0] < -1e-12 * max(abs(w[-1]), 1e-300):
        warnings.warn("assembled covariance was not PSD; clipping negative eigenvalues", RuntimeWarning)
        cov = (U * np.clip(w, 0.0, None)) @ U.T
    if mean.shape == (6,):
        mean = np.asarray(unvec_jax(mean))
    return GaussianStiffness(mean, cov)
