"""Online (nonlinear) prediction through a laminate tree.

Each phase follows Norton elastoviscoplasticity, integrated by a backward
Euler radial return on the plane-strain 3D stress state. The tree is
equilibrated by a jump vector ``a`` per internal node: the children of a node
see ``eps_a = eps + f_b * H a`` and ``eps_b = eps - f_a * H a``, and ``a`` is
found by Newton iteration so that ``H^T (sig_a - sig_b) = 0`` at every node.
All jump vectors of a tree are solved together (one monolithic Newton per
global step), which for linear phases reproduces the offline closed form.

Strains use Voigt order (xx, yy, xy) with engineering shear.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .laminate import DmnTopology, IsoElastic, isotropic_stiffness, orientation_matrix

__all__ = [
    "NortonParams",
    "MaterialState",
    "LoadPath",
    "StressStrainHistory",
    "EnsembleResult",
    "LocalConvergenceError",
    "OnlineSolveError",
    "MixedBCError",
    "EnsembleError",
    "norton_update",
    "laminate_online_step",
    "online_simulate",
    "mixed_bc_simulate",
    "vdmn_ensemble_simulate",
]

log = logging.getLogger(__name__)

LOCAL_MAXITER = 50
NODE_MAXITER = 50
OUTER_MAXITER = 25
FD_STEP = 1e-7

_M = np.array([1.0, 1.0, 0.0])
_PDEV = np.array([[2 / 3, -1 / 3, 0.0], [-1 / 3, 2 / 3, 0.0], [0.0, 0.0, 0.5]])


class LocalConvergenceError(RuntimeError):
    """The material-point Newton iteration failed; the caller should cut the step."""


class OnlineSolveError(RuntimeError):
    def __init__(self, message, node=None, residual=None):
        super().__init__(message)
        self.node = node
        self.residual = residual


class MixedBCError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class EnsembleError(RuntimeError):
    pass


@dataclass(frozen=True)
class NortonParams:
    E: float
    nu: float
    sigma_y: float
    sigma_y_max: float
    delta: float = 0.0
    K_p: float = 0.0
    N: float = 1.0

    def __post_init__(self):
        IsoElastic(self.E, self.nu)
        if not (self.sigma_y > 0 and self.sigma_y_max >= self.sigma_y):
            raise ValueError("need sigma_y_max >= sigma_y > 0")
        if not self.N >= 1:
            raise ValueError("power-law exponent N must be >= 1")

    @property
    def shear_modulus(self) -> float:
        return self.E / (2.0 * (1.0 + self.nu))

    @property
    def bulk_modulus(self) -> float:
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))

    def reference_stress(self, alpha):
        """``zeta(alpha)`` and its derivative."""
        sat = self.sigma_y_max - self.sigma_y
        e = np.exp(-self.delta * alpha)
        return self.sigma_y + self.K_p * alpha + sat * (1.0 - e), self.K_p + sat * self.delta * e


@dataclass
class MaterialState:
    """Material-point state: in-plane total strain, plastic strain, hardening.

    ``plastic_strain`` and ``stress`` hold tensor components (xx, yy, zz, xy).
    """

    strain: np.ndarray = field(default_factory=lambda: np.zeros(3))
    plastic_strain: np.ndarray = field(default_factory=lambda: np.zeros(4))
    alpha: float = 0.0
    stress: np.ndarray = field(default_factory=lambda: np.zeros(4))


# ---------------------------------------------------------------------------
# material updates, vectorized over material points


def _elastic_stress(eps, eps_p, K, G):
    """Plane-strain 3D stress (xx, yy, zz, xy) from in-plane strain and plastic strain."""
    ee = np.stack([eps[..., 0], eps[..., 1], np.zeros_like(eps[..., 0]), 0.5 * eps[..., 2]], -1) - eps_p
    tr = ee[..., 0] + ee[..., 1] + ee[..., 2]
    lam = K - 2.0 * G / 3.0
    sig = 2.0 * G * ee
    sig[..., :3] += (lam * tr)[..., None]
    return sig


def _norton_batch(p: NortonParams, eps, eps_p, alpha, dt):
    """Backward-Euler radial return for an array of points sharing one law.

    Returns ``(stress4, eps_p_new, alpha_new, tangent (n, 3, 3))``.
    """
    K, G, N = p.bulk_modulus, p.shear_modulus, float(p.N)
    sig_tr = _elastic_stress(eps, eps_p, K, G)
    mean = sig_tr[:, :3].sum(-1) / 3.0
    s_tr = sig_tr.copy()
    s_tr[:, :3] -= mean[:, None]
    norm_s = np.sqrt(np.sum(s_tr[:, :3] ** 2, -1) + 2.0 * s_tr[:, 3] ** 2)
    q_tr = math.sqrt(1.5) * norm_s

    zeta0, _ = p.reference_stress(alpha)
    if np.any(zeta0 <= 0):
        raise LocalConvergenceError("reference stress is not positive")
    active = q_tr > 0
    x = np.zeros_like(q_tr)
    if np.any(active):
        qa, aa = q_tr[active], alpha[active]
        lo = np.zeros_like(qa)
        hi = (qa / (3.0 * G * dt)) ** (1.0 / N)
        xa = np.minimum(qa / zeta0[active], hi)
        tol = 1e-13 * np.maximum(qa, zeta0[active])
        done = np.zeros(qa.shape, dtype=bool)
        for _ in range(LOCAL_MAXITER):
            dp = dt * xa**N
            z, dz = p.reference_stress(aa + dp)
            g = qa - 3.0 * G * dp - z * xa
            done = np.abs(g) <= tol
            if np.all(done):
                break
            lo = np.where(g > 0, xa, lo)
            hi = np.where(g < 0, xa, hi)
            dg = -(3.0 * G + dz * xa) * dt * N * xa ** (N - 1.0) - z
            step = xa - g / dg
            bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
            xa = np.where(done, xa, np.where(bad, 0.5 * (lo + hi), step))
        else:
            raise LocalConvergenceError(
                f"Norton update did not converge in {LOCAL_MAXITER} iterations "
                f"(max residual {np.max(np.abs(g) / np.maximum(qa, 1e-300)):.3e})"
            )
        x[active] = xa

    dp = dt * x**N
    zeta, dzeta = p.reference_stress(alpha + dp)
    safe_q = np.where(active, q_tr, 1.0)
    ratio = np.where(active, 1.0 - 3.0 * G * dp / safe_q, 1.0)
    nhat = np.where(active[:, None], 1.5 * s_tr / safe_q[:, None], 0.0)  # flow direction
    eps_p_new = eps_p + dp[:, None] * nhat
    stress = sig_tr.copy()
    stress -= (2.0 * G * dp)[:, None] * nhat

    # consistent tangent on (xx, yy, gamma_xy)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv_h = np.where(dp > 0, N * dp / (N * dp * (3.0 * G + dzeta * x) + zeta * x), 0.0)
    unit = np.where(active[:, None], s_tr / np.where(active, norm_s, 1.0)[:, None], 0.0)
    n3 = unit[:, [0, 1, 3]]
    c2 = np.where(active, dp / safe_q - inv_h, 0.0)
    D = K * np.outer(_M, _M) + 2.0 * G * ratio[:, None, None] * _PDEV
    D = D + 6.0 * G * G * c2[:, None, None] * n3[:, :, None] * n3[:, None, :]
    return stress, eps_p_new, alpha + dp, D


def norton_update(state: MaterialState, p: NortonParams, d_eps, dt: float):
    """Advance one material point by a strain increment over ``dt``.

    Returns the in-plane stress (xx, yy, xy) and the new state.
    """
    if not dt > 0:
        raise ValueError("time increment must be positive")
    eps = np.asarray(state.strain, dtype=float) + np.asarray(d_eps, dtype=float)
    sig, ep, a, _ = _norton_batch(
        p, eps[None], np.asarray(state.plastic_strain, dtype=float)[None], np.array([state.alpha]), dt
    )
    new = MaterialState(eps, ep[0], float(a[0]), sig[0])
    return sig[0, [0, 1, 3]], new


# ---------------------------------------------------------------------------
# phase laws applied to groups of leaves


class _LinearLaw:
    def __init__(self, C):
        self.C = np.asarray(C, dtype=float)

    def update(self, eps, eps_p, alpha, dt):
        sig3 = eps @ self.C.T
        n = len(eps)
        sig = np.zeros((n, 4))
        sig[:, [0, 1, 3]] = sig3
        return sig, eps_p, alpha, np.broadcast_to(self.C, (n, 3, 3))


class _NortonLaw:
    def __init__(self, p: NortonParams):
        self.p = p

    def update(self, eps, eps_p, alpha, dt):
        return _norton_batch(self.p, eps, eps_p, alpha, dt)


def _as_law(law):
    if isinstance(law, NortonParams):
        return _NortonLaw(law)
    if isinstance(law, IsoElastic):
        return _LinearLaw(isotropic_stiffness(law))
    C = np.asarray(law, dtype=float)
    if C.shape != (3, 3):
        raise TypeError("a phase law must be NortonParams, IsoElastic or a 3x3 stiffness")
    return _LinearLaw(C)


# ---------------------------------------------------------------------------
# single laminate node


def _fd_tangent(fn, x, sig):
    D = np.empty((3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = FD_STEP
        D[:, k] = (np.asarray(fn(x + e)) - sig) / FD_STEP
    return D


def _call_response(fn, x):
    out = fn(x)
    if isinstance(out, tuple):
        return np.asarray(out[0], dtype=float), np.asarray(out[1], dtype=float)
    sig = np.asarray(out, dtype=float)
    return sig, _fd_tangent(fn, x, sig)


def laminate_online_step(response_a, response_b, fa: float, theta: float, macro_rate, a0=None,
                         tol: float = 1e-10):
    """Equilibrate one laminate node for a prescribed macro strain rate.

    Parameters
    ----------
    response_a, response_b : callable
        Map a local strain rate (3,) to the child stress (3,), or to a tuple
        ``(stress, tangent)``. Without a tangent, finite differences are used.
    fa : float
        Volume fraction of child ``a``, in (0, 1).

    Returns
    -------
    stress : ndarray (3,)
    rate_a, rate_b : ndarray (3,)
    jump : ndarray (2,)
    """
    if not 0.0 < fa < 1.0:
        raise ValueError("fa must lie in (0, 1)")
    fb = 1.0 - fa
    H = orientation_matrix(theta)
    e = np.asarray(macro_rate, dtype=float)
    a = np.zeros(2) if a0 is None else np.asarray(a0, dtype=float)
    polished = False
    for it in range(NODE_MAXITER):
        ea, eb = e + fb * H @ a, e - fa * H @ a
        sa, Da = _call_response(response_a, ea)
        sb, Db = _call_response(response_b, eb)
        r = H.T @ (sa - sb)
        scale = max(np.max(np.abs(sa)), np.max(np.abs(sb)), 1e-300)
        if np.max(np.abs(r)) <= tol * scale:
            if polished or not np.any(r):
                break
            polished = True
        J = H.T @ (fb * Da + fa * Db) @ H
        a = a - np.linalg.solve(J, r)
    else:
        raise OnlineSolveError(f"node Newton did not converge (residual {np.max(np.abs(r)):.3e})",
                               node=(0, 0), residual=r)
    return fa * sa + fb * sb, ea, eb, a


# ---------------------------------------------------------------------------
# tree


class _Tree:
    """Per-layer geometry of a topology for the online solver."""

    def __init__(self, topo: DmnTopology):
        if topo.leaf_weights.ndim != 1:
            raise ValueError("online simulation takes a single (unbatched) topology")
        self.topo, self.depth = topo, topo.depth
        self.L, self.M = 2**topo.depth, 2**topo.depth - 1
        w = topo.leaf_weights
        self.H, self.fa = [None] * self.depth, [None] * self.depth
        for i in range(self.depth - 1, -1, -1):
            tot = w[0::2] + w[1::2]
            if np.any(tot <= 0):
                from .laminate import StructureError

                raise StructureError("sibling pair with zero total weight", (i, int(np.argmin(tot))))
            start = 2**i - 1
            self.H[i] = orientation_matrix(topo.angles[start : start + 2**i])
            self.fa[i] = w[0::2] / tot
            w = tot
        self.wbar = topo.leaf_weights / topo.leaf_weights.sum()
        self.groups = [np.flatnonzero(topo.leaf_phase == phase) for phase in (1, 2)]

    def split(self):
        """Per-layer slices of a flat jump-vector array ``(M, 2)``."""
        return [slice(2**i - 1, 2 ** (i + 1) - 1) for i in range(self.depth)]

    def leaf_strain(self, eps_bar, a):
        eps = eps_bar[None, :]
        for i, sl in enumerate(self.split()):
            Ha = np.einsum("nij,nj->ni", self.H[i], a[sl])
            fa = self.fa[i][:, None]
            out = np.empty((2 * len(eps), 3))
            out[0::2] = eps + (1.0 - fa) * Ha
            out[1::2] = eps - fa * Ha
            eps = out
        return eps

    def condense(self, S, D):
        """Bottom-up Newton condensation.

        Returns per-layer residuals, the affine jump corrections
        ``(a0, G)`` and the condensed macro tangent.
        """
        res, a0s, Gs = [None] * self.depth, [None] * self.depth, [None] * self.depth
        for i in range(self.depth - 1, -1, -1):
            H, fa = self.H[i], self.fa[i]
            fb = 1.0 - fa
            Sa, Sb, Da, Db = S[0::2], S[1::2], D[0::2], D[1::2]
            Ht = np.swapaxes(H, -1, -2)
            r = np.einsum("nji,nj->ni", H, Sa - Sb)
            dD = Da - Db
            K = Ht @ (fb[:, None, None] * Da + fa[:, None, None] * Db) @ H
            Kinv = np.linalg.inv(K)
            a0 = -np.einsum("nij,nj->ni", Kinv, r)
            G = -Kinv @ Ht @ dD
            ff = (fa * fb)[:, None, None]
            dDH = dD @ H
            S = fa[:, None] * Sa + fb[:, None] * Sb + (ff[:, :, 0] * np.einsum("nij,nj->ni", dDH, a0))
            D = fa[:, None, None] * Da + fb[:, None, None] * Db + ff * (dDH @ G)
            res[i], a0s[i], Gs[i] = r, a0, G
        return res, a0s, Gs, D[0]

    def expand(self, a0s, Gs, d_eps=None):
        """Top-down jump corrections for a macro strain perturbation ``d_eps``."""
        delta = np.zeros((1, 3)) if d_eps is None else np.asarray(d_eps, dtype=float)[None]
        out = []
        for i in range(self.depth):
            da = a0s[i] + np.einsum("nij,nj->ni", Gs[i], delta)
            out.append(da)
            Hda = np.einsum("nij,nj->ni", self.H[i], da)
            fa = self.fa[i][:, None]
            nxt = np.empty((2 * len(delta), 3))
            nxt[0::2] = delta + (1.0 - fa) * Hda
            nxt[1::2] = delta - fa * Hda
            delta = nxt
        return np.concatenate(out)

    def node_of(self, k: int):
        i = int(np.floor(np.log2(k + 1)))
        return i, k - (2**i - 1)


class _LeafState:
    def __init__(self, L):
        self.eps_p = np.zeros((L, 4))
        self.alpha = np.zeros(L)
        self.stress = np.zeros((L, 4))


def _update_leaves(tree: _Tree, laws, state: _LeafState, eps, dt):
    sig = np.empty((tree.L, 4))
    ep = np.empty_like(state.eps_p)
    al = np.empty_like(state.alpha)
    D = np.empty((tree.L, 3, 3))
    for law, idx in zip(laws, tree.groups):
        if idx.size == 0:
            continue
        s, e, a, d = law.update(eps[idx], state.eps_p[idx], state.alpha[idx], dt)
        sig[idx], ep[idx], al[idx], D[idx] = s, e, a, d
    return sig, ep, al, D


def _solve_tree(tree: _Tree, laws, state: _LeafState, eps_bar, a0, dt, tol=1e-10):
    """Newton on all jump vectors (shape ``(M, 2)``) for a given macro strain.

    Each iteration linearizes every leaf and condenses the tree bottom-up, so
    the update is the exact Newton step of the coupled node residuals.
    Returns ``(macro_stress, macro_tangent, a, trial_state, residual)``.
    """
    a = a0.copy()
    polished = False
    r_prev = np.inf
    for _ in range(NODE_MAXITER):
        eps = tree.leaf_strain(eps_bar, a)
        sig, ep, al, D = _update_leaves(tree, laws, state, eps, dt)
        s3 = sig[:, [0, 1, 3]]
        scale = max(np.max(np.abs(s3)), 1e-300)
        res, a0s, Gs, tangent = tree.condense(s3, D)
        r = np.concatenate(res)
        r_norm = np.max(np.abs(r))
        if r_norm <= tol * scale:
            if polished or r_norm == 0.0 or r_norm >= r_prev:
                break
            polished = True
        r_prev = r_norm
        a = a + tree.expand(a0s, Gs)
        if not np.all(np.isfinite(a)):
            raise OnlineSolveError("jump-vector Newton produced non-finite values")
    else:
        k = int(np.argmax(np.max(np.abs(r), axis=1)))
        raise OnlineSolveError(
            f"jump-vector Newton did not converge: residual {r_norm:.3e} at node {tree.node_of(k)}",
            node=tree.node_of(k),
            residual=r,
        )
    trial = _LeafState(tree.L)
    trial.eps_p, trial.alpha, trial.stress = ep, al, sig
    return tree.wbar @ s3, tangent, a, trial, r


# ---------------------------------------------------------------------------
# simulations


@dataclass(frozen=True)
class LoadPath:
    """Constant macro strain rate applied for ``total_time`` in ``steps`` steps.

    ``free`` flags components (xx, yy, xy) whose rate is unknown and whose
    macro stress is held at zero (mixed boundary conditions).
    """

    rate: tuple = (0.003, 0.0, 0.0)
    total_time: float = 0.02 / 0.003
    steps: int = 100
    free: tuple = (False, False, False)

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("step count must be >= 1")
        if not self.total_time > 0:
            raise ValueError("total time must be positive")
        if len(self.rate) != 3 or len(self.free) != 3:
            raise ValueError("rate and free need three components (xx, yy, xy)")
        if all(self.free):
            raise ValueError("at least one strain component must be prescribed")

    @classmethod
    def uniaxial(cls, rate: float = 0.003, final_strain: float = 0.02, steps: int = 100,
                 mixed: bool = False) -> "LoadPath":
        free = (False, True, True) if mixed else (False, False, False)
        return cls((rate, 0.0, 0.0), final_strain / rate, steps, free)

    @property
    def dt(self) -> float:
        return self.total_time / self.steps

    @property
    def is_mixed(self) -> bool:
        return any(self.free)


@dataclass
class StressStrainHistory:
    time: np.ndarray
    strain: np.ndarray
    stress: np.ndarray
    outer_iterations: np.ndarray = None
    max_residual: float = 0.0
    alpha: np.ndarray = None
    sample_id: int = 0

    def rows(self):
        for k in range(len(self.time)):
            yield (k, self.time[k], *self.strain[k], *self.stress[k], self.sample_id)

    @property
    def n_steps(self) -> int:
        return len(self.time) - 1


class SimulationError(RuntimeError):
    """A global step failed; ``history`` holds the steps completed so far."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


def _run(topo: DmnTopology, laws, path: LoadPath, mixed: bool, sample_id: int = 0):
    tree = _Tree(topo)
    laws = [_as_law(law) for law in laws]
    if len(laws) != 2:
        raise ValueError("need one law per phase")
    state = _LeafState(tree.L)
    dt = path.dt
    rate = np.asarray(path.rate, dtype=float)
    free = np.asarray(path.free, dtype=bool) if mixed else np.zeros(3, dtype=bool)
    n = path.steps
    t = np.zeros(n + 1)
    eps_hist = np.zeros((n + 1, 3))
    sig_hist = np.zeros((n + 1, 3))
    outer = np.zeros(n + 1, dtype=int)
    a = np.zeros((tree.M, 2))
    da_prev = np.zeros_like(a)
    d_free_prev = np.zeros(int(free.sum()))
    max_res = 0.0

    def truncated(k):
        return StressStrainHistory(t[: k + 1], eps_hist[: k + 1], sig_hist[: k + 1], outer[: k + 1],
                                   max_res, state.alpha.copy(), sample_id)

    for k in range(1, n + 1):
        eps_bar = eps_hist[k - 1] + rate * dt
        if free.any():
            eps_bar[free] = eps_hist[k - 1, free] + d_free_prev
        try:
            for it in range(OUTER_MAXITER + 1):
                stress, tangent, a_new, trial, r = _solve_tree(tree, laws, state, eps_bar, a + da_prev, dt)
                if not free.any():
                    break
                res = stress[free]
                scale = max(np.max(np.abs(stress)), 1e-300)
                if np.max(np.abs(res)) <= 1e-12 * scale:
                    break
                if it == OUTER_MAXITER:
                    raise MixedBCError(
                        f"mixed-BC Newton diverged at step {k}: residuals {res}", residuals=res
                    )
                eps_bar[free] -= np.linalg.solve(tangent[np.ix_(free, free)], res)
                outer[k] = it + 1
        except (OnlineSolveError, LocalConvergenceError, MixedBCError, np.linalg.LinAlgError) as exc:
            raise SimulationError(f"step {k} failed: {exc}", truncated(k - 1)) from exc
        max_res = max(max_res, float(np.max(np.abs(r))))
        if free.any():
            d_free_prev = eps_bar[free] - eps_hist[k - 1, free]
        da_prev = a_new - a
        a = a_new
        state = trial
        t[k] = k * dt
        eps_hist[k] = eps_bar
        sig_hist[k] = stress
    return truncated(n)


def online_simulate(topo: DmnTopology, laws, path: LoadPath = LoadPath(), sample_id: int = 0) -> StressStrainHistory:
    """Strain-rate-controlled simulation of a deterministic DMN.

    ``laws`` holds one law per phase: ``NortonParams``, ``IsoElastic`` or a
    3x3 Voigt stiffness (linear elastic).
    """
    if path.is_mixed:
        raise ValueError("path has free components; use mixed_bc_simulate")
    return _run(topo, laws, path, mixed=False, sample_id=sample_id)


def mixed_bc_simulate(topo: DmnTopology, laws, path: LoadPath = LoadPath.uniaxial(mixed=True),
                      sample_id: int = 0) -> StressStrainHistory:
    """Simulation with zero macro stress on the free components of ``path``.

    An outer Newton loop on the free strain components uses the consistent
    macro tangent of the equilibrated tree.
    """
    if not path.is_mixed:
        raise ValueError("path has no free components")
    return _run(topo, laws, path, mixed=True, sample_id=sample_id)


# ---------------------------------------------------------------------------
# sampling-mode ensembles


@dataclass
class EnsembleResult:
    histories: list
    failures: list
    quantile_levels: tuple
    mean: np.ndarray
    std: np.ndarray
    quantiles: np.ndarray

    @property
    def n_success(self) -> int:
        return len(self.histories)


def _member(args):
    topo, laws, path, sid = args
    try:
        if path.is_mixed:
            return mixed_bc_simulate(topo, laws, path, sid), None
        return online_simulate(topo, laws, path, sid), None
    except SimulationError as exc:
        return None, (sid, str(exc))


def vdmn_ensemble_simulate(params, laws, path: LoadPath = LoadPath(), n_samples: int = 100, seed=None,
                           workers: int = 1, quantile_levels=(0.05, 0.25, 0.5, 0.75, 0.95)) -> EnsembleResult:
    """Run ``n_samples`` DMNs drawn from a VDMN through the online solver."""
    from .propagation import sample_dmns

    if n_samples < 1:
        raise ValueError("need at least one sample")
    batch = sample_dmns(params, n_samples, seed)
    jobs = [
        (DmnTopology(batch.depth, batch.leaf_weights[i], batch.angles[i], batch.leaf_phase), laws, path, i)
        for i in range(n_samples)
    ]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_member, jobs))
    else:
        results = [_member(j) for j in jobs]
    histories = [h for h, _ in results if h is not None]
    failures = [f for _, f in results if f is not None]
    if len(histories) < 0.9 * n_samples:
        raise EnsembleError(f"{len(failures)} of {n_samples} ensemble members failed: {failures[:3]}")
    for sid, msg in failures:
        log.warning("ensemble member %d failed: %s", sid, msg)
    stack = np.stack([h.stress for h in histories])
    return EnsembleResult(
        histories,
        failures,
        tuple(quantile_levels),
        stack.mean(0),
        stack.std(0, ddof=1) if len(histories) > 1 else np.zeros_like(stack[0]),
        np.quantile(stack, quantile_levels, axis=0),
    )
