"""Deterministic rank-1 laminate homogenization and binary laminate trees.

Stiffness matrices are 2D plane-strain Voigt matrices with component order
(xx, yy, xy) and engineering shear strain, so ``C[2, 2]`` is the shear modulus.

A tree of depth ``N`` is stored in level order: internal node ``(i, j)`` with
``0 <= i < N`` lives at flat index ``2**i - 1 + j`` of the angle array, and its
children are ``(i + 1, 2j)`` (the alpha phase) and ``(i + 1, 2j + 1)`` (beta).
Only the ``2**N`` leaf weights are stored; internal weights are sums.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateInputError",
    "StructureError",
    "IncompressibleError",
    "IsoElastic",
    "DmnTopology",
    "orientation_matrix",
    "unit_homogenize",
    "tree_homogenize",
    "leaf_volume_fraction",
    "isotropic_stiffness",
    "alternating_phases",
    "node_index",
]

SINGULAR_TOL = 1e-14


class DegenerateInputError(ValueError):
    """The 2x2 interface operator of a laminate is singular."""

    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"{message} at node {node}")
        self.node = node


class StructureError(ValueError):
    """A tree topology cannot be homogenized (e.g. an all-zero sibling pair)."""

    def __init__(self, message, node=None):
        super().__init__(message if node is None else f"{message} at node {node}")
        self.node = node


class IncompressibleError(ValueError):
    pass


@dataclass(frozen=True)
class IsoElastic:
    youngs_modulus: float
    poisson_ratio: float

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError(f"Young's modulus must be positive, got {self.youngs_modulus}")
        if not -1.0 < self.poisson_ratio < 0.5:
            raise ValueError(f"Poisson ratio must lie in (-1, 0.5), got {self.poisson_ratio}")


def alternating_phases(depth: int) -> np.ndarray:
    """Leaf phase labels for a tree of ``depth``: even leaves phase 1, odd phase 2."""
    return np.where(np.arange(2**depth) % 2 == 0, 1, 2)


def node_index(layer: int, j: int) -> int:
    """Flat level-order index of internal node ``(layer, j)``."""
    return 2**layer - 1 + j


@dataclass
class DmnTopology:
    """A deterministic DMN: leaf weights, per-node angles and leaf phases.

    ``angles`` are in units of full turns (the laminate normal is at
    ``2*pi*theta``) and may take any real value.
    """

    depth: int
    leaf_weights: np.ndarray
    angles: np.ndarray
    leaf_phase: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.depth < 1:
            raise StructureError(f"depth must be >= 1, got {self.depth}")
        self.leaf_weights = np.asarray(self.leaf_weights, dtype=float)
        self.angles = np.asarray(self.angles, dtype=float)
        if self.leaf_phase is None:
            self.leaf_phase = alternating_phases(self.depth)
        self.leaf_phase = np.asarray(self.leaf_phase, dtype=int)
        n_leaf = 2**self.depth
        if self.leaf_weights.shape[-1] != n_leaf:
            raise StructureError(
                f"expected {n_leaf} leaf weights for depth {self.depth}, "
                f"got {self.leaf_weights.shape[-1]}"
            )
        if self.angles.shape[-1] != n_leaf - 1:
            raise StructureError(
                f"expected {n_leaf - 1} angles for depth {self.depth}, got {self.angles.shape[-1]}"
            )
        if self.leaf_phase.shape != (n_leaf,) or not np.all(np.isin(self.leaf_phase, (1, 2))):
            raise StructureError("leaf_phase must hold one label in {1, 2} per leaf")
        if np.any(self.leaf_weights < 0):
            raise StructureError("leaf weights must be nonnegative")
        for phase in (1, 2):
            if not np.all(np.any(self.leaf_weights[..., self.leaf_phase == phase] > 0, axis=-1)):
                raise StructureError(f"phase {phase} has no leaf with positive weight")

    @property
    def n_leaves(self) -> int:
        return 2**self.depth

    def node_weights(self, layer: int) -> np.ndarray:
        """Weights of the ``2**layer`` nodes of ``layer`` (sums of leaf weights)."""
        w = self.leaf_weights
        for _ in range(self.depth - layer):
            w = w[..., 0::2] + w[..., 1::2]
        return w


def orientation_matrix(theta, xp=np):
    """Return the 3x2 orientation matrix ``H(theta)`` (batched over ``theta``).

    ``H @ a`` is the Voigt form of ``sym(a (x) n)`` for ``n = (cos 2 pi theta,
    sin 2 pi theta)``, and ``H.T @ sigma`` is the traction on the interface.
    """
    c = xp.cos(2 * np.pi * theta)
    s = xp.sin(2 * np.pi * theta)
    z = xp.zeros_like(c)
    return xp.stack(
        [xp.stack([c, z], -1), xp.stack([z, s], -1), xp.stack([s, c], -1)], -2
    )


def _homogenize(ca, cb, fa, theta, xp=np):
    """Closed-form laminate stiffness without degenerate-case handling.

    Returns ``(Ch, K, det)`` where ``K`` is the 2x2 interface operator.
    """
    fa = xp.asarray(fa)
    fb = 1.0 - fa
    H = orientation_matrix(theta, xp)
    Ht = xp.swapaxes(H, -1, -2)
    dC = ca - cb
    K = Ht @ (fa[..., None, None] * cb + fb[..., None, None] * ca) @ H
    k11, k12, k21, k22 = K[..., 0, 0], K[..., 0, 1], K[..., 1, 0], K[..., 1, 1]
    det = k11 * k22 - k12 * k21
    adj = xp.stack([xp.stack([k22, -k12], -1), xp.stack([-k21, k11], -1)], -2)
    Kinv = adj / det[..., None, None]
    B = -(fa * fb)[..., None, None] * (Kinv @ Ht @ dC)
    ch = fa[..., None, None] * ca + fb[..., None, None] * cb + dC @ H @ B
    ch = 0.5 * (ch + xp.swapaxes(ch, -1, -2))
    return ch, K, det


def unit_homogenize(ca, cb, fa, theta, node=None):
    """Homogenize a two-phase rank-1 laminate.

    Parameters
    ----------
    ca, cb : array_like, shape (..., 3, 3)
        Voigt stiffness of the alpha and beta phases.
    fa : float or array_like
        Volume fraction of the alpha phase, in [0, 1].
    theta : float or array_like
        Interface orientation in turns.
    node : optional
        Label attached to error messages.

    Returns
    -------
    ndarray, shape (..., 3, 3)
        Homogenized stiffness. ``fa == 1`` returns ``ca`` and ``fa == 0``
        returns ``cb`` exactly.
    """
    ca = np.asarray(ca, dtype=float)
    cb = np.asarray(cb, dtype=float)
    fa = np.asarray(fa, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if np.any((fa < 0) | (fa > 1)):
        raise ValueError(f"volume fraction outside [0, 1] at node {node}")
    ch, K, det = _homogenize(ca, cb, fa, theta)
    pure = (fa <= 0) | (fa >= 1)
    knorm2 = np.sum(K * K, axis=(-2, -1))
    bad = (np.abs(det) <= SINGULAR_TOL * knorm2) & ~pure
    if np.any(bad):
        raise DegenerateInputError("singular interface operator", node)
    ch = np.where((fa >= 1)[..., None, None], ca, ch)
    ch = np.where((fa <= 0)[..., None, None], np.broadcast_to(cb, ch.shape), ch)
    return ch


def _leaf_stiffness(C1, C2, leaf_phase):
    C1 = np.asarray(C1, dtype=float)
    C2 = np.asarray(C2, dtype=float)
    mask = (leaf_phase == 1)[:, None, None]
    return np.where(mask, C1[..., None, :, :], C2[..., None, :, :])


def tree_homogenize(topo: DmnTopology, C1, C2) -> np.ndarray:
    """Homogenize phase stiffnesses ``C1`` and ``C2`` through a laminate tree.

    Leading batch dimensions of ``C1``/``C2`` and of the topology arrays
    broadcast against each other.
    """
    C = _leaf_stiffness(C1, C2, topo.leaf_phase)
    w = topo.leaf_weights
    for layer in range(topo.depth - 1, -1, -1):
        wa, wb = w[..., 0::2], w[..., 1::2]
        tot = wa + wb
        if np.any(tot <= 0):
            j = int(np.argwhere(np.atleast_1d(tot <= 0))[0][-1])
            raise StructureError("sibling pair with zero total weight", (layer, j))
        start = 2**layer - 1
        theta = topo.angles[..., start : start + 2**layer]
        fa = wa / tot
        C = unit_homogenize(C[..., 0::2, :, :], C[..., 1::2, :, :], fa, theta, node=f"layer {layer}")
        w = tot
    return C[..., 0, :, :]


def leaf_volume_fraction(topo: DmnTopology) -> float:
    """Fraction of the total leaf weight assigned to phase 1."""
    total = topo.leaf_weights.sum(axis=-1)
    if np.any(total <= 0):
        raise StructureError("total leaf weight is zero")
    return topo.leaf_weights[..., topo.leaf_phase == 1].sum(axis=-1) / total


def isotropic_stiffness(m: IsoElastic) -> np.ndarray:
    """Plane-strain Voigt stiffness of an isotropic material."""
    E, nu = m.youngs_modulus, m.poisson_ratio
    if abs(0.5 - nu) < 1e-9:
        raise IncompressibleError("plane-strain stiffness is unbounded as nu -> 0.5")
    lam_fac = E / ((1 + nu) * (1 - 2 * nu))
    c11 = lam_fac * (1 - nu)
    c12 = lam_fac * nu
    c33 = E / (2 * (1 + nu))
    return np.array([[c11, c12, 0.0], [c12, c11, 0.0], [0.0, 0.0, c33]])
