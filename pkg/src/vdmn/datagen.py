"""Supervised homogenization datasets from an ensemble of laminate trees.

The ground truth for each input pair is the exact homogenized stiffness of
one member of a small ensemble of deterministic laminate trees that share a
base morphology and differ by random jitter, which plays the role of
sample-to-sample microstructure variability.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .laminate import DmnTopology, leaf_volume_fraction, tree_homogenize

__all__ = [
    "HomogTriplet",
    "Dataset",
    "EnsembleConfig",
    "EnsembleOracle",
    "ratios_to_stiffness",
    "lhs_orthotropic",
    "build_ensemble",
    "generate_dataset",
    "split_sizes",
    "normalize",
    "denormalize",
    "RATIO_BOUNDS",
]

# (lower, upper) of the seven sampled ratios, in the order used by
# ratios_to_stiffness
RATIO_BOUNDS = np.array(
    [
        [-1.0, 1.0],  # ln(C11_b / C11_a)
        [-1.0, 1.0],  # ln(C22_a / C11_a)
        [-1.0, 1.0],  # ln(C22_b / C11_b)
        [0.0, 0.9],  # C12_a / sqrt(C11_a C22_a)
        [0.0, 0.9],  # C12_b / sqrt(C11_b C22_b)
        [-1.0, 1.0],  # ln(C33_a / sqrt(C11_a C22_a))
        [-1.0, 1.0],  # ln(C33_b / sqrt(C11_b C22_b))
    ]
)


@dataclass
class HomogTriplet:
    C1: np.ndarray
    C2: np.ndarray
    Ch: np.ndarray
    ensemble_member_id: int = -1
    scale: float = 1.0


@dataclass
class Dataset:
    """Array-of-records view of a list of triplets."""

    c1: np.ndarray
    c2: np.ndarray
    ch: np.ndarray
    member_id: np.ndarray
    scale: np.ndarray

    def __len__(self):
        return len(self.c1)

    def __getitem__(self, idx):
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return Dataset(self.c1[idx], self.c2[idx], self.ch[idx], self.member_id[idx], self.scale[idx])

    @classmethod
    def from_triplets(cls, triplets) -> "Dataset":
        triplets = list(triplets)
        return cls(
            np.array([t.C1 for t in triplets], dtype=float).reshape(-1, 3, 3),
            np.array([t.C2 for t in triplets], dtype=float).reshape(-1, 3, 3),
            np.array([t.Ch for t in triplets], dtype=float).reshape(-1, 3, 3),
            np.array([t.ensemble_member_id for t in triplets], dtype=int),
            np.array([t.scale for t in triplets], dtype=float),
        )

    def triplets(self):
        return [
            HomogTriplet(self.c1[i], self.c2[i], self.ch[i], int(self.member_id[i]), float(self.scale[i]))
            for i in range(len(self))
        ]


def ratios_to_stiffness(ratios) -> tuple[np.ndarray, np.ndarray]:
    """Build the two orthotropic phases from sampled ratios, ``C11`` of phase 1 = 1."""
    r = np.asarray(ratios, dtype=float)
    c11a = np.ones(r.shape[:-1])
    c11b = np.exp(r[..., 0])
    c22a = c11a * np.exp(r[..., 1])
    c22b = c11b * np.exp(r[..., 2])
    ga = np.sqrt(c11a * c22a)
    gb = np.sqrt(c11b * c22b)

    def build(c11, c22, c12, c33):
        C = np.zeros(c11.shape + (3, 3))
        C[..., 0, 0], C[..., 1, 1], C[..., 2, 2] = c11, c22, c33
        C[..., 0, 1] = C[..., 1, 0] = c12
        return C

    C1 = build(c11a, c22a, r[..., 3] * ga, ga * np.exp(r[..., 5]))
    C2 = build(c11b, c22b, r[..., 4] * gb, gb * np.exp(r[..., 6]))
    return C1, C2


def lhs_orthotropic(n: int, seed=None, centered: bool = False):
    """Latin-hypercube design of ``n`` orthotropic phase pairs.

    Returns arrays ``C1, C2`` of shape ``(n, 3, 3)``. ``centered=True`` puts
    every sample at the center of its stratum.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    u = qmc.LatinHypercube(d=7, scramble=not centered, seed=seed).random(n)
    lo, hi = RATIO_BOUNDS[:, 0], RATIO_BOUNDS[:, 1]
    C1, C2 = ratios_to_stiffness(lo + u * (hi - lo))
    assert np.all(np.linalg.eigvalsh(C1)[:, 0] > 0) and np.all(np.linalg.eigvalsh(C2)[:, 0] > 0)
    return C1, C2


@dataclass(frozen=True)
class EnsembleConfig:
    n_members: int = 30
    depth: int = 5
    angle_jitter: float = 0.02
    weight_jitter: float = 0.1
    vf_tolerance: float = 0.05
    max_tries: int = 1000


@dataclass
class EnsembleOracle:
    members: list
    base: DmnTopology
    config: EnsembleConfig = field(default_factory=EnsembleConfig)

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least two members")

    def __len__(self):
        return len(self.members)

    def stacked(self) -> DmnTopology:
        """All members as one batched topology."""
        return DmnTopology(
            self.base.depth,
            np.stack([m.leaf_weights for m in self.members]),
            np.stack([m.angles for m in self.members]),
            self.base.leaf_phase,
        )

    def homogenize(self, C1, C2, member_ids=None) -> np.ndarray:
        """Exact stiffness of selected members (all members by default)."""
        stacked = self.stacked()
        if member_ids is None:
            return tree_homogenize(stacked, np.asarray(C1)[None], np.asarray(C2)[None])
        ids = np.asarray(member_ids)
        topo = DmnTopology(stacked.depth, stacked.leaf_weights[ids], stacked.angles[ids], stacked.leaf_phase)
        return tree_homogenize(topo, C1, C2)


def build_ensemble(cfg: EnsembleConfig = EnsembleConfig(), seed=None) -> EnsembleOracle:
    if cfg.n_members < 2 or cfg.depth < 2:
        raise ValueError("need n_members >= 2 and depth >= 2")
    rng = np.random.default_rng(seed)
    n_leaf = 2**cfg.depth
    base_w = rng.uniform(0.2, 1.0, n_leaf)
    base = DmnTopology(cfg.depth, base_w / base_w.sum(), rng.random(n_leaf - 1))
    vf0 = leaf_volume_fraction(base)
    members = []
    for _ in range(cfg.n_members):
        for _ in range(cfg.max_tries):
            w = base.leaf_weights * np.exp(cfg.weight_jitter * rng.standard_normal(n_leaf))
            theta = base.angles + cfg.angle_jitter * rng.standard_normal(n_leaf - 1)
            cand = DmnTopology(cfg.depth, w / w.sum(), theta, base.leaf_phase)
            if abs(leaf_volume_fraction(cand) - vf0) <= cfg.vf_tolerance:
                members.append(cand)
                break
        else:
            raise ValueError(
                f"could not draw a member within {cfg.vf_tolerance} of the base volume "
                f"fraction in {cfg.max_tries} tries"
            )
    return EnsembleOracle(members, base, cfg)


def split_sizes(n: int, split=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """Train and validation sizes are floors; test takes the remainder."""
    n_train = int(np.floor(split[0] * n))
    n_val = int(np.floor(split[1] * n))
    return n_train, n_val, n - n_train - n_val


def generate_dataset(oracle: EnsembleOracle, pairs, split=(0.70, 0.15, 0.15), seed=None):
    """Assign each pair a random member, homogenize exactly, shuffle, split.

    Returns a dict with ``train``, ``val`` and ``test`` datasets.
    """
    C1, C2 = (np.asarray(a, dtype=float) for a in pairs)
    n = len(C1)
    if n == 0:
        raise ValueError("no input pairs")
    ss = np.random.SeedSequence(seed)
    member = np.array(
        [np.random.default_rng([ss.entropy, i]).integers(len(oracle)) for i in range(n)]
    )
    raw = Dataset(C1, C2, oracle.homogenize(C1, C2, member), member, np.ones(n))
    data = normalize(raw)
    order = np.random.default_rng([ss.entropy, n]).permutation(n)
    n_train, n_val, _ = split_sizes(n, split)
    return {
        "train": data[order[:n_train]],
        "val": data[order[n_train : n_train + n_val]],
        "test": data[order[n_train + n_val :]],
    }


def normalize(data):
    """Divide all stiffnesses by ``C1[0, 0]``; works on triplets and datasets."""
    if isinstance(data, HomogTriplet):
        s = float(data.C1[0, 0])
        if not s > 0:
            raise ValueError("C1_11 must be positive")
        return HomogTriplet(data.C1 / s, data.C2 / s, data.Ch / s, data.ensemble_member_id, data.scale * s)
    s = data.c1[:, 0, 0]
    if np.any(s <= 0):
        raise ValueError("C1_11 must be positive")
    k = s[:, None, None]
    return Dataset(data.c1 / k, data.c2 / k, data.ch / k, data.member_id.copy(), data.scale * s)


def denormalize(prediction, scale):
    """Map a normalized prediction back to physical units.

    ``prediction`` is a stiffness matrix or anything with ``mean``/``cov``.
    """
    if hasattr(prediction, "mean") and hasattr(prediction, "cov"):
        return prediction.scaled(scale)
    return np.asarray(prediction) * scale
