"""Negative log-likelihood training of VDMN hyper-variational parameters."""

from __future__ import annotations

import functools
import logging
import math
import time
from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np

from .datagen import Dataset
from .propagation import PropagationConfig, VdmnParams, _input_covs, inverse_softplus, tree_kernel
from .riemann import TANGENT_INDEX, gaussian_nll_jax, unvec_jax

__all__ = [
    "TrainConfig",
    "TrainHistory",
    "TrainingDiverged",
    "loss",
    "grad_loss",
    "train",
    "rescale_weights",
    "learning_rate",
    "evaluate_nll",
]

log = logging.getLogger(__name__)

SCHEDULERS = ("cosine", "warm_restarts", "constant")


class TrainingDiverged(FloatingPointError):
    """Loss became non-finite; ``params`` holds the last good checkpoint."""

    def __init__(self, message, params=None, history=None):
        super().__init__(message)
        self.params = params
        self.history = history


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4000
    batch_size: int = 256
    lr0: float = 0.01
    gamma: float = 1000.0
    seed: int = 0
    mean_order: int = 1
    mode: str = "riemannian"
    scheduler: str = "cosine"
    init_logvar: float = -6.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or not self.lr0 > 0 or self.gamma < 0:
            raise ValueError("epochs, batch_size, lr0 and gamma must be positive")
        if self.mode not in ("riemannian", "euclidean"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}")

    def propagation(self) -> PropagationConfig:
        return PropagationConfig(mean_order=self.mean_order)


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Learning rate for a 0-based epoch index."""
    T = max(cfg.epochs, 1)
    if cfg.scheduler == "constant":
        return cfg.lr0
    if cfg.scheduler == "cosine":
        return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / T))
    period = max(T // 4, 1)
    return cfg.lr0 * 0.5 * (1.0 + math.cos(math.pi * (epoch % period) / period))


# ---------------------------------------------------------------------------
# loss kernels


def _loss_terms(p, c1, c2, ch, mask, S1, S2, gamma, *, depth, leaf_phase, mode, mean_order):
    tree = functools.partial(
        tree_kernel, leaf_phase=leaf_phase, depth=depth, mean_order=mean_order, second_theta=False
    )
    m, S = jax.vmap(lambda a, b: tree(p, a, b, S1, S2))(c1, c2)
    nll = jax.vmap(lambda mm, ss, cc: gaussian_nll_jax(unvec_jax(mm), ss, cc, mode))(m, S, ch)
    nll = jnp.where(mask > 0, nll, 0.0)
    wsum = jnp.sum(jax.nn.softplus(p["weight_param"]))
    return jnp.sum(mask * nll), gamma * (1.0 - wsum) ** 2, nll


def _loss_value(p, *args, **kw):
    data, pen, _ = _loss_terms(p, *args, **kw)
    return data + pen


@functools.lru_cache(maxsize=None)
def _compiled(depth, leaf_phase_key, mode, mean_order):
    kw = dict(depth=depth, leaf_phase=np.array(leaf_phase_key), mode=mode, mean_order=mean_order)
    value_and_grad = jax.jit(jax.value_and_grad(functools.partial(_loss_value, **kw)))
    terms = jax.jit(functools.partial(_loss_terms, **kw))
    return value_and_grad, terms


def _as_arrays(batch):
    if isinstance(batch, Dataset):
        return batch.c1, batch.c2, batch.ch
    batch = list(batch)
    if batch and isinstance(batch[0], (tuple, list)):
        c1, c2, ch = (np.array([t[i] for t in batch], dtype=float).reshape(-1, 3, 3) for i in range(3))
        return c1, c2, ch
    batch = Dataset.from_triplets(batch)
    return batch.c1, batch.c2, batch.ch


def _prepare(c1, c2, ch, size=None):
    n = len(c1)
    size = size or n
    pad = size - n
    v1 = np.asarray(c1)[:, TANGENT_INDEX[0], TANGENT_INDEX[1]]
    v2 = np.asarray(c2)[:, TANGENT_INDEX[0], TANGENT_INDEX[1]]
    chp = np.asarray(ch, dtype=float)
    mask = np.ones(size)
    if pad:
        # padded rows repeat the first sample and are masked out
        v1 = np.concatenate([v1, np.repeat(v1[:1], pad, 0)])
        v2 = np.concatenate([v2, np.repeat(v2[:1], pad, 0)])
        chp = np.concatenate([chp, np.repeat(chp[:1], pad, 0)])
        mask[n:] = 0.0
    return v1, v2, chp, mask


def _jparams(params):
    return {k: jnp.asarray(v) for k, v in params.trainable().items()}


def loss(params: VdmnParams, batch, gamma: float = 1000.0, cfg: PropagationConfig | None = None,
         mode: str = "riemannian") -> float:
    """Summed negative log-likelihood of ``batch`` plus the weight-sum penalty."""
    cfg = cfg or PropagationConfig()
    c1, c2, ch = _as_arrays(batch)
    if len(c1) == 0:
        raise ValueError("empty batch")
    vg, _ = _compiled(params.depth, tuple(params.leaf_phase.tolist()), mode, cfg.mean_order)
    S1, S2 = _input_covs(cfg)
    value, _ = vg(_jparams(params), *_prepare(c1, c2, ch), S1, S2, gamma)
    value = float(value)
    if not np.isfinite(value):
        _, terms = _compiled(params.depth, tuple(params.leaf_phase.tolist()), mode, cfg.mean_order)
        per = np.asarray(terms(_jparams(params), *_prepare(c1, c2, ch), S1, S2, gamma)[2])
        bad = int(np.flatnonzero(~np.isfinite(per))[0]) if np.any(~np.isfinite(per)) else -1
        raise FloatingPointError(f"non-finite loss (first bad sample index {bad})")
    return value


def grad_loss(params: VdmnParams, batch, gamma: float = 1000.0, cfg: PropagationConfig | None = None,
              mode: str = "riemannian") -> dict:
    """Exact gradient of :func:`loss` w.r.t. every trainable array."""
    cfg = cfg or PropagationConfig()
    c1, c2, ch = _as_arrays(batch)
    vg, _ = _compiled(params.depth, tuple(params.leaf_phase.tolist()), mode, cfg.mean_order)
    S1, S2 = _input_covs(cfg)
    _, g = vg(_jparams(params), *_prepare(c1, c2, ch), S1, S2, gamma)
    out = {k: np.asarray(v) for k, v in g.items()}
    for name, arr in out.items():
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    return out


def evaluate_nll(params: VdmnParams, data: Dataset, mode="riemannian", mean_order=1, chunk=256) -> np.ndarray:
    """Per-sample negative log-likelihood of ``data``."""
    _, terms = _compiled(params.depth, tuple(params.leaf_phase.tolist()), mode, mean_order)
    z = np.zeros((6, 6))
    out = []
    p = _jparams(params)
    size = min(chunk, len(data))
    for start in range(0, len(data), size):
        sl = slice(start, start + size)
        prep = _prepare(data.c1[sl], data.c2[sl], data.ch[sl], size)
        per = np.asarray(terms(p, *prep, z, z, 0.0)[2])
        out.append(per[: len(data.c1[sl])])
    return np.concatenate(out)


def rescale_weights(params: VdmnParams) -> VdmnParams:
    """Rescale leaf weights to sum to one; offline predictions are unchanged."""
    w = params.leaf_weights
    total = w.sum()
    if not total > 0:
        raise ValueError("leaf weights sum to zero")
    return params.replace(weight_param=inverse_softplus(w / total))


# ---------------------------------------------------------------------------
# optimizer


class _AmsGrad:
    def __init__(self, cfg: TrainConfig, params: dict):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.vmax = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float) -> dict:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        out = {}
        for k, g in grads.items():
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            self.vmax[k] = np.maximum(self.vmax[k], self.v[k])
            denom = np.sqrt(self.vmax[k]) / math.sqrt(bc2) + c.eps
            out[k] = params[k] - (lr / bc1) * self.m[k] / denom
        return out


def train(dataset, cfg: TrainConfig = TrainConfig(), depth: int = 7, init: VdmnParams | None = None,
          callback=None):
    """Fit a VDMN to ``dataset`` (a dict with ``train`` and ``val`` splits).

    Returns the best-validation parameters and the training history.
    """
    train_set, val_set = dataset["train"], dataset.get("val")
    if cfg.batch_size > len(train_set):
        cfg = replace(cfg, batch_size=len(train_set))
    params = init if init is not None else VdmnParams.initialize(depth, cfg.seed, cfg.init_logvar)
    history = TrainHistory()
    if cfg.epochs == 0:
        return params, history

    key = tuple(params.leaf_phase.tolist())
    vg, _ = _compiled(params.depth, key, cfg.mode, cfg.mean_order)
    z = np.zeros((6, 6))
    rng = np.random.default_rng(cfg.seed)
    opt = _AmsGrad(cfg, params.trainable())
    current = {k: v.copy() for k, v in params.trainable().items()}
    best, best_val = params, np.inf
    t0 = time.perf_counter()
    n = len(train_set)
    for epoch in range(cfg.epochs):
        lr = learning_rate(cfg, epoch)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            prep = _prepare(train_set.c1[idx], train_set.c2[idx], train_set.ch[idx], cfg.batch_size)
            value, g = vg({k: jnp.asarray(v) for k, v in current.items()}, *prep, z, z, cfg.gamma)
            value = float(value)
            grads = {k: np.asarray(v) for k, v in g.items()}
            if not np.isfinite(value) or not all(np.all(np.isfinite(a)) for a in grads.values()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}", best, history)
            epoch_loss += value
            current = opt.step(current, grads, lr)
        candidate = params.replace(**current)
        if val_set is not None and len(val_set):
            val = float(np.mean(evaluate_nll(candidate, val_set, cfg.mode, cfg.mean_order)))
        else:
            val = epoch_loss / n
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}", best, history)
        history.train_loss.append(epoch_loss / n)
        history.val_loss.append(val)
        history.lr.append(lr)
        history.wall_time.append(time.perf_counter() - t0)
        if val < best_val:
            best, best_val, history.best_epoch = candidate, val, epoch
        if callback is not None:
            callback(epoch, history, candidate)
        log.debug("epoch %d train %.5g val %.5g lr %.3g", epoch, epoch_loss / n, val, lr)
    return best, history
