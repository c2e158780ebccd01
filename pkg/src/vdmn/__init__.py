"""Variational deep material networks for probabilistic homogenization."""

import jax

jax.config.update("jax_enable_x64", True)

from .laminate import (  # noqa: E402
    DmnTopology,
    IsoElastic,
    isotropic_stiffness,
    leaf_volume_fraction,
    orientation_matrix,
    tree_homogenize,
    unit_homogenize,
)
from .riemann import GaussianStiffness, exp_map, gaussian_nll, log_map  # noqa: E402
from .propagation import (  # noqa: E402
    PropagationConfig,
    VdmnParams,
    propagate_block,
    propagate_tree,
    sample_dmn,
    total_variance_propagate,
)

__version__ = "0.1.0"
