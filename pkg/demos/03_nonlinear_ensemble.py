"""
Nonlinear stress paths through sampled networks
===============================================

Networks fitted on linear elasticity can be reused with nonlinear phases.
Here an elastic matrix and an elastoviscoplastic Norton phase are loaded
in uniaxial strain, first with all strain components prescribed, then with
the lateral stresses held at zero.
"""

import numpy as np

from vdmn.constitutive import LoadPath, NortonParams, mixed_bc_simulate, vdmn_ensemble_simulate
from vdmn.laminate import IsoElastic, isotropic_stiffness
from vdmn.propagation import VdmnParams, sample_dmn

matrix = isotropic_stiffness(IsoElastic(100000.0, 0.3))
norton = NortonParams(E=200000.0, nu=0.19, sigma_y=300.0, sigma_y_max=300.0, N=10)

rng = np.random.default_rng(0)
p = VdmnParams.initialize(3, seed=0, logvar=-5.0).replace(weight_param=rng.normal(-1.0, 0.3, 8))

# strain rate 0.003 /s up to 2% in 50 steps, ten sampled networks
path = LoadPath.uniaxial(steps=50)
res = vdmn_ensemble_simulate(p, [matrix, norton], path, n_samples=10, seed=1)
eps = res.histories[0].strain[:, 0]
for k in range(0, 51, 10):
    lo, hi = res.quantiles[0, k, 0], res.quantiles[-1, k, 0]
    print(f"eps_xx {eps[k]:.4f}  mean sig_xx {res.mean[k, 0]:8.1f}  5-95% [{lo:8.1f}, {hi:8.1f}]")

# the same load with free lateral stresses: Newton on the macroscopic residual
h = mixed_bc_simulate(sample_dmn(p, 2), [matrix, norton], LoadPath.uniaxial(steps=50, mixed=True))
print("\nmixed BC: final stress", h.stress[-1].round(6), "median outer iterations", np.median(h.outer_iterations[1:]))
