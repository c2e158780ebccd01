"""
Training on a synthetic ensemble and checking calibration
=========================================================

The training data come from an ensemble of deterministic networks that
plays the role of a family of random microstructures. Each triplet holds
two phase stiffnesses and one homogenized response from a random member,
so the spread across members is the aleatoric uncertainty to be learned.
This script uses a small dataset and a short run; the golden configuration
in ``configs/golden.cfg`` is the full-size version.
"""

from vdmn.calibration import calibration_test
from vdmn.datagen import EnsembleConfig, build_ensemble, generate_dataset, lhs_orthotropic
from vdmn.propagation import propagate_batch
from vdmn.training import TrainConfig, evaluate_nll, train

oracle = build_ensemble(EnsembleConfig(n_members=30, depth=4), seed=0)
splits = generate_dataset(oracle, lhs_orthotropic(400, seed=1), seed=2)
print({k: len(v) for k, v in splits.items()})

# Riemannian Gaussian negative log-likelihood, AMSGrad with cosine decay
params, hist = train(splits, TrainConfig(epochs=40, batch_size=64, seed=0), depth=4)
print(f"best epoch {hist.best_epoch}, validation NLL {min(hist.val_loss):.2f}")
print(f"sum of leaf weights {params.leaf_weights.sum():.4f}")
print(f"held-out mean NLL {evaluate_nll(params, splits['test']).mean():.2f}")

# calibration: probability integral transform of each marginal against a 95% simultaneous envelope;
# a run this short usually leaves some marginals outside the envelope
mean, cov = propagate_batch(params, splits["test"].c1, splits["test"].c2)
print(calibration_test((mean, cov), splits["test"].ch, seed=0).summary())
