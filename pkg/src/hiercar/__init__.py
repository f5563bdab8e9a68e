"""Bayesian hierarchical regression with intrinsic CAR spatial effects.

Three model variants (baseline, Ridge, Lasso shrinkage) over a
student-in-municipality-in-department nesting, fit by a Gibbs sampler
with one Metropolis step, plus model comparison, posterior prediction,
co-clustering segmentation, and a scenario-driven data generator.
"""

__version__ = "0.1.0"
