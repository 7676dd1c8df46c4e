"""Similarity-driven MCMC for Bayesian variable selection.

Linear models with a conjugate Normal-Inverse-Gamma prior are sampled over
inclusion vectors; Dirichlet-Multinomial count regressions are sampled by
reversible jump over intercepts, coefficients and inclusion indicators.
"""

__version__ = "0.1.0"
