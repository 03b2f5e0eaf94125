"""Variational-inference engine with structured Gaussian families.

Fits MAP, mean-field Gaussian, low-rank structured Gaussian, Gaussian
mixture, and Monte-Carlo-dropout posteriors by stochastic ELBO ascent, and
audits each fit against exact conjugate posteriors.
"""

__version__ = "0.1.0"
