"""Limit-order-book market simulator with zero-intelligence traders, plus
the statistical and nonlinear-dynamics tools used to study its two-branch
long-run behaviour."""

__version__ = "0.1.0"
