"""Data-driven discovery of PDEs from unordered space-time samples.

Two stages: a tanh network surrogate is fitted to the samples, then the
residual ``u_t - L(u, du, ...)`` is minimized over a library of exact
network derivatives (linear models) or over an operator network.
"""

__version__ = "0.1.0"
