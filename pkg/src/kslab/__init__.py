"""kslab: a desk-scale laboratory for the logistic Keller-Segel system.

Simulates the parabolic-parabolic chemotaxis system with logistic growth
and its degree-theta damping regularization on boxes with Neumann walls,
monitors the functionals that control its long-time behaviour, and checks
a-priori bounds, differential inequalities, threshold constants and decay
asymptotics mechanically.
"""

from ._kernels import BACKEND as kernel_backend

__version__ = "0.1.0"

__all__ = ["kernel_backend", "__version__"]
