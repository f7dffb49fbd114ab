"""Forward and inverse solvers for nonlinear time-fractional PDEs.

Graded-mesh Alikhanov discretization of the Caputo derivative, a fast
sum-of-exponentials history evaluation, and a small network/autodiff stack
for residual-trained approximations, plus a time-marching mode for
temporal-convergence studies.
"""

__version__ = "0.1.0"
