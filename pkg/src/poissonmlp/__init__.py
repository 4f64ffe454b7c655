"""Mesh-free solver for Poisson problems on unit balls.

A small multilayer perceptron is trained so that a substituted ansatz
u = v * (1 - r^2) satisfies the differential equation: the cost is the
mean squared equation residual plus mean squared directional derivatives
of the residual (orders 1..s along two random orthonormal directions per
grid point).  Training uses resilient backpropagation with periodic
renormalization of the probe directions.  A classical finite-difference
baseline and its cost model are included for comparison.
"""

__version__ = "0.1.0"
