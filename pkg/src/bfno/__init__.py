"""Branched spectral neural-operator ODE classifiers.

Everything is built on float64 numpy arrays: a radix-2 real FFT with a naive
DFT oracle, a reverse-mode tape, explicit and adaptive Runge-Kutta solvers
with adjoint gradients, and a small training stack with a scikit-learn style
estimator on top.
"""
from .tensor import ParamStore, Prng, flatten_params, init_param, unflatten_params

__all__ = [
    "ParamStore",
    "Prng",
    "flatten_params",
    "init_param",
    "unflatten_params",
    "BfnoNodeClassifier",
]


def __getattr__(name):
    # the estimator pulls in sklearn; keep base imports light
    if name == "BfnoNodeClassifier":
        from .estimator import BfnoNodeClassifier

        return BfnoNodeClassifier
    raise AttributeError(name)
