"""Hyper-reduced nonlinear-manifold ROMs on 1D finite-volume model problems."""

__version__ = "0.1.0"
