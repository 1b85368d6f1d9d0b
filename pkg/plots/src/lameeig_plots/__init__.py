"""Convergence figures from study CSV reports."""

from .plot import PlotSpec, plot_convergence

__all__ = ["PlotSpec", "plot_convergence"]
__version__ = "0.1.0"
