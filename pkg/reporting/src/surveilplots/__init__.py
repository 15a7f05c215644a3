"""Figures from simulation CSV exports (no dependency on the simulator)."""

__version__ = "0.1.0"

from .render import FigureSpec, SchemaError, build_figure, render
