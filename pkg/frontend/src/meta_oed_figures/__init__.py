"""Render the meta-oed CLI's CSV artifacts as static figures.

This package talks to the experiment code only through its files; it computes
no statistics of its own.
"""

from meta_oed_figures.artifacts import SchemaError, load_atlas, load_curves
from meta_oed_figures.render import render_atlas, render_curves

__all__ = ["SchemaError", "load_atlas", "load_curves", "render_atlas", "render_curves"]
