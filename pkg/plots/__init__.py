"""Figure rendering for emitted scenario datasets.

This package consumes only the on-disk contract of a scenario run, a
``data.csv`` table plus a ``meta.json`` sidecar, and turns it into a
publication-style figure panel.  It deliberately does not import the
simulation package.
"""

from .figures import FIGURES, FigureSpec, SchemaError, render_scenario_dir

__all__ = ["FIGURES", "FigureSpec", "SchemaError", "render_scenario_dir"]
