"""Batch figure renderer for the spdhg benchmark CSV artifacts."""

from .figures import (CurveData, FigureSpec, SchemaError, build_curves_figure,
                      build_figure, build_histogram_figure, build_per_b_figure,
                      read_curves_csv, render)

__version__ = "0.1.0"
