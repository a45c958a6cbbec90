"""Figure rendering over qsmooth CSV outputs (pure view, never recomputes)."""

from .plots import PlotJob, plot_mse, plot_tracking
from .readers import SchemaError, read_table

__version__ = "0.1.0"
