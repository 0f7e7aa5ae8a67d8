"""Figure rendering for qudit-readout simulation outputs."""

__version__ = "0.1.0"

from .io import FigureInputError, RunDirectory
from .render import render

__all__ = ["__version__", "FigureInputError", "RunDirectory", "render"]
