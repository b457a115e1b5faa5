"""Figure rendering over the qrelab CSV exports."""
from .render import (
    FigureError,
    KINDS,
    load_csv,
    render,
    render_path_cross_section,
    render_procedure_overlay,
    render_surface,
    render_welfare_diff,
)

__version__ = "0.1.0"
