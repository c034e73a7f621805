"""Figure rendering for the three-level diffusion simulator's CSV output."""

from .render import (
    EXPECTED_HEADER,
    FigureSpec,
    PanelSpec,
    RenderError,
    SeriesSpec,
    fig1_spec,
    fig2_spec,
    figure_spec_from_dict,
    load_series,
    render_figure,
)

__version__ = "0.1.0"
