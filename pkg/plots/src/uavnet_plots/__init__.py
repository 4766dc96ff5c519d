from .render import (CsvDataError, FigureSpec, RenderResult, SpecError,
                     parse_figure_spec, render)

__all__ = ["CsvDataError", "FigureSpec", "RenderResult", "SpecError",
           "parse_figure_spec", "render"]
