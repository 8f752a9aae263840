"""Rendering companion for agechemo run artifacts."""

from .render import RenderError, RunFiles, load_run, main, read_table, render_run

__all__ = [
    "RenderError",
    "RunFiles",
    "load_run",
    "main",
    "read_table",
    "render_run",
]
