"""One-dimensional facilitated exclusion process: frozen-state sampling,
dynamics to absorption and exact number-variance formulas."""

__version__ = "0.1.0"
