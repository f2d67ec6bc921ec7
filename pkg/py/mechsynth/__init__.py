"""mechsynth: revenue-optimal auction synthesis by generalized multiplicative weights."""

__version__ = "0.1.0"
