"""Neural field reconstruction and biomass regression for multi-view crop imagery."""

__version__ = "0.1.0"
