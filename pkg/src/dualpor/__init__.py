"""Two-phase flow in fractured porous media: homogenized double-porosity models and resolved references."""

__version__ = "0.1.0"
