"""Diffusion-curve rendering via boundary integral equations.

Solves the Laplace boundary value problem induced by diffusion curves with a
hybrid quadrature/boundary-element discretization, evaluates it with a fast
multipole method on a non-uniform quadtree, and re-solves locally under
viewport-driven adaptive subdivision.
"""

from .scene import (
    BoundaryCondition,
    ColorStops,
    DiffusionCurve,
    Scene,
    load_scene,
    preprocess_scene,
    sample_boundary_value,
    save_scene,
)

__all__ = [
    "BoundaryCondition",
    "ColorStops",
    "DiffusionCurve",
    "Scene",
    "load_scene",
    "preprocess_scene",
    "sample_boundary_value",
    "save_scene",
]

__version__ = "0.1.0"
