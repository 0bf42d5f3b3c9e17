"""Geometry toolkit for a 3D asset pipeline: sparse isosurface extraction,
mesh tokenization, TSDF watertighting and training-point sampling."""

from .mesh import TriangleMesh

__version__ = "0.1.0"

__all__ = ["TriangleMesh", "__version__"]
