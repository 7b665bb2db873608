"""Incremental 3D object-relation scene graph fusion."""

__version__ = "0.1.0"
