"""Rotation-equivariant pick-and-place networks on a planar toy benchmark."""

__version__ = "0.1.0"
