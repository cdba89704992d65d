"""Numerical core: meshes, spectral bases, semantics, descriptors, functional maps, transfer, synthetic benchmark."""
