"""Shape servoing of deformable linear objects with a Cosserat-rod model."""

__version__ = "0.1.0"
