"""Load-profile sphere toolkit: hypersphere embedding, outlier detection, curve ordering and synthesis."""

__version__ = "0.1.0"
