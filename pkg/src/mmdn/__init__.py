"""mmdn: dual-stream densely connected classifier with additive mid-block fusion.

Submodules are imported lazily by the CLI so that thread-count environment
variables can be set before numpy loads its BLAS backend.
"""

__version__ = "0.1.0"
