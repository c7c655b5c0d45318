"""Multi-view kidney-stone patch classification toolkit.

Subpackages are imported explicitly (``stoneview.nn``, ``stoneview.dataset``,
...) so that spawned worker processes can configure BLAS threading before
numpy loads.
"""

__version__ = "0.1.0"
