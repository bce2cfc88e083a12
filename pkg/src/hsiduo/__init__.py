"""hsiduo: dual-branch real/complex 3D-CNN hyperspectral classifier.

Kept import-light so the CLI can pin thread pools before numpy loads.
"""

__version__ = "0.1.0"
