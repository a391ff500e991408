"""Random walks on supercritical bond-percolation clusters: simulation and
iterated-logarithm diagnostics."""

__version__ = "0.1.0"
