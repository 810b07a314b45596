"""Training side of the measurement-noise adapter.

Everything here runs in torch with float64 so the exported weights evaluate
identically (to rounding) under the pure-numpy inference used at runtime.
"""

__version__ = "0.1.0"
