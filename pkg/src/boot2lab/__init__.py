"""Double-bootstrap uncertainty studies on a Gaussian toy model."""

__version__ = "0.1.0"
