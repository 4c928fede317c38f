"""Log-conformation finite-element solver for 2D viscoelastic flow."""

__version__ = "0.1.0"
