"""Dynamic MRI reconstruction with Fourier-feature implicit neural representations."""

__version__ = "0.1.0"
