"""Through-wall multi-static SAR reconstruction with a BEM-trained reduced-order model."""

__version__ = "0.1.0"
