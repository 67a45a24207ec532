"""Block-structure video steganography on a small intra-only quad-tree codec."""

__version__ = "0.1.0"
