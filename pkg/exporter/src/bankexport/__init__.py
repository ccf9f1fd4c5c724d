"""Export pre-GAP CNN feature maps from an image folder to a feature bank.

Runs a torchvision backbone over class-subdirectory image trees, pools the
final convolutional maps to a square grid, optionally projects each cell to
an embedding dimension, and writes the ``DIML`` binary bank format consumed
by the ``structmatch`` library and CLI.
"""

__version__ = "0.1.0"

from .bankio import write_bank
from .export import ExportConfig, ExportError, export

__all__ = ["ExportConfig", "ExportError", "export", "write_bank", "__version__"]
