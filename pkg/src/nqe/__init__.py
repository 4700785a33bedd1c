"""Neural quantum embedding workbench on a small numpy circuit simulator."""

__version__ = "0.1.0"
