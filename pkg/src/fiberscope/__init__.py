"""fiberscope: segmentation and morphometry of wood fibers and vessels."""

__version__ = "0.1.0"
