"""Virtual cavity-QED experiment and variational Bose-gas workbench."""

__version__ = "0.1.0"
