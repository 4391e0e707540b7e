"""Many-to-many multi-agent pickup-and-delivery warehouse simulator."""

__version__ = "0.1.0"
