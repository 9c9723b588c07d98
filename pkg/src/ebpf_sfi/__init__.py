"""User-space eBPF interpreter with software fault isolation."""

__version__ = "0.1.0"
