"""Long-term innovation dynamics: exact birth-death simulation, deterministic limits and jump chains."""

__version__ = "0.1.0"
