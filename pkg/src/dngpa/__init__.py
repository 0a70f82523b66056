"""Distance-preserving deep neural GP approximation for capacitance regression."""

__version__ = "0.1.0"
