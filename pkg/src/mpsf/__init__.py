"""Safety filtering toolkit: robust MPC-based input certification and benchmarks."""

__version__ = "0.1.0"
