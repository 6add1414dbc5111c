"""Open ASEP laboratory: exact solvers, coupled simulation, special functions."""

__version__ = "0.1.0"
