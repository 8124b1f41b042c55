"""chlog: positivity-preserving Cahn-Hilliard / Allen-Cahn solvers with FAS multigrid."""

__all__ = [
    "config",
    "utils",
    "grid",
    "potential",
    "kernels",
    "multigrid",
    "schemes",
    "diagnostics",
    "cli",
]

__version__ = "0.1.0"
