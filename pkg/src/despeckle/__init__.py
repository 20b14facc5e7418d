"""Tunable despeckling: residual CNN blocks unrolled with implicit heat steps.

Submodules are imported on demand; importing the package itself is cheap so
the command line can configure numerical threading first.
"""

__version__ = "0.1.0"
