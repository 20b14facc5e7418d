"""Backend selection for the conv gather/scatter kernels.

The compiled extension is used when it was built; setting the environment
variable ``DESPECKLE_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _conv_fallback

fallback = _conv_fallback

compiled = None
if not os.environ.get("DESPECKLE_PURE_PYTHON"):
    try:
        from . import _conv_kernels as compiled
    except ImportError:
        compiled = None

active = compiled if compiled is not None else fallback
BACKEND = "compiled" if compiled is not None else "numpy"


def use(name: str) -> None:
    """Switch backend at runtime: "compiled" or "numpy"."""
    global active, BACKEND
    if name == "compiled":
        if compiled is None:
            raise RuntimeError("the compiled extension is not available")
        active = compiled
    elif name == "numpy":
        active = fallback
    else:
        raise ValueError("backend must be 'compiled' or 'numpy'")
    BACKEND = name


def im2col3x3(x):
    return active.im2col3x3(x)


def col2im3x3(cols, channels: int):
    return active.col2im3x3(cols, channels)
