"""Pure-numpy 3x3 im2col / col2im with the same layout and summation order
as the compiled kernels."""

import numpy as np


def im2col3x3(x: np.ndarray) -> np.ndarray:
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2, W + 2))
    xp[:, :, 1:-1, 1:-1] = x
    out = np.empty((B, C, 3, 3, H, W))
    for dy in range(3):
        for dx in range(3):
            out[:, :, dy, dx] = xp[:, :, dy : dy + H, dx : dx + W]
    return out.reshape(B, C * 9, H, W)


def col2im3x3(cols: np.ndarray, C: int) -> np.ndarray:
    B, R, H, W = cols.shape
    if R != C * 9:
        raise ValueError("column buffer does not match channel count")
    cols = cols.reshape(B, C, 3, 3, H, W)
    xp = np.zeros((B, C, H + 2, W + 2))
    for dy in range(3):
        for dx in range(3):
            xp[:, :, dy : dy + H, dx : dx + W] += cols[:, :, dy, dx]
    return np.ascontiguousarray(xp[:, :, 1:-1, 1:-1])
