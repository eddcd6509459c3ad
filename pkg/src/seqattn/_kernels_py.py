"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable or when
``SEQATTN_PURE_PYTHON=1`` is set.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv1d_same_forward(x, F):
    """x: [B, S, Cin], F: [Cin, W, Cout] -> [B, S, Cout]."""
    width = F.shape[1]
    half = width // 2
    xp = np.pad(x, ((0, 0), (half, half), (0, 0)))
    # windows: [B, S, Cin, W]
    win = sliding_window_view(xp, width, axis=1)
    return np.tensordot(win, F, axes=([2, 3], [0, 1]))


def conv1d_same_backward(x, F, gy):
    """Gradients of conv1d_same_forward w.r.t. x and F."""
    width = F.shape[1]
    half = width // 2
    xp = np.pad(x, ((0, 0), (half, half), (0, 0)))
    win = sliding_window_view(xp, width, axis=1)
    gF = np.tensordot(win, gy, axes=([0, 1], [0, 1]))  # [Cin, W, Cout]
    gp = np.pad(gy, ((0, 0), (half, half), (0, 0)))
    gwin = sliding_window_view(gp, width, axis=1)  # [B, S, Cout, W]
    # dx[b,s,c] = sum_j sum_o gy[b, s - j + half, o] F[c, j, o]
    gx = np.tensordot(gwin[..., ::-1], F, axes=([2, 3], [2, 1]))
    return gx, gF


def edit_distance(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    n, m = len(a), len(b)
    prev = np.arange(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        cur = np.empty(m + 1, dtype=np.int64)
        cur[0] = i
        sub = prev[:-1] + (b != a[i - 1])
        dele = prev[1:] + 1
        best = np.minimum(sub, dele)
        # insertion depends on cur[j-1]; resolve left to right
        for j in range(1, m + 1):
            v = best[j - 1]
            ins = cur[j - 1] + 1
            cur[j] = v if v < ins else ins
        prev = cur
    return int(prev[m])
