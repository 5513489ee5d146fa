"""Pure-Python/numpy reference versions of the hot loops.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``DEIDKIT_PURE_PYTHON=1`` is set.
"""

import numpy as np


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (ca != cb), cur[j - 1] + 1, prev[j] + 1))
        prev = cur
    return prev[-1]


def frame_rms(samples, frame_len: int, hop: int) -> np.ndarray:
    if frame_len <= 0 or hop <= 0:
        raise ValueError("frame_len and hop must be positive")
    x = np.asarray(samples, dtype=np.int16).astype(np.float64)
    if x.size < frame_len:
        return np.empty(0, dtype=np.float64)
    frames = np.lib.stride_tricks.sliding_window_view(x, frame_len)[::hop]
    return np.sqrt(np.mean(frames * frames, axis=1))
