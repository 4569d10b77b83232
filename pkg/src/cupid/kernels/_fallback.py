"""Pure-numpy scoring kernels, used when the compiled extension is unavailable.

Bit-stability notes: ``np.einsum`` (optimize=False) evaluates each output
cell independently of block shape, and the per-pair matmul in the max kernel
always sees the same operand shapes for a given pair, so within this backend
results are independent of tiling and threading, matching the compiled
backend's contract. Values may differ from the compiled backend by a few ulp.
"""
import numpy as np

NAME = "numpy"


def mean_score_block(t_sums, t_counts, s_sums, s_counts):
    raw = np.einsum("jk,ik->ji", t_sums, s_sums)
    return raw / (t_counts[:, None] * s_counts[None, :]).astype(np.float64)


def max_score_block(t_clips, t_offsets, s_clips, s_offsets):
    rows = len(t_offsets) - 1
    cols = len(s_offsets) - 1
    out = np.empty((rows, cols), dtype=np.float64)
    for j in range(rows):
        tj = t_clips[t_offsets[j]:t_offsets[j + 1]]
        for i in range(cols):
            si = s_clips[s_offsets[i]:s_offsets[i + 1]]
            out[j, i] = (tj @ si.T).max()
    return out
