"""Small jitted helpers for per-iteration hot paths."""
import numpy as np
from numba import njit


@njit(cache=True)
def all_finite(a):
    for v in a.flat:
        if not np.isfinite(v):
            return False
    return True
