"""Counter-based standard normal draws.

Draw ``a`` of a stream is a vector of ``dim`` normals built from the
Philox4x64 output block starting at counter ``a * stride / 4``, where
``stride = 4 * ceil(dim / 4)`` raw 64-bit words. Any draw can therefore be
generated in isolation, and splitting a batch into chunks (or threads)
cannot change the numbers.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

STREAM_TAG = 0x6E6C_6273_6361_7474
CHUNK = 1024
_U64 = 1 << 64


def _stride(dim: int) -> int:
    return 4 * ((dim + 3) // 4)


def normal_draws(seed: int, start: int, count: int, dim: int, stream: int = 0) -> np.ndarray:
    """``count x dim`` standard normals for draws ``start .. start + count - 1``."""
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if count <= 0 or dim <= 0:
        return np.zeros((max(count, 0), max(dim, 0)))
    stride = _stride(dim)
    key = np.array([seed, (STREAM_TAG + int(stream)) % _U64], dtype=np.uint64)
    counter = np.array([(start * stride // 4) % _U64, 0, 0, 0], dtype=np.uint64)
    raw = Philox(key=key, counter=counter).random_raw(count * stride)
    uniform = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(uniform).reshape(count, stride)[:, :dim]


def map_draws(func, seed: int, nsims: int, dim: int, stream: int = 0, n_jobs: int = 1):
    """Apply ``func`` to fixed-size chunks of draws and concatenate the results in order.

    Chunk boundaries do not depend on ``n_jobs``, so the output is
    bit-identical for any thread count.
    """
    starts = list(range(0, nsims, CHUNK))

    def work(a):
        return func(normal_draws(seed, a, min(CHUNK, nsims - a), dim, stream))

    if n_jobs is None or n_jobs <= 1 or len(starts) == 1:
        parts = [work(a) for a in starts]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, starts))
    return np.concatenate(parts) if parts else np.zeros(0)
