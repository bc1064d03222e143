"""Counter-based random numbers keyed by (seed, purpose, stream, step).

Every Gaussian increment used by the simulators is a pure function of the
master seed, a purpose tag, the trajectory (stream) index and the step
index.  Nothing depends on how trajectories are scheduled across workers,
so results are bit-identical for any worker count or chunking.

The generator is Philox4x32-10 (Salmon et al., SC'11), the same bijection
used by Random123 and cuRAND.
"""

from __future__ import annotations

import numba as nb
import numpy as np

# purpose tags, so that e.g. initial conditions and increments never share a stream
TAG_INCREMENT = 0
TAG_INITIAL = 1
TAG_AUX = 2

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)


@nb.njit(cache=True, inline="always")
def _philox_block(c0, c1, c2, c3, k0, k1):
    for _ in range(10):
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> np.uint64(32)
        lo0 = p0 & _MASK
        hi1 = p1 >> np.uint64(32)
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = (hi1 ^ c1 ^ k0) & _MASK, lo1, (hi0 ^ c3 ^ k1) & _MASK, lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _philox_many(ctr, key):
    out = np.empty_like(ctr)
    k0 = key[0]
    k1 = key[1]
    for i in range(ctr.shape[0]):
        a, b, c, d = _philox_block(ctr[i, 0], ctr[i, 1], ctr[i, 2], ctr[i, 3], k0, k1)
        out[i, 0] = a
        out[i, 1] = b
        out[i, 2] = c
        out[i, 3] = d
    return out


def philox4x32(counter, key):
    """Raw Philox4x32-10 on an (n, 4) array of 32-bit counter words."""
    ctr = np.atleast_2d(np.asarray(counter, dtype=np.uint64)) & _MASK
    k = np.asarray(key, dtype=np.uint64) & _MASK
    return _philox_many(ctr, k)


@nb.njit(cache=True)
def _normals_kernel(streams, step, d, tag, k0, k1):
    n = streams.shape[0]
    out = np.empty((n, d))
    nblocks = (d + 1) // 2
    two_pi = 2.0 * np.pi
    scale = 1.0 / 9007199254740992.0  # 2**-53
    step_lo = np.uint64(step) & _MASK
    step_hi = np.uint64(step) >> np.uint64(32)
    for i in range(n):
        s = np.uint64(streams[i])
        for blk in range(nblocks):
            c3 = (step_hi << np.uint64(16)) | np.uint64(blk)
            a, b, c, e = _philox_block(
                s & _MASK, (np.uint64(tag) << np.uint64(16)) ^ (s >> np.uint64(32)),
                step_lo, c3, k0, k1,
            )
            u1 = (float((a << np.uint64(21)) ^ b) + 0.5) * scale
            u2 = (float((c << np.uint64(21)) ^ e) + 0.5) * scale
            r = np.sqrt(-2.0 * np.log(u1))
            j = 2 * blk
            out[i, j] = r * np.cos(two_pi * u2)
            if j + 1 < d:
                out[i, j + 1] = r * np.sin(two_pi * u2)
    return out


def _key(seed):
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


def normals(seed, streams, step, d, tag=TAG_INCREMENT):
    """Standard normal array of shape (len(streams), d).

    Row i depends only on (seed, tag, streams[i], step); rows for distinct
    streams or steps are independent.
    """
    streams = np.ascontiguousarray(np.asarray(streams, dtype=np.uint64).ravel())
    if step < 0:
        raise ValueError("step must be non-negative")
    k0, k1 = _key(seed)
    return _normals_kernel(streams, np.int64(step), int(d), np.int64(tag), k0, k1)


def uniforms(seed, streams, step, tag=TAG_AUX):
    """Uniform(0,1) variates, one per stream, with the same keying as normals."""
    streams = np.asarray(streams, dtype=np.uint64).ravel()
    k0, k1 = _key(seed)
    ctr = np.zeros((streams.size, 4), dtype=np.uint64)
    ctr[:, 0] = streams & _MASK
    ctr[:, 1] = (np.uint64(tag) << np.uint64(16)) ^ (streams >> np.uint64(32))
    ctr[:, 2] = np.uint64(step) & _MASK
    ctr[:, 3] = np.uint64(0xFFFF)
    raw = _philox_many(ctr, np.array([k0, k1], dtype=np.uint64))
    hi = raw[:, 0] << np.uint64(21)
    return (((hi ^ raw[:, 1]).astype(np.float64)) + 0.5) * 2.0**-53


def derive_seed(seed, *labels):
    """Deterministic child seed from a master seed and integer labels."""
    ctr = np.zeros((1, 4), dtype=np.uint64)
    for i, lab in enumerate(labels[:4]):
        ctr[0, i] = np.uint64(int(lab) & 0xFFFFFFFF)
    k0, k1 = _key(seed)
    out = _philox_many(ctr, np.array([k0, k1], dtype=np.uint64))[0]
    return int((int(out[0]) << 32) | int(out[1]))
