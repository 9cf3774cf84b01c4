"""Counter-based Gaussian increments for reproducible path ensembles.

Every normal variate is a pure function of ``(seed, path, step)``, computed
through the Philox-4x32-10 block cipher and a Box-Muller transform.  This
gives three properties the simulators rely on:

* re-running with the same seed is bit-identical,
* path ``p`` does not depend on how many paths are drawn alongside it
  (prefix stability), and
* any partition of the path range across workers assembles into the same
  arrays, so worker count cannot change results.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)

# one uniform is offset by 2^-33 to keep it inside (0, 1); log(0) never occurs
_INV32 = 2.0 ** -32
_HALF_LSB = 2.0 ** -33


def _philox4x32_10(c0, c1, c2, c3, k0, k1):
    """One Philox-4x32-10 block per array element; lanes held in uint64."""
    for rnd in range(10):
        if rnd > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0, lo0 = p0 >> np.uint64(32), p0 & _MASK32
        hi1, lo1 = p1 >> np.uint64(32), p1 & _MASK32
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def philox_block(counter: tuple[int, int, int, int], key: tuple[int, int]):
    """Single Philox-4x32-10 block, exposed for known-answer tests."""
    lanes = [np.uint64(c & 0xFFFFFFFF) for c in counter]
    out = _philox4x32_10(*lanes, np.uint64(key[0] & 0xFFFFFFFF),
                         np.uint64(key[1] & 0xFFFFFFFF))
    return tuple(int(x) for x in out)


def normals(seed: int, paths: np.ndarray, step: int) -> np.ndarray:
    """Standard normals for one time step, one per entry of ``paths``.

    ``counter = (path, step, 0, 0)`` and ``key = seed`` split into two
    32-bit words; the first two output lanes feed Box-Muller.
    """
    paths = np.asarray(paths, dtype=np.uint64)
    c0 = paths & _MASK32
    c1 = np.full_like(c0, np.uint64(step) & _MASK32)
    c2 = (paths >> np.uint64(32)) & _MASK32
    c3 = np.zeros_like(c0)
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    k0 = np.uint64(seed & 0xFFFFFFFF)
    k1 = np.uint64(seed >> 32)
    x0, x1, _, _ = _philox4x32_10(c0, c1, c2, c3, k0, k1)
    u1 = (x0.astype(np.float64) + 1.0) * _INV32          # in (0, 1]
    u2 = x1.astype(np.float64) * _INV32 + _HALF_LSB      # in (0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def normal_matrix(seed: int, n_paths: int, n_steps: int,
                  path_offset: int = 0) -> np.ndarray:
    """Matrix of standard normals, shape ``(n_paths, n_steps)``.

    Row ``p`` holds the stream of path ``path_offset + p``; column ``m`` is
    step ``m``.  Any sub-block equals the same slice of the full matrix.
    """
    paths = np.arange(path_offset, path_offset + n_paths, dtype=np.uint64)
    out = np.empty((n_paths, n_steps))
    for m in range(n_steps):
        out[:, m] = normals(seed, paths, m)
    return out


def brownian_increments(seed: int, n_paths: int, n_steps: int, dt: float,
                        path_offset: int = 0) -> np.ndarray:
    """Brownian increments ``dW ~ N(0, dt)``, shape ``(n_paths, n_steps)``."""
    return np.sqrt(dt) * normal_matrix(seed, n_paths, n_steps, path_offset)


def coarsen_increments(fine: np.ndarray, factor: int) -> np.ndarray:
    """Aggregate fine-grid increments into blocks of ``factor`` steps.

    Used to couple simulations across dyadic grid refinements on a single
    underlying Brownian path.
    """
    n_paths, n_fine = fine.shape
    if n_fine % factor:
        raise ValueError(f"cannot coarsen {n_fine} steps by factor {factor}")
    return fine.reshape(n_paths, n_fine // factor, factor).sum(axis=2)
