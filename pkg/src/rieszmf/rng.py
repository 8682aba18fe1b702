"""Counter-based normals: every draw is a pure function of its coordinates.

Philox4x64 is keyed by (seed, realization) and the 256-bit counter holds
(particle, step, stream, 0). One Philox block (four 64-bit words) feeds
one particle, so the numbers a particle sees do not depend on N, on the
thread count or on how many draws happened before.
"""

from __future__ import annotations

import numpy as np

STREAM_NOISE = 0
STREAM_INIT = 1
STREAM_INIT_MIX = 2

_MASK64 = (1 << 64) - 1


def _philox(seed: int, realization: int) -> np.random.Philox:
    key = (int(seed) & _MASK64) | ((int(realization) & _MASK64) << 64)
    return np.random.Philox(key=key)


def raw_blocks(seed: int, realization: int, step: int, stream: int, n: int) -> np.ndarray:
    """(n, 4) uint64 words; row i is the Philox output for counter (i, step, stream, 0)."""
    bg = _philox(seed, realization)
    st = bg.state
    # the generator bumps the counter before producing a block, so start one below
    c = ((int(stream) << 128) | (int(step) << 64)) - 1
    c %= 1 << 256
    st["state"]["counter"] = np.array([(c >> (64 * w)) & _MASK64 for w in range(4)], dtype=np.uint64)
    st["buffer_pos"] = 4
    bg.state = st
    return bg.random_raw(4 * n).reshape(n, 4)


def uniforms(words: np.ndarray) -> np.ndarray:
    """53-bit uniforms on [0, 1)."""
    return (words >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def normals3(seed: int, realization: int, step: int, n: int, stream: int = STREAM_NOISE) -> np.ndarray:
    """(n, 3) standard normals via Box-Muller on one block per particle."""
    u = uniforms(raw_blocks(seed, realization, step, stream, n))
    r1 = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
    r2 = np.sqrt(-2.0 * np.log1p(-u[:, 2]))
    a1 = 2.0 * np.pi * u[:, 1]
    a2 = 2.0 * np.pi * u[:, 3]
    return np.stack([r1 * np.cos(a1), r1 * np.sin(a1), r2 * np.cos(a2)], axis=1)


def uniform1(seed: int, realization: int, step: int, n: int, stream: int) -> np.ndarray:
    return uniforms(raw_blocks(seed, realization, step, stream, n)[:, 0])
