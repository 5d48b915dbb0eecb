"""Deterministic seed derivation and Gaussian sampling.

Every frame, split, and shuffle derives its own Philox stream from a
master seed, so results never depend on generation order or worker
count. Gaussian variates come from the Marsaglia polar method applied
to Philox uniforms rather than the generator's native normals, which
pins the exact sample stream to this code instead of to a numpy
internality.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK_128 = (1 << 128) - 1


def derive_seed(*parts: int | str) -> int:
    """Hash a tuple of ints/strings into a 64-bit child seed."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, str):
            h.update(b"s:" + part.encode("utf-8") + b"\x00")
        elif isinstance(part, (int, np.integer)):
            h.update(b"i:" + str(int(part)).encode("ascii") + b"\x00")
        else:
            raise TypeError(f"cannot derive a seed from {type(part).__name__}")
    return int.from_bytes(h.digest(), "little")


def philox(seed: int) -> np.random.Generator:
    """Counter-based generator keyed by an integer seed."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK_128))


def gaussians(rng: np.random.Generator, n: int) -> np.ndarray:
    """n standard normal variates via the Marsaglia polar method."""
    out = np.empty(n, dtype=np.float64)
    have = 0
    while have < n:
        need = n - have
        # polar rejection accepts ~78.5% of pairs; oversample slightly
        npairs = max(64, (need // 2) * 3 + 16)
        u = rng.uniform(-1.0, 1.0, size=(npairs, 2))
        s = u[:, 0] ** 2 + u[:, 1] ** 2
        ok = (s > 0.0) & (s < 1.0)
        us = u[ok]
        ss = s[ok]
        f = np.sqrt(-2.0 * np.log(ss) / ss)
        z = np.empty(us.shape[0] * 2, dtype=np.float64)
        z[0::2] = us[:, 0] * f
        z[1::2] = us[:, 1] * f
        take = min(z.size, need)
        out[have : have + take] = z[:take]
        have += take
    return out
