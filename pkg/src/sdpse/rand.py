"""Deterministic random streams.

All randomness in the package flows from a single 64-bit seed.  Independent
purposes (measurement noise, test scenarios, ...) derive their own sub-seed by
hashing the root seed together with a purpose string, so adding a new consumer
never perturbs existing streams.

Gaussian draws use the inverse CDF applied to uniforms from a counter-based
Philox generator.  Both pieces are exactly specified algorithms, so a
reimplementation in another language can reproduce the streams bit-for-bit.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri


def subseed(seed: int, purpose: str) -> int:
    """Derive a 64-bit sub-seed from a root seed and a purpose label."""
    digest = hashlib.sha256(f"{seed}:{purpose}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def uniform_stream(seed: int, n: int) -> np.ndarray:
    """n uniforms in (0, 1), never exactly 0 or 1."""
    gen = np.random.Generator(np.random.Philox(seed))
    u = gen.random(n)
    # random() can return 0.0; nudge into the open interval for ndtri.
    tiny = np.finfo(float).tiny
    return np.clip(u, tiny, 1.0 - 1e-16)


def normal_stream(seed: int, n: int) -> np.ndarray:
    """n standard normal draws via inverse CDF on the Philox stream."""
    return ndtri(uniform_stream(seed, n))
