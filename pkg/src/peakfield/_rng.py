"""Counter-based random streams keyed by ``(seed, stream)``.

Every Monte Carlo draw in the package goes through :func:`make_rng`. The
generator is Philox-4x64, whose 128-bit key is the pair ``(seed, stream)``,
so two streams never share state and a stream can be re-created anywhere
without replaying the others.
"""
from __future__ import annotations

import hashlib

import numpy as np

_U64 = (1 << 64) - 1


def _check_u64(value: int, name: str) -> int:
    value = int(value)
    if not 0 <= value <= _U64:
        raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value}")
    return value


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    key = np.array([_check_u64(seed, "seed"), _check_u64(stream, "stream")], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def stream_id(tag: str, index: int = 0) -> int:
    """Stream number for chunk ``index`` of the purpose named ``tag``.

    The upper 32 bits hash the tag, the lower 32 bits carry the index, so
    pilot runs, bootstrap resampling and main trials never collide.
    """
    if not 0 <= index < (1 << 32):
        raise ValueError(f"stream index out of range: {index}")
    digest = hashlib.blake2b(tag.encode("utf-8"), digest_size=4).digest()
    return (int.from_bytes(digest, "big") << 32) | index


def derive_stream(stream: int, tag: str) -> int:
    """Deterministic 64-bit child of ``stream`` for the purpose ``tag``."""
    payload = _check_u64(stream, "stream").to_bytes(8, "big") + tag.encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")
