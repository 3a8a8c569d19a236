"""Pure-Python PoW hash kernel.

Reference implementation of the header digest and nonce search; the compiled
twin in _powcore.pyx must produce bit-identical results (same preimage layout,
same nonce order starting at 0).

Preimage layout (80 bytes): height 8B big-endian | prev_digest 32B |
payload_digest 32B | pow_nonce 8B big-endian.
"""
from __future__ import annotations

import hashlib

BACKEND = "pure"

_DIGEST_BITS = 256


def header_digest(height: int, prev_digest: bytes, payload_digest: bytes, nonce: int) -> bytes:
    preimage = (
        height.to_bytes(8, "big")
        + prev_digest
        + payload_digest
        + nonce.to_bytes(8, "big")
    )
    return hashlib.sha256(preimage).digest()


def meets_target(digest: bytes, difficulty_bits: int) -> bool:
    if difficulty_bits <= 0:
        return True
    return int.from_bytes(digest, "big") >> (_DIGEST_BITS - difficulty_bits) == 0


def mine_nonce(height: int, prev_digest: bytes, payload_digest: bytes, difficulty_bits: int) -> tuple[int, bytes]:
    """Smallest nonce whose header digest clears the difficulty target."""
    prefix = height.to_bytes(8, "big") + prev_digest + payload_digest
    shift = _DIGEST_BITS - difficulty_bits
    sha256 = hashlib.sha256
    nonce = 0
    while True:
        digest = sha256(prefix + nonce.to_bytes(8, "big")).digest()
        if difficulty_bits <= 0 or int.from_bytes(digest, "big") >> shift == 0:
            return nonce, digest
        nonce += 1
