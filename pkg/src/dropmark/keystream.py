"""Seekable ChaCha20 keystream used as the shared pseudo-random source.

Key = SHA-256(seed), nonce = 0, block counter starts at 0.  Uniform draws
take 8 keystream bytes as a little-endian uint64 ``u`` and return ``u / 2**64``
truncated to 53 bits, so the result is always strictly below 1.
"""

from __future__ import annotations

import hashlib

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms

__all__ = ["KeyedStream", "stream_create", "gen_rand", "raw_to_unit"]

BLOCK = 64
_NONCE = bytes(12)


def raw_to_unit(raw):
    """Map uint64 value(s) to [0, 1) by keeping the top 53 bits."""
    if isinstance(raw, np.ndarray):
        return (raw >> np.uint64(11)).astype(np.float64) * 2.0**-53
    return (int(raw) >> 11) * 2.0**-53


class KeyedStream:
    """ChaCha20 keystream with an explicit byte position.

    A stream is single-owner; use :meth:`clone` to fork an independent reader
    at the current position.
    """

    def __init__(self, key: bytes, position: int = 0):
        if len(key) != 32:
            raise ValueError("ChaCha20 key must be 32 bytes")
        self.key = bytes(key)
        self.position = int(position)
        self._enc = None
        self._enc_pos = -1

    def _encryptor_at(self, pos):
        if self._enc is not None and self._enc_pos == pos:
            return self._enc
        block, skip = divmod(pos, BLOCK)
        if block >= 2**32:
            raise OverflowError("keystream exhausted")
        nonce = block.to_bytes(4, "little") + _NONCE
        enc = Cipher(algorithms.ChaCha20(self.key, nonce), mode=None).encryptor()
        if skip:
            enc.update(bytes(skip))
        self._enc, self._enc_pos = enc, pos
        return enc

    def read(self, nbytes: int) -> bytes:
        enc = self._encryptor_at(self.position)
        out = enc.update(bytes(nbytes))
        self.position += nbytes
        self._enc_pos = self.position
        return out

    def skip(self, nbytes: int) -> None:
        self.position += nbytes

    def next_u64(self) -> int:
        return int.from_bytes(self.read(8), "little")

    def u64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.read(8 * count), dtype="<u8").astype(np.uint64)

    def uniforms(self, count: int) -> np.ndarray:
        return raw_to_unit(self.u64_array(count))

    @property
    def draws(self) -> int:
        return self.position // 8

    def clone(self) -> "KeyedStream":
        return KeyedStream(self.key, self.position)

    def __repr__(self):
        return f"KeyedStream(key={self.key[:4].hex()}..., position={self.position})"


def stream_create(seed: bytes) -> KeyedStream:
    if isinstance(seed, str):
        seed = seed.encode()
    if not seed:
        raise ValueError("seed must be non-empty")
    return KeyedStream(hashlib.sha256(seed).digest())


def gen_rand(stream: KeyedStream) -> float:
    return raw_to_unit(stream.next_u64())
