"""Counter-based random streams for reproducible parallel Monte Carlo.

Every replicate owns a dedicated Philox-4x64-10 stream keyed by
``(master_seed, n, replicate)``.  Streams are random-access (draw ``j`` is a
pure function of the key and ``j``), so skipping draws is free and adding
replicates never perturbs existing ones.  The algorithm is fixed:

* key derivation: three chained SplitMix64 steps over the seed tuple,
* block ``b`` = Philox-4x64-10 applied to counter ``(b, 0, 0, 0)``,
* draw ``j`` reads word ``j % 4`` of block ``j // 4``,
* uniform double = top 53 bits of the word, i.e. ``(w >> 11) * 2**-53``.

The Philox implementation is verified bit-for-bit against numpy's
``np.random.Philox`` in the test suite, which pins the algorithm across
platforms.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# Philox-4x64 round and Weyl constants.
PHILOX_M0 = 0xD2E7470EE14C6C93
PHILOX_M1 = 0xCA5A826395121157
PHILOX_W0 = 0x9E3779B97F4A7C15
PHILOX_W1 = 0xBB67AE8584CAA73B

_U53_INV = 1.0 / 9007199254740992.0  # 2**-53


def splitmix64(x: int) -> int:
    """One SplitMix64 step (pure Python, 64-bit wrapping)."""
    x = (x + PHILOX_W0) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def derive_key(master_seed: int, n: int, replicate: int) -> tuple[int, int]:
    """Philox key for one replicate stream, from (master_seed, n, replicate)."""
    s = splitmix64(master_seed & MASK64)
    s = splitmix64(s ^ (n & MASK64))
    s = splitmix64(s ^ (replicate & MASK64))
    return s, splitmix64(s)


def derive_keys(master_seed: int, n: int, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized ``derive_key`` for replicates ``lo..hi-1`` (uint64 arrays)."""
    s = splitmix64(master_seed & MASK64)
    s = splitmix64(s ^ (n & MASK64))
    i = np.arange(lo, hi, dtype=np.uint64)
    k0 = _splitmix64_np(np.uint64(s) ^ i)
    return k0, _splitmix64_np(k0)


def _splitmix64_np(x: np.ndarray) -> np.ndarray:
    x = x + np.uint64(PHILOX_W0)
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def _mulhi_np(a, b):
    m32 = np.uint64(0xFFFFFFFF)
    ah = a >> np.uint64(32)
    al = a & m32
    bh = b >> np.uint64(32)
    bl = b & m32
    t = ah * bl + ((al * bl) >> np.uint64(32))
    u = al * bh + (t & m32)
    return ah * bh + (t >> np.uint64(32)) + (u >> np.uint64(32))


def philox_blocks(blocks: np.ndarray, key0: int, key1: int) -> np.ndarray:
    """Philox-4x64-10 output words for counter blocks ``(b, 0, 0, 0)``.

    Returns an array of shape ``(len(blocks), 4)`` of uint64 words.
    """
    x0 = np.asarray(blocks, dtype=np.uint64).copy()
    x1 = np.zeros_like(x0)
    x2 = np.zeros_like(x0)
    x3 = np.zeros_like(x0)
    m0 = np.uint64(PHILOX_M0)
    m1 = np.uint64(PHILOX_M1)
    # key schedule in Python ints (numpy warns on wrapping scalar adds)
    schedule = [(np.uint64((key0 + r * PHILOX_W0) & MASK64),
                 np.uint64((key1 + r * PHILOX_W1) & MASK64)) for r in range(10)]
    for k0, k1 in schedule:
        hi0 = _mulhi_np(m0, x0)
        lo0 = m0 * x0
        hi1 = _mulhi_np(m1, x2)
        lo1 = m1 * x2
        x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return np.stack([x0, x1, x2, x3], axis=1)


def words_to_uniforms(words: np.ndarray) -> np.ndarray:
    """Map uint64 words to doubles in [0, 1)."""
    return (words >> np.uint64(11)).astype(np.float64) * _U53_INV


class PhiloxStream:
    """Sequential view of one replicate's counter-based stream.

    Thin object used by the reference (object-level) simulation pipeline;
    the batched engines consume the same streams with identical layout.
    """

    __slots__ = ("key0", "key1", "counter")

    def __init__(self, key0: int, key1: int, counter: int = 0):
        self.key0 = key0 & MASK64
        self.key1 = key1 & MASK64
        self.counter = counter

    @classmethod
    def for_replicate(cls, master_seed: int, n: int, replicate: int) -> "PhiloxStream":
        k0, k1 = derive_key(master_seed, n, replicate)
        return cls(k0, k1)

    def uniforms(self, m: int) -> np.ndarray:
        """Next ``m`` uniform doubles, advancing the counter by ``m``."""
        if m == 0:
            return np.empty(0, dtype=np.float64)
        c = self.counter
        b0 = c >> 2
        b1 = (c + m - 1) >> 2
        words = philox_blocks(np.arange(b0, b1 + 1, dtype=np.uint64), self.key0, self.key1)
        flat = words.reshape(-1)
        off = c - 4 * b0
        self.counter = c + m
        return words_to_uniforms(flat[off:off + m])

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def skip(self, m: int) -> None:
        """Advance the counter without evaluating the draws."""
        self.counter += m
