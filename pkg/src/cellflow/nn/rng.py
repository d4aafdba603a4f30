"""Seeded, portable random streams.

Everything stochastic in the package draws from :class:`PortableRng`, a thin
wrapper over numpy's Philox4x64 counter-based bit generator. Philox has
documented, platform-stable bit semantics, so a (seed, counter) pair pins the
entire sample stream. Derived streams (per site, per cell) come from
``spawn`` with a stable string key, never from global state.
"""
from __future__ import annotations

import hashlib

import numpy as np

from ..errors import ValidationError

ALGORITHM = "philox4x64"


def _key_to_int(key: str) -> int:
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


class PortableRng:
    def __init__(self, seed: int, entropy: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.entropy = tuple(int(e) for e in entropy)
        self._bitgen = np.random.Philox(np.random.SeedSequence((self.seed,) + self.entropy))
        self._gen = np.random.Generator(self._bitgen)

    def spawn(self, key: str) -> "PortableRng":
        """Independent child stream, reproducible from (seed, key)."""
        return PortableRng(self.seed, self.entropy + (_key_to_int(key),))

    def normal(self, shape=()) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, shape=()) -> np.ndarray:
        return self._gen.uniform(low, high, shape)

    def integers(self, low: int, high: int, shape=()) :
        return self._gen.integers(low, high, shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    @property
    def state(self) -> dict:
        """Serializable algorithm/seed/counter snapshot."""
        st = self._bitgen.state
        return {
            "algorithm": ALGORITHM,
            "seed": self.seed,
            "entropy": list(self.entropy),
            "counter": [int(c) for c in st["state"]["counter"]],
            "buffer": [int(b) for b in st["buffer"]],
            "buffer_pos": int(st["buffer_pos"]),
            "has_uint32": int(st["has_uint32"]),
            "uinteger": int(st["uinteger"]),
        }

    @state.setter
    def state(self, snap: dict) -> None:
        if snap.get("algorithm") != ALGORITHM:
            raise ValidationError(f"unsupported rng algorithm {snap.get('algorithm')!r}")
        self.seed = int(snap["seed"])
        self.entropy = tuple(int(e) for e in snap.get("entropy", ()))
        self._bitgen = np.random.Philox(np.random.SeedSequence((self.seed,) + self.entropy))
        st = self._bitgen.state
        st["state"]["counter"] = np.array(snap["counter"], dtype=np.uint64)
        st["buffer"] = np.array(snap["buffer"], dtype=np.uint64)
        st["buffer_pos"] = snap["buffer_pos"]
        st["has_uint32"] = snap["has_uint32"]
        st["uinteger"] = snap["uinteger"]
        self._bitgen.state = st
        self._gen = np.random.Generator(self._bitgen)


def gaussian_sample(rng: PortableRng, shape, scale: float) -> np.ndarray:
    """i.i.d. normal draws with standard deviation `scale` (scale >= 0)."""
    if scale < 0:
        raise ValidationError(f"noise scale must be >= 0, got {scale}")
    return rng.normal(shape) * scale
