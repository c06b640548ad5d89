"""Dense float64 tensors, a deterministic PRNG, and the parameter registry.

Tensors are plain ``numpy.ndarray`` objects with ``dtype=float64`` and
row-major layout; this module owns creation and bookkeeping, not algebra.
The PRNG is xoshiro256** seeded through SplitMix64, so identical seeds give
identical streams on every platform regardless of the numpy build.
"""
from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31), state


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Prng:
    """xoshiro256** generator with SplitMix64 seed expansion.

    The 64-bit seed is expanded into the 256-bit state by four successive
    SplitMix64 outputs. All randomness in the project flows through this
    class so runs are reproducible bit-for-bit from a single integer.
    """

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            word, sm = _splitmix64(sm)
            state.append(word)
        self._s = state

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_float(self) -> float:
        """Uniform draw in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * 2.0**-53

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK64 + 1 - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def uniform(self, lo: float, hi: float, shape) -> np.ndarray:
        """Array of i.i.d. uniforms on [lo, hi); consumes exactly size draws."""
        size = int(np.prod(shape)) if shape else 1
        vals = [lo + (hi - lo) * self.next_float() for _ in range(size)]
        return np.array(vals, dtype=np.float64).reshape(shape)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        """Gaussian draws via Box-Muller; consumes two uniforms per value."""
        size = int(np.prod(shape)) if shape else 1
        vals = np.empty(size, dtype=np.float64)
        for i in range(size):
            u1 = (self.next_u64() >> 11) * 2.0**-53
            u2 = (self.next_u64() >> 11) * 2.0**-53
            # u1 == 0 would make log blow up; the +1 ulp shift keeps it in (0, 1]
            u1 = u1 if u1 > 0.0 else 2.0**-53
            vals[i] = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return (std * vals).reshape(shape)

    def shuffle(self, items: np.ndarray) -> np.ndarray:
        """Fisher-Yates shuffle, returns a new array."""
        out = np.array(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.next_below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out


def init_param(shape, fan_in: int, rng: Prng) -> np.ndarray:
    """Fan-in scaled uniform init on [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    Consumes exactly ``prod(shape)`` PRNG draws so parameter layouts can be
    changed without perturbing unrelated tensors.
    """
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"zero or negative extent in shape {shape}")
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class ParamStore:
    """Ordered name -> tensor registry with a flat-vector view.

    Insertion order is the canonical flattening order; flatten followed by
    load_flat is the identity. Names must be unique.
    """

    def __init__(self):
        self._entries: dict[str, np.ndarray] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(value, dtype=np.float64)
        self._entries[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __setitem__(self, name: str, value: np.ndarray):
        if name not in self._entries:
            raise KeyError(name)
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._entries[name].shape:
            raise ValueError(
                f"shape mismatch for {name!r}: {arr.shape} vs {self._entries[name].shape}"
            )
        self._entries[name] = arr

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def names(self) -> list[str]:
        return list(self._entries)

    def items(self):
        return self._entries.items()

    @property
    def total_size(self) -> int:
        return sum(v.size for v in self._entries.values())

    def flatten(self) -> np.ndarray:
        if not self._entries:
            raise ValueError("cannot flatten an empty parameter store")
        return np.concatenate([v.ravel() for v in self._entries.values()])

    def load_flat(self, flat: np.ndarray):
        """Inverse of flatten: writes the vector back into the entries."""
        flat = np.asarray(flat, dtype=np.float64).ravel()
        if flat.size != self.total_size:
            raise ValueError(
                f"flat vector has {flat.size} values, store holds {self.total_size}"
            )
        offset = 0
        for name, v in self._entries.items():
            n = v.size
            self._entries[name] = flat[offset : offset + n].reshape(v.shape).copy()
            offset += n

    def offsets(self) -> dict[str, tuple[int, int]]:
        """Name -> (start, end) spans into the flat vector."""
        spans = {}
        offset = 0
        for name, v in self._entries.items():
            spans[name] = (offset, offset + v.size)
            offset += v.size
        return spans

    def name_at(self, flat_index: int) -> str:
        """Parameter owning the given flat-vector coordinate."""
        for name, (start, end) in self.offsets().items():
            if start <= flat_index < end:
                return name
        raise IndexError(flat_index)

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name, v in self._entries.items():
            out.add(name, v.copy())
        return out


def flatten_params(store: ParamStore) -> np.ndarray:
    return store.flatten()


def unflatten_params(store: ParamStore, flat: np.ndarray):
    store.load_flat(flat)
