"""Per-trial random streams, bit-exact across implementations.

Trial ``i`` of a run with master seed ``s`` seeds SplitMix64 with
``s XOR ((i + 1) * 0x9E3779B97F4A7C15 mod 2**64)``; four SplitMix64 outputs
become the xoshiro256** state. Uniforms take the top 53 bits of each
xoshiro256** output.
"""

from __future__ import annotations

MASK64 = 0xFFFFFFFFFFFFFFFF
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / (1 << 53)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256StarStar:
    def __init__(self, state: tuple[int, int, int, int]):
        if not any(state):
            raise ValueError("xoshiro256** state must not be all zero")
        self.s = [x & MASK64 for x in state]

    @classmethod
    def from_seed(cls, seed: int) -> "Xoshiro256StarStar":
        sm = SplitMix64(seed)
        return cls((sm.next(), sm.next(), sm.next(), sm.next()))

    def next(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result


def trial_seed(master_seed: int, trial: int) -> int:
    return (master_seed & MASK64) ^ (((trial + 1) * GOLDEN_GAMMA) & MASK64)


class RngStream:
    """Uniform doubles in [0, 1) for one trial."""

    def __init__(self, master_seed: int, trial: int = 0):
        self.master_seed = master_seed
        self.trial = trial
        self.draws = 0
        self._gen = Xoshiro256StarStar.from_seed(trial_seed(master_seed, trial))

    def next_u64(self) -> int:
        return self._gen.next()

    def random(self) -> float:
        self.draws += 1
        return (self._gen.next() >> 11) * _INV_2_53
