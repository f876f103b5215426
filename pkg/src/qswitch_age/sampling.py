"""Seeded, portable randomness and fixed-marginal subset sampling.

Every random draw in this package comes from an explicitly specified
generator so that runs replay exactly on any platform and the stream can be
reimplemented independently:

- Core generator: xoshiro256++ (Blackman & Vigna).  With 64-bit state words
  ``s0..s3``, each step outputs ``rotl(s0 + s3, 23) + s0`` and updates
  ``t = s1 << 17; s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3; s2 ^= t;
  s3 = rotl(s3, 45)`` (all mod 2^64).
- Stream derivation: SplitMix64 (Steele et al.) started at the seed;
  stream ``k`` takes output words ``4k .. 4k+3`` as its initial state.
  One step is ``x += 0x9E3779B97F4A7C15`` followed by the finalizer
  ``z = x; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
  z = (z ^ z>>27) * 0x94D049BB133111EB; z ^= z>>31``.
- Doubles: the top 53 bits of one output word, ``(u >> 11) * 2^-53``.
- Bounded integers: rejection sampling on one output word per attempt.

``sample_without_replacement`` draws a subset of exactly ``k`` items whose
long-run inclusion frequencies equal prescribed marginals: items with
marginal (numerically) 1 are always included, items with marginal 0 never,
and the remainder are chosen by systematic sampling -- a uniformly random
permutation (Fisher-Yates, consuming one bounded integer per swap) followed
by one uniform offset, selecting the items whose cumulative-marginal
interval contains a grid point ``offset + j``.  Joint inclusion behaviour
beyond the marginals is unspecified.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .model import ValidationError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_DOUBLE_SCALE = 1.0 / (1 << 53)

#: absolute tolerance on sum(marginals) == k, and the threshold below 1.0 at
#: which a marginal is treated as capped (always included)
MARGINAL_SUM_TOL = 1e-9


def _splitmix64(x: int) -> tuple[int, int]:
    """One SplitMix64 step: returns (advanced state, output word)."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    z = z ^ (z >> 31)
    return x, z


class RngStream:
    """One xoshiro256++ stream, identified by (seed, stream id).

    Identical (seed, stream) pairs produce identical draw sequences; streams
    with distinct ids are independent for practical purposes and may be
    consumed concurrently by different replications.
    """

    __slots__ = ("seed", "stream", "_s")

    def __init__(self, seed: int, stream: int = 0):
        if stream < 0:
            raise ValidationError(f"stream id must be nonnegative, got {stream}")
        self.seed = seed
        self.stream = stream
        x = seed & _MASK64
        words = []
        for _ in range(4 * stream + 4):
            x, z = _splitmix64(x)
            words.append(z)
        self._s = words[-4:]

    def next_u64(self) -> int:
        s = self._s
        x = (s[0] + s[3]) & _MASK64
        result = (((x << 23) | (x >> 41)) + s[0]) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = ((s[3] << 45) | (s[3] >> 19)) & _MASK64
        return result

    def random(self) -> float:
        """Uniform double in [0, 1): top 53 bits of one word."""
        return (self.next_u64() >> 11) * _DOUBLE_SCALE

    def bounded_int(self, n: int) -> int:
        """Uniform integer in [0, n) by rejection (no modulo bias)."""
        if n <= 0:
            raise ValidationError(f"bound must be positive, got {n}")
        threshold = ((1 << 64) - n) % n
        while True:
            u = self.next_u64()
            if u >= threshold:
                return (u - threshold) % n

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n), one bounded_int per swap."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.bounded_int(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    # -- state interchange with the compiled kernels ------------------------

    def state_words(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def set_state_words(self, words: Sequence[int]) -> None:
        if len(words) != 4:
            raise ValidationError("state must be 4 words")
        self._s = [int(w) & _MASK64 for w in words]


@dataclass(frozen=True)
class MarginalVector:
    """Inclusion marginals for a without-replacement draw of exactly ``k``
    items: pairs (item id, probability), probabilities in [0,1] summing to k."""

    items: tuple[tuple[int, float], ...]
    k: int

    def __post_init__(self) -> None:
        total = 0.0
        for rid, prob in self.items:
            if not 0.0 <= prob <= 1.0:
                raise ValidationError(f"marginal for item {rid} outside [0,1]: {prob}")
            total += prob
        if abs(total - self.k) > MARGINAL_SUM_TOL:
            raise ValidationError(
                f"marginals sum to {total!r}, expected k={self.k} (tol {MARGINAL_SUM_TOL})"
            )
        ids = [rid for rid, _ in self.items]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate item ids in marginal vector")
        if not 0 <= self.k <= len(self.items):
            raise ValidationError(f"target size k={self.k} outside [0, {len(self.items)}]")

    def probability_of(self, rid: int) -> float:
        for item, prob in self.items:
            if item == rid:
                return prob
        raise LookupError(f"item {rid} not in marginal vector")


def sample_categorical(weights: Sequence[float], rng: RngStream) -> int:
    """Draw an index with probability proportional to ``weights``.

    Weights must be nonnegative and sum to 1 within 1e-9; the draw consumes
    exactly one double (inverse CDF, first index whose cumulative weight
    exceeds u * total).
    """
    total = 0.0
    for w in weights:
        if w < 0.0:
            raise ValidationError(f"negative weight {w}")
        total += w
    if total <= 0.0:
        raise ValidationError("weights are all zero")
    if abs(total - 1.0) > MARGINAL_SUM_TOL:
        raise ValidationError(f"weights sum to {total!r}, expected 1")
    target = rng.random() * total
    cum = 0.0
    for i, w in enumerate(weights):
        cum += w
        if target < cum:
            return i
    return len(weights) - 1


def split_marginals(
    m: MarginalVector,
) -> tuple[list[int], list[int], list[float], int]:
    """Separate capped items from the systematically sampled remainder.

    Returns (always-included ids, remaining ids, remaining probabilities
    rescaled to sum exactly to the remaining target, remaining target size).
    The rescale keeps every remaining probability strictly below 1, so each
    cumulative interval contains at most one selection grid point.
    """
    forced: list[int] = []
    rest_ids: list[int] = []
    rest_probs: list[float] = []
    for rid, prob in m.items:
        if prob >= 1.0 - MARGINAL_SUM_TOL:
            forced.append(rid)
        elif prob > 0.0:
            rest_ids.append(rid)
            rest_probs.append(prob)
    k_rest = m.k - len(forced)
    if k_rest < 0 or k_rest > len(rest_ids):
        raise ValidationError(
            f"marginals admit no size-{m.k} sample ({len(forced)} capped items)"
        )
    if k_rest > 0:
        total = 0.0
        for prob in rest_probs:
            total += prob
        scale = k_rest / total
        # cap below 1 so no cumulative interval can span two grid points
        rest_probs = [min(prob * scale, 1.0 - 1e-12) for prob in rest_probs]
    return forced, rest_ids, rest_probs, k_rest


def sample_without_replacement(m: MarginalVector, rng: RngStream) -> tuple[int, ...]:
    """Draw exactly ``m.k`` distinct item ids with the prescribed marginals.

    Draw order: Fisher-Yates permutation of the non-capped items, then one
    uniform offset double.  Returns the ids sorted ascending.
    """
    forced, rest_ids, rest_probs, k_rest = split_marginals(m)
    if k_rest == 0:
        return tuple(sorted(forced))
    n = len(rest_ids)
    perm = rng.permutation(n)
    offset = rng.random()
    chosen = list(forced)
    cum = 0.0
    prev_floor = -1 if offset > 0.0 else 0
    for j in range(n):
        if j == n - 1:
            cum = float(k_rest)
        else:
            cum += rest_probs[perm[j]]
        f = int(cum - offset) if cum >= offset else -1
        if f > prev_floor:
            chosen.append(rest_ids[perm[j]])
        prev_floor = f
    return tuple(sorted(chosen))
