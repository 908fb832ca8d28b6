"""Seeded Monte Carlo check of the expected-delay model.

Each time slot draws the user count ``n ~ Poisson(b)``, caches the rules of
a uniformly chosen ``C``-subset of the ``n`` users, lets every user send
one packet and records the fraction of packets whose owner is uncached.

Two estimators are offered:

``packet_level``
    simulates the subset selection (partial Fisher-Yates) and counts
    misses packet by packet.
``conditional``
    replaces the per-slot outcome by its conditional mean ``(1 - C/n)^+``
    (Rao-Blackwellisation).  With one packet per user the packet-level
    miss fraction is already that value, so on matched seeds the two
    estimators coincide draw for draw.

Random streams
--------------
Slots are grouped into fixed blocks of :data:`SLOTS_PER_STREAM`.  Block
``i`` draws from ``PCG64(SeedSequence(seed, spawn_key=(i,)))``, so the
stream of every slot is a function of ``(seed, slot index)`` only.
Blocks may run on any number of threads; their ``(count, mean, M2)``
accumulators are merged pairwise in block order, so the estimate is
bit-identical for every worker count.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .model import ModelParams

__all__ = [
    "Estimator",
    "SimConfig",
    "SimEstimate",
    "SLOTS_PER_STREAM",
    "stream_for_block",
    "sample_poisson",
    "sample_poisson_array",
    "simulate_slot",
    "estimate_expected_delay",
]

SLOTS_PER_STREAM = 1 << 16
INVERSION_LIMIT = 30.0
Z95 = 1.96

# cap on padded (slots x users) cells handled at once by the batch simulator
_MAX_CELLS = 1 << 22


class Estimator(str, enum.Enum):
    PACKET_LEVEL = "packet_level"
    CONDITIONAL = "conditional"


@dataclass(frozen=True)
class SimConfig:
    slots: int
    seed: int = 0
    estimator: Estimator = Estimator.PACKET_LEVEL
    workers: int = 1

    def __post_init__(self):
        if int(self.slots) < 1:
            raise ValueError(f"slots must be >= 1, got {self.slots!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if int(self.workers) < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers!r}")
        object.__setattr__(self, "estimator", Estimator(self.estimator))


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    std_error: float
    ci95_low: float
    ci95_high: float
    samples: int
    seed: int


def stream_for_block(seed: int, block: int) -> np.random.Generator:
    """Independent generator for slot block ``block`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


# -- Poisson sampling -------------------------------------------------------

def _ptrs_constants(b):
    # Hoermann (1993), "The transformed rejection method for generating
    # Poisson random variables", algorithm PTRS; exact for b >= 10.
    slam = math.sqrt(b)
    shape = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * shape
    inv_alpha = 1.1239 + 1.1328 / (shape - 3.4)
    v_r = 0.9277 - 3.6224 / (shape - 2.0)
    return shape, a, inv_alpha, v_r


def sample_poisson(rng: np.random.Generator, b: float) -> int:
    """One Poisson(b) variate.

    ``b < 30``: inversion by sequential search from ``k = 0``.
    ``b >= 30``: Hoermann's PTRS transformed rejection, two uniforms per
    attempt.
    """
    if not b > 0:
        raise ValueError(f"b must be positive, got {b!r}")
    if b < INVERSION_LIMIT:
        u = rng.random()
        k = 0
        p = math.exp(-b)
        s = p
        while u > s:
            k += 1
            p *= b / k
            if p == 0.0:
                break
            s += p
        return k

    shape, a, inv_alpha, v_r = _ptrs_constants(b)
    log_b = math.log(b)
    while True:
        u = rng.random() - 0.5
        v = rng.random()
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + shape) * u + b + 0.43)
        if us >= 0.07 and v <= v_r:
            return k
        if k < 0 or (us < 0.013 and v > us):
            continue
        if math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + shape) <= (
            -b + k * log_b - math.lgamma(k + 1.0)
        ):
            return k


def _inversion_table(b):
    # identical partial sums to the scalar sequential search
    sums = []
    p = math.exp(-b)
    s = p
    sums.append(s)
    k = 0
    while True:
        k += 1
        p *= b / k
        if p == 0.0:
            break
        s += p
        sums.append(s)
    return np.array(sums)


def sample_poisson_array(rng: np.random.Generator, b: float, size: int) -> np.ndarray:
    """``size`` Poisson(b) variates, vectorised.

    Below ``b = 30`` the uniforms map through the same partial sums as
    :func:`sample_poisson`, so both give identical values for identical
    uniforms.  Above it PTRS runs in rounds over the still-rejected slots.
    """
    if not b > 0:
        raise ValueError(f"b must be positive, got {b!r}")
    if b < INVERSION_LIMIT:
        table = _inversion_table(b)
        u = rng.random(size)
        k = np.searchsorted(table, u, side="left")
        return np.minimum(k, len(table) - 1).astype(np.int64)

    shape, a, inv_alpha, v_r = _ptrs_constants(b)
    log_b = math.log(b)
    out = np.empty(size, dtype=np.int64)
    pending = np.arange(size)
    while pending.size:
        u = rng.random(pending.size) - 0.5
        v = rng.random(pending.size)
        us = 0.5 - np.abs(u)
        k = np.floor((2.0 * a / us + shape) * u + b + 0.43)
        accept = (us >= 0.07) & (v <= v_r)
        viable = ~accept & (k >= 0) & ~((us < 0.013) & (v > us))
        if viable.any():
            kv = k[viable]
            lhs = np.log(v[viable]) + math.log(inv_alpha) - np.log(a / (us[viable] ** 2) + shape)
            rhs = -b + kv * log_b - _lgamma(kv + 1.0)
            accept[np.flatnonzero(viable)[lhs <= rhs]] = True
        out[pending[accept]] = k[accept]
        pending = pending[~accept]
    return out


_lgamma = np.vectorize(math.lgamma, otypes=[float])


# -- slot simulation --------------------------------------------------------

def simulate_slot(rng: np.random.Generator, n: int, capacity: int) -> float:
    """Miss fraction of one slot with ``n`` users and a ``capacity``-rule table."""
    if n <= capacity:
        return 0.0
    users = list(range(n))
    # partial Fisher-Yates: users[:capacity] becomes a uniform capacity-subset
    for i in range(capacity):
        j = int(rng.integers(i, n))
        users[i], users[j] = users[j], users[i]
    cached = set(users[:capacity])
    misses = sum(1 for owner in range(n) if owner not in cached)
    return misses / n


def _packet_level_fractions(rng, counts, capacity):
    """Vectorised :func:`simulate_slot` over a block of user counts."""
    fractions = np.zeros(counts.size)
    active = np.flatnonzero(counts > capacity)
    if active.size == 0:
        return fractions
    if capacity == 0:
        fractions[active] = 1.0
        return fractions
    width = int(counts[active].max())
    rows_per_batch = max(1, _MAX_CELLS // width)
    for start in range(0, active.size, rows_per_batch):
        idx = active[start:start + rows_per_batch]
        n = counts[idx]
        rows = np.arange(idx.size)
        # column k of slot r lives at perm[k, r]
        perm = np.repeat(np.arange(width)[:, None], idx.size, axis=1)
        u = rng.random((capacity, idx.size))
        for i in range(capacity):
            j = i + (u[i] * (n - i)).astype(np.int64)
            picked = perm[j, rows]
            perm[j, rows] = perm[i]
            perm[i] = picked
        cached = np.zeros((idx.size, width), dtype=bool)
        cached[rows[None, :], perm[:capacity]] = True
        # one packet per user: owners 0..n-1
        owners = np.arange(width) < n[:, None]
        misses = np.count_nonzero(owners & ~cached, axis=1)
        fractions[idx] = misses / n
    return fractions


def _conditional_fractions(counts, capacity):
    out = np.zeros(counts.size)
    over = counts > capacity
    # (n - C) / n rounds exactly like the packet-level misses / n
    out[over] = (counts[over] - capacity) / counts[over]
    return out


def _run_block(b, capacity, seed, estimator, block, slots):
    rng = stream_for_block(seed, block)
    counts = sample_poisson_array(rng, b, slots)
    if estimator is Estimator.CONDITIONAL:
        x = _conditional_fractions(counts, capacity)
    else:
        x = _packet_level_fractions(rng, counts, capacity)
    mean = float(x.mean())
    m2 = float(np.sum((x - mean) ** 2))
    return slots, mean, m2


def _merge(left, right):
    n_a, mean_a, m2_a = left
    n_b, mean_b, m2_b = right
    n = n_a + n_b
    delta = mean_b - mean_a
    mean = mean_a + delta * (n_b / n)
    m2 = m2_a + m2_b + delta * delta * (n_a * n_b / n)
    return n, mean, m2


def _pairwise(accs):
    while len(accs) > 1:
        merged = [_merge(accs[i], accs[i + 1]) for i in range(0, len(accs) - 1, 2)]
        if len(accs) % 2:
            merged.append(accs[-1])
        accs = merged
    return accs[0]


def estimate_expected_delay(params: ModelParams, cfg: SimConfig) -> SimEstimate:
    """Monte Carlo estimate of the normalized expected delay.

    ``std_error`` is the sample standard deviation over slots divided by
    ``sqrt(slots)``; the interval is ``mean +/- 1.96 std_error``.
    """
    b = params.load
    capacity = params.capacity
    slots = int(cfg.slots)
    blocks = [
        (i, min(SLOTS_PER_STREAM, slots - i * SLOTS_PER_STREAM))
        for i in range(-(-slots // SLOTS_PER_STREAM))
    ]

    if b == 0.0:
        accs = [(n, 0.0, 0.0) for _, n in blocks]
    else:
        def work(block):
            return _run_block(b, capacity, int(cfg.seed), cfg.estimator, *block)

        if cfg.workers > 1 and len(blocks) > 1:
            with ThreadPoolExecutor(max_workers=int(cfg.workers)) as pool:
                accs = list(pool.map(work, blocks))
        else:
            accs = [work(block) for block in blocks]

    n, mean, m2 = _pairwise(accs)
    std = math.sqrt(m2 / (n - 1)) if n > 1 else 0.0
    se = std / math.sqrt(n)
    return SimEstimate(
        mean=mean,
        std_error=se,
        ci95_low=mean - Z95 * se,
        ci95_high=mean + Z95 * se,
        samples=n,
        seed=int(cfg.seed),
    )
