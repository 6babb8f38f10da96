"""Counter-based random streams.

Every random draw in a run comes from a stream addressed by
``(master_seed, label, *counters)``. Streams are stateless with respect to
each other: drawing from ``"hook/counterfactual"`` can never shift the
numbers that ``"dropout"`` produces for a given (epoch, step). This is what
makes hook execution trajectory-neutral and resume exact.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def label_id(label: str) -> int:
    """Stable 64-bit id for a stream label (independent of PYTHONHASHSEED)."""
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def stream(master_seed: int, label: str, *counters: int) -> np.random.Generator:
    """Return a fresh Philox generator keyed by seed, label and counters."""
    if master_seed < 0:
        raise ValueError(f"seed must be non-negative, got {master_seed}")
    for c in counters:
        if c < 0:
            raise ValueError(f"stream counters must be non-negative, got {counters}")
    entropy = [master_seed & _MASK64, label_id(label), len(counters), *[int(c) for c in counters]]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def fisher_yates_draws(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Swap targets for the first ``k`` steps of a forward Fisher-Yates pass.

    Step ``i`` swaps position ``i`` with a uniform position in ``[i, n)``.
    """
    if k == 0:
        return np.empty(0, dtype=np.int64)
    return rng.integers(np.arange(k, dtype=np.int64), n, dtype=np.int64)


def permutation(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform permutation of ``range(n)`` via an explicit Fisher-Yates pass."""
    order = np.arange(n, dtype=np.int64)
    if n < 2:
        return order
    draws = fisher_yates_draws(n, n - 1, rng).tolist()
    out = order.tolist()
    for i, j in enumerate(draws):
        out[i], out[j] = out[j], out[i]
    return np.asarray(out, dtype=np.int64)


def sample_without_replacement(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """First ``k`` entries of a partial Fisher-Yates shuffle of ``range(n)``.

    Uses a sparse swap table so ``n`` may be far larger than memory allows
    (e.g. the 10^8-pair grid at p=9973).
    """
    if not 0 <= k <= n:
        raise ValueError(f"cannot draw {k} distinct items from {n}")
    draws = fisher_yates_draws(n, k, rng).tolist()
    swapped: dict[int, int] = {}
    out = [0] * k
    for i, j in enumerate(draws):
        vi = swapped.get(i, i)
        vj = swapped.get(j, j)
        out[i] = vj
        swapped[j] = vi
    return np.asarray(out, dtype=np.int64)
