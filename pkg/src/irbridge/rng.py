"""Deterministic random substreams.

Every Monte Carlo workload is cut into fixed-size chunks. Chunk ``k`` of a
job keyed ``key`` under seed ``s`` draws from the generator spawned at
``SeedSequence(s, spawn_key=(*key, k))``, so the numbers produced never depend
on how many workers execute the chunks.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")

DEFAULT_CHUNK = 8192


def _key_ints(key) -> tuple[int, ...]:
    if isinstance(key, (str, bytes)):
        key = (key,)
    out = []
    for part in key:
        if isinstance(part, str):
            out.append(zlib.crc32(part.encode("utf-8")))
        elif isinstance(part, bytes):
            out.append(zlib.crc32(part))
        else:
            out.append(int(part))
    return tuple(out)


def substream(seed: int, *key) -> np.random.Generator:
    """Generator for the substream identified by ``(seed, *key)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=_key_ints(key)))


def chunk_sizes(n_total: int, chunk: int = DEFAULT_CHUNK) -> list[int]:
    full, rest = divmod(int(n_total), int(chunk))
    return [chunk] * full + ([rest] if rest else [])


def chunked_map(
    fn: Callable[[int, np.random.Generator], T],
    n_total: int,
    seed: int,
    key: Sequence = (),
    chunk: int = DEFAULT_CHUNK,
    workers: int = 1,
) -> list[T]:
    """Apply ``fn(size, rng)`` to every chunk and return results in chunk order."""
    key = tuple(key) if not isinstance(key, str) else (key,)
    sizes = chunk_sizes(n_total, chunk)
    jobs = [(size, substream(seed, *key, k)) for k, size in enumerate(sizes)]
    if workers <= 1 or len(jobs) <= 1:
        return [fn(size, g) for size, g in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


class Moments:
    """Streaming per-dimension mean/variance, merged in a fixed order."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    @classmethod
    def of(cls, samples: np.ndarray) -> "Moments":
        samples = np.atleast_2d(samples)
        m = cls(samples.shape[1])
        m.n = samples.shape[0]
        m.mean = samples.mean(axis=0)
        m.m2 = ((samples - m.mean) ** 2).sum(axis=0)
        return m

    def merge(self, other: "Moments") -> "Moments":
        if other.n == 0:
            return self
        if self.n == 0:
            self.n, self.mean, self.m2 = other.n, other.mean.copy(), other.m2.copy()
            return self
        n = self.n + other.n
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.n / n)
        self.m2 = self.m2 + other.m2 + delta**2 * (self.n * other.n / n)
        self.n = n
        return self

    @property
    def var(self) -> np.ndarray:
        return self.m2 / (self.n - 1)


def merge_all(parts: Sequence[Moments]) -> Moments:
    total = Moments(len(parts[0].mean))
    for p in parts:
        total.merge(p)
    return total
