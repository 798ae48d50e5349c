"""Data model shared by the mechanisms, analytics, and estimator modules.

Everything here is immutable after construction, and every random step flows
through an explicit stream (a (seed, stream-id) pair mapped onto a
counter-based Philox generator), so each operation is reproducible from its
arguments alone.  There is no hidden global RNG state anywhere in the package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np

UNASSIGNED = -1


@dataclass(frozen=True)
class RandomStream:
    """Reproducible random source: identical (seed, stream_id) pairs yield
    identical draw sequences, and distinct stream ids never overlap."""

    seed: int
    stream_id: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)):
                raise TypeError(f"{name} must be an integer")
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must fit in 64 unsigned bits")

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


RngLike = Union[RandomStream, np.random.Generator]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Accept either a RandomStream or a live numpy Generator."""
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RandomStream or numpy Generator, got {type(rng)!r}")


@dataclass(frozen=True)
class Instance:
    """A quota vector b; the item count is always m = sum(b)."""

    quotas: tuple[int, ...]

    def __post_init__(self) -> None:
        q = tuple(int(b) for b in self.quotas)
        if not q:
            raise ValueError("an instance needs at least one agent")
        if any(b < 1 for b in q):
            raise ValueError("every quota must be at least 1")
        object.__setattr__(self, "quotas", q)

    @cached_property
    def n(self) -> int:
        return len(self.quotas)

    @cached_property
    def m(self) -> int:
        return sum(self.quotas)

    @cached_property
    def b_max(self) -> int:
        return max(self.quotas)

    @cached_property
    def quota_array(self) -> np.ndarray:
        a = np.array(self.quotas, dtype=np.int64)
        a.setflags(write=False)
        return a

    @classmethod
    def one_to_one(cls, n: int) -> "Instance":
        return cls((1,) * n)


@dataclass(frozen=True, eq=False)
class ValuationProfile:
    """Nonnegative n x m value matrix, row i holding agent i's item values."""

    instance: Instance
    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=np.float64)
        if v.shape != (self.instance.n, self.instance.m):
            raise ValueError(
                f"value matrix shape {v.shape} does not match instance "
                f"({self.instance.n} agents, {self.instance.m} items)"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("values must be finite")
        if v.size and v.min() < 0.0:
            raise ValueError("values must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class PreferenceProfile:
    """Per-agent strict item rankings (best first) plus the derived favorite
    sets: favorites[i] is exactly the first b_i entries of rankings[i]."""

    instance: Instance
    rankings: np.ndarray
    favorites: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        r = np.array(self.rankings, dtype=np.int64)
        n, m = self.instance.n, self.instance.m
        if r.shape != (n, m):
            raise ValueError("rankings shape does not match instance")
        base = np.arange(m)
        if not np.array_equal(np.sort(r, axis=1), np.broadcast_to(base, (n, m))):
            raise ValueError("each ranking must be a permutation of the items")
        if len(self.favorites) != n:
            raise ValueError("one favorite set per agent required")
        for i, b in enumerate(self.instance.quotas):
            if self.favorites[i] != frozenset(int(g) for g in r[i, :b]):
                raise ValueError(f"favorites[{i}] must be the top {b} ranked items")
        r.setflags(write=False)
        object.__setattr__(self, "rankings", r)

    def favorite_mask(self) -> np.ndarray:
        """Boolean (n, m) matrix: mask[i, g] iff item g is a favorite of i."""
        n, m = self.instance.n, self.instance.m
        mask = np.zeros((n, m), dtype=bool)
        for i, b in enumerate(self.instance.quotas):
            mask[i, self.rankings[i, :b]] = True
        return mask


@dataclass(frozen=True, eq=False)
class Matching:
    """Item-indexed partial assignment: assignment[g] is the agent holding
    item g, or UNASSIGNED.  Item uniqueness is structural."""

    assignment: np.ndarray

    def __post_init__(self) -> None:
        a = np.array(self.assignment, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("assignment must be a flat item -> agent vector")
        if a.size and a.min() < UNASSIGNED:
            raise ValueError("assignment entries must be agent indices or UNASSIGNED")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    @classmethod
    def empty(cls, m: int) -> "Matching":
        return cls(np.full(m, UNASSIGNED, dtype=np.int64))

    def bundle_sizes(self, inst: Instance) -> np.ndarray:
        assigned = self.assignment[self.assignment >= 0]
        return np.bincount(assigned, minlength=inst.n).astype(np.int64)

    def bundles(self, inst: Instance) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(inst.n)]
        for g, i in enumerate(self.assignment):
            if i >= 0:
                out[i].append(g)
        return out

    def validate(self, inst: Instance) -> None:
        if self.assignment.shape[0] != inst.m:
            raise ValueError("matching length does not match item count")
        if self.assignment.size and self.assignment.max() >= inst.n:
            raise ValueError("assignment references an unknown agent")
        sizes = self.bundle_sizes(inst)
        over = np.flatnonzero(sizes > inst.quota_array)
        if over.size:
            i = int(over[0])
            raise ValueError(f"agent {i} holds {int(sizes[i])} items, quota is {inst.quotas[i]}")


def rankings_from_tags(values: np.ndarray, tags: np.ndarray) -> np.ndarray:
    """Rank items by decreasing value, breaking exact ties by increasing tag.

    With i.i.d. uniform tags (one per agent/item cell) every relative order of
    equal-valued items is equally likely.  Accepts arbitrary leading batch
    dimensions; the last axis is the item axis.
    """
    v = np.asarray(values, dtype=np.float64)
    t = np.asarray(tags, dtype=np.float64)
    if v.shape != t.shape:
        raise ValueError("values and tags must have matching shapes")
    m = v.shape[-1]
    flat_v = v.reshape(-1, m)
    flat_t = t.reshape(-1, m)
    idx = np.lexsort((flat_t, -flat_v), axis=-1)
    return idx.reshape(v.shape).astype(np.int64)


def derive_preferences(profile: ValuationProfile, rng: RngLike) -> PreferenceProfile:
    """Turn a valuation profile into strict rankings plus favorite sets.

    Draw layout: one uniform tag per (agent, item) cell, n*m draws total.
    """
    gen = as_generator(rng)
    inst = profile.instance
    tags = gen.random(inst.n * inst.m).reshape(inst.n, inst.m)
    rankings = rankings_from_tags(profile.values, tags)
    favorites = tuple(
        frozenset(int(g) for g in rankings[i, :b]) for i, b in enumerate(inst.quotas)
    )
    return PreferenceProfile(inst, rankings, favorites)


def social_welfare(matching: Matching, profile: ValuationProfile) -> float:
    """Total value agents place on the items they hold.

    Summed with math.fsum so large sweeps and Monte Carlo aggregates do not
    accumulate rounding drift.
    """
    a = matching.assignment
    v = profile.values
    if a.shape[0] != v.shape[1]:
        raise ValueError("matching length does not match the value matrix")
    if a.size and a.max() >= v.shape[0]:
        raise ValueError("matching references an unknown agent")
    return math.fsum(float(v[i, g]) for g, i in enumerate(a) if i >= 0)


def complete_matching(matching: Matching, inst: Instance) -> Matching:
    """Deterministically top every agent up to exactly their quota.

    Unassigned items are visited in ascending item order and each goes to the
    lowest-indexed agent with residual quota.  Existing assignments are kept.
    Feasibility is guaranteed because the quotas sum to the item count.
    """
    matching.validate(inst)
    a = matching.assignment.copy()
    residual = inst.quota_array - matching.bundle_sizes(inst)
    cursor = 0
    for g in range(inst.m):
        if a[g] != UNASSIGNED:
            continue
        while residual[cursor] == 0:
            cursor += 1
        a[g] = cursor
        residual[cursor] -= 1
    return Matching(a)
