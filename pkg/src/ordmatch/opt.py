"""Exact maximum-welfare b-matching.

The main solver expands each agent into unit-capacity slots and hands the
slot-item bipartite graph to an exact assignment routine; rows and columns
that are entirely zero are dropped first, which keeps the sparse 0/1 profiles
of the adversarial generators essentially free.  A tiny enumeration oracle is
kept alongside for cross-validation and never shares code with the solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import UNASSIGNED, Instance, Matching, ValuationProfile, complete_matching, social_welfare

BRUTE_FORCE_MAX_ITEMS = 8


@dataclass(frozen=True, eq=False)
class OptResult:
    matching: Matching
    value: float


def _solve_assignment(inst: Instance, values: np.ndarray) -> np.ndarray:
    """Return an item -> agent vector of maximum total value (items with no
    positive column are left unassigned here; callers fill them)."""
    n, m = inst.n, inst.m
    assignment = np.full(m, UNASSIGNED, dtype=np.int64)
    rows = np.flatnonzero(values.any(axis=1))
    cols = np.flatnonzero(values.any(axis=0))
    if rows.size == 0:
        return assignment
    # expand agent i into min(b_i, #columns) slots; extra slots can never help
    slot_owner = np.repeat(rows, np.minimum(inst.quota_array[rows], cols.size))
    weights = values[np.ix_(slot_owner, cols)]
    r_idx, c_idx = linear_sum_assignment(weights, maximize=True)
    assignment[cols[c_idx]] = slot_owner[r_idx]
    return assignment


def optimal_value(inst: Instance, values: np.ndarray) -> float:
    """Maximum social welfare, without materializing the matching object."""
    assignment = _solve_assignment(inst, values)
    items = np.flatnonzero(assignment >= 0)
    return math.fsum(values[assignment[items], items].tolist())


def optimal_matching(inst: Instance, profile: ValuationProfile) -> OptResult:
    """Maximum-welfare matching with every item assigned (zero-value fills
    are allowed and never change the value)."""
    if profile.instance != inst:
        raise ValueError("profile belongs to a different instance")
    assignment = _solve_assignment(inst, profile.values)
    matching = complete_matching(Matching(assignment), inst)
    return OptResult(matching=matching, value=social_welfare(matching, profile))


def brute_force_opt(inst: Instance, profile: ValuationProfile) -> float:
    """Exhaustive maximum over all complete matchings; m <= 8 only."""
    if profile.instance != inst:
        raise ValueError("profile belongs to a different instance")
    m = inst.m
    if m > BRUTE_FORCE_MAX_ITEMS:
        raise ValueError(f"brute force is limited to {BRUTE_FORCE_MAX_ITEMS} items, got {m}")
    values = profile.values
    residual = list(inst.quotas)
    n = inst.n
    best = 0.0

    def recurse(item: int, acc: float) -> None:
        nonlocal best
        if item == m:
            if acc > best:
                best = acc
            return
        for agent in range(n):
            if residual[agent] == 0:
                continue
            residual[agent] -= 1
            recurse(item + 1, acc + values[agent, item])
            residual[agent] += 1

    recurse(0, 0.0)
    return best
