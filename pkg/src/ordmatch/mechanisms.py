"""The ordinal assignment mechanisms.

Every mechanism observes only the agents' favorite sets (the top-quota slice
of each ranking) plus its own coin flips; rankings are accepted as input so
callers can measure rank-indexed assignment probabilities.

The *_assign helpers are pure functions of pre-drawn uniforms and accept
arbitrary leading batch dimensions, so the Monte Carlo engine and the public
one-shot wrappers share a single implementation.  Wrappers consume uniforms
from the caller's stream in a fixed order, which is part of the
reproducibility contract:

    survivor lottery (rs):   u_survive (n), u_pick (m)
    burn/steal (rsbs):       u_survive (n), u_pick (m), u_burn (n), u_steal (1)
    highest-quota-last:      u_activate (n), consumed in processing order
    secretary variant:       u_survive (n), u_order (n)
    serial dictator:         no draws

u_pick holds one uniform per item regardless of demand, and u_survive/u_burn
one per agent regardless of eligibility, so the layout never depends on the
realized preferences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import analytics
from .core import (
    UNASSIGNED,
    Instance,
    Matching,
    PreferenceProfile,
    RngLike,
    as_generator,
    complete_matching,
)

KINDS = ("rs", "rsbs", "hql", "secretary-rs", "serial-dictator")

PROB_SANITY_TOL = 1e-9


@dataclass(frozen=True)
class MechanismSpec:
    kind: str
    complete: bool = False
    order: tuple[int, ...] | None = None  # serial-dictator pick order

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown mechanism kind {self.kind!r}")
        if self.order is not None:
            object.__setattr__(self, "order", tuple(int(i) for i in self.order))
        if self.kind != "serial-dictator" and self.order is not None:
            raise ValueError(f"{self.kind} does not take an agent order")

    @classmethod
    def rs(cls, complete: bool = False) -> "MechanismSpec":
        return cls("rs", complete=complete)

    @classmethod
    def rsbs(cls, complete: bool = False) -> "MechanismSpec":
        return cls("rsbs", complete=complete)

    @classmethod
    def hql(cls, complete: bool = False) -> "MechanismSpec":
        return cls("hql", complete=complete)

    @classmethod
    def secretary_rs(cls, complete: bool = False) -> "MechanismSpec":
        return cls("secretary-rs", complete=complete)

    @classmethod
    def serial_dictator(cls, order: Sequence[int] | None = None, complete: bool = False) -> "MechanismSpec":
        return cls("serial-dictator", complete=complete, order=tuple(order) if order is not None else None)

    def label(self) -> str:
        if self.kind == "serial-dictator" and self.order is not None:
            return "serial-dictator(" + "|".join(str(i) for i in self.order) + ")"
        return self.kind


def _validate_order(order: Sequence[int], n: int) -> np.ndarray:
    arr = np.asarray(order, dtype=np.int64)
    if arr.shape != (n,) or not np.array_equal(np.sort(arr), np.arange(n)):
        raise ValueError(f"order must be a permutation of the {n} agents")
    return arr


def _checked_probability(value: float, what: str) -> float:
    """Clamp a computed coin probability into [0, 1), failing loudly if it
    sits outside by more than the sanity tolerance (an analytics bug)."""
    if not -PROB_SANITY_TOL <= value < 1.0 + PROB_SANITY_TOL:
        raise AssertionError(f"{what} = {value!r} falls outside [0, 1)")
    return min(max(value, 0.0), 1.0)


def survivor_probs(inst: Instance) -> np.ndarray:
    return np.array([analytics.survivor_prob(b, inst.m) for b in inst.quotas])


def max_quota_agent(inst: Instance) -> int:
    """Lowest-indexed agent with maximum quota (the deterministic tie rule)."""
    return int(np.argmax(inst.quota_array))


def rsbs_parameters(inst: Instance) -> tuple[int, np.ndarray, np.ndarray, float]:
    """(i_star, phase-1 survival probs with i_star excluded, burn probs, steal prob)."""
    i_star = max_quota_agent(inst)
    p1 = survivor_probs(inst)
    p1[i_star] = -1.0  # the set-aside agent never survives phase 1
    betas = np.zeros(inst.n)
    for i in range(inst.n):
        if i == i_star or inst.n == 1:
            continue
        betas[i] = _checked_probability(
            analytics.burning_prob(inst, i, i_star), f"burn probability for agent {i}"
        )
    if inst.n == 1 or inst.b_max == inst.m:
        sigma = 0.0  # phase 3 has nobody to steal from
    else:
        sigma = _checked_probability(analytics.stealing_prob(inst.b_max, inst.m), "steal probability")
    return i_star, p1, betas, sigma


def hql_parameters(inst: Instance) -> tuple[np.ndarray, np.ndarray]:
    """Processing order (a max-quota agent swapped into the last slot) and the
    per-position activation probabilities m / (2m - b_last - sum of earlier quotas)."""
    n, m = inst.n, inst.m
    order = list(range(n))
    i_star = max_quota_agent(inst)
    order[i_star], order[-1] = order[-1], order[i_star]
    b_seq = [inst.quotas[j] for j in order]
    b_last = b_seq[-1]
    probs = np.empty(n)
    prefix = 0
    for pos in range(n):
        probs[pos] = m / (2 * m - b_last - prefix)
        prefix += b_seq[pos]
    return np.array(order, dtype=np.int64), probs


# --- pure assignment kernels (leading batch dimensions allowed) -------------


def rs_assign(
    p_survive: np.ndarray,
    fav_mask: np.ndarray,
    u_survive: np.ndarray,
    u_pick: np.ndarray,
) -> np.ndarray:
    """Survivor lottery: each item with surviving demand goes to a uniformly
    random surviving agent whose favorite it is."""
    survive = u_survive < p_survive
    demand = fav_mask & survive[..., :, None]
    count = demand.sum(axis=-2)
    pick = (u_pick * count).astype(np.int64) + 1  # 1-based rank among demanders
    csum = np.cumsum(demand, axis=-2)
    winner = np.argmax((csum == pick[..., None, :]) & demand, axis=-2)
    return np.where(count > 0, winner, UNASSIGNED).astype(np.int64)


def rsbs_assign(
    i_star: int,
    p_survive_phase1: np.ndarray,
    betas: np.ndarray,
    sigma: float,
    fav_mask: np.ndarray,
    u_survive: np.ndarray,
    u_pick: np.ndarray,
    u_burn: np.ndarray,
    u_steal: np.ndarray,
) -> np.ndarray:
    """Three phases: survivor lottery without i_star, independent whole-bundle
    burns, then i_star collects unassigned favorites and steals the rest of
    them with one sigma coin."""
    phase1 = rs_assign(p_survive_phase1, fav_mask, u_survive, u_pick)

    burn = u_burn < betas
    assigned = phase1 >= 0
    holder = np.where(assigned, phase1, 0)
    burnt = np.take_along_axis(burn, holder, axis=-1) & assigned
    phase2 = np.where(burnt, UNASSIGNED, phase1)

    fav_star = fav_mask[..., i_star, :]
    phase3 = np.where(fav_star & (phase2 < 0), i_star, phase2)
    steal = np.asarray(u_steal < sigma)[..., None]
    held_by_other = fav_star & (phase3 >= 0) & (phase3 != i_star)
    return np.where(held_by_other & steal, i_star, phase3).astype(np.int64)


def hql_assign(
    order: np.ndarray,
    p_activate: np.ndarray,
    fav_mask: np.ndarray,
    u_activate: np.ndarray,
) -> np.ndarray:
    """One pass over a fixed agent order; an activated agent irrevocably takes
    every still-available favorite."""
    lead = fav_mask.shape[:-2]
    m = fav_mask.shape[-1]
    assignment = np.full((*lead, m), UNASSIGNED, dtype=np.int64)
    available = np.ones((*lead, m), dtype=bool)
    for pos in range(order.shape[0]):
        agent = int(order[pos])
        act = u_activate[..., pos] < p_activate[pos]
        take = available & fav_mask[..., agent, :] & act[..., None]
        assignment = np.where(take, agent, assignment)
        available &= ~take
    return assignment


def secretary_assign(
    p_survive: np.ndarray,
    fav_mask: np.ndarray,
    u_survive: np.ndarray,
    u_order: np.ndarray,
) -> np.ndarray:
    """Survivor lottery visited in a uniformly random agent order; a visited
    survivor takes every still-available favorite."""
    n = fav_mask.shape[-2]
    lead = fav_mask.shape[:-2]
    m = fav_mask.shape[-1]
    survive = u_survive < p_survive
    perm = np.argsort(u_order, axis=-1)
    assignment = np.full((*lead, m), UNASSIGNED, dtype=np.int64)
    available = np.ones((*lead, m), dtype=bool)
    for pos in range(n):
        agent = perm[..., pos]
        fav = np.take_along_axis(fav_mask, agent[..., None, None], axis=-2)[..., 0, :]
        act = np.take_along_axis(survive, agent[..., None], axis=-1)[..., 0]
        take = available & fav & act[..., None]
        assignment = np.where(take, agent[..., None], assignment)
        available &= ~take
    return assignment


def serial_assign(order: np.ndarray, fav_mask: np.ndarray) -> np.ndarray:
    """Deterministic one-pass baseline: each agent in turn takes every
    still-available favorite with certainty."""
    lead = fav_mask.shape[:-2]
    m = fav_mask.shape[-1]
    assignment = np.full((*lead, m), UNASSIGNED, dtype=np.int64)
    available = np.ones((*lead, m), dtype=bool)
    for pos in range(order.shape[0]):
        agent = int(order[pos])
        take = available & fav_mask[..., agent, :]
        assignment = np.where(take, agent, assignment)
        available &= ~take
    return assignment


# --- public one-shot wrappers ------------------------------------------------


def _check_prefs(inst: Instance, prefs: PreferenceProfile) -> None:
    if prefs.instance != inst:
        raise ValueError("preference profile was derived for a different instance")


def run_rs(inst: Instance, prefs: PreferenceProfile, rng: RngLike) -> Matching:
    _check_prefs(inst, prefs)
    gen = as_generator(rng)
    u_survive = gen.random(inst.n)
    u_pick = gen.random(inst.m)
    return Matching(rs_assign(survivor_probs(inst), prefs.favorite_mask(), u_survive, u_pick))


def run_rsbs(inst: Instance, prefs: PreferenceProfile, rng: RngLike) -> Matching:
    _check_prefs(inst, prefs)
    gen = as_generator(rng)
    i_star, p1, betas, sigma = rsbs_parameters(inst)
    u_survive = gen.random(inst.n)
    u_pick = gen.random(inst.m)
    u_burn = gen.random(inst.n)
    u_steal = np.float64(gen.random())
    return Matching(
        rsbs_assign(i_star, p1, betas, sigma, prefs.favorite_mask(), u_survive, u_pick, u_burn, u_steal)
    )


def run_hql(inst: Instance, prefs: PreferenceProfile, rng: RngLike) -> Matching:
    _check_prefs(inst, prefs)
    gen = as_generator(rng)
    order, probs = hql_parameters(inst)
    u_activate = gen.random(inst.n)
    return Matching(hql_assign(order, probs, prefs.favorite_mask(), u_activate))


def run_secretary_rs(inst: Instance, prefs: PreferenceProfile, rng: RngLike) -> Matching:
    _check_prefs(inst, prefs)
    gen = as_generator(rng)
    u_survive = gen.random(inst.n)
    u_order = gen.random(inst.n)
    return Matching(secretary_assign(survivor_probs(inst), prefs.favorite_mask(), u_survive, u_order))


def run_serial_dictator(inst: Instance, prefs: PreferenceProfile, order: Sequence[int]) -> Matching:
    _check_prefs(inst, prefs)
    arr = _validate_order(order, inst.n)
    return Matching(serial_assign(arr, prefs.favorite_mask()))


def run_mechanism(spec: MechanismSpec, inst: Instance, prefs: PreferenceProfile, rng: RngLike) -> Matching:
    """Dispatch on the spec and apply the optional quota-filling post-pass."""
    if spec.kind == "rs":
        matching = run_rs(inst, prefs, rng)
    elif spec.kind == "rsbs":
        matching = run_rsbs(inst, prefs, rng)
    elif spec.kind == "hql":
        matching = run_hql(inst, prefs, rng)
    elif spec.kind == "secretary-rs":
        matching = run_secretary_rs(inst, prefs, rng)
    elif spec.kind == "serial-dictator":
        order = spec.order if spec.order is not None else tuple(range(inst.n))
        matching = run_serial_dictator(inst, prefs, order)
    else:  # pragma: no cover
        raise AssertionError(spec.kind)
    if spec.complete:
        matching = complete_matching(matching, inst)
    return matching


def mechanism_draw_count(spec: MechanismSpec, inst: Instance) -> int:
    """Uniforms one run consumes (the fixed layout size)."""
    n, m = inst.n, inst.m
    if spec.kind == "rs":
        return n + m
    if spec.kind == "rsbs":
        return n + m + n + 1
    if spec.kind == "hql":
        return n
    if spec.kind == "secretary-rs":
        return 2 * n
    return 0


def assign_from_uniforms(
    spec: MechanismSpec,
    inst: Instance,
    params: tuple,
    fav_mask: np.ndarray,
    u: np.ndarray,
) -> np.ndarray:
    """Run a mechanism from a pre-drawn uniform block (layout above).

    `params` must come from mechanism_params(spec, inst); `u` has shape
    (..., mechanism_draw_count) and `fav_mask` (..., n, m).  Used by the
    batched estimator; bit-compatible with the run_* wrappers.
    """
    n, m = inst.n, inst.m
    if spec.kind == "rs":
        (p,) = params
        return rs_assign(p, fav_mask, u[..., :n], u[..., n : n + m])
    if spec.kind == "rsbs":
        i_star, p1, betas, sigma = params
        return rsbs_assign(
            i_star,
            p1,
            betas,
            sigma,
            fav_mask,
            u[..., :n],
            u[..., n : n + m],
            u[..., n + m : n + m + n],
            u[..., n + m + n],
        )
    if spec.kind == "hql":
        order, probs = params
        return hql_assign(order, probs, fav_mask, u[..., :n])
    if spec.kind == "secretary-rs":
        (p,) = params
        return secretary_assign(p, fav_mask, u[..., :n], u[..., n : 2 * n])
    if spec.kind == "serial-dictator":
        (order,) = params
        return serial_assign(order, fav_mask)
    raise AssertionError(spec.kind)  # pragma: no cover


def mechanism_params(spec: MechanismSpec, inst: Instance) -> tuple:
    """Precompute the per-instance constants a mechanism consumes."""
    if spec.kind in ("rs", "secretary-rs"):
        return (survivor_probs(inst),)
    if spec.kind == "rsbs":
        return rsbs_parameters(inst)
    if spec.kind == "hql":
        return hql_parameters(inst)
    if spec.kind == "serial-dictator":
        order = spec.order if spec.order is not None else tuple(range(inst.n))
        return (_validate_order(order, inst.n),)
    raise AssertionError(spec.kind)  # pragma: no cover
