"""Random valuation generators satisfying the unbiased-favorites property:
under every variant, each b_i-subset of items is equally likely to be agent
i's favorite bundle (after uniform tie-breaking).

Draw layouts are fixed per variant so that sampled profiles are reproducible
from (spec, instance, seed, stream-id) alone:

  iid-uniform01            n*m uniforms -> the value matrix itself
  iid-bernoulli(p)         n*m uniforms, v = 1.0 where u < p
  lower-bound-bernoulli    as iid-bernoulli with p = 1/n^2
  single-agent-adversarial b_i* uniforms -> item indices floor(u*m), drawn
                           with replacement (duplicates collapse); the
                           without-replacement toggle instead consumes m
                           uniforms and takes the argsort prefix
  exchangeable-permutation n*m uniforms; row i = base permuted by argsort
  favorite-bundle-uniform  n*m uniforms; hi on the argsort prefix, lo elsewhere
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.stats import chi2

from .core import Instance, RngLike, ValuationProfile, as_generator, rankings_from_tags

KINDS = (
    "iid-uniform01",
    "iid-bernoulli",
    "lower-bound-bernoulli",
    "single-agent-adversarial",
    "exchangeable-permutation",
    "favorite-bundle-uniform",
)

UF_AUDIT_MAX_ITEMS = 12


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    p: float | None = None
    agent: int | None = None
    base: tuple[float, ...] | None = None
    hi: float | None = None
    lo: float | None = None
    with_replacement: bool = True

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "iid-bernoulli":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError("iid-bernoulli needs a success probability p in [0, 1]")
        if self.kind == "single-agent-adversarial":
            if self.agent is None or self.agent < 0:
                raise ValueError("single-agent-adversarial needs a nonnegative agent index")
        if self.kind == "exchangeable-permutation":
            if self.base is None or len(self.base) == 0:
                raise ValueError("exchangeable-permutation needs a base value vector")
            b = tuple(float(x) for x in self.base)
            if any(not math.isfinite(x) or x < 0 for x in b):
                raise ValueError("base values must be finite and nonnegative")
            object.__setattr__(self, "base", b)
        if self.kind == "favorite-bundle-uniform":
            if self.hi is None or self.lo is None:
                raise ValueError("favorite-bundle-uniform needs hi and lo values")
            if not (math.isfinite(self.hi) and math.isfinite(self.lo)):
                raise ValueError("hi and lo must be finite")
            if not self.hi > self.lo >= 0.0:
                raise ValueError("favorite-bundle-uniform requires hi > lo >= 0")

    # -- constructors -------------------------------------------------------

    @classmethod
    def iid_uniform01(cls) -> "DistributionSpec":
        return cls("iid-uniform01")

    @classmethod
    def iid_bernoulli(cls, p: float) -> "DistributionSpec":
        return cls("iid-bernoulli", p=float(p))

    @classmethod
    def lower_bound_bernoulli(cls) -> "DistributionSpec":
        """0/1 values with per-entry success probability 1/n^2."""
        return cls("lower-bound-bernoulli")

    @classmethod
    def single_agent_adversarial(cls, agent: int, with_replacement: bool = True) -> "DistributionSpec":
        return cls("single-agent-adversarial", agent=int(agent), with_replacement=with_replacement)

    @classmethod
    def exchangeable_permutation(cls, base) -> "DistributionSpec":
        return cls("exchangeable-permutation", base=tuple(float(x) for x in base))

    @classmethod
    def favorite_bundle_uniform(cls, hi: float, lo: float) -> "DistributionSpec":
        return cls("favorite-bundle-uniform", hi=float(hi), lo=float(lo))

    def label(self) -> str:
        """Stable human-readable tag used in CSV output."""
        if self.kind == "iid-bernoulli":
            return f"iid-bernoulli(p={self.p:.12g})"
        if self.kind == "single-agent-adversarial":
            mode = "" if self.with_replacement else ",no-replacement"
            return f"single-agent-adversarial(agent={self.agent}{mode})"
        if self.kind == "exchangeable-permutation":
            return "exchangeable-permutation(" + "|".join(f"{x:.12g}" for x in self.base) + ")"
        if self.kind == "favorite-bundle-uniform":
            return f"favorite-bundle-uniform(hi={self.hi:.12g},lo={self.lo:.12g})"
        return self.kind


def validate_for_instance(spec: DistributionSpec, inst: Instance) -> None:
    if spec.kind == "single-agent-adversarial" and spec.agent >= inst.n:
        raise ValueError(f"adversarial agent {spec.agent} out of range for n={inst.n}")
    if spec.kind == "exchangeable-permutation" and len(spec.base) != inst.m:
        raise ValueError(f"base vector has {len(spec.base)} entries, instance has {inst.m} items")


def sample_draw_count(spec: DistributionSpec, inst: Instance) -> int:
    """Number of uniforms one profile draw consumes (the fixed layout size)."""
    if spec.kind == "single-agent-adversarial":
        return inst.quotas[spec.agent] if spec.with_replacement else inst.m
    return inst.n * inst.m


def values_from_uniforms(spec: DistributionSpec, inst: Instance, u: np.ndarray) -> np.ndarray:
    """Map a block of uniforms onto value matrices.

    `u` has shape (..., sample_draw_count); the result has shape (..., n, m).
    Shared by the one-shot sampler and the batched estimator kernels so both
    produce bit-identical profiles from the same draws.
    """
    n, m = inst.n, inst.m
    lead = u.shape[:-1]
    if spec.kind == "iid-uniform01":
        return u.reshape(*lead, n, m).copy()
    if spec.kind in ("iid-bernoulli", "lower-bound-bernoulli"):
        p = spec.p if spec.kind == "iid-bernoulli" else 1.0 / (n * n)
        return (u.reshape(*lead, n, m) < p).astype(np.float64)
    if spec.kind == "single-agent-adversarial":
        b_star = inst.quotas[spec.agent]
        vals = np.zeros((*lead, n, m), dtype=np.float64)
        row = vals[..., spec.agent, :]
        if spec.with_replacement:
            idx = (u * m).astype(np.int64)  # u < 1, so idx < m
        else:
            idx = np.argsort(u, axis=-1)[..., :b_star]
        np.put_along_axis(row, idx, 1.0, axis=-1)
        return vals
    if spec.kind == "exchangeable-permutation":
        order = np.argsort(u.reshape(*lead, n, m), axis=-1)
        return np.asarray(spec.base, dtype=np.float64)[order]
    if spec.kind == "favorite-bundle-uniform":
        order = np.argsort(u.reshape(*lead, n, m), axis=-1)
        vals = np.full((*lead, n, m), spec.lo, dtype=np.float64)
        for i, b in enumerate(inst.quotas):
            np.put_along_axis(vals[..., i, :], order[..., i, :b], spec.hi, axis=-1)
        return vals
    raise AssertionError(f"unhandled kind {spec.kind}")


def sample_profile(spec: DistributionSpec, inst: Instance, rng: RngLike) -> ValuationProfile:
    """Draw one valuation profile."""
    validate_for_instance(spec, inst)
    gen = as_generator(rng)
    u = gen.random(sample_draw_count(spec, inst))
    return ValuationProfile(inst, values_from_uniforms(spec, inst, u))


@dataclass(frozen=True, eq=False)
class AgentAudit:
    agent: int
    subsets: tuple[tuple[int, ...], ...]
    counts: np.ndarray
    expected: float
    chi2_stat: float
    dof: int
    p_value: float


@dataclass(frozen=True)
class UFAuditReport:
    per_agent: tuple[AgentAudit, ...]
    trials: int

    def min_p_value(self) -> float:
        return min(a.p_value for a in self.per_agent)


def uf_audit(
    spec: DistributionSpec,
    inst: Instance,
    trials: int,
    rng: RngLike,
    chunk: int = 4096,
) -> UFAuditReport:
    """Tabulate observed favorite-bundle frequencies against the uniform
    distribution over b_i-subsets and report a chi-square statistic per agent.

    Favorite sets are taken after uniform tie resolution, exactly as the
    mechanisms see them.  Restricted to m <= 12 so the subset tables stay
    enumerable.
    """
    if inst.m > UF_AUDIT_MAX_ITEMS:
        raise ValueError(f"audit supports at most {UF_AUDIT_MAX_ITEMS} items, got {inst.m}")
    if trials < 1:
        raise ValueError("trials must be positive")
    validate_for_instance(spec, inst)
    gen = as_generator(rng)
    n, m = inst.n, inst.m

    subsets = [tuple(combinations(range(m), b)) for b in inst.quotas]
    # bitmask -> cell index per agent; masks fit in 2**m <= 4096 entries
    lookup = np.full((n, 2**m), -1, dtype=np.int64)
    for i, subs in enumerate(subsets):
        for k, s in enumerate(subs):
            mask = 0
            for g in s:
                mask |= 1 << g
            lookup[i, mask] = k
    counts = [np.zeros(len(subs), dtype=np.int64) for subs in subsets]

    d_sample = sample_draw_count(spec, inst)
    done = 0
    while done < trials:
        batch = min(chunk, trials - done)
        u_vals = gen.random((batch, d_sample))
        u_tags = gen.random((batch, n * m)).reshape(batch, n, m)
        values = values_from_uniforms(spec, inst, u_vals)
        rankings = rankings_from_tags(values, u_tags)
        for i, b in enumerate(inst.quotas):
            bits = np.zeros(batch, dtype=np.int64)
            for t in range(b):
                bits |= np.int64(1) << rankings[:, i, t]
            cells = lookup[i, bits]
            counts[i] += np.bincount(cells, minlength=len(subsets[i]))
        done += batch

    audits = []
    for i in range(n):
        k = len(subsets[i])
        expected = trials / k
        stat = float(np.sum((counts[i] - expected) ** 2) / expected)
        dof = k - 1
        p = float(chi2.sf(stat, dof)) if dof > 0 else 1.0
        audits.append(
            AgentAudit(
                agent=i,
                subsets=subsets[i],
                counts=counts[i],
                expected=expected,
                chi2_stat=stat,
                dof=dof,
                p_value=p,
            )
        )
    return UFAuditReport(per_agent=tuple(audits), trials=trials)
