"""Monte Carlo engine: distortion estimates, per-(agent, rank) assignment
probabilities, and the replay experiments for the adversarial constructions.

Reproducibility contract: trial t draws every uniform it needs, in one fixed
layout (sample block, tie-tag block, mechanism block), from
RandomStream(seed, t).  Per-trial results are reduced in ascending trial
order with exact (fsum) summation, so reports are bitwise identical no matter
how trials are chunked or how many worker processes run them.

Trials are executed in vectorized batches; `_reference_*` helpers recompute
the same trials one at a time through the public single-run API and are used
by the test suite to pin the two paths together.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import analytics, distributions, mechanisms, opt
from .core import (
    Instance,
    RandomStream,
    derive_preferences,
    rankings_from_tags,
    social_welfare,
)
from .distributions import DistributionSpec
from .mechanisms import MechanismSpec

WILSON_Z = 3.0


# --- reports -----------------------------------------------------------------


@dataclass(frozen=True)
class EstimateReport:
    mean_opt: float
    mean_sw: float
    distortion_estimate: float
    stderr_opt: float
    stderr_sw: float
    stderr_ratio: float
    trials: int
    seed: int


@dataclass(frozen=True, eq=False)
class ProbMatrixReport:
    """Empirical assignment frequencies: q_hat[i][t] is the fraction of trials
    in which agent i received their rank-(t+1) item."""

    q_hat: tuple[np.ndarray, ...]
    half_width: tuple[np.ndarray, ...]
    hits: tuple[np.ndarray, ...]
    count_sumsq: tuple[int, ...]
    trials: int
    seed: int

    def min_q(self) -> float:
        return min(float(q.min()) for q in self.q_hat)

    def favorite_yield(self, agent: int) -> float:
        """Expected favorite-item count of one agent divided by their quota."""
        b = len(self.q_hat[agent])
        return float(self.hits[agent].sum()) / (self.trials * b)

    def favorite_yield_stderr(self, agent: int) -> float:
        b = len(self.q_hat[agent])
        total = float(self.hits[agent].sum())
        mean = total / self.trials
        if self.trials < 2:
            return 0.0
        var = (float(self.count_sumsq[agent]) - self.trials * mean * mean) / (self.trials - 1)
        return math.sqrt(max(var, 0.0) / self.trials) / b


@dataclass(frozen=True)
class OneToOneReplayReport:
    mean_opt: float
    mean_sw: float
    ratio: float
    stderr_opt: float
    stderr_sw: float
    opt_floor: float
    sw_ceiling: float
    trials: int
    seed: int


@dataclass(frozen=True)
class SecretaryGapReport:
    yield_big: float
    top_small: float
    stderr_yield: float
    stderr_top: float
    threshold: float
    min_side: float
    trials: int
    seed: int


@dataclass(frozen=True)
class GapReport:
    estimate: EstimateReport
    benchmark_lb: float
    gap_ratio: float


# --- engine -------------------------------------------------------------------


def _resolve_workers(workers: int | None) -> int:
    if workers is not None:
        if workers < 1:
            raise ValueError("workers must be >= 1")
        return workers
    env = os.environ.get("ORDMATCH_THREADS")
    if env is None:
        return 1
    w = int(env)
    if w < 0:
        raise ValueError("ORDMATCH_THREADS must be >= 0")
    return w if w > 0 else (os.cpu_count() or 1)


def _batch_size(inst: Instance) -> int:
    cells = inst.n * inst.m
    return int(max(64, min(8192, 2_000_000 // max(cells, 1))))


def _trial_layout(mech: MechanismSpec, dist: DistributionSpec, inst: Instance) -> tuple[int, int, int]:
    d_sample = distributions.sample_draw_count(dist, inst)
    d_tags = inst.n * inst.m
    d_mech = mechanisms.mechanism_draw_count(mech, inst)
    return d_sample, d_tags, d_mech


def _fill_trial_blocks(seed: int, t0: int, t1: int, d: int) -> np.ndarray:
    """Uniform block for trials [t0, t1): row k holds the d draws of
    RandomStream(seed, t0+k).  Implemented by resetting one Philox bit
    generator's (key, counter) state per trial, which is bit-identical to
    constructing a fresh generator per trial but much cheaper."""
    out = np.empty((t1 - t0, d))
    bit_gen = np.random.Philox(key=np.array([seed, 0], dtype=np.uint64))
    gen = np.random.Generator(bit_gen)
    state = bit_gen.state
    key = state["state"]["key"]
    counter = state["state"]["counter"]
    for k, t in enumerate(range(t0, t1)):
        key[1] = t
        counter[:] = 0
        state["buffer_pos"] = 4  # discard any buffered words
        state["has_uint32"] = 0
        state["uinteger"] = 0
        bit_gen.state = state
        gen.random(out=out[k])
    return out


def _top_items_one_to_one(values: np.ndarray, tags: np.ndarray) -> np.ndarray:
    """Each agent's single top item: maximum value, ties to the smallest tag.

    Exactly the first column of rankings_from_tags, computed without the full
    sort (the ranking tail is irrelevant when every quota is 1)."""
    row_max = values.max(axis=-1, keepdims=True)
    tagged = np.where(values == row_max, tags, 2.0)
    return np.argmin(tagged, axis=-1, keepdims=True).astype(np.int64)


def _chunk_arrays(
    mech: MechanismSpec,
    dist: DistributionSpec,
    inst: Instance,
    params: tuple,
    seed: int,
    t0: int,
    t1: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Values, top-of-ranking tables and mechanism assignments for trials
    [t0, t1).  The returned table covers ranks up to each agent's quota (all
    any caller inspects); it is the full ranking matrix except on one-to-one
    instances, where only the top column is materialized."""
    n, m = inst.n, inst.m
    d_sample, d_tags, d_mech = _trial_layout(mech, dist, inst)
    batch = t1 - t0
    block = _fill_trial_blocks(seed, t0, t1, d_sample + d_tags + d_mech)
    values = distributions.values_from_uniforms(dist, inst, block[:, :d_sample])
    tags = block[:, d_sample : d_sample + d_tags].reshape(batch, n, m)
    if inst.b_max == 1:
        rankings = _top_items_one_to_one(values, tags)
    else:
        rankings = rankings_from_tags(values, tags)
    fav_mask = np.zeros((batch, n, m), dtype=bool)
    for i, b in enumerate(inst.quotas):
        np.put_along_axis(fav_mask[:, i, :], rankings[:, i, :b], True, axis=-1)
    assignment = mechanisms.assign_from_uniforms(mech, inst, params, fav_mask, block[:, d_sample + d_tags :])
    return values, rankings, assignment


def _complete_batch(assignment: np.ndarray, inst: Instance) -> np.ndarray:
    """Vectorized counterpart of core.complete_matching: ascending items to
    the lowest-indexed agent with residual quota."""
    n = inst.n
    assigned = assignment >= 0
    counts = (assignment[:, None, :] == np.arange(n)[None, :, None]).sum(axis=-1)
    residual = inst.quota_array[None, :] - counts
    cum = np.cumsum(residual, axis=1)
    rank_unassigned = np.cumsum(~assigned, axis=1) - 1
    fill = (cum[:, :, None] <= rank_unassigned[:, None, :]).sum(axis=1)
    return np.where(assigned, assignment, fill)


def _distortion_chunk(args) -> tuple[np.ndarray, np.ndarray]:
    mech, dist, inst, params, seed, t0, t1 = args
    values, _, assignment = _chunk_arrays(mech, dist, inst, params, seed, t0, t1)
    if mech.complete:
        assignment = _complete_batch(assignment, inst)
    batch, m = assignment.shape
    agents = np.where(assignment >= 0, assignment, 0)
    picked = values[np.arange(batch)[:, None], agents, np.arange(m)[None, :]]
    picked = np.where(assignment >= 0, picked, 0.0)
    sw = np.array([math.fsum(row) for row in picked.tolist()])
    opt_vals = np.array([opt.optimal_value(inst, values[k]) for k in range(batch)])
    worst = np.flatnonzero(sw > opt_vals)
    if worst.size:
        t = t0 + int(worst[0])
        raise AssertionError(
            f"trial {t}: mechanism welfare {sw[worst[0]]!r} exceeds optimum {opt_vals[worst[0]]!r}"
        )
    return sw, opt_vals


def _probs_chunk(args) -> tuple[list[np.ndarray], np.ndarray]:
    mech, dist, inst, params, seed, t0, t1 = args
    _, rankings, assignment = _chunk_arrays(mech, dist, inst, params, seed, t0, t1)
    hits: list[np.ndarray] = []
    count_sq = np.zeros(inst.n, dtype=np.int64)
    for i, b in enumerate(inst.quotas):
        got = np.take_along_axis(assignment, rankings[:, i, :b], axis=-1) == i
        hits.append(got.sum(axis=0).astype(np.int64))
        cnt = got.sum(axis=1)
        count_sq[i] = int((cnt.astype(np.int64) ** 2).sum())
    return hits, count_sq


def _plan(trials: int, batch: int) -> list[tuple[int, int]]:
    return [(t0, min(t0 + batch, trials)) for t0 in range(0, trials, batch)]


def _map_chunks(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


def _validated(mech: MechanismSpec, dist: DistributionSpec, inst: Instance, trials: int) -> tuple:
    if trials < 1:
        raise ValueError("trials must be >= 1")
    distributions.validate_for_instance(dist, inst)
    return mechanisms.mechanism_params(mech, inst)


def _collect_distortion(
    mech: MechanismSpec,
    dist: DistributionSpec,
    inst: Instance,
    trials: int,
    seed: int,
    workers: int,
) -> tuple[np.ndarray, np.ndarray]:
    params = _validated(mech, dist, inst, trials)
    jobs = [(mech, dist, inst, params, seed, t0, t1) for t0, t1 in _plan(trials, _batch_size(inst))]
    parts = _map_chunks(_distortion_chunk, jobs, workers)
    sw = np.concatenate([p[0] for p in parts])
    opt_vals = np.concatenate([p[1] for p in parts])
    return sw, opt_vals


def _collect_probs(
    mech: MechanismSpec,
    dist: DistributionSpec,
    inst: Instance,
    trials: int,
    seed: int,
    workers: int,
) -> tuple[list[np.ndarray], np.ndarray]:
    params = _validated(mech, dist, inst, trials)
    jobs = [(mech, dist, inst, params, seed, t0, t1) for t0, t1 in _plan(trials, _batch_size(inst))]
    parts = _map_chunks(_probs_chunk, jobs, workers)
    hits = [np.zeros(b, dtype=np.int64) for b in inst.quotas]
    count_sq = np.zeros(inst.n, dtype=np.int64)
    for part_hits, part_sq in parts:
        for i in range(inst.n):
            hits[i] += part_hits[i]
        count_sq += part_sq
    return hits, count_sq


# --- statistics ---------------------------------------------------------------


def _mean(x: np.ndarray) -> float:
    return math.fsum(x.tolist()) / len(x)


def _variance(x: np.ndarray, mean: float) -> float:
    if len(x) < 2:
        return 0.0
    return math.fsum((v - mean) ** 2 for v in x.tolist()) / (len(x) - 1)


def _covariance(x: np.ndarray, y: np.ndarray, mx: float, my: float) -> float:
    if len(x) < 2:
        return 0.0
    return math.fsum((a - mx) * (b - my) for a, b in zip(x.tolist(), y.tolist())) / (len(x) - 1)


def wilson_half_width(successes: int, trials: int, z: float = WILSON_Z) -> float:
    p = successes / trials
    z2 = z * z
    return (z * math.sqrt(p * (1.0 - p) / trials + z2 / (4.0 * trials * trials))) / (1.0 + z2 / trials)


def _ratio_stderr(mo: float, ms: float, vo: float, vs: float, cov: float, trials: int) -> float:
    if ms == 0.0:
        return math.inf
    var = (vo / (ms * ms) - 2.0 * mo * cov / (ms**3) + mo * mo * vs / (ms**4)) / trials
    return math.sqrt(max(var, 0.0))


def _build_estimate(sw: np.ndarray, opt_vals: np.ndarray, trials: int, seed: int) -> EstimateReport:
    mean_sw = _mean(sw)
    mean_opt = _mean(opt_vals)
    var_sw = _variance(sw, mean_sw)
    var_opt = _variance(opt_vals, mean_opt)
    cov = _covariance(opt_vals, sw, mean_opt, mean_sw)
    if mean_sw > 0.0:
        ratio = mean_opt / mean_sw
    else:
        ratio = 1.0 if mean_opt == 0.0 else math.inf  # welfare-free instances are vacuously optimal
    return EstimateReport(
        mean_opt=mean_opt,
        mean_sw=mean_sw,
        distortion_estimate=ratio,
        stderr_opt=math.sqrt(var_opt / trials),
        stderr_sw=math.sqrt(var_sw / trials),
        stderr_ratio=_ratio_stderr(mean_opt, mean_sw, var_opt, var_sw, cov, trials),
        trials=trials,
        seed=seed,
    )


# --- public operations ----------------------------------------------------------


def estimate_distortion(
    mech: MechanismSpec,
    dist: DistributionSpec,
    inst: Instance,
    trials: int,
    seed: int,
    *,
    workers: int | None = None,
) -> EstimateReport:
    """Ratio-of-means distortion estimate with delta-method standard error.

    Each trial draws a profile, derives preferences, runs the mechanism, and
    records both its welfare and the exact optimum; welfare never exceeding
    the optimum is asserted trial by trial.
    """
    sw, opt_vals = _collect_distortion(mech, dist, inst, trials, seed, _resolve_workers(workers))
    return _build_estimate(sw, opt_vals, trials, seed)


def estimate_assignment_probs(
    mech: MechanismSpec,
    dist: DistributionSpec,
    inst: Instance,
    trials: int,
    seed: int,
    *,
    workers: int | None = None,
) -> ProbMatrixReport:
    """Empirical per-(agent, rank) assignment frequencies with Wilson
    half-widths at z = 3.  The quota-filling post-pass is always disabled so
    filler items cannot pollute the frequencies."""
    mech = replace(mech, complete=False)
    hits, count_sq = _collect_probs(mech, dist, inst, trials, seed, _resolve_workers(workers))
    q_hat = tuple(h / trials for h in hits)
    half = tuple(
        np.array([wilson_half_width(int(k), trials) for k in h]) for h in hits
    )
    return ProbMatrixReport(
        q_hat=q_hat,
        half_width=half,
        hits=tuple(hits),
        count_sumsq=tuple(int(c) for c in count_sq),
        trials=trials,
        seed=seed,
    )


def run_lb_theorem1(n: int, trials: int, seed: int, *, workers: int | None = None) -> OneToOneReplayReport:
    """Replay the one-to-one 0/1 ensemble (success probability 1/n^2): the
    expected optimum must stay above 1 - 2/n while the survivor lottery's
    welfare stays below 1 - 1/e + 2/n, all within three standard errors."""
    if n < 1:
        raise ValueError("n must be positive")
    inst = Instance.one_to_one(n)
    rep = estimate_distortion(
        MechanismSpec.rs(),
        DistributionSpec.lower_bound_bernoulli(),
        inst,
        trials,
        seed,
        workers=workers,
    )
    opt_floor = 1.0 - 2.0 / n
    sw_ceiling = 1.0 - 1.0 / math.e + 2.0 / n
    if rep.mean_opt < opt_floor - 3.0 * rep.stderr_opt:
        raise AssertionError(
            f"mean optimum {rep.mean_opt} fell below the {opt_floor} floor (stderr {rep.stderr_opt})"
        )
    if rep.mean_sw > sw_ceiling + 3.0 * rep.stderr_sw:
        raise AssertionError(
            f"mean welfare {rep.mean_sw} exceeded the {sw_ceiling} ceiling (stderr {rep.stderr_sw})"
        )
    return OneToOneReplayReport(
        mean_opt=rep.mean_opt,
        mean_sw=rep.mean_sw,
        ratio=rep.distortion_estimate,
        stderr_opt=rep.stderr_opt,
        stderr_sw=rep.stderr_sw,
        opt_floor=opt_floor,
        sw_ceiling=sw_ceiling,
        trials=trials,
        seed=seed,
    )


def run_lb_secretary(m: int, trials: int, seed: int, *, workers: int | None = None) -> SecretaryGapReport:
    """Measure the secretary variant on quotas (m-1, 1) under the two
    one-agent adversarial profiles: the large agent's favorite-item yield and
    the small agent's top-item probability.  At least one of the two must sit
    at or below (3m-1)/(4m-2) up to three standard errors.

    The second sub-experiment runs on seed+1 so the two measurements do not
    share trial streams.
    """
    if m < 3:
        raise ValueError("need m >= 3")
    inst = Instance((m - 1, 1))
    mech = MechanismSpec.secretary_rs()
    rep_big = estimate_assignment_probs(
        mech, DistributionSpec.single_agent_adversarial(0), inst, trials, seed, workers=workers
    )
    rep_small = estimate_assignment_probs(
        mech,
        DistributionSpec.single_agent_adversarial(1),
        inst,
        trials,
        (seed + 1) % 2**64,
        workers=workers,
    )
    yield_big = rep_big.favorite_yield(0)
    stderr_yield = rep_big.favorite_yield_stderr(0)
    top_small = float(rep_small.q_hat[1][0])
    stderr_top = math.sqrt(top_small * (1.0 - top_small) / trials)
    threshold = (3.0 * m - 1.0) / (4.0 * m - 2.0)
    if yield_big <= top_small:
        min_side, min_err = yield_big, stderr_yield
    else:
        min_side, min_err = top_small, stderr_top
    if min_side > threshold + 3.0 * min_err:
        raise AssertionError(
            f"both favorite-item rates ({yield_big}, {top_small}) exceed the {threshold} threshold"
        )
    return SecretaryGapReport(
        yield_big=yield_big,
        top_small=top_small,
        stderr_yield=stderr_yield,
        stderr_top=stderr_top,
        threshold=threshold,
        min_side=min_side,
        trials=trials,
        seed=seed,
    )


def gap_report(
    mech: MechanismSpec,
    inst: Instance,
    dist: DistributionSpec,
    trials: int,
    seed: int,
    *,
    workers: int | None = None,
) -> GapReport:
    """Distortion estimate divided by the per-instance benchmark floor."""
    rep = estimate_distortion(mech, dist, inst, trials, seed, workers=workers)
    benchmark = analytics.benchmark_lower_bound(inst)
    return GapReport(estimate=rep, benchmark_lb=benchmark, gap_ratio=rep.distortion_estimate / benchmark)


# --- single-trial reference path (used to pin the batched kernels) -------------


def _reference_distortion_arrays(
    mech: MechanismSpec, dist: DistributionSpec, inst: Instance, trials: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    _validated(mech, dist, inst, trials)
    sw = np.empty(trials)
    opt_vals = np.empty(trials)
    for t in range(trials):
        gen = RandomStream(seed, t).generator()
        profile = distributions.sample_profile(dist, inst, gen)
        prefs = derive_preferences(profile, gen)
        matching = mechanisms.run_mechanism(mech, inst, prefs, gen)
        sw[t] = social_welfare(matching, profile)
        opt_vals[t] = opt.optimal_value(inst, profile.values)
    return sw, opt_vals


def _reference_prob_counts(
    mech: MechanismSpec, dist: DistributionSpec, inst: Instance, trials: int, seed: int
) -> list[np.ndarray]:
    mech = replace(mech, complete=False)
    _validated(mech, dist, inst, trials)
    hits = [np.zeros(b, dtype=np.int64) for b in inst.quotas]
    for t in range(trials):
        gen = RandomStream(seed, t).generator()
        profile = distributions.sample_profile(dist, inst, gen)
        prefs = derive_preferences(profile, gen)
        matching = mechanisms.run_mechanism(mech, inst, prefs, gen)
        for i, b in enumerate(inst.quotas):
            for rank in range(b):
                if matching.assignment[prefs.rankings[i, rank]] == i:
                    hits[i][rank] += 1
    return hits
