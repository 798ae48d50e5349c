"""Command-line front end.

Subcommands: run, probs, curve, optcheck, ufaudit.  Experiment cells come
from a JSON config file; command-line flags override config fields.  All
output CSVs are deterministic given --seed (LF line endings, 12 significant
digits).  The ORDMATCH_THREADS environment variable caps estimator workers
(0 = one per CPU, unset = serial).

Exit codes: 0 success, 2 usage or config error, 3 assertion or oracle failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from itertools import product
from pathlib import Path

import numpy as np

from . import analytics, estimator
from .core import Instance, RandomStream
from .distributions import DistributionSpec, sample_profile, uf_audit
from .mechanisms import MechanismSpec
from .opt import brute_force_opt, optimal_matching

OPTCHECK_TOL = 1e-9


class ConfigError(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _quota_label(inst: Instance) -> str:
    return "|".join(str(b) for b in inst.quotas)


# --- config parsing -----------------------------------------------------------


def _require(cfg: dict, key: str, where: str):
    if key not in cfg:
        raise ConfigError(f"{where}: missing required field {key!r}")
    return cfg[key]


def _as_int(value, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _geometric_quotas(n: int, m: int, ratio: float) -> tuple[int, ...]:
    """Largest-remainder rounding of weights ratio**i to a positive integer
    vector summing to m."""
    weights = np.array([ratio**i for i in range(n)], dtype=np.float64)
    spare = m - n
    shares = spare * weights / weights.sum()
    base = np.floor(shares).astype(np.int64)
    leftover = spare - int(base.sum())
    order = np.argsort(-(shares - base), kind="stable")
    for k in range(leftover):
        base[order[k]] += 1
    return tuple(int(1 + b) for b in base)


def _parse_instance(cfg, where: str) -> Instance:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected an object")
    if "quotas" in cfg:
        quotas = cfg["quotas"]
        if not isinstance(quotas, list) or not quotas:
            raise ConfigError(f"{where}.quotas: expected a nonempty list")
        out = []
        for k, b in enumerate(quotas):
            out.append(_as_int(b, f"{where}.quotas[{k}]", minimum=1))
        if "n" in cfg and _as_int(cfg["n"], f"{where}.n") != len(out):
            raise ConfigError(f"{where}.n: does not match the quota list length")
        if "m" in cfg and _as_int(cfg["m"], f"{where}.m") != sum(out):
            raise ConfigError(f"{where}.m: does not match the quota sum")
        return Instance(tuple(out))
    gen = _require(cfg, "generator", where)
    n = _as_int(_require(cfg, "n", where), f"{where}.n", minimum=1)
    m = _as_int(_require(cfg, "m", where), f"{where}.m", minimum=1)
    if m < n:
        raise ConfigError(f"{where}: m must be at least n")
    if gen == "uniform-quotas":
        if m % n != 0:
            raise ConfigError(f"{where}: uniform-quotas needs n to divide m")
        return Instance((m // n,) * n)
    if isinstance(gen, str) and gen.startswith("geometric-quotas(") and gen.endswith(")"):
        try:
            ratio = float(gen[len("geometric-quotas(") : -1])
        except ValueError:
            raise ConfigError(f"{where}.generator: bad ratio in {gen!r}") from None
        if not ratio > 0:
            raise ConfigError(f"{where}.generator: ratio must be positive")
        return Instance(_geometric_quotas(n, m, ratio))
    raise ConfigError(f"{where}.generator: unknown generator {gen!r}")


def _parse_distribution(cfg, where: str) -> DistributionSpec:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected an object")
    name = _require(cfg, "name", where)
    try:
        if name == "iid-uniform01":
            return DistributionSpec.iid_uniform01()
        if name == "iid-bernoulli":
            return DistributionSpec.iid_bernoulli(float(_require(cfg, "p", where)))
        if name == "lower-bound-bernoulli":
            return DistributionSpec.lower_bound_bernoulli()
        if name == "single-agent-adversarial":
            return DistributionSpec.single_agent_adversarial(
                _as_int(_require(cfg, "agent", where), f"{where}.agent", minimum=0),
                with_replacement=bool(cfg.get("with_replacement", True)),
            )
        if name == "exchangeable-permutation":
            base = _require(cfg, "base", where)
            if not isinstance(base, list):
                raise ConfigError(f"{where}.base: expected a list")
            return DistributionSpec.exchangeable_permutation([float(x) for x in base])
        if name == "favorite-bundle-uniform":
            return DistributionSpec.favorite_bundle_uniform(
                float(_require(cfg, "hi", where)), float(_require(cfg, "lo", where))
            )
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}.name: unknown distribution {name!r}")


def _parse_mechanism(cfg, where: str, default_complete: bool) -> MechanismSpec:
    if not isinstance(cfg, dict):
        raise ConfigError(f"{where}: expected an object")
    name = _require(cfg, "name", where)
    complete = bool(cfg.get("complete", default_complete))
    try:
        if name in ("rs", "rsbs", "hql", "secretary-rs"):
            return MechanismSpec(name, complete=complete)
        if name == "serial-dictator":
            order = cfg.get("order")
            if order is not None:
                if not isinstance(order, list):
                    raise ConfigError(f"{where}.order: expected a list")
                order = [_as_int(i, f"{where}.order[{k}]") for k, i in enumerate(order)]
            return MechanismSpec.serial_dictator(order, complete=complete)
    except ValueError as e:
        raise ConfigError(f"{where}: {e}") from None
    raise ConfigError(f"{where}.name: unknown mechanism {name!r}")


def _parse_many(cfg: dict, singular: str, plural: str, parse) -> list:
    if plural in cfg:
        items = cfg[plural]
        if not isinstance(items, list) or not items:
            raise ConfigError(f"{plural}: expected a nonempty list")
        return [parse(item, f"{plural}[{k}]") for k, item in enumerate(items)]
    if singular in cfg:
        return [parse(cfg[singular], singular)]
    raise ConfigError(f"missing {singular!r} (or {plural!r}) section")


def load_config(path: str, args, need_mechanism: bool = True) -> dict:
    """Read the JSON config, apply flag overrides, and build the experiment
    cells.  Raises ConfigError with a field-precise message on any problem."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed JSON at byte {e.pos}: {e.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("top level: expected a JSON object")

    flags = cfg.get("flags", {})
    if not isinstance(flags, dict):
        raise ConfigError("flags: expected an object")
    default_complete = bool(flags.get("complete", cfg.get("complete", False)))
    if getattr(args, "complete", False):
        default_complete = True

    instances = _parse_many(cfg, "instance", "instances", _parse_instance)
    dists = _parse_many(cfg, "distribution", "distributions", _parse_distribution)
    if need_mechanism or "mechanism" in cfg or "mechanisms" in cfg:
        mechs = _parse_many(
            cfg, "mechanism", "mechanisms", lambda c, w: _parse_mechanism(c, w, default_complete)
        )
    else:
        mechs = []

    trials = _as_int(cfg.get("trials", 10000), "trials", minimum=1)
    if getattr(args, "trials", None) is not None:
        trials = _as_int(args.trials, "--trials", minimum=1)
    seed = _as_int(cfg.get("seed", 0), "seed", minimum=0)
    if getattr(args, "seed", None) is not None:
        seed = _as_int(args.seed, "--seed", minimum=0)
    output = cfg.get("output")
    if getattr(args, "out", None) is not None:
        output = args.out
    if output is None:
        raise ConfigError("missing output path (config 'output' or --out)")

    return {
        "instances": instances,
        "distributions": dists,
        "mechanisms": mechs,
        "trials": trials,
        "seed": seed,
        "output": str(output),
        "emit_probs": bool(flags.get("emit_probs", False)),
        "emit_curve": bool(flags.get("emit_curve", False)),
    }


# --- q_exact helper -------------------------------------------------------------


def _q_exact_per_agent(mech: MechanismSpec, inst: Instance) -> list[float]:
    if mech.kind in ("rs", "secretary-rs"):
        return [analytics.rs_q_exact(inst, i) for i in range(inst.n)]
    if mech.kind == "rsbs":
        q = analytics.rsbs_q_exact(inst)
        return [q] * inst.n
    if mech.kind == "hql":
        q = analytics.hql_q(inst)
        return [q] * inst.n
    order = mech.order if mech.order is not None else tuple(range(inst.n))
    return [analytics.serial_dictator_q_exact(inst, order, i) for i in range(inst.n)]


# --- commands --------------------------------------------------------------------


def _write_probs_csv(path: str, mech: MechanismSpec, inst: Instance, report) -> None:
    q_exact = _q_exact_per_agent(mech, inst)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["agent", "rank", "q_hat", "ci_half_width", "q_exact"])
        for i in range(inst.n):
            for t in range(inst.quotas[i]):
                w.writerow(
                    [
                        i,
                        t + 1,
                        _fmt(float(report.q_hat[i][t])),
                        _fmt(float(report.half_width[i][t])),
                        _fmt(q_exact[i]),
                    ]
                )


def _write_curve_csv(path: str, points: int) -> tuple[float, float]:
    best_x, best_bound = 1.0, 1.0
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["x", "bound"])
        for k in range(1, points + 1):
            x = k / points
            point = analytics.distortion_gap_curve(x)
            if point.bound > best_bound:
                best_x, best_bound = point.x, point.bound
            w.writerow([_fmt(point.x), _fmt(point.bound)])
        f.write(f"# max,{_fmt(best_bound)},x,{_fmt(best_x)}\n")
    return best_x, best_bound


def cmd_run(args) -> int:
    cfg = load_config(args.config, args)
    rows = []
    for inst, mech, dist in product(cfg["instances"], cfg["mechanisms"], cfg["distributions"]):
        rep = estimator.estimate_distortion(mech, dist, inst, cfg["trials"], cfg["seed"])
        benchmark = analytics.benchmark_lower_bound(inst)
        rows.append(
            [
                inst.n,
                inst.m,
                _quota_label(inst),
                mech.label(),
                dist.label(),
                cfg["trials"],
                cfg["seed"],
                _fmt(rep.mean_opt),
                _fmt(rep.mean_sw),
                _fmt(rep.distortion_estimate),
                _fmt(rep.stderr_ratio),
                _fmt(benchmark),
                _fmt(rep.distortion_estimate / benchmark),
            ]
        )
    with open(cfg["output"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            [
                "n",
                "m",
                "quotas",
                "mechanism",
                "distribution",
                "trials",
                "seed",
                "mean_opt",
                "mean_sw",
                "distortion",
                "stderr",
                "benchmark_lb",
                "gap_ratio",
            ]
        )
        w.writerows(rows)
    if cfg["emit_probs"]:
        inst, mech, dist = cfg["instances"][0], cfg["mechanisms"][0], cfg["distributions"][0]
        rep = estimator.estimate_assignment_probs(mech, dist, inst, cfg["trials"], cfg["seed"])
        _write_probs_csv(cfg["output"] + ".probs.csv", mech, inst, rep)
    if cfg["emit_curve"]:
        _write_curve_csv(cfg["output"] + ".curve.csv", 10000)
    return 0


def cmd_probs(args) -> int:
    cfg = load_config(args.config, args)
    cells = len(cfg["instances"]) * len(cfg["mechanisms"]) * len(cfg["distributions"])
    if cells != 1:
        raise ConfigError("probs needs exactly one (instance, mechanism, distribution) cell")
    inst, mech, dist = cfg["instances"][0], cfg["mechanisms"][0], cfg["distributions"][0]
    rep = estimator.estimate_assignment_probs(mech, dist, inst, cfg["trials"], cfg["seed"])
    _write_probs_csv(cfg["output"], mech, inst, rep)
    return 0


def cmd_curve(args) -> int:
    if args.points < 2:
        print("error: --points must be at least 2", file=sys.stderr)
        return 2
    _write_curve_csv(args.out, args.points)
    return 0


def cmd_optcheck(args) -> int:
    if args.max_m > 8:
        print("error: --max-m is capped at 8 (enumeration bound)", file=sys.stderr)
        return 2
    if args.max_m < 1:
        print("error: --max-m must be positive", file=sys.stderr)
        return 2
    gen = RandomStream(args.seed).generator()
    spec = DistributionSpec.iid_uniform01()
    for case in range(args.cases):
        m = int(gen.integers(1, args.max_m + 1))
        n = int(gen.integers(1, m + 1))
        if n == 1:
            quotas = (m,)
        else:
            cuts = np.sort(gen.choice(m - 1, size=n - 1, replace=False)) + 1
            bounds = np.concatenate(([0], cuts, [m]))
            quotas = tuple(int(b) for b in np.diff(bounds))
        inst = Instance(quotas)
        profile = sample_profile(spec, inst, gen)
        solved = optimal_matching(inst, profile).value
        brute = brute_force_opt(inst, profile)
        if abs(solved - brute) > OPTCHECK_TOL:
            print(
                f"oracle mismatch on case {case}: quotas={_quota_label(inst)} "
                f"seed={args.seed} solver={solved!r} brute={brute!r}",
                file=sys.stderr,
            )
            return 3
    print(f"optcheck: {args.cases} cases agreed within {OPTCHECK_TOL:g}")
    return 0


def cmd_ufaudit(args) -> int:
    cfg = load_config(args.config, args, need_mechanism=False)
    if len(cfg["instances"]) != 1 or len(cfg["distributions"]) != 1:
        raise ConfigError("ufaudit needs exactly one instance and one distribution")
    inst, dist = cfg["instances"][0], cfg["distributions"][0]
    report = uf_audit(dist, inst, cfg["trials"], RandomStream(cfg["seed"]))
    with open(cfg["output"], "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["agent", "subset", "observed", "expected", "frequency", "chi2", "dof", "p_value"])
        for audit in report.per_agent:
            for subset, count in zip(audit.subsets, audit.counts):
                w.writerow(
                    [
                        audit.agent,
                        "|".join(str(g) for g in subset),
                        int(count),
                        _fmt(audit.expected),
                        _fmt(int(count) / report.trials),
                        _fmt(audit.chi2_stat),
                        audit.dof,
                        _fmt(audit.p_value),
                    ]
                )
    print(f"ufaudit: min p-value {report.min_p_value():.6g} over {inst.n} agents")
    return 0


# --- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ordmatch",
        description="Ordinal b-matching mechanism experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_command(name: str, func, help_text: str):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="JSON experiment config")
        p.add_argument("--trials", type=int, default=None, help="override config trials")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override config output path")
        p.add_argument("--complete", action="store_true", help="force the quota-filling post-pass")
        p.set_defaults(func=func)
        return p

    add_config_command("run", cmd_run, "estimate distortion for each config cell, write CSV")
    add_config_command("probs", cmd_probs, "estimate per-(agent, rank) assignment probabilities")
    add_config_command("ufaudit", cmd_ufaudit, "audit a distribution's unbiased-favorites property")

    p_curve = sub.add_parser("curve", help="write the distortion-gap ceiling curve")
    p_curve.add_argument("--points", type=int, default=10000, help="grid points on (0, 1]")
    p_curve.add_argument("--out", required=True, help="output CSV path")
    p_curve.set_defaults(func=cmd_curve)

    p_opt = sub.add_parser("optcheck", help="cross-check the assignment solver against enumeration")
    p_opt.add_argument("--max-m", type=int, default=7, help="largest item count (at most 8)")
    p_opt.add_argument("--cases", type=int, default=200, help="number of random cases")
    p_opt.add_argument("--seed", type=int, default=0)
    p_opt.set_defaults(func=cmd_optcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except AssertionError as e:
        print(f"assertion failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
