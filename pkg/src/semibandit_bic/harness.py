"""Experiment orchestration: constants, runs, verification and sweeps.

Every command returns a :class:`CommandResult` holding its data artifacts
as bytes; :func:`write_outputs` persists them together with the resolved
config and a manifest of SHA-256 hashes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ExperimentConfig, parse_config, resolved, set_dotted
from .core import (
    Arm,
    ArmFamily,
    Instance,
    ProductPrior,
    RngStream,
    TwoArmJointPrior,
    build_family,
    canonicalize,
    pull,
    singletons,
)
from .errors import (
    BudgetExceeded,
    ConfigError,
    DegenerateConstants,
    DegenerateFamily,
    DegeneratePrior,
    NotBeta,
    NotEncodable,
    NotFixedSize,
    SemibanditError,
    ZeroQpun,
)
from .mdp import HhBootstrap, encode_family, estimate_hh_constants, hidden_hallucination
from .sequence import HiddenExplorationAlgo, corollary_n0, property_p_constants
from .thompson import (
    ExogenousBootstrap,
    ThompsonSampling,
    TwoArmThompson,
    UniformBaseline,
    check_prior_assumptions,
    estimate_ts_constants,
    run_composite,
    run_two_arm_correlated,
)
from .verify import CSV_HEADER, bic_margin_exact, bic_margin_mc, property_p_empirical

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3
GRID_CAP = 10**4

# stream ids reserved for non-replicate randomness
CONSTANTS_STREAM = 2**32
VERIFY_STREAM = 2**32 + 1


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------


@dataclass
class Setup:
    cfg: ExperimentConfig
    prior: object  # ProductPrior | TwoArmJointPrior
    family: ArmFamily
    perm: list

    @property
    def is_joint(self) -> bool:
        return isinstance(self.prior, TwoArmJointPrior)


def build_setup(cfg: ExperimentConfig) -> Setup:
    p = cfg.prior
    try:
        if p.joint is not None:
            joint = TwoArmJointPrior.from_pairs(p.joint.pairs, p.joint.sizes)
            return Setup(cfg, joint, singletons(2), [0, 1])
        prior = ProductPrior.beta(p.beta) if p.beta is not None else ProductPrior(tuple(p.atoms))
        family = build_family(cfg.family.to_spec())
    except SemibanditError as e:
        raise ConfigError(f"prior/family: {e}") from e
    except (KeyError, TypeError) as e:
        raise ConfigError(f"prior/family: malformed field {e}") from e
    if family.d != prior.d:
        raise ConfigError(f"family.d={family.d} but the prior has {prior.d} atoms")
    perm = list(range(prior.d))
    if cfg.canonicalize:
        prior, family, perm = canonicalize(prior, family)
    return Setup(cfg, prior, family, perm)


# ---------------------------------------------------------------------------
# Serialisation helpers
# ---------------------------------------------------------------------------


def _default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Fraction):
        return str(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def dumps(obj) -> bytes:
    return (json.dumps(obj, sort_keys=True, indent=2, default=_default) + "\n").encode()


def csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue().encode()


def _num(x) -> str:
    return repr(float(x))


@dataclass
class CommandResult:
    files: dict = field(default_factory=dict)  # name -> bytes
    exit_code: int = EXIT_OK
    summary: dict = field(default_factory=dict)


def write_outputs(cfg: ExperimentConfig, result: CommandResult, out: Path, command: str,
                  started: float, stream_ids=None) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    files = dict(result.files)
    files["config.resolved.json"] = dumps(resolved(cfg))
    for name, data in files.items():
        (out / name).write_bytes(data)
    manifest = {
        "command": command,
        "config_hash": hashlib.sha256(files["config.resolved.json"]).hexdigest(),
        "seed": cfg.seed,
        "stream_ids": stream_ids,
        "files": {name: hashlib.sha256(data).hexdigest() for name, data in sorted(files.items())},
        "exit_code": result.exit_code,
        "version": __version__,
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    (out / "manifest.json").write_bytes(dumps(manifest))
    return out / "manifest.json"


def atoms_legend(setup: Setup) -> dict:
    legend = {"atom_order": setup.perm,
              "note": "atom i in outputs is atom atom_order[i] of the input config"}
    if setup.family.enumerable:
        legend["arms"] = {a.hex(): [setup.perm[j] for j in a.atoms] for a in setup.family.arms()}
    return legend


# ---------------------------------------------------------------------------
# constants
# ---------------------------------------------------------------------------


def _guard(fn):
    try:
        return fn()
    except (DegeneratePrior, DegenerateFamily, ZeroQpun, DegenerateConstants) as e:
        return {"degenerate": True, "error": f"{type(e).__name__}: {e}"}
    except (NotBeta, NotEncodable, NotFixedSize) as e:
        return {"skipped": True, "error": f"{type(e).__name__}: {e}"}


def compute_constants(setup: Setup) -> dict:
    cfg = setup.cfg
    out = {}
    if setup.is_joint:
        return {"note": "constants are defined for product priors only"}
    prior, family = setup.prior, setup.family
    if "ts" in cfg.constants.kinds:
        def ts():
            c = estimate_ts_constants(prior, family, cfg.mc_samples, cfg.c_ts,
                                      RngStream(cfg.seed, CONSTANTS_STREAM).gen, seed=cfg.seed)
            d = c.to_dict()
            d["degenerate"] = False
            d["assumptions"] = check_prior_assumptions(
                prior, family, cfg.tau, cfg.alpha_exponent, cfg.mc_samples,
                RngStream(cfg.seed, (CONSTANTS_STREAM, 1)).gen)
            return d
        out["ts"] = _guard(ts)
    if "property_p" in cfg.constants.kinds:
        def pp():
            r = property_p_constants(prior, family, cfg.constants.variant)
            d = r.to_dict()
            if cfg.constants.corollary:
                c = cfg.constants.corollary
                d["n0_corollary"] = corollary_n0(prior, family, c["c0"], c["c"], c["c_prime"],
                                                 general=r.variant == "General", report=r)
            return d
        out["property_p"] = _guard(pp)
    if "hh" in cfg.constants.kinds:
        def hh():
            g = encode_family(family)
            c = estimate_hh_constants(prior, g, cfg.delta, cfg.mc_samples, cfg.c1, cfg.c2,
                                      n_ph=cfg.n_ph)
            d = c.to_dict()
            d["graph"] = g.to_json()
            d["degenerate"] = False
            return d
        out["hh"] = _guard(hh)
    return out


def cmd_constants(cfg: ExperimentConfig, threads: int = 1) -> CommandResult:
    setup = build_setup(cfg)
    data = compute_constants(setup)
    return CommandResult({"constants.json": dumps(data), "atoms.json": dumps(atoms_legend(setup))},
                         EXIT_OK, data)


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _n_ts(setup: Setup) -> int:
    cfg = setup.cfg
    c = estimate_ts_constants(setup.prior, setup.family, cfg.mc_samples, cfg.c_ts,
                              RngStream(cfg.seed, CONSTANTS_STREAM).gen)
    return int(c.n_ts)


def _he_algo(setup: Setup, N=None, L=None, variant="auto") -> HiddenExplorationAlgo:
    report = property_p_constants(setup.prior, setup.family, variant)
    # logs are written round by round, so keep detail up to the log budget
    return HiddenExplorationAlgo.from_report(setup.prior, setup.family, report, N, L,
                                             detail_limit=setup.cfg.max_log_rounds)


def _hh_parts(setup: Setup):
    cfg = setup.cfg
    g = encode_family(setup.family)
    c = estimate_hh_constants(setup.prior, g, cfg.delta, cfg.mc_samples, cfg.c1, cfg.c2, n_ph=cfg.n_ph)
    return g, c


def make_bootstrap(setup: Setup):
    b = setup.cfg.algorithm.bootstrap
    if b is None or b.kind == "exogenous":
        n = b.n if b is not None and b.n is not None else _n_ts(setup)
        return ExogenousBootstrap(n)
    if b.kind == "hidden-exploration":
        return _he_algo(setup, b.N, b.L, setup.cfg.algorithm.variant)
    g, c = _hh_parts(setup)
    return HhBootstrap(setup.prior, g, c, b.n_repeats if b.n_repeats else _n_ts(setup),
                       detail_limit=setup.cfg.max_log_rounds)


@dataclass
class Replicate:
    theta: np.ndarray
    rows: list  # (round, arm_mask_hex, reward, label, exploration)
    gaps: np.ndarray


def _log_rows(log, theta, best):
    rows, gaps = [], []
    for t, arm, rewards, label, expl in log.rows():
        rows.append((t, arm.hex(), sum(rewards.values()), label, expl))
        gaps.append(best - float(theta[list(arm.atoms)].sum()))
    return rows, gaps


def _check_budget(total: int, cfg: ExperimentConfig):
    if total > cfg.max_log_rounds:
        raise BudgetExceeded(f"{total} rounds per replicate exceed max_log_rounds={cfg.max_log_rounds}")


def run_replicate(setup: Setup, handle, stream: RngStream) -> Replicate:
    cfg = setup.cfg
    kind = cfg.algorithm.kind
    gen = stream.gen
    if kind == "two-arm-correlated":
        _check_budget(cfg.horizon, cfg)
        res = run_two_arm_correlated(setup.prior, cfg.horizon, gen)
        best = float(res.theta.max())
        rows = [(t + 1, Arm(1 << int(a)).hex(), int(r), "ts", False)
                for t, (a, r) in enumerate(zip(res.arms, res.rewards))]
        gaps = best - res.theta[res.arms]
        return Replicate(res.theta, rows, np.asarray(gaps, dtype=float))
    prior, family = setup.prior, setup.family
    inst = Instance(prior.sample(gen, 1)[0])
    theta = inst.theta
    best = float((family.incidence @ theta).max())
    if kind == "uniform-baseline":
        _check_budget(cfg.horizon, cfg)
        arms = family.arms()
        rows, gaps = [], []
        for t in range(1, cfg.horizon + 1):
            arm = arms[int(gen.integers(len(arms)))]
            r = pull(inst, arm, gen)
            rows.append((t, arm.hex(), sum(r.values()), "uniform", False))
            gaps.append(best - inst.mu(arm))
        return Replicate(theta, rows, np.asarray(gaps))
    if kind == "hidden-exploration":
        _check_budget(handle.T0, cfg)
        res = handle.simulate_run(inst, gen)
        rows, gaps = _log_rows(res.log, theta, best)
        return Replicate(theta, rows, np.asarray(gaps))
    if kind == "hidden-hallucination":
        g, c = handle
        _check_budget(cfg.horizon, cfg)
        res = hidden_hallucination(prior, g, c, gen, inst, max_rounds=cfg.horizon, stop_at_coverage=False,
                                   detail_limit=cfg.max_log_rounds)
        rows, gaps = _log_rows(res.log, theta, best)
        return Replicate(theta, rows, np.asarray(gaps))
    # ts / composite
    _check_budget(handle.T0 + cfg.horizon, cfg)
    comp = run_composite(handle, family, prior, cfg.horizon, gen, inst)
    rows, gaps = _log_rows(comp.bootstrap_log, theta, best)
    for (t, arm, rewards), gap in zip(comp.history.round_log, comp.gaps):
        rows.append((t, arm.hex(), sum(rewards.values()), "ts", False))
        gaps.append(gap)
    return Replicate(theta, rows, np.asarray(gaps))


def make_run_handle(setup: Setup):
    kind = setup.cfg.algorithm.kind
    a = setup.cfg.algorithm
    if kind == "ts":
        return ExogenousBootstrap(0)
    if kind == "composite":
        return make_bootstrap(setup)
    if kind == "hidden-exploration":
        return _he_algo(setup, a.N, a.L, a.variant)
    if kind == "hidden-hallucination":
        return _hh_parts(setup)
    return None


def run_all(setup: Setup, threads: int = 1) -> list[Replicate]:
    handle = make_run_handle(setup)

    def one(r):
        return run_replicate(setup, handle, RngStream(setup.cfg.seed, r))

    ids = range(setup.cfg.replicates)
    if threads <= 1:
        return [one(r) for r in ids]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, ids))  # collected in replicate order


def regret_table(reps: list[Replicate]) -> tuple[np.ndarray, np.ndarray]:
    T = min(len(r.gaps) for r in reps)
    cum = np.array([np.cumsum(r.gaps[:T]) for r in reps])
    mean = cum.mean(axis=0) if T else np.zeros(0)
    se = cum.std(axis=0, ddof=1) / math.sqrt(len(reps)) if len(reps) > 1 else np.zeros(T)
    return mean, se


def cmd_run(cfg: ExperimentConfig, threads: int = 1) -> CommandResult:
    setup = build_setup(cfg)
    reps = run_all(setup, threads)
    rows = []
    for k, rep in enumerate(reps):
        for t, h, r, label, expl in rep.rows:
            rows.append([k, t, h, r, label, int(bool(expl))])
    mean, se = regret_table(reps)
    regret_rows = [[t + 1, _num(m), _num(s)] for t, (m, s) in enumerate(zip(mean, se))]
    files = {
        "rounds.csv": csv_bytes(["replicate", "round", "arm", "reward", "phase_label", "is_exploration"], rows),
        "regret.csv": csv_bytes(["round", "mean_regret", "stderr"], regret_rows),
        "atoms.json": dumps(atoms_legend(setup)),
    }
    summary = {
        "final_mean_regret": float(mean[-1]) if len(mean) else 0.0,
        "final_stderr": float(se[-1]) if len(se) else 0.0,
        "rounds_per_replicate": len(mean),
    }
    return CommandResult(files, EXIT_OK, summary)


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def make_verify_algorithm(setup: Setup):
    """(algorithm, T0 offset) for margin checks."""
    a = setup.cfg.algorithm
    if a.kind == "two-arm-correlated":
        return TwoArmThompson(setup.prior), 0
    if a.kind == "ts":
        return ThompsonSampling(setup.prior, setup.family), 0
    if a.kind == "uniform-baseline":
        return UniformBaseline(setup.prior, setup.family), 0
    if a.kind == "hidden-exploration":
        return _he_algo(setup, a.N, a.L, a.variant), 0
    if a.kind == "composite" and (a.bootstrap is None or a.bootstrap.kind == "exogenous"):
        b = make_bootstrap(setup)
        return ThompsonSampling(setup.prior, setup.family, exogenous_n=b.n), 0
    raise ConfigError(f"verify does not support algorithm {a.kind!r} with this bootstrap")


def cmd_verify(cfg: ExperimentConfig, threads: int = 1) -> CommandResult:
    setup = build_setup(cfg)
    v = cfg.verify
    algo, offset = make_verify_algorithm(setup)
    if not v.rounds:
        raise ConfigError("verify.rounds: empty rounds set")
    rounds = [r + offset if v.relative_to_T0 else r for r in v.rounds]
    if min(rounds) < 1:
        raise ConfigError("verify.rounds: rounds start at 1")
    checks = {}
    csv_rows = []
    if v.mc:
        tables = bic_margin_mc(algo, setup.prior, setup.family, rounds, v.replicates,
                               rng=cfg.seed, chunk=cfg.chunk, threads=threads)
        for tab in tables:
            csv_rows.extend(tab.csv_rows())
        checks["bic_mc"] = {
            "pass": all(t.passes() for t in tables),
            "min_slack": min(t.min_slack() for t in tables),
            "low_support_rows": sum(r.status == "LowSupport" for t in tables for r in t.rows),
        }
    if v.exact:
        tables = [bic_margin_exact(algo, setup.prior, setup.family, t, cfg.budget) for t in rounds]
        for tab in tables:
            csv_rows.extend(tab.csv_rows())
        checks["bic_exact"] = {
            "pass": all(t.passes() for t in tables),
            "min_margin": min(t.min_slack() for t in tables),
            "min_margin_by_round": {str(t.round): t.min_slack() for t in tables},
        }
    if v.property_p:
        if not isinstance(algo, HiddenExplorationAlgo):
            raise ConfigError("verify.property_p needs algorithm.kind = hidden-exploration")
        report = property_p_constants(setup.prior, setup.family, cfg.algorithm.variant)
        res = property_p_empirical(setup.prior, setup.family, report, algo.N, v.property_p_replicates,
                                   RngStream(cfg.seed, VERIFY_STREAM).gen)
        checks["property_p"] = {"pass": all(r["pass"] for r in res), "phases": res}
    ok = all(c["pass"] for c in checks.values())
    summary = {"pass": ok, "checks": checks, "rounds": rounds}
    files = {
        "bic_margins.csv": csv_bytes(CSV_HEADER, csv_rows),
        "verify_summary.json": dumps(summary),
        "atoms.json": dumps(atoms_legend(setup)),
    }
    return CommandResult(files, EXIT_OK if ok else EXIT_VERIFY, summary)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _flatten(prefix, obj, out):
    if isinstance(obj, dict):
        for k in sorted(obj):
            _flatten(f"{prefix}.{k}" if prefix else str(k), obj[k], out)
    elif isinstance(obj, bool):
        out.append((prefix, int(obj)))
    elif isinstance(obj, (int, float, np.integer, np.floating)) and obj is not None:
        out.append((prefix, obj))


def cmd_sweep(cfg: ExperimentConfig, raw: dict, threads: int = 1) -> CommandResult:
    if cfg.sweep is None or not cfg.sweep.grid:
        raise ConfigError("sweep.grid: no grid given")
    keys = sorted(cfg.sweep.grid)
    size = math.prod(len(cfg.sweep.grid[k]) for k in keys)
    if size > GRID_CAP:
        raise ConfigError(f"sweep.grid: {size} points exceed the cap of {GRID_CAP}")
    base = {k: v for k, v in raw.items() if k != "sweep"}
    rows = []
    for values in itertools.product(*(cfg.sweep.grid[k] for k in keys)):
        point = base
        for k, val in zip(keys, values):
            paths = k.split("+")
            if len(paths) == 1:
                point = set_dotted(point, k, val)
                continue
            # linked knobs: one grid value sets several paths together
            if not isinstance(val, list) or len(val) != len(paths):
                raise ConfigError(f"sweep.grid.{k}: each value needs {len(paths)} entries")
            for path, v in zip(paths, val):
                point = set_dotted(point, path, v)
        sub = parse_config(point)
        if cfg.sweep.command == "constants":
            metrics = []
            _flatten("", compute_constants(build_setup(sub)), metrics)
        else:
            metrics = sorted(cmd_run(sub, threads).summary.items())
        labels = [json.dumps(v) for v in values]
        for name, value in metrics:
            rows.append(labels + [name, repr(value) if isinstance(value, float) else value])
    files = {"sweep.csv": csv_bytes(keys + ["metric", "value"], rows)}
    return CommandResult(files, EXIT_OK, {"points": size})


COMMANDS = {"constants": cmd_constants, "run": cmd_run, "verify": cmd_verify}
