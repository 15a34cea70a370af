"""Command line experiment runner.

    nscmdp run --config exp.yaml [--out DIR] [--seeds N] [--threads K] [--thin S] [--timing]
    nscmdp sweep-corruption --config exp.yaml [...]
    nscmdp validate INSTANCE [--config exp.yaml]

Exit codes: 0 success, 1 configuration error, 2 runtime or numerical error,
3 infeasible oracle.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .adversary import SequenceParameterError, corruption_report, make_sequence
from .cmdp import (Policy, StructureError, occupancy_from_policy, policy_from_occupancy,
                   validate_occupancy)
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import InfeasibleOracle, loglog_slope, oracle, trace_from_q2
from .instances import FIXTURES, InstanceFormatError, load_fixture, load_instance
from .lag_ftrl import LagFtrl, MasterConfig
from .ns_sops import NsSops
from .occupancy_lp import PolytopeSpec, feasibility_rho
from .simulate import run_learner

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_INFEASIBLE = 0, 1, 2, 3

TRACE_COLUMNS = ("episode", "algorithm", "seed", "chosen_instance", "lp_feasible",
                 "inst_reward_expected", "cum_regret", "cum_violation", "w_min", "w_argmax")
SUMMARY_COLUMNS = ("algorithm", "C", "seed", "R_T", "V_T", "slope_R", "slope_V")
SWEEP_COLUMNS = ("algorithm", "C_requested", "C", "seed", "R_T", "V_T", "slope_R", "slope_V")
TIMING_COLUMNS = ("algorithm", "C", "seed", "seconds")

INFEASIBLE_MESSAGE = ("infeasible oracle: the condition 'There exists an occupancy measure' "
                      "satisfying the averaged constraints fails")


def streams(seed: int):
    """Philox generators (environment, instance selection, feedback routing) for one seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(3)]


class FixedPolicy:
    def __init__(self, policy: Policy):
        self.policy = policy

    def act(self) -> Policy:
        return self.policy

    def observe(self, fb) -> None:
        pass


@dataclass(frozen=True)
class Job:
    cfg: ExperimentConfig
    alg: int
    seed: int
    kind: str
    params: dict
    level: float | None = None


@dataclass
class RunResult:
    label: str
    seed: int
    level: float | None
    c_total: float
    rows: list
    summary: dict
    seconds: float


def _learner(spec, inst, cfg, report, orc, rng_sel, rng_route):
    lay, alpha = inst.layout, inst.cmdp.alpha
    p = spec.params
    if spec.name == "ns_sops":
        c_hat = report.c_total if p["c_hat"] == "known" else float(p["c_hat"])
        return NsSops(lay, alpha, c_hat, cfg.delta, cfg.T, doubling=bool(p["doubling"]))
    if spec.name == "lag_ftrl":
        rho = orc.rho if p["rho"] == "oracle" else float(p["rho"])
        if rho <= 0:
            raise InfeasibleOracle("the averaged constraints have no Slater margin; "
                                   "set rho explicitly to run the master")
        mc = MasterConfig(cfg.T, cfg.delta, lay.horizon, inst.cmdp.n_constraints, lay.n_states,
                          lay.n_actions, rho, variant=p["variant"], beta_scale=float(p["beta_scale"]))
        return LagFtrl(mc, lay, alpha, rng_sel, rng_route)
    if spec.name == "uniform":
        return FixedPolicy(Policy.uniform(lay))
    return FixedPolicy(policy_from_occupancy(orc.q_star))


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def execute(job: Job) -> RunResult:
    cfg = job.cfg
    spec = cfg.algorithms[job.alg]
    inst = cfg.load_instance()
    env, sel, route = streams(job.seed)
    seq = make_sequence(job.kind, job.params, inst.reward, inst.costs, cfg.T, env)
    report = corruption_report(seq)
    orc = oracle(inst.cmdp, seq)
    learner = _learner(spec, inst, cfg, report, orc, sel, route)
    start = time.perf_counter()
    log = run_learner(inst, seq, learner, env)
    seconds = time.perf_counter() - start
    tr = trace_from_q2(log.q2, seq, inst.cmdp.alpha, orc)
    R, V = tr.cum_regret, tr.cum_violation
    T = cfg.T
    keep = [t for t in range(cfg.thin - 1, T, cfg.thin)]
    if not keep or keep[-1] != T - 1:
        keep.append(T - 1)
    rows = [(t + 1, spec.label, job.seed, int(log.chosen[t]), int(log.lp_feasible[t]),
             float(tr.inst_reward[t]), float(R[t]), float(V[t]), float(log.w_min[t]),
             int(log.w_argmax[t])) for t in keep]
    summary = {"algorithm": spec.label, "C_requested": job.level, "C": report.c_total,
               "seed": job.seed, "R_T": float(R[-1]), "V_T": float(V[-1]),
               "slope_R": loglog_slope(R), "slope_V": loglog_slope(V)}
    return RunResult(spec.label, job.seed, job.level, report.c_total, rows, summary, seconds)


def _run_jobs(jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [execute(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(execute, jobs))


def _header(cfg: ExperimentConfig, command: str, overrides: dict) -> str:
    extra = f" overrides={json.dumps(overrides, sort_keys=True)}" if overrides else ""
    return f"# config_sha256={cfg.digest} command={command}{extra}\n"


def _write_csv(path: Path, header: str, columns, rows) -> None:
    buf = io.StringIO()
    buf.write(header)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    path.write_text(buf.getvalue())


def collect(results, cfg, out: Path, command: str, overrides: dict, sweep: bool) -> None:
    """Single writer for every output file; rows keep the job order."""
    out.mkdir(parents=True, exist_ok=True)
    header = _header(cfg, command, overrides)
    cols = SWEEP_COLUMNS if sweep else SUMMARY_COLUMNS
    summary_rows = [[r.summary[c] for c in cols] for r in results]
    if sweep:
        _write_csv(out / "trace.csv", header, ("C_requested",) + TRACE_COLUMNS,
                   [(r.level,) + row for r in results for row in r.rows])
    else:
        _write_csv(out / "trace.csv", header, TRACE_COLUMNS, [row for r in results for row in r.rows])
    _write_csv(out / "summary.csv", header, cols, summary_rows)
    if not cfg.timing:
        return
    # wall-clock times vary between runs, so they stay out of the deterministic tables
    _write_csv(out / "timing.csv", header, TIMING_COLUMNS,
               [(r.label, r.c_total, r.seed, round(r.seconds, 3)) for r in results])


def _apply_overrides(cfg: ExperimentConfig, args) -> tuple[ExperimentConfig, dict]:
    over = {}
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be positive")
        cfg = replace(cfg, seeds=list(range(args.seeds)))
        over["seeds"] = args.seeds
    if args.thin is not None:
        if args.thin < 1:
            raise ConfigError("--thin must be positive")
        cfg = replace(cfg, thin=args.thin)
        over["thin"] = args.thin
    if args.timing:
        cfg = replace(cfg, timing=True)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be positive")
        cfg = replace(cfg, threads=args.threads)
    return cfg, over


def cmd_run(cfg: ExperimentConfig, out: Path, overrides: dict | None = None) -> int:
    jobs = [Job(cfg, a, s, cfg.adversary_kind, cfg.adversary_params)
            for a in range(len(cfg.algorithms)) for s in cfg.seeds]
    results = _run_jobs(jobs, cfg.threads)
    collect(results, cfg, out, "run", overrides or {}, sweep=False)
    return EXIT_OK


def sweep_jobs(cfg: ExperimentConfig, levels) -> list[Job]:
    jobs = []
    for c in levels:
        kind, params = ("stationary", {}) if c == 0 else ("budgeted", {**cfg.adversary_params, "c_target": c})
        jobs += [Job(cfg, a, s, kind, params, c) for a in range(len(cfg.algorithms)) for s in cfg.seeds]
    return jobs


def cmd_sweep_corruption(cfg: ExperimentConfig, out: Path, levels=None, overrides: dict | None = None) -> int:
    levels = cfg.corruption_levels() if levels is None else list(levels)
    if not levels:
        raise ConfigError("sweep-corruption needs a non-empty 'levels' list")
    results = _run_jobs(sweep_jobs(cfg, levels), cfg.threads)
    collect(results, cfg, out, "sweep-corruption", overrides or {}, sweep=True)
    return EXIT_OK


def cmd_validate(source: str, cfg: ExperimentConfig | None = None, stream=None) -> int:
    """Structural checks on an instance and its sequence; prints rho, OPT, C_r and C_G."""
    stream = stream or sys.stdout
    inst = load_fixture(source) if source in FIXTURES else load_instance(source)
    cmdp = inst.cmdp
    problems = []
    probe = occupancy_from_policy(cmdp, Policy.uniform(inst.layout))
    rep = validate_occupancy(probe)
    if not rep:
        problems.append(f"probe occupancy fails validation at {rep.worst} (residual {rep.max_residual:.3g})")
    back = occupancy_from_policy(cmdp, policy_from_occupancy(probe))
    if np.max(np.abs(back.q3 - probe.q3)) > 1e-9:
        problems.append("policy roundtrip does not reproduce the probe occupancy")
    T, kind, params = 1, "stationary", {}
    if cfg is not None:
        T, kind, params = cfg.T, cfg.adversary_kind, cfg.adversary_params
    seq = make_sequence(kind, params, inst.reward, inst.costs, T, streams(0)[0])
    crep = corruption_report(seq)
    orc = oracle(cmdp, seq)
    rho = feasibility_rho(PolytopeSpec.exact(cmdp), seq.avg_cost(), cmdp.alpha)
    if rho <= 0:
        problems.append(f"Slater condition fails: margin rho = {rho:.6g} <= 0")
    print(f"rho {rho:.6g}", file=stream)
    print(f"OPT {orc.opt_value:.6g}", file=stream)
    print(f"C_r {crep.c_r:.6g}", file=stream)
    print(f"C_G {crep.c_g:.6g}", file=stream)
    for p in problems:
        print(f"error: {p}", file=stream)
    return EXIT_CONFIG if problems else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nscmdp", description="Corrupted CMDP experiment runner")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "sweep-corruption"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out")
        p.add_argument("--seeds", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--timing", action="store_true", help="also write wall-clock seconds to timing.csv")
    p = sub.add_parser("validate")
    p.add_argument("instance", help="instance file or fixture name")
    p.add_argument("--config")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config) if args.config else None
            return cmd_validate(args.instance, cfg)
        cfg, over = _apply_overrides(load_config(args.config), args)
        out = Path(args.out) if args.out else cfg.resolve(cfg.out)
        if args.command == "run":
            return cmd_run(cfg, out, over)
        return cmd_sweep_corruption(cfg, out, overrides=over)
    except (ConfigError, InstanceFormatError, StructureError, SequenceParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleOracle as exc:
        print(f"{INFEASIBLE_MESSAGE}: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (RuntimeError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
