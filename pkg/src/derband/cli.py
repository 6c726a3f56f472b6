"""Command-line driver: simulate / mixing / powerflow / check subcommands.

All randomness is controlled by the configured (or ``--seed`` overridden)
master seed; nothing reads the system clock.  Output directories receive the
effective configuration alongside the data, which together with the seed
reproduces every file bit-exactly.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import filippov as fp
from .caseio import builtin_case30, parse_case
from .config import ConfigError, ExperimentConfig, effective_text, load_config, with_overrides
from .control import ControllerKind, make_controller
from .ergodics import mixing_sweep, write_mixing_csv, write_wasserstein_trace_csv
from .loop import run_ensemble_experiment
from .powerflow import PfOptions, solve_power_flow


def _out_dir(cfg: ExperimentConfig, flag_value: str | None) -> Path:
    directory = flag_value or os.environ.get("DERBAND_OUT") or cfg.directory
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _echo_config(cfg: ExperimentConfig, out: Path) -> None:
    (out / "effective.cfg").write_text(effective_text(cfg))


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = with_overrides(cfg, seed=args.seed)
    out = _out_dir(cfg, args.out)
    _echo_config(cfg, out)
    runset = run_ensemble_experiment(cfg.to_sim_config())
    for (rep, label), traj in sorted(runset.trajectories.items()):
        name = f"trajectory_r{rep:03d}_{label}.csv"
        traj.to_csv(out / name)
        status = "ok" if traj.valid else f"failed@{traj.failed_step}"
        print(f"{name},steps={len(traj)},status={status}")
    print(f"reference_mw,{runset.resolved.r!r}")
    return 0


def _cmd_mixing(args) -> int:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = with_overrides(cfg, seed=args.seed)
    if args.deadbands:
        fractions = tuple(float(t) for t in args.deadbands.split(","))
        cfg = with_overrides(cfg, deadband_fractions=fractions)
    out = _out_dir(cfg, args.out)
    _echo_config(cfg, out)
    reports = mixing_sweep(
        cfg.to_sim_config(), cfg.deadband_fractions,
        threshold_fraction=cfg.threshold_fraction,
    )
    write_mixing_csv(reports, out / "mixing.csv")
    write_wasserstein_trace_csv(reports, out / "wasserstein_trace.csv")
    for rep in reports:
        mix = rep.mixing_time if rep.mixing_time is not None else "not_mixed"
        print(f"deadband={rep.deadband_fraction},mixing_time={mix}")
    return 0


def _cmd_powerflow(args) -> int:
    if args.case == "case30":
        case = builtin_case30()
    else:
        path = Path(args.case)
        case = parse_case(path.read_text(), name=path.stem)
    opts = PfOptions(tol=args.tol, max_iter=args.max_iter)
    sol = solve_power_flow(case, opts)
    print("bus,v_mag,v_ang_deg,p_inj_mw,q_inj_mvar")
    for i, bus in enumerate(case.buses):
        row = [sol.v_mag[i], np.rad2deg(sol.v_ang[i]), sol.p_inj[i], sol.q_inj[i]]
        print(f"{bus.id}," + ",".join(repr(float(v)) for v in row))
    print(f"converged,{str(sol.converged).lower()}")
    print(f"iterations,{sol.iterations}")
    print(f"total_losses_mw,{sol.losses!r}")
    return 0 if sol.converged else 1


# ---------------------------------------------------------------------------
# check subcommand: scenario-driven runs of the set-valued checkers

def _scenario(path: str) -> dict[str, str]:
    import configparser

    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.read_string(Path(path).read_text())
    if "scenario" not in parser:
        raise ConfigError("scenario file needs a [scenario] section")
    return dict(parser["scenario"])


def _registry_map(spec: dict[str, str]) -> fp.PiecewiseMap:
    name = spec.get("map", "deadband")
    if name == "deadband":
        return fp.deadband_edge_map(float(spec.get("delta", "1.0")))
    if name == "affine":
        return fp.affine_split_map(
            float(spec.get("a_minus", "0.5")), float(spec.get("b_minus", "0.0")),
            float(spec.get("a_plus", "0.5")), float(spec.get("b_plus", "1.0")),
        )
    if name == "shift":
        return fp.shift_map(float(spec.get("c", "0.37")))
    if name == "collapse":
        return fp.collapse_map(float(spec.get("target", "0.5")))
    raise ConfigError(f"unknown map preset {name!r}")


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _cmd_check(args) -> int:
    spec = _scenario(args.scenario)
    rng = np.random.default_rng(args.seed)
    kind = args.kind

    if kind == "convexify":
        pmap = _registry_map(spec)
        print("x,kind,lo,hi")
        for x in _floats(spec.get("points", "0.0")):
            value = fp.convexify(pmap, x)
            if value.is_singleton:
                print(f"{x!r},point,{float(value.a[0])!r},{float(value.a[0])!r}")
            else:
                print(f"{x!r},segment,{float(value.a[0])!r},{float(value.b[0])!r}")
        return 0

    if kind == "measure":
        pmap = _registry_map(spec)
        measure = fp.uniform_measure(float(spec.get("lo", "0.0")),
                                     float(spec.get("hi", "1.0")))
        report = fp.check_measure_preservation(
            pmap, measure,
            n_sets=int(spec.get("n_sets", "8")),
            n_samples=int(spec.get("n_samples", "100000")),
            k=int(spec.get("k", "1")),
            rng=rng,
        )
        print("set_lo,set_hi,mu_set,mu_image,band,passed")
        for rec in report.records:
            print(f"{rec.set_lo!r},{rec.set_hi!r},{rec.mu_set!r},"
                  f"{rec.mu_image!r},{rec.band!r},{rec.passed}")
        print(f"result,{'pass' if report.passed else 'fail'}")
        return 0

    if kind == "matching":
        pmap = _registry_map(spec)
        report = fp.check_matching_condition(
            pmap,
            alpha_minus=float(spec.get("alpha_minus", "1.0")),
            alpha_plus=float(spec.get("alpha_plus", "1.0")),
            boundary_points=_floats(spec["points"]),
            tol=float(spec.get("tol", "1e-9")),
        )
        print("point,residual")
        for rec in report.records:
            print(f"{rec.point[0]!r},{rec.residual!r}")
        print(f"result,{'pass' if report.passed else 'fail'}")
        return 0

    if kind == "contraction":
        family = spec.get("family", "affine")
        if family == "affine":
            slopes = _floats(spec.get("slopes", "0.5,0.5"))
            offsets = _floats(spec.get("offsets", "0.0,1.0"))
            maps = [
                (lambda a, b: (lambda x: a * x + b))(a, b)
                for a, b in zip(slopes, offsets)
            ]
            weights = np.asarray(_floats(spec.get("probs", "0.5,0.5")))
            probs = lambda pi: weights
        elif family == "binary_agents":
            maps, probs = fp.binary_agent_family(int(spec.get("n_agents", "4")))
        else:
            raise ConfigError(f"unknown family {family!r}")
        box_lo = _floats(spec.get("box_lo", "-1.0"))
        box_hi = _floats(spec.get("box_hi", "1.0"))
        report = fp.check_average_contraction(
            maps, probs,
            signals=_floats(spec.get("signals", "0.0")),
            sample_pairs=int(spec.get("sample_pairs", "256")),
            box=(np.array(box_lo), np.array(box_hi)),
            rng=rng,
            margin=float(spec.get("margin", "0.0")),
        )
        print(f"ratio_max,{report.ratio_max!r}")
        print(f"result,{'pass' if report.passed else 'fail'}")
        return 0

    if kind == "iss":
        controller = make_controller(
            ControllerKind(spec.get("kind", "lag")),
            kp=float(spec.get("kp", "0.05")),
            ki=float(spec.get("ki", "0.01")),
        )
        steps = int(spec.get("steps", "200"))
        inputs = (_floats(spec["inputs"]) if "inputs" in spec
                  else [0.0] * steps)
        report = fp.probe_incremental_iss(
            controller, inputs,
            xc_a=float(spec.get("xc_a", "0.0")),
            xc_b=float(spec.get("xc_b", "10.0")),
        )
        print(f"rho,{report.rho!r}")
        print(f"verdict,{report.verdict}")
        return 0

    raise ConfigError(f"unknown check kind {kind!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="derband",
        description="DER load-aggregation simulator and analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run closed-loop trajectories")
    p_sim.add_argument("--config", help="preset name (case-a, case-b) or path")
    p_sim.add_argument("--seed", type=int, help="master seed override")
    p_sim.add_argument("--out", help="output directory")
    p_sim.set_defaults(func=_cmd_simulate)

    p_mix = sub.add_parser("mixing", help="mixing time vs deadband sweep")
    p_mix.add_argument("--config", help="preset name or path")
    p_mix.add_argument("--deadbands", help="comma list of deadband fractions")
    p_mix.add_argument("--seed", type=int, help="master seed override")
    p_mix.add_argument("--out", help="output directory")
    p_mix.set_defaults(func=_cmd_mixing)

    p_pf = sub.add_parser("powerflow", help="solve one case and print the solution")
    p_pf.add_argument("--case", required=True, help="'case30' or a case file path")
    p_pf.add_argument("--tol", type=float, default=1e-8)
    p_pf.add_argument("--max-iter", type=int, default=50)
    p_pf.set_defaults(func=_cmd_powerflow)

    p_chk = sub.add_parser("check", help="run a set-valued checker scenario")
    p_chk.add_argument("kind", choices=["convexify", "measure", "matching",
                                        "contraction", "iss"])
    p_chk.add_argument("--scenario", required=True, help="scenario file path")
    p_chk.add_argument("--seed", type=int, default=0)
    p_chk.set_defaults(func=_cmd_check)

    return parser


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))
