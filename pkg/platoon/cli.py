"""Command-line entry point: bounds, plan, mpc, verify and plot."""

import argparse
import logging
import os
import sys

from utils import Config, execute_with_validation, print_execution_summary, save_json

from .errors import ConfigError, PlatoonError, TraceFormatError
from .harness import HDV_MODES, SCENARIO_KINDS, VERIFIERS, gen_scenario, mpc_settings, resolve_horizon
from .horizon import blended_horizon
from .maneuvers import STRATEGIES, plan, platoon_bounds
from .mpc import receding_horizon_run
from .plotting import plot_trace, trace_stem
from .traces import read_trace, replay_trace, sequence_frame, write_trace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2
REPLAY_TOL = 1e-9


def _delta1(text):
    if text == "auto":
        return text
    try:
        return float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {text!r}") from exc


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (default: $PLATOON_CONFIG or built-in defaults)")
    common.add_argument("--seed", type=int, help="first scenario seed")
    common.add_argument("--out", help="output directory (default: $PLATOON_OUTPUT_DIR or 'output')")
    common.add_argument("--samples", type=int, help="number of seeded samples")
    common.add_argument("--lambda", dest="lam", type=float, help="horizon dial between sum (0) and max (1)")
    common.add_argument("--sigma", type=float, help="spacing allowance of the zero-spacing step count")
    common.add_argument("--tol", type=float, help="terminal spacing and speed tolerance")
    common.add_argument("--delta1", type=_delta1, help="safe-distance headway coefficient or 'auto'")
    common.add_argument("--delta2", type=float, help="safe-distance speed-difference coefficient")
    common.add_argument("--workers", type=int, help="worker processes for sampling sweeps")
    common.add_argument("--verbose", action="store_true", help="log at DEBUG level")
    hdv = argparse.ArgumentParser(add_help=False)
    hdv.add_argument("--hdv-mode", choices=HDV_MODES, help="HDV motion: constant speed or Newell-shifted upstream trajectory")

    parser = argparse.ArgumentParser(prog="platoon", description="Feasibility-guaranteed platoon MPC toolkit.")
    commands = parser.add_subparsers(dest="command", required=True)

    bounds = commands.add_parser("bounds", parents=[common], help="print horizon bounds of a scenario")
    bounds.add_argument("--scenario", choices=SCENARIO_KINDS, default="EN")
    bounds.add_argument("--n", type=int, help="number of CAVs for EN scenarios")

    planner = commands.add_parser("plan", parents=[common], help="plan a single-CAV maneuver")
    planner.add_argument("--strategy", choices=STRATEGIES, default="full")
    planner.add_argument("--scenario", choices=("E1", "EE1"), help="default: EE1 for s1/full, E1 otherwise")

    mpc = commands.add_parser("mpc", parents=[common, hdv], help="run the receding-horizon controller")
    mpc.add_argument("--scenario", choices=SCENARIO_KINDS, default="EN")
    mpc.add_argument("--n", type=int, help="number of CAVs for EN scenarios")
    mpc.add_argument("--steps", type=int, help="closed-loop steps (default: experiment.rollout_steps)")
    mpc.add_argument("--horizon", type=int, help="fixed prediction horizon P")
    mpc.add_argument("--no-terminal", action="store_true", help="drop the terminal constraints")

    verify = commands.add_parser("verify", parents=[common, hdv], help="run a verification sweep")
    verify.add_argument("check", choices=sorted(VERIFIERS) + ["all"])
    verify.add_argument("--steps", type=int, help="rollout steps for lemma1")
    verify.add_argument("--n", type=int, help="number of CAVs for theorem1")

    plotter = commands.add_parser("plot", parents=[common], help="plot a trace CSV")
    plotter.add_argument("trace", help="trace CSV written by plan or mpc")
    return parser


def _overrides(args):
    overrides = {}
    mapping = (
        ("seed", "experiment.seed"),
        ("samples", "experiment.samples"),
        ("lam", "horizon.lambda"),
        ("sigma", "sigma"),
        ("delta1", "global.delta1"),
        ("delta2", "global.delta2"),
        ("workers", "experiment.workers"),
        ("n", "experiment.n_vehicles"),
        ("horizon", "horizon.prediction"),
        ("hdv_mode", "experiment.hdv_mode"),
    )
    for attr, dotted in mapping:
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    if args.tol is not None:
        overrides["experiment.tol_spacing"] = args.tol
        overrides["experiment.tol_speed"] = args.tol
    if args.command == "verify" and args.steps is not None:
        overrides["experiment.rollout_steps"] = args.steps
    if getattr(args, "no_terminal", False):
        overrides["terminal.enabled"] = False
    return overrides


def _output_dirs(args):
    dirs = Config.get_config()
    if args.out:
        dirs.update(
            output_dir=args.out,
            trace_dir=os.path.join(args.out, "traces"),
            report_dir=os.path.join(args.out, "reports"),
            plot_dir=os.path.join(args.out, "plots"),
        )
    return dirs


def _fmt(value):
    return "-" if value is None else str(value)


def cmd_bounds(args, cfg, dirs):
    scenario = gen_scenario(args.scenario, cfg.experiment.seed, cfg, n=cfg.experiment.n_vehicles)
    print(f"🚀 Horizon bounds for {args.scenario} scenario (seed {scenario.seed}, "
          f"{scenario.platoon.n_cavs} CAV(s), delta1 {scenario.gp.delta1:.6g})")
    hb = platoon_bounds(scenario.platoon, scenario.vps, scenario.gp, cfg.sigma)
    lam = cfg.horizon.lam
    blend = blended_horizon(hb, lam) if hb.bounded else None

    header = (f"{'CAV':>4} {'situation':>9} {'rho_t':>6} {'stated':>6} {'kinem':>6} "
              f"{'rho_1':>6} {'rho_2':>6} {'rho':>6} {'P_Ei':>6}")
    print(header)
    print("-" * len(header))
    for i, row in enumerate(hb.per_vehicle, start=1):
        print(f"{i:>4} {row.situation:>9} {row.rho_t:>6} {_fmt(row.rho_t_stated):>6} "
              f"{_fmt(row.rho_t_kinematic):>6} {_fmt(row.rho_1):>6} {row.rho_2:>6} "
              f"{_fmt(row.rho):>6} {_fmt(row.p_e1):>6}")
        if row.rho_1_source == "simulation":
            print(f"⚠️ CAV {i}: rho_1 formula out of domain (log argument {row.rho_1_argument:.6g}); "
                  f"simulated crossing step used")
        elif row.rho_1_source == "unavailable":
            print(f"⚠️ CAV {i}: no zero-spacing step count (log argument {row.rho_1_argument:.6g}); "
                  f"no horizon bound for this CAV")
    print("-" * len(header))
    width = len(header) - 5
    print(f"{'sum':>4} {_fmt(hb.p_en_sum):>{width}}")
    print(f"{'max':>4} {_fmt(hb.p_en_max):>{width}}")
    print(f"{'λ':>4} {_fmt(blend):>{width}}  (lambda {lam:g})")

    summary = {
        "command": "bounds",
        "scenario": scenario.to_dict(),
        "bounds": hb.to_dict(),
        "lambda": lam,
        "blended_horizon": blend,
        "config": cfg.to_dict(),
    }
    path = save_json(summary, os.path.join(dirs["report_dir"], f"bounds_{args.scenario}_seed{scenario.seed}.json"))
    print(f"💾 Bounds report saved to {path}")
    return EXIT_OK


def cmd_plan(args, cfg, dirs):
    kind = args.scenario or ("EE1" if args.strategy in ("s1", "full") else "E1")
    exp = cfg.experiment
    scenario = gen_scenario(kind, exp.seed, cfg, nominal=exp.nominal_lemmas)
    sc = scenario.single()
    print(f"🚀 Planning '{args.strategy}' for {kind} scenario (seed {scenario.seed}): "
          f"v0 {sc.v0:.4g} m/s, v1 {sc.v1_0:.4g} m/s, gap {sc.s1_0:.4g} m")
    sequence = plan(sc, args.strategy, cfg.sigma, exp.tol_spacing, exp.tol_speed)
    frame = sequence_frame(sequence)
    replay_error = replay_trace(frame, sc.gp.tau)
    z_end, speed_end = sequence.terminal_errors()

    trace_path = write_trace(frame, os.path.join(dirs["trace_dir"], f"plan_{args.strategy}_{kind}_seed{scenario.seed}.csv"))
    print(f"💾 Trace saved to {trace_path}")
    summary = {
        "command": "plan",
        "strategy": args.strategy,
        "scenario": scenario.to_dict(),
        "steps": len(sequence),
        "terminal_spacing_error": z_end,
        "terminal_speed_error": speed_end,
        "replay_error": replay_error,
        "meta": sequence.meta,
        "trace": trace_path,
        "config": cfg.to_dict(),
    }
    path = save_json(summary, os.path.join(dirs["report_dir"], f"plan_{args.strategy}_{kind}_seed{scenario.seed}.json"))
    print(f"💾 Plan summary saved to {path}")
    passed = replay_error <= REPLAY_TOL
    print_execution_summary(
        "plan",
        {"steps": len(sequence), "terminal_spacing_error": z_end, "terminal_speed_error": speed_end,
         "replay_error": replay_error},
        passed,
    )
    return EXIT_OK if passed else EXIT_VIOLATION


def _mpc_horizon(cfg, scenario):
    if cfg.horizon.prediction is not None:
        return cfg.horizon.prediction, False, None
    try:
        hb = platoon_bounds(scenario.platoon, scenario.vps, scenario.gp, cfg.sigma)
    except PlatoonError as exc:
        print(f"⚠️ Horizon bound unavailable ({exc}); using max_horizon {cfg.horizon.max_horizon}")
        return cfg.horizon.max_horizon, True, None
    if not hb.bounded:
        print(f"⚠️ No horizon bound for this platoon; using max_horizon {cfg.horizon.max_horizon}")
    horizon, capped = resolve_horizon(cfg, hb)
    return horizon, capped, hb


def cmd_mpc(args, cfg, dirs):
    scenario = gen_scenario(args.scenario, cfg.experiment.seed, cfg, n=cfg.experiment.n_vehicles)
    steps = args.steps or cfg.experiment.rollout_steps
    horizon, capped, hb = _mpc_horizon(cfg, scenario)
    print(f"🚀 MPC on {args.scenario} scenario (seed {scenario.seed}, {scenario.platoon.n_cavs} CAV(s)), "
          f"P = {horizon}{' (capped)' if capped else ''}, {steps} steps, "
          f"terminal set {'on' if cfg.terminal_enabled else 'off'}, HDV {scenario.hdv_mode}")

    def produce(attempt, feedback):
        P = horizon if feedback is None else feedback["next_horizon"]
        run = receding_horizon_run(scenario.platoon, steps, mpc_settings(cfg, scenario, P, steps=steps))
        return P, run

    def validate(result):
        P, run = result
        replay_error = replay_trace(run.frame, scenario.gp.tau)
        infeasible = len(run.infeasible_steps)
        next_horizon = min(2 * P, max(cfg.horizon.max_horizon, P))
        return {
            "passed": infeasible == 0 and not run.stopped_early and replay_error <= REPLAY_TOL,
            "horizon": P,
            "infeasible_steps": infeasible,
            "first_infeasible": run.first_infeasible,
            "stopped_early": run.stopped_early,
            "replay_error": replay_error,
            "next_horizon": next_horizon,
            "retry": cfg.horizon.prediction is None and next_horizon > P and replay_error <= REPLAY_TOL,
        }

    (P, run), feedback, passed, attempts = execute_with_validation(
        produce, validate, max_retries=Config.get_config()["retry_count"], label="receding-horizon run"
    )
    stem = f"mpc_{args.scenario}_seed{scenario.seed}"
    trace_path = write_trace(run.frame, os.path.join(dirs["trace_dir"], f"{stem}.csv"))
    print(f"💾 Trace saved to {trace_path}")
    summary = {
        "command": "mpc",
        "scenario": scenario.to_dict(),
        "horizon": P,
        "horizon_capped": capped,
        "bounds": hb.to_dict() if hb is not None else None,
        "steps": run.steps,
        "infeasible_steps": list(run.infeasible_steps),
        "fallback_steps": list(run.fallback_steps),
        "stopped_early": run.stopped_early,
        "validation": feedback,
        "attempts": attempts,
        "trace": trace_path,
        "config": cfg.to_dict(),
    }
    path = save_json(summary, os.path.join(dirs["report_dir"], f"{stem}.json"))
    print(f"💾 MPC summary saved to {path}")
    print_execution_summary(
        "mpc",
        {"horizon": P, "steps": run.steps, "infeasible_steps": len(run.infeasible_steps),
         "fallback_steps": len(run.fallback_steps), "replay_error": feedback["replay_error"]},
        passed,
        attempts,
    )
    return EXIT_VIOLATION if run.stopped_early else EXIT_OK


def cmd_verify(args, cfg, dirs):
    checks = sorted(VERIFIERS) if args.check == "all" else [args.check]
    exit_code = EXIT_OK
    for check in checks:
        print(f"🚀 Verifying {check}: {cfg.experiment.samples} samples from seed {cfg.experiment.seed}")
        kwargs = {}
        if check == "theorem1" and args.lam is not None:
            kwargs["lambdas"] = (args.lam,)
        report = VERIFIERS[check](cfg, **kwargs)
        report["config"] = cfg.to_dict()
        path = save_json(report, os.path.join(dirs["report_dir"], f"verify_{check}_seed{cfg.experiment.seed}.json"))
        print(f"💾 Report saved to {path}")
        print_execution_summary(check, report["summary"], report["passed"])
        if not report["passed"]:
            exit_code = EXIT_VIOLATION
    return exit_code


def cmd_plot(args, cfg, dirs):
    frame = read_trace(args.trace)
    stem = trace_stem(args.trace)
    print(f"🚀 Plotting {args.trace} ({frame['step'].nunique()} steps)")
    for path in plot_trace(frame, dirs["plot_dir"], stem, title=stem):
        print(f"💾 Plot saved to {path}")
    return EXIT_OK


COMMANDS = {
    "bounds": cmd_bounds,
    "plan": cmd_plan,
    "mpc": cmd_mpc,
    "verify": cmd_verify,
    "plot": cmd_plot,
}


def main(argv=None):
    """Parse ``argv``, run one command and return its exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = Config.get_run_config(args.config, _overrides(args))
        print(f"⚙️ Config: {args.config or Config.CONFIG_PATH or 'built-in defaults'} "
              f"(tau {cfg.gp.tau}, delta1 {cfg.gp.delta1:.6g}, delta2 {cfg.gp.delta2}, sigma {cfg.sigma})")
        return COMMANDS[args.command](args, cfg, _output_dirs(args))
    except (ConfigError, TraceFormatError) as e:
        print(f"❌ Error: {str(e)}")
        return EXIT_USAGE
    except PlatoonError as e:
        print(f"❌ {type(e).__name__}: {str(e)}")
        return EXIT_VIOLATION
    except ValueError as e:
        print(f"❌ Invalid input: {str(e)}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
