"""Command-line entry point: ``nssim simulate | train | bench``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 training failure.  ``NSS_LOG`` (error, info, debug) sets the log level.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from .bench import BENCHES, load_scenario, run_bench
from .circuit import CircuitTopology, DATA_DIR, enumerate_admissible_switch_set, load_topology_file
from .errors import ConfigError, NssError, ParseError, SequentialTrainingError
from .neural import TrainConfig
from .nss import (
    BASE_METHODS,
    NssBundle,
    SamplingConfig,
    build_model_dataset,
    build_solver_dataset,
    has_trained_model,
    load_bundle,
    save_bundle,
    train_model_net,
    train_solver_net,
)
from .solvers import InputSpec, PwmSpec, SolverConfig, build_event_schedule, event_driven_simulate

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("nssim")


def _floats(text: str, what: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad {what} {text!r}: expected comma-separated numbers") from None


def _ints(text: str, what: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad {what} {text!r}: expected comma-separated integers") from None


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if p.is_file():
        return p
    if not p.is_absolute() and (DATA_DIR / p).is_file():
        return DATA_DIR / p
    raise ConfigError(f"{what} file not found: {path}")


def _circuit(path: str) -> CircuitTopology:
    return load_topology_file(_existing(path, "circuit"))


def _read_toml(path: Path) -> dict:
    try:
        return tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed {path}: {exc}") from None


def _pwm_specs(path: str) -> list[PwmSpec]:
    cfg = _read_toml(_existing(path, "PWM"))
    try:
        return [PwmSpec.from_dict(p) for p in cfg["pwm"]]
    except KeyError as exc:
        raise ParseError(f"PWM file {path} is missing field {exc}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    topo = _circuit(args.circuit)
    pwm = _pwm_specs(args.pwm)
    if len(pwm) != topo.d:
        raise ConfigError(f"{len(pwm)} PWM specs given but the circuit has d={topo.d} switch pairs")
    tspan = _floats(args.tspan, "--tspan")
    if len(tspan) != 2 or not tspan[1] > tspan[0]:
        raise ConfigError(f"--tspan must be 'a,b' with b > a, got {args.tspan!r}")
    x0 = _floats(args.x0, "--x0") if args.x0 else [0.0] * topo.n
    u = _floats(args.input, "--input") if args.input else [0.0] * topo.m
    if len(u) != topo.m:
        raise ConfigError(f"--input has {len(u)} entries, the circuit has m={topo.m}")
    schedule = build_event_schedule(pwm, *tspan)
    traj = event_driven_simulate(topo, schedule, x0, InputSpec.constant(u), SolverConfig.parse(args.solver))
    traj.to_csv(args.out)
    if args.schedule_out:
        schedule.to_csv(args.schedule_out)
    log.info("%d events, %d steps, %d RHS evaluations", len(schedule), traj.n_steps, traj.total_rhs_evals)
    print(f"wrote {args.out}: {len(traj.t)} rows, final state {np.array2string(traj.final, precision=6)}")
    return 0


def _arch(text, default):
    return _ints(text, "architecture") if text else (list(default) if default else None)


def cmd_train(args) -> int:
    topo = _circuit(args.circuit)
    tr = topo.training
    out = Path(args.out)
    admissible = enumerate_admissible_switch_set(topo)
    model_arch = args.model_arch or (args.arch if args.stage == "model" else None)
    solver_arch = args.solver_arch or (args.arch if args.stage == "solver" else None)
    if args.stage == "both" and args.arch:
        raise ConfigError("--arch is ambiguous with --stage both; use --model-arch and --solver-arch")
    h_range = tuple(tr.get("h_range", (1e-5, 4e-5)))

    if args.stage in ("model", "both"):
        ds = build_model_dataset(topo, admissible)
        cfg = TrainConfig(epochs=args.model_epochs or int(tr.get("model_epochs", 2000)),
                          batch_size=args.batch_size, lr=args.lr, seed=args.seed)
        model, hist = train_model_net(ds, topo.n, topo.m, _arch(model_arch, tr.get("model_arch")), cfg)
        save_bundle(NssBundle(topo, model, None, args.base, h_range), out)
        print(f"model net {model.net.layer_sizes}: final loss {hist[-1]:.6e} ({len(ds)} switch vectors)")

    if args.stage in ("solver", "both"):
        if not has_trained_model(out):
            raise SequentialTrainingError(
                f"no trained model net in {out}: training is sequential, run `--stage model` "
                "(or `--stage both`) before `--stage solver`"
            )
        bundle = load_bundle(out, topo, require_solver=False)
        if not bundle.model.net.trained:
            raise SequentialTrainingError(f"model net in {out} is not marked trained")
        sampling = SamplingConfig.for_topology(topo, n_states=args.states, seed=args.seed + 1)
        samples = build_solver_dataset(topo, bundle.model, sampling, admissible, bundle.base_method)
        cfg = TrainConfig(epochs=args.solver_epochs or int(tr.get("solver_epochs", 100)),
                          batch_size=args.batch_size, lr=args.lr, seed=args.seed + 2)
        solver, hist = train_solver_net(bundle.model, samples, _arch(solver_arch, tr.get("solver_arch")), cfg)
        bundle.solver = solver
        bundle.h_range = tuple(sampling.h_range)
        save_bundle(bundle, out)
        print(f"solver net {solver.net.layer_sizes}: final loss {hist[-1]:.6e} ({len(samples)} residual samples)")
    print(f"bundle written to {out}")
    return 0


def cmd_bench(args) -> int:
    scn = load_scenario(args.scenario, bundle_override=args.bundle)
    results = run_bench(args.kind, scn, args.out)
    if "accuracy" in results:
        for r in results["accuracy"]:
            print(f"accuracy  {r['label']:<12} rel_rms={r['rel_rms']:.3e} steps={r['steps']} ops={r['ops']}")
    if "stepcost" in results:
        for s in results["stepcost"]:
            print(f"stepcost  {s['label']:<12} mean={s['mean']:.1f} std={s['std']:.3g} cycles")
    if "pareto" in results:
        print(f"pareto    {len(results['pareto'])} points, "
              f"{sum(r['pareto_optimal'] for r in results['pareto'])} on the front")
    if "resources" in results:
        print(f"resources {len(results['resources'])} rows")
    print(f"reports written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nssim", description="Switched-circuit simulation with a neural substitute solver.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="event-driven simulation with a classical solver")
    s.add_argument("--circuit", required=True, help="circuit TOML (or a bundled name such as buck.circuit)")
    s.add_argument("--pwm", required=True, help="TOML file with [[pwm]] tables, one per switch pair")
    s.add_argument("--solver", default="dopri54,rtol=1e-6,atol=1e-9",
                   help="e.g. 'dopri54,rtol=1e-9,atol=1e-12' or 'rk4,h=1e-6'")
    s.add_argument("--tspan", required=True, help="start,stop in seconds")
    s.add_argument("--x0", help="initial state, comma separated (default zeros)")
    s.add_argument("--input", help="constant input vector, comma separated (default zeros)")
    s.add_argument("--out", required=True, help="trajectory CSV")
    s.add_argument("--schedule-out", help="optional event schedule CSV")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train the model net and/or the solver net")
    t.add_argument("--circuit", required=True)
    t.add_argument("--stage", choices=("model", "solver", "both"), default="both")
    t.add_argument("--arch", help="layer widths of the net trained by a single stage, e.g. 3,4,6")
    t.add_argument("--model-arch")
    t.add_argument("--solver-arch")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--base", choices=sorted(BASE_METHODS), default="heun", help="base method of the solver net")
    t.add_argument("--states", type=int, help="sampled initial states per switch vector")
    t.add_argument("--model-epochs", type=int)
    t.add_argument("--solver-epochs", type=int)
    t.add_argument("--batch-size", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--out", required=True, help="bundle directory")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="accuracy / pareto / stepcost / resources reports")
    b.add_argument("kind", choices=(*BENCHES, "all"))
    b.add_argument("--scenario", default=str(DATA_DIR / "buck_dynamic.toml"))
    b.add_argument("--bundle", help="override the scenario's NSS bundle directory")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def _setup_logging():
    level = os.environ.get("NSS_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")
    if level not in levels:
        log.error("NSS_LOG=%r not recognised; using 'error'", level)


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NssError as exc:
        print(f"nssim: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"nssim: configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # keep the exit-code contract even for bugs
        log.debug("unexpected failure", exc_info=True)
        print(f"nssim: internal numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        if os.environ.get("NSS_LOG", "").lower() == "debug":
            traceback.print_exc()
        return 3


if __name__ == "__main__":
    sys.exit(main())
