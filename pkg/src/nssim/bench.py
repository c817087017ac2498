"""Benchmark harness: accuracy, Pareto, per-step cost and resource comparisons.

Every report compares competitors on the event-boundary states of one
scenario.  The comparison currency is modelled operation counts and cycles
(see :mod:`nssim.npu`); wall-clock time is only logged.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import npu
from .circuit import DATA_DIR, CircuitTopology, load_topology_file
from .errors import ConfigError, ParseError
from .nss import NssBundle, load_bundle, nss_simulate
from .plotting import Series, emit_plot
from .solvers import (
    EventSchedule,
    InputSpec,
    PwmSpec,
    SolverConfig,
    Trajectory,
    build_event_schedule,
    event_driven_simulate,
)

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger(__name__)

BENCHES = ("accuracy", "pareto", "stepcost", "resources")


@dataclass
class Competitor:
    label: str
    solver: SolverConfig | None = None
    bundle: Path | None = None
    max_h: float | None = None

    @property
    def is_nss(self) -> bool:
        return self.bundle is not None

    @property
    def method(self) -> str:
        return "nss" if self.is_nss else self.solver.method


@dataclass
class BenchScenario:
    name: str
    topo: CircuitTopology
    pwm: list
    input_spec: InputSpec
    x0: np.ndarray
    tspan: tuple
    reference: SolverConfig
    competitors: list
    metrics: list = field(default_factory=lambda: list(BENCHES))
    sweeps: dict = field(default_factory=dict)
    npu_cfg: npu.NpuConfig = field(default_factory=npu.NpuConfig)

    def __post_init__(self):
        if not self.tspan[1] > self.tspan[0]:
            raise ConfigError(f"scenario span must be positive, got {self.tspan}")
        if not self.competitors:
            raise ConfigError("scenario needs at least one competitor")
        for c in self.competitors:
            if c.solver is not None and c.solver.method == "dopri54" and not c.solver.rtol > self.reference.rtol:
                raise ConfigError(f"reference rtol must be tighter than competitor {c.label!r}")
        self._bundles = {}

    @property
    def schedule(self) -> EventSchedule:
        return build_event_schedule(self.pwm, *self.tspan)

    def bundle(self, path: Path) -> NssBundle:
        if path not in self._bundles:
            if not (path / "bundle.meta").is_file():
                raise ConfigError(f"no trained NSS bundle at {path} (run `nssim train` first)")
            self._bundles[path] = load_bundle(path, self.topo)
        return self._bundles[path]


def _resolve(base: Path, value: str) -> Path:
    p = Path(value)
    if p.is_absolute():
        return p
    if (base / p).exists():
        return base / p
    if (DATA_DIR / p).exists():
        return DATA_DIR / p
    return base / p


def load_scenario(path, bundle_override=None) -> BenchScenario:
    """Read a scenario TOML; relative paths resolve against its directory."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"scenario file not found: {path}")
    try:
        cfg = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed scenario {path}: {exc}") from None
    base = path.parent
    try:
        circuit_path = _resolve(base, cfg["circuit"])
        if not circuit_path.is_file():
            raise ConfigError(f"circuit file not found: {circuit_path}")
        topo = load_topology_file(circuit_path)
        competitors = []
        for c in cfg["competitors"]:
            if "bundle" in c or c.get("kind") == "nss":
                bpath = Path(bundle_override) if bundle_override else _resolve(base, c.get("bundle", "bundle"))
                competitors.append(Competitor(c["label"], bundle=bpath, max_h=float(c["max_h"])))
            else:
                competitors.append(Competitor(c["label"], solver=SolverConfig.parse(c["solver"])))
        scenario = BenchScenario(
            name=cfg.get("name", path.stem),
            topo=topo,
            pwm=[PwmSpec.from_dict(p) for p in cfg["pwm"]],
            input_spec=InputSpec.from_dict(cfg.get("input", {"kind": "constant", "value": [0.0] * topo.m})),
            x0=np.array(cfg.get("x0", [0.0] * topo.n), dtype=float),
            tspan=tuple(float(v) for v in cfg["tspan"]),
            reference=SolverConfig.from_dict(cfg.get("reference", {"rtol": 1e-9, "atol": 1e-12})),
            competitors=competitors,
            metrics=list(cfg.get("metrics", BENCHES)),
            sweeps=dict(cfg.get("pareto", {})),
            npu_cfg=npu.NpuConfig(**cfg.get("npu", {})),
        )
    except KeyError as exc:
        raise ParseError(f"scenario {path} is missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ParseError(f"scenario {path}: {exc}") from None
    if len(scenario.pwm) != topo.d:
        raise ConfigError(f"scenario has {len(scenario.pwm)} PWM specs but the circuit has d={topo.d}")
    return scenario


# ---------------------------------------------------------------------------
# running and costing
# ---------------------------------------------------------------------------

def run_reference(scn: BenchScenario) -> Trajectory:
    return event_driven_simulate(scn.topo, scn.schedule, scn.x0, scn.input_spec, scn.reference)


def run_competitor(scn: BenchScenario, comp: Competitor) -> Trajectory:
    t0 = time.perf_counter()
    if comp.is_nss:
        traj = nss_simulate(scn.topo, scn.bundle(comp.bundle), scn.schedule, scn.x0, scn.input_spec, comp.max_h)
    else:
        traj = event_driven_simulate(scn.topo, scn.schedule, scn.x0, scn.input_spec, comp.solver)
    log.info("%s: %d steps in %.3f s wall clock", comp.label, traj.n_steps, time.perf_counter() - t0)
    return traj


def _step_rows(traj: Trajectory):
    """Yield ``(row, first_in_interval)`` for every step row."""
    prev_interval = None
    for i, h in enumerate(traj.h):
        if h > 0:
            k = traj.interval_index[i]
            yield i, k != prev_interval
            prev_interval = k


def step_costs(traj: Trajectory, scn: BenchScenario, comp: Competitor) -> list[npu.CostReport]:
    """Modelled cost of every step of a trajectory.

    Classical steps pay their RHS evaluations (including rejected attempts)
    and, on the first step of an interval, the matrix assembly.  NSS steps
    pay the solver net plus, when a model pass was made, the model net.
    """
    cfg = scn.npu_cfg
    topo = scn.topo
    out = []
    if comp.is_nss:
        b = scn.bundle(comp.bundle)
        with_model = npu.nss_step_cost(topo, b.model.net, b.solver.net, b.base_method, cfg, True)
        without = npu.nss_step_cost(topo, b.model.net, b.solver.net, b.base_method, cfg, False)
        for i, _ in _step_rows(traj):
            out.append(with_model if traj.rhs_evals[i] >= 2 else without)
        return out
    rhs = npu.rhs_eval_cost(topo, cfg)
    assembly = npu.classical_step_cost(topo, "assembly_with_inversion", cfg)
    for i, first in _step_rows(traj):
        c = rhs.scaled(traj.rhs_evals[i], "step")
        out.append(assembly.then(c, "step") if first else c)
    return out


def total_cost(costs, label: str, clock_hz: float) -> npu.CostReport:
    total = npu.zero_cost(label, clock_hz)
    for c in costs:
        total = total.then(c, label)
    return total


def boundary_error(traj: Trajectory, ref_states: np.ndarray) -> tuple[float, float]:
    """Relative RMS ``||X - X_ref||_F / ||X_ref||_F`` and max abs error at event boundaries."""
    _, X = traj.boundary_states()
    if X.shape != ref_states.shape:
        raise ConfigError("trajectory and reference have different event boundaries")
    diff = X - ref_states
    return float(np.linalg.norm(diff) / np.linalg.norm(ref_states)), float(np.max(np.abs(diff)))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _slug(label: str) -> str:
    return "".join(ch if ch.isalnum() else "_" for ch in label).strip("_").lower()


# ---------------------------------------------------------------------------
# the four comparisons
# ---------------------------------------------------------------------------

def bench_accuracy(scn: BenchScenario, out: Path) -> list[dict]:
    """Overlaid trajectories and an error table against the reference."""
    ref = run_reference(scn)
    ref.to_csv(out / "traj_reference.csv")
    _, ref_states = ref.boundary_states()
    rows, trajs = [], {}
    for comp in scn.competitors:
        traj = run_competitor(scn, comp)
        trajs[comp.label] = traj
        traj.to_csv(out / f"traj_{_slug(comp.label)}.csv")
        rel, mx = boundary_error(traj, ref_states)
        cost = total_cost(step_costs(traj, scn, comp), comp.label, scn.npu_cfg.clock_hz)
        rows.append({"label": comp.label, "method": comp.method, "rel_rms": rel, "max_abs": mx,
                     "steps": traj.n_steps, "evals": traj.total_rhs_evals, "ops": cost.ops,
                     "cycles": cost.cycles})
    _write_csv(out / "accuracy.csv",
               ["label", "method", "rel_rms", "max_abs", "steps", "evals", "ops", "cycles"],
               [[r["label"], r["method"], repr(r["rel_rms"]), repr(r["max_abs"]), r["steps"],
                 r["evals"], r["ops"], r["cycles"]] for r in rows])
    ref_t, ref_x = ref.times, ref.states
    for i in range(scn.topo.n):
        series = [Series("reference", list(ref_t * 1e3), list(ref_x[:, i]))]
        for label, traj in trajs.items():
            bt, bx = traj.boundary_states()
            series.append(Series(label, list(bt * 1e3), list(bx[:, i]), marker=".", linestyle=""))
        emit_plot(series, out / f"accuracy_x{i}.svg", title=f"{scn.name}: state x{i}",
                  xlabel="t [ms]", ylabel=f"x{i}")
    return rows


def _pareto_competitors(scn: BenchScenario) -> list[Competitor]:
    sw = scn.sweeps
    comps = []
    for method in ("euler", "heun", "rk4"):
        for h in sw.get(f"{method}_h", []):
            comps.append(Competitor(f"{method} h={h:g}", solver=SolverConfig(method=method, h=float(h))))
    for rtol in sw.get("dopri_rtol", []):
        comps.append(Competitor(f"dopri54 rtol={rtol:g}",
                                solver=SolverConfig(rtol=float(rtol), atol=float(rtol) * sw.get("atol_ratio", 1e-3))))
    for comp in scn.competitors:
        if comp.is_nss:
            for max_h in sw.get("nss_max_h", [comp.max_h]):
                comps.append(Competitor(f"{comp.label} max_h={max_h:g}", bundle=comp.bundle, max_h=float(max_h)))
    if not comps:
        comps = list(scn.competitors)
    return comps


def bench_pareto(scn: BenchScenario, out: Path) -> list[dict]:
    """(error, modelled cost) points over tolerance and step-size sweeps."""
    ref = run_reference(scn)
    _, ref_states = ref.boundary_states()
    rows = []
    for comp in _pareto_competitors(scn):
        traj = run_competitor(scn, comp)
        rel, mx = boundary_error(traj, ref_states)
        cost = total_cost(step_costs(traj, scn, comp), comp.label, scn.npu_cfg.clock_hz)
        param = comp.max_h if comp.is_nss else (comp.solver.rtol if comp.method == "dopri54" else comp.solver.h)
        rows.append({"label": comp.label, "method": comp.method, "param": param, "rel_rms": rel,
                     "max_abs": mx, "ops": cost.ops, "mult_ops": cost.mult_ops, "add_ops": cost.add_ops,
                     "cycles": cost.cycles, "steps": traj.n_steps})
    for r in rows:
        r["pareto_optimal"] = not any(
            o is not r and o["rel_rms"] <= r["rel_rms"] and o["ops"] <= r["ops"]
            and (o["rel_rms"] < r["rel_rms"] or o["ops"] < r["ops"])
            for o in rows
        )
    _write_csv(out / "pareto.csv",
               ["label", "method", "param", "rel_rms", "max_abs", "ops", "mult_ops", "add_ops",
                "cycles", "steps", "pareto_optimal"],
               [[r["label"], r["method"], repr(float(r["param"])), repr(r["rel_rms"]), repr(r["max_abs"]),
                 r["ops"], r["mult_ops"], r["add_ops"], r["cycles"], r["steps"], int(r["pareto_optimal"])]
                for r in rows])
    series = []
    for method in dict.fromkeys(r["method"] for r in rows):
        pts = sorted((r["ops"], max(r["rel_rms"], 1e-16)) for r in rows if r["method"] == method)
        series.append(Series(method, [p[0] for p in pts], [p[1] for p in pts], marker="o"))
    emit_plot(series, out / "pareto.svg", title=f"{scn.name}: error vs modelled cost",
              xlabel="operations per simulated span", ylabel="relative RMS error", logx=True, logy=True)
    return rows


def bench_stepcost(scn: BenchScenario, out: Path) -> list[dict]:
    """Per-step modelled cycle series and their dispersion."""
    series_rows, summary, series = [], [], []
    for comp in scn.competitors:
        traj = run_competitor(scn, comp)
        costs = step_costs(traj, scn, comp)
        cycles = np.array([c.cycles for c in costs], dtype=float)
        rows_idx = [i for i, _ in _step_rows(traj)]
        for j, (i, c) in enumerate(zip(rows_idx, cycles)):
            series_rows.append([comp.label, j, repr(traj.t[i]), int(c)])
        summary.append({"label": comp.label, "steps": len(cycles), "mean": float(cycles.mean()),
                        "std": float(cycles.std()), "min": int(cycles.min()), "max": int(cycles.max())})
        series.append(Series(comp.label, list(range(len(cycles))), list(cycles)))
    _write_csv(out / "stepcost.csv", ["label", "step", "t", "cycles"], series_rows)
    _write_csv(out / "stepcost_summary.csv", ["label", "steps", "mean", "std", "min", "max"],
               [[s["label"], s["steps"], repr(s["mean"]), repr(s["std"]), s["min"], s["max"]] for s in summary])
    emit_plot(series, out / "stepcost.svg", title=f"{scn.name}: modelled cycles per step",
              xlabel="step", ylabel="cycles", logy=True)
    return summary


def bench_resources(scn: BenchScenario, out: Path) -> list[npu.CostReport]:
    """NPU cost of the networks next to serial classical step costs."""
    cfg, topo = scn.npu_cfg, scn.topo
    reports = []
    for comp in scn.competitors:
        if comp.is_nss:
            b = scn.bundle(comp.bundle)
            reports.append(npu.npu_network_cost(b.model.net, cfg, f"{comp.label} model_net"))
            reports.append(npu.npu_network_cost(b.solver.net, cfg, f"{comp.label} solver_net"))
            step = npu.nss_step_cost(topo, b.model.net, b.solver.net, b.base_method, cfg)
            reports.append(npu.CostReport(f"{comp.label} step", step.cycles, step.mult_ops, step.add_ops,
                                          step.multipliers, step.adders, step.registers, step.clock_hz))
            break
    for method in ("assembly_with_inversion", "euler", "heun", "rk4", "dopri_step"):
        reports.append(npu.classical_step_cost(topo, method, cfg))
    npu.write_cost_csv(reports, out / "resources.csv")
    emit_plot([Series("operations per call", [r.label for r in reports], [r.ops for r in reports])],
              out / "resources.svg", title=f"{scn.name}: modelled operations", xlabel="unit",
              ylabel="mult + add operations", kind="bar")
    return reports


def run_bench(kind: str, scn: BenchScenario, out) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    kinds = BENCHES if kind == "all" else (kind,)
    results = {}
    for k in kinds:
        results[k] = {"accuracy": bench_accuracy, "pareto": bench_pareto,
                      "stepcost": bench_stepcost, "resources": bench_resources}[k](scn, out)
    return results
