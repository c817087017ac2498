"""Analytic latency/resource model for parallel MLP inference vs. serial solvers.

The NPU stripes the rows of each weight matrix over ``dot_units`` parallel
dot-product units; each unit multiplies ``macs_per_unit`` vector elements
per MAC stage and reduces them with an adder tree.  Classical solver work
is modelled as one serial MAC per cycle.  All numbers are illustrative: no
bit widths or pipeline depths of a real device are implied.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

from .circuit import CircuitTopology
from .neural import MlpNetwork

CSV_HEADER = ["label", "cycles", "seconds", "mult_ops", "add_ops", "multipliers", "adders", "registers"]


@dataclass(frozen=True)
class NpuConfig:
    dot_units: int = 32
    macs_per_unit: int = 32
    mac_latency: int = 1
    act_latency: int = 2
    clock_hz: float = 200e6

    def __post_init__(self):
        if min(self.dot_units, self.macs_per_unit, self.mac_latency) < 1 or self.act_latency < 0:
            raise ValueError("NPU unit counts and latencies must be >= 1")
        if not self.clock_hz > 0:
            raise ValueError("clock_hz must be positive")


@dataclass(frozen=True)
class CostReport:
    label: str
    cycles: int
    mult_ops: int
    add_ops: int
    multipliers: int
    adders: int
    registers: int
    clock_hz: float = 200e6

    @property
    def seconds(self) -> float:
        return self.cycles / self.clock_hz

    @property
    def ops(self) -> int:
        return self.mult_ops + self.add_ops

    def then(self, other: "CostReport", label: str | None = None) -> "CostReport":
        """Sequential composition: latencies and ops add, resources are shared (peak)."""
        return CostReport(
            label or self.label,
            self.cycles + other.cycles,
            self.mult_ops + other.mult_ops,
            self.add_ops + other.add_ops,
            max(self.multipliers, other.multipliers),
            max(self.adders, other.adders),
            max(self.registers, other.registers),
            self.clock_hz,
        )

    def scaled(self, count: int, label: str | None = None) -> "CostReport":
        """``count`` sequential repetitions."""
        return CostReport(label or self.label, self.cycles * count, self.mult_ops * count,
                          self.add_ops * count, self.multipliers, self.adders, self.registers, self.clock_hz)

    def row(self) -> list:
        return [self.label, self.cycles, repr(self.seconds), self.mult_ops, self.add_ops,
                self.multipliers, self.adders, self.registers]


def zero_cost(label: str = "", clock_hz: float = 200e6) -> CostReport:
    return CostReport(label, 0, 0, 0, 0, 0, 0, clock_hz)


def npu_layer_latency(rows: int, cols: int, cfg: NpuConfig) -> int:
    """Cycles for one dense layer: row batches x (MAC stages + adder-tree depth) + activation."""
    if rows < 1 or cols < 1:
        raise ValueError("layer dimensions must be >= 1")
    batches = math.ceil(rows / cfg.dot_units)
    mac_stages = math.ceil(cols / cfg.macs_per_unit)
    tree_depth = math.ceil(math.log2(min(cols, cfg.macs_per_unit)))
    return batches * (mac_stages + tree_depth) * cfg.mac_latency + cfg.act_latency


def _layer_sizes(net) -> list[int]:
    return list(net.layer_sizes) if isinstance(net, MlpNetwork) else [int(s) for s in net]


def npu_network_cost(net, cfg: NpuConfig = NpuConfig(), label: str = "mlp") -> CostReport:
    """Latency and exact operation counts of one forward pass.

    ``net`` may be an :class:`MlpNetwork` or a list of layer widths.
    Multiplications are ``sum(rows*cols)``; additions are the dot-product
    reductions ``rows*(cols-1)`` plus one bias add per row.
    """
    sizes = _layer_sizes(net)
    cycles = mults = adds = 0
    for cols, rows in zip(sizes[:-1], sizes[1:]):
        cycles += npu_layer_latency(rows, cols, cfg)
        mults += rows * cols
        adds += rows * (cols - 1) + rows
    lanes = cfg.dot_units * cfg.macs_per_unit
    return CostReport(
        label, cycles, mults, adds,
        multipliers=lanes,
        adders=lanes,
        registers=lanes + 2 * max(sizes),
        clock_hz=cfg.clock_hz,
    )


def _serial(label, mults, adds, registers, cfg: NpuConfig) -> CostReport:
    return CostReport(label, max(mults, adds) * cfg.mac_latency, mults, adds, 1, 1, registers, cfg.clock_hz)


def assembly_ops(n: int, m: int, d: int) -> tuple[int, int]:
    """Exact (mult, add) counts for dense assembly of ``(A_k, B_k)``.

    Divisions count as multiplications.  Steps:

    * form ``I - D1 K``: ``d^2`` mults, ``d`` adds;
    * LU without pivoting, pivots inverted once: ``d`` divisions,
      ``d(d-1)/2`` multiplier products, ``(d-1)d(2d-1)/6`` update mult-adds;
    * forward/back substitution for ``c = n + m`` right-hand sides:
      ``d^2`` mults and ``d(d-1)`` adds per column;
    * ``B1 K``: ``n d`` mults; ``(B1 K) X``: ``n d c`` mults, ``n (d-1) c`` adds;
    * adding ``A0``, ``B0``: ``n c`` adds.
    """
    c = n + m
    updates = (d - 1) * d * (2 * d - 1) // 6
    mults = d * d + d + d * (d - 1) // 2 + updates + c * d * d + n * d + n * d * c
    adds = d + updates + c * d * (d - 1) + n * (d - 1) * c + n * c
    return mults, adds


def classical_step_cost(topo: CircuitTopology, method: str, cfg: NpuConfig = NpuConfig()) -> CostReport:
    """Serial cost of one assembly or one integrator step.

    Integrator steps cost ``stages * (n^2 + n m)`` mult-adds
    (1/2/4/6 stages for euler/heun/rk4/dopri_step).
    """
    n, m, d = topo.n, topo.m, topo.d
    if method == "assembly_with_inversion":
        mults, adds = assembly_ops(n, m, d)
        return _serial(method, mults, adds, d * d + d * (n + m) + n * (n + m), cfg)
    stages = {"euler": 1, "heun": 2, "rk4": 4, "dopri_step": 6}.get(method)
    if stages is None:
        raise ValueError(f"unknown classical method {method!r}")
    ops = stages * (n * n + n * m)
    return _serial(method, ops, ops, n * (n + m) + (stages + 1) * n, cfg)


def rhs_eval_cost(topo: CircuitTopology, cfg: NpuConfig = NpuConfig()) -> CostReport:
    ops = topo.n * topo.n + topo.n * topo.m
    return _serial("rhs_eval", ops, ops, topo.n * (topo.n + topo.m) + 2 * topo.n, cfg)


def nss_overhead_cost(topo: CircuitTopology, base_method: str, cfg: NpuConfig = NpuConfig()) -> CostReport:
    """Per-step work outside the networks: base stages plus ``h^(p+1) R`` correction."""
    n = topo.n
    base = classical_step_cost(topo, base_method, cfg)
    correction = _serial("correction", n + 1, n, 2 * n, cfg)
    return base.then(correction, f"{base_method}+correction")


def surrogate_formation_cost(topo: CircuitTopology, cfg: NpuConfig = NpuConfig()) -> CostReport:
    """``A0 + dA`` and ``B0 + dB`` once per model-net prediction."""
    adds = topo.n * (topo.n + topo.m)
    return _serial("surrogate_formation", 0, adds, 2 * adds, cfg)


def nss_step_cost(topo: CircuitTopology, model_net, solver_net, base_method: str,
                  cfg: NpuConfig = NpuConfig(), with_model: bool = True) -> CostReport:
    """Modelled cost of one NSS step (both nets on the NPU, when ``with_model``)."""
    cost = npu_network_cost(solver_net, cfg, "solver_net")
    if with_model:
        cost = npu_network_cost(model_net, cfg, "model_net").then(surrogate_formation_cost(topo, cfg)).then(cost)
    return cost.then(nss_overhead_cost(topo, base_method, cfg), "nss_step")


def write_cost_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in reports:
            w.writerow(r.row())
