"""Classical integrators, PWM event scheduling and the event-driven loop.

Conventions shared by every routine here:

* a right-hand side is a callable ``f(t, x, u) -> dx/dt``;
* ``u`` passed to a step is either a fixed input vector or a callable of
  time (an :class:`InputSpec`), evaluated at each stage time;
* trajectories start every event interval with an ``h = 0`` sample, so the
  last sample of interval k and the first of interval k+1 are the same state.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .circuit import CircuitTopology, SystemMatrices, assemble_matrices, switch_vector
from .errors import (
    ConfigError,
    NonFiniteState,
    NssError,
    ScheduleTooLong,
    StepUnderflow,
)

SCHEDULE_CAP = 1_000_000

# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
# embedded 4th-order weights; the seventh stage is f at the new point
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 5.0


# ---------------------------------------------------------------------------
# inputs and right-hand sides
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InputSpec:
    """Input waveform ``u(t)``.

    kind ``constant`` uses ``values``; ``piecewise_constant`` holds
    ``values[i]`` from ``times[i]`` on (``times[0]`` covers everything
    before it too); ``sinusoid`` is
    ``offset + amplitude * sin(2 pi frequency t + phase)`` per channel.
    """

    kind: str = "constant"
    values: tuple = ((0.0,),)
    times: tuple = ()
    amplitude: tuple = ()
    frequency: float = 0.0
    phase: float = 0.0
    offset: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise_constant", "sinusoid"):
            raise ConfigError(f"unknown input kind {self.kind!r}")
        if self.kind == "piecewise_constant":
            if len(self.times) != len(self.values) or not self.times:
                raise ConfigError("piecewise_constant input needs one value row per breakpoint")
            if np.any(np.diff(self.times) <= 0):
                raise ConfigError("piecewise_constant breakpoints must be strictly increasing")
        if self.kind == "sinusoid" and len(self.amplitude) != len(self.offset):
            raise ConfigError("sinusoid amplitude and offset must have the same length")
        object.__setattr__(self, "_table", np.array(self.values, dtype=np.float64).reshape(len(self.values), -1))

    @classmethod
    def constant(cls, value) -> "InputSpec":
        return cls(kind="constant", values=(tuple(np.atleast_1d(value).astype(float).tolist()),))

    @classmethod
    def from_dict(cls, cfg: dict) -> "InputSpec":
        kind = cfg.get("kind", "constant")
        if kind == "constant":
            return cls.constant(cfg["value"])
        if kind == "piecewise_constant":
            return cls(kind=kind, times=tuple(cfg["times"]),
                       values=tuple(tuple(np.atleast_1d(v).tolist()) for v in cfg["values"]))
        if kind == "sinusoid":
            return cls(kind=kind, amplitude=tuple(np.atleast_1d(cfg["amplitude"]).tolist()),
                       offset=tuple(np.atleast_1d(cfg.get("offset", 0.0)).tolist()),
                       frequency=float(cfg["frequency"]), phase=float(cfg.get("phase", 0.0)))
        raise ConfigError(f"unknown input kind {kind!r}")

    @property
    def m(self) -> int:
        if self.kind == "sinusoid":
            return len(self.amplitude)
        return self._table.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        if self.kind == "constant":
            return self._table[0]
        if self.kind == "piecewise_constant":
            i = max(int(np.searchsorted(self.times, t, side="right")) - 1, 0)
            return self._table[i]
        return np.asarray(self.offset) + np.asarray(self.amplitude) * math.sin(
            2 * math.pi * self.frequency * t + self.phase
        )


def _input(u, t):
    return u(t) if callable(u) else u


class LtiRhs:
    """``f(t, x, u) = A x + B u`` with an evaluation counter."""

    def __init__(self, matrices: SystemMatrices):
        self.A = np.asarray(matrices.A)
        self.B = np.asarray(matrices.B)
        self.evals = 0

    def __call__(self, t, x, u):
        self.evals += 1
        return self.A @ x + self.B @ u


def rhs(matrices: SystemMatrices, t: float, x, u_spec, counter: LtiRhs | None = None):
    """Evaluate ``A x + B u(t)``; bumps ``counter.evals`` when given."""
    if counter is not None:
        counter.evals += 1
    return matrices.A @ np.asarray(x, dtype=float) + matrices.B @ _input(u_spec, t)


# ---------------------------------------------------------------------------
# single steps
# ---------------------------------------------------------------------------

def _check(x_next):
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState("integration step produced NaN/Inf (unstable at this step size?)")
    return x_next


def step_euler(f: Callable, t: float, x, u, h: float):
    return _check(x + h * f(t, x, _input(u, t)))


def step_heun(f: Callable, t: float, x, u, h: float):
    k1 = f(t, x, _input(u, t))
    k2 = f(t + h, x + h * k1, _input(u, t + h))
    return _check(x + 0.5 * h * (k1 + k2))


def step_rk4(f: Callable, t: float, x, u, h: float):
    k1 = f(t, x, _input(u, t))
    k2 = f(t + 0.5 * h, x + 0.5 * h * k1, _input(u, t + 0.5 * h))
    k3 = f(t + 0.5 * h, x + 0.5 * h * k2, _input(u, t + 0.5 * h))
    k4 = f(t + h, x + h * k3, _input(u, t + h))
    return _check(x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


FIXED_STEPS = {"euler": step_euler, "heun": step_heun, "rk4": step_rk4}
ORDER = {"euler": 1, "heun": 2, "rk4": 4, "dopri54": 5}
STAGES = {"euler": 1, "heun": 2, "rk4": 4, "dopri54": 6}


# ---------------------------------------------------------------------------
# configuration and trajectory containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    method: str = "dopri54"
    h: float = 1e-6
    rtol: float = 1e-6
    atol: float = 1e-9
    h_min: float = 1e-14
    h_max: float = math.inf
    max_steps: int = 1_000_000

    def __post_init__(self):
        if self.method not in ORDER:
            raise ConfigError(f"unknown solver method {self.method!r}")
        if not self.h > 0:
            raise ConfigError("step size h must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise ConfigError("rtol and atol must be positive")
        if not self.h_min <= self.h_max:
            raise ConfigError("h_min must not exceed h_max")

    @classmethod
    def parse(cls, text: str) -> "SolverConfig":
        """Parse ``"dopri54,rtol=1e-9,atol=1e-12"`` or ``"rk4,h=1e-6"``."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        if not parts:
            raise ConfigError("empty solver specification")
        kwargs = {"method": parts[0]}
        for part in parts[1:]:
            key, sep, value = part.partition("=")
            if not sep or key not in ("h", "rtol", "atol", "h_min", "h_max", "max_steps"):
                raise ConfigError(f"bad solver option {part!r}")
            try:
                kwargs[key] = int(value) if key == "max_steps" else float(value)
            except ValueError:
                raise ConfigError(f"bad solver option {part!r}") from None
        return cls(**kwargs)

    @classmethod
    def from_dict(cls, cfg: dict) -> "SolverConfig":
        known = {k: cfg[k] for k in ("method", "h", "rtol", "atol", "h_min", "h_max", "max_steps") if k in cfg}
        return cls(**known)


@dataclass
class Trajectory:
    """Samples ``(t, x)`` with per-row step metadata.

    Rows with ``h == 0`` open an event interval.  ``rhs_evals`` of a row
    counts every evaluation spent to produce it, including rejected
    attempts; for neural-solver trajectories it counts forward passes.
    """

    t: list = field(default_factory=list)
    x: list = field(default_factory=list)
    h: list = field(default_factory=list)
    rhs_evals: list = field(default_factory=list)
    rejected: list = field(default_factory=list)
    interval_index: list = field(default_factory=list)
    solver: str = ""
    assemblies: int = 0

    def append(self, t, x, h=0.0, evals=0, rejected=0, interval=0):
        self.t.append(float(t))
        self.x.append(np.array(x, dtype=float))
        self.h.append(float(h))
        self.rhs_evals.append(int(evals))
        self.rejected.append(int(rejected))
        self.interval_index.append(int(interval))

    def extend(self, other: "Trajectory"):
        for i in range(len(other.t)):
            self.append(other.t[i], other.x[i], other.h[i], other.rhs_evals[i],
                        other.rejected[i], other.interval_index[i])
        self.assemblies += other.assemblies

    @property
    def times(self) -> np.ndarray:
        return np.array(self.t)

    @property
    def states(self) -> np.ndarray:
        return np.array(self.x)

    @property
    def final(self) -> np.ndarray:
        return self.x[-1]

    @property
    def n_steps(self) -> int:
        return sum(1 for h in self.h if h > 0)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected)

    @property
    def total_rhs_evals(self) -> int:
        return sum(self.rhs_evals)

    def boundary_states(self) -> tuple[np.ndarray, np.ndarray]:
        """Times and states at the end of every event interval."""
        idx = np.array(self.interval_index)
        last = [int(np.flatnonzero(idx == k)[-1]) for k in np.unique(idx)]
        return np.array([self.t[i] for i in last]), np.array([self.x[i] for i in last])

    def to_csv(self, path):
        n = len(self.x[0])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", *[f"x{i}" for i in range(n)], "h", "rhs_evals", "interval_index"])
            for i in range(len(self.t)):
                w.writerow([repr(self.t[i]), *[repr(float(v)) for v in self.x[i]],
                            repr(self.h[i]), self.rhs_evals[i], self.interval_index[i]])


def read_trajectory_csv(path) -> Trajectory:
    traj = Trajectory()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n = sum(1 for c in header if c.startswith("x"))
        for row in reader:
            traj.append(float(row[0]), [float(v) for v in row[1:1 + n]], float(row[1 + n]),
                        int(row[2 + n]), 0, int(row[3 + n]))
    return traj


# ---------------------------------------------------------------------------
# interval integrators
# ---------------------------------------------------------------------------

def fixed_step_integrate(f, t0, t1, x0, u, method: str, h: float, interval: int = 0) -> Trajectory:
    """Fixed-step integration landing exactly on ``t1``.

    Step times are ``t0 + i h`` (no running sum); the last step is shortened
    to end at ``t1``.
    """
    step = FIXED_STEPS[method]
    evals_per_step = STAGES[method]
    span = t1 - t0
    nsteps = max(1, math.ceil(span / h - 1e-9))
    traj = Trajectory(solver=method)
    x = np.array(x0, dtype=float)
    traj.append(t0, x, interval=interval)
    for i in range(nsteps):
        ta = t0 + i * h
        tb = t1 if i == nsteps - 1 else t0 + (i + 1) * h
        x = step(f, ta, x, u, tb - ta)
        traj.append(tb, x, tb - ta, evals_per_step, 0, interval)
    return traj


def _rms(v):
    return math.sqrt(float(np.mean(v * v)))


def dopri54(f, t0, t1, x0, u, config: SolverConfig, interval: int = 0) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) on ``[t0, t1]``.

    Every attempt evaluates stages 2..7; stage 7 (``f`` at the new point)
    becomes stage 1 of the following step once accepted, and after a
    rejection stage 1 is reused unchanged.  Evaluations therefore total
    ``6 * (accepted + rejected) + 1``.  The first accepted step of the
    interval carries the initial evaluation in its ``rhs_evals``.
    """
    rtol, atol = config.rtol, config.atol
    x = np.array(x0, dtype=float)
    t = float(t0)
    span = t1 - t0
    traj = Trajectory(solver="dopri54")
    traj.append(t, x, interval=interval)

    k1 = f(t, x, _input(u, t))
    pending_evals = 1
    pending_rejected = 0

    sc = atol + rtol * np.abs(x)
    d0, d1 = _rms(x / sc), _rms(k1 / sc)
    if d1 < 1e-5:
        h = span
    elif d0 < 1e-5:
        h = 1e-6
    else:
        h = 0.01 * d0 / d1
    h = min(h, config.h_max, span)

    K = np.empty((7, x.size))
    steps = 0
    while True:
        remaining = t1 - t
        last = h >= remaining * (1 - 1e-12)
        if last:
            h = remaining
        elif h < config.h_min:
            raise StepUnderflow(f"step size {h:.3e} fell below h_min={config.h_min:.3e} at t={t:.6e}",
                                interval=interval)
        steps += 1
        if steps > config.max_steps:
            raise StepUnderflow(f"exceeded max_steps={config.max_steps}", interval=interval)

        K[0] = k1
        for s in range(1, 6):
            xs = x + h * (np.asarray(_DP_A[s]) @ K[:s])
            ts = t + _DP_C[s] * h
            K[s] = f(ts, xs, _input(u, ts))
        x5 = x + h * (_DP_B5 @ K[:6])
        if not np.all(np.isfinite(x5)):
            raise NonFiniteState(f"non-finite state at t={t:.6e}", interval=interval)
        t_new = t1 if last else t + h
        k_new = f(t_new, x5, _input(u, t_new))
        K[6] = k_new
        err_vec = h * ((_DP_B5 @ K[:6]) - (_DP_B4 @ K))
        sc = atol + rtol * np.maximum(np.abs(x), np.abs(x5))
        err = _rms(err_vec / sc)
        pending_evals += 6

        if err <= 1.0:
            fac = FAC_MAX if err == 0 else min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
            t, x = t_new, x5
            k1 = k_new
            traj.append(t, x, h, pending_evals, pending_rejected, interval)
            pending_evals, pending_rejected = 0, 0
            if last:
                break
            h = min(h * fac, config.h_max)
        else:
            # the evaluation at the rejected point is wasted; k1 is unchanged
            pending_rejected += 1
            h = h * min(1.0, max(FAC_MIN, SAFETY * err ** -0.2))
    return traj


def integrate_interval(f, t0, t1, x0, u, config: SolverConfig, interval: int = 0) -> Trajectory:
    if config.method == "dopri54":
        return dopri54(f, t0, t1, x0, u, config, interval)
    return fixed_step_integrate(f, t0, t1, x0, u, config.method, config.h, interval)


def dopri54_integrate(matrices: SystemMatrices, t0, t1, x0, u_spec, config: SolverConfig | None = None) -> Trajectory:
    if not t1 > t0:
        raise ConfigError(f"integration span must be positive, got [{t0}, {t1}]")
    config = config or SolverConfig()
    return dopri54(LtiRhs(matrices), t0, t1, x0, u_spec, config)


def matrix_exponential_solution(matrices: SystemMatrices, t0, t1, x0, u_constant) -> np.ndarray:
    """Exact LTI solution for constant input.

    Uses ``expm([[A, B u], [0, 0]] * (t1 - t0))`` applied to ``(x0, 1)``,
    which needs no special handling when ``A`` is singular.
    """
    A = np.asarray(matrices.A, dtype=float)
    n = A.shape[0]
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = A
    M[:n, n] = np.asarray(matrices.B) @ np.atleast_1d(np.asarray(u_constant, dtype=float))
    E = scipy.linalg.expm(M * (t1 - t0))
    return E[:n, :n] @ np.asarray(x0, dtype=float) + E[:n, n]


# ---------------------------------------------------------------------------
# PWM event schedules
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PwmSpec:
    """Carrier-based PWM for one switch pair.

    The pair is ``high`` during ``[(j + phase) T, (j + phase + duty_j) T)``
    of each period ``j`` and ``low`` otherwise.  ``duty_steps`` is a list of
    ``(time, duty)``; a period uses the last duty whose time is at or before
    the period start.
    """

    frequency: float
    duty: float
    phase: float = 0.0
    high: int = 1
    low: int = -1
    duty_steps: tuple = ()

    def __post_init__(self):
        if not self.frequency > 0:
            raise ConfigError("PWM frequency must be positive")
        duties = [self.duty] + [d for _, d in self.duty_steps]
        if any(not 0.0 <= d <= 1.0 for d in duties):
            raise ConfigError("PWM duty ratio must lie in [0, 1]")
        if not 0.0 <= self.phase < 1.0:
            raise ConfigError("PWM phase must lie in [0, 1)")
        if self.high not in (-1, 0, 1) or self.low not in (-1, 0, 1):
            raise ConfigError("PWM high/low values must be -1, 0 or 1")

    @classmethod
    def from_dict(cls, cfg: dict) -> "PwmSpec":
        return cls(
            frequency=float(cfg["frequency"]),
            duty=float(cfg["duty"]),
            phase=float(cfg.get("phase", 0.0)),
            high=int(cfg.get("high", 1)),
            low=int(cfg.get("low", -1)),
            duty_steps=tuple((float(t), float(d)) for t, d in cfg.get("duty_steps", ())),
        )

    @property
    def period(self) -> float:
        return 1.0 / self.frequency

    def duty_at(self, period_start: float) -> float:
        duty = self.duty
        tol = 1e-9 * self.period
        for t, d in sorted(self.duty_steps):
            if t <= period_start + tol:
                duty = d
        return duty

    def value_at(self, t: float) -> int:
        T = self.period
        j = math.floor(t / T - self.phase)
        frac = t / T - self.phase - j
        return self.high if frac < self.duty_at((j + self.phase) * T) else self.low

    def toggles(self, t0: float, t1: float) -> list[float]:
        """Candidate switching instants strictly inside ``(t0, t1)``.

        Period starts are always candidates; instants that do not change the
        level are dropped later when null events are removed.
        """
        T = self.period
        out = []
        for j in range(math.floor(t0 / T - self.phase) - 1, math.ceil(t1 / T - self.phase) + 1):
            start = (j + self.phase) * T
            duty = self.duty_at(start)
            out.append(start)
            if 0.0 < duty < 1.0:
                out.append(start + duty * T)
        return [t for t in out if t0 < t < t1]


@dataclass(frozen=True)
class EventSchedule:
    """Event times with the switching vector active on ``[t_k, t_{k+1})``."""

    times: np.ndarray
    switches: np.ndarray
    t_end: float

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        switches = np.atleast_2d(np.asarray(self.switches, dtype=np.int64))
        if times.ndim != 1 or len(times) != len(switches) or len(times) == 0:
            raise ConfigError("event schedule needs one switch vector per event time")
        if np.any(np.diff(times) <= 0) or not self.t_end > times[-1]:
            raise ConfigError("event times must be strictly increasing and end before t_end")
        if np.any(np.all(switches[1:] == switches[:-1], axis=1)):
            raise ConfigError("consecutive events carry identical switch vectors")
        for k in switches:
            switch_vector(k)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "switches", switches)

    def __len__(self):
        return len(self.times)

    def intervals(self):
        """Yield ``(index, t_start, t_stop, K)``."""
        ends = np.append(self.times[1:], self.t_end)
        for k in range(len(self.times)):
            yield k, float(self.times[k]), float(ends[k]), self.switches[k]

    @classmethod
    def single(cls, K, t0, t1) -> "EventSchedule":
        return cls(np.array([t0]), np.atleast_2d(K), t1)

    def to_csv(self, path):
        d = self.switches.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_event", *[f"k{i}" for i in range(d)]])
            for t, k in zip(self.times, self.switches):
                w.writerow([repr(float(t)), *[int(v) for v in k]])


def build_event_schedule(pwm: Sequence[PwmSpec], t0: float, t1: float, cap: int = SCHEDULE_CAP) -> EventSchedule:
    """Merge the closed-form toggle instants of every pair into one schedule.

    Instants closer than ``1e-9`` of the shortest period coalesce.
    """
    if not t1 > t0:
        raise ConfigError(f"schedule span must be positive, got [{t0}, {t1}]")
    if not pwm:
        raise ConfigError("at least one PWM spec is required")
    estimate = sum(2 * (t1 - t0) * p.frequency + 2 * len(p.duty_steps) for p in pwm)
    if estimate > cap:
        raise ScheduleTooLong(f"about {int(estimate)} events exceed the cap of {cap}")
    tol = 1e-9 * min(p.period for p in pwm)
    raw = sorted(t for p in pwm for t in p.toggles(t0, t1))
    times = [t0]
    for t in raw:
        if t - times[-1] > tol and t1 - t > tol:
            times.append(t)
    if len(times) > cap:
        raise ScheduleTooLong(f"{len(times)} events exceed the cap of {cap}")
    bounds = times + [t1]
    switches = [[p.value_at(0.5 * (a + b)) for p in pwm] for a, b in zip(bounds[:-1], bounds[1:])]
    keep = [0] + [i for i in range(1, len(times)) if switches[i] != switches[i - 1]]
    return EventSchedule(np.array([times[i] for i in keep]), np.array([switches[i] for i in keep]), t1)


# ---------------------------------------------------------------------------
# event-driven simulation
# ---------------------------------------------------------------------------

def event_driven_simulate(topo: CircuitTopology, schedule: EventSchedule, x0, u_spec,
                          config: SolverConfig, assemble=assemble_matrices) -> Trajectory:
    """Event-driven solver (EDS): assemble once per interval, integrate to its end.

    ``assemble(topo, K)`` may be replaced, e.g. by a surrogate.  Errors are
    re-raised annotated with the failing interval index.
    """
    x = np.array(x0, dtype=float)
    if x.shape != (topo.n,):
        raise ConfigError(f"initial state has shape {x.shape}, expected ({topo.n},)")
    traj = Trajectory(solver=f"eds-{config.method}")
    for k, ta, tb, K in schedule.intervals():
        try:
            mats = assemble(topo, K)
            seg = integrate_interval(LtiRhs(mats), ta, tb, x, u_spec, config, interval=k)
        except NssError as exc:
            if exc.interval is not None:
                raise
            raise type(exc)(str(exc), interval=k) from None
        seg.assemblies = 1
        traj.extend(seg)
        x = seg.x[-1]
    return traj


def piecewise_exact_solution(topo: CircuitTopology, schedule: EventSchedule, x0, u_constant,
                             assemble=assemble_matrices) -> tuple[np.ndarray, np.ndarray]:
    """Chain the matrix-exponential solution across events.

    Returns the event-boundary times (end of each interval) and states.
    """
    x = np.array(x0, dtype=float)
    times, states = [], []
    for _, ta, tb, K in schedule.intervals():
        x = matrix_exponential_solution(assemble(topo, K), ta, tb, x, u_constant)
        times.append(tb)
        states.append(x)
    return np.array(times), np.array(states)
