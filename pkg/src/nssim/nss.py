"""Neural substitute solver: dual-network training and corrected stepping.

The model net maps a one-hot switching vector to the matrix variations
``(dA, dB)`` so the online linear solve is replaced by a forward pass.  The
solver net learns the scaled local truncation error of a cheap base method,

    R = (x_ref(t + h) - base_step(x)) / h**(p + 1),

and a step becomes ``base_step(x) + h**(p + 1) * R_hat``.  Training is
sequential: the model net is trained and frozen first, and residual targets
are computed on the dynamics it defines.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuit import (
    CircuitTopology,
    DeltaMatrices,
    SystemMatrices,
    delta_matrices,
    enumerate_admissible_switch_set,
    one_hot_encode,
    switch_vector,
)
from .errors import ChecksumMismatch, ConfigError, NonFiniteState, NssError, ParseError, SequentialTrainingError, ShapeMismatch
from .neural import (
    Dataset,
    MlpNetwork,
    Normalizer,
    TrainConfig,
    load_weights,
    mlp_forward,
    mlp_init,
    save_weights,
    train,
)
from .solvers import (
    EventSchedule,
    LtiRhs,
    SolverConfig,
    Trajectory,
    dopri54,
    step_euler,
    step_heun,
)

log = logging.getLogger(__name__)

BASE_METHODS = {"euler": (step_euler, 1), "heun": (step_heun, 2)}
REFERENCE_RTOL = 1e-10
OUTLIER_BOUND = 1e6
BUNDLE_FORMAT = "nss-bundle-1"


# ---------------------------------------------------------------------------
# model net (switch vector -> matrix variations)
# ---------------------------------------------------------------------------

@dataclass
class ModelNet:
    """Trained model network plus the target statistics needed to decode it."""

    net: MlpNetwork
    target_norm: Normalizer
    n: int
    m: int

    def raw_output(self, K) -> np.ndarray:
        return self.target_norm.denormalize(mlp_forward(self.net, one_hot_encode(K)))

    def predict_delta(self, K) -> DeltaMatrices:
        out = self.raw_output(K)
        n, m = self.n, self.m
        return DeltaMatrices(out[: n * n].reshape(n, n), out[n * n:].reshape(n, m))


def build_model_dataset(topo: CircuitTopology, admissible_set=None) -> Dataset:
    """One row per switching vector: one-hot input, flattened ``(dA, dB)`` target."""
    if admissible_set is None:
        admissible_set = enumerate_admissible_switch_set(topo)
    inputs, targets = [], []
    for K in admissible_set:
        try:
            delta = delta_matrices(topo, K)
        except NssError as exc:
            raise type(exc)(f"{exc} (while building the model dataset)") from None
        inputs.append(one_hot_encode(K))
        targets.append(delta.flatten())
    return Dataset(np.array(inputs), np.array(targets))


def frobenius_loss(pred_targets, exact_targets, n: int, m: int) -> float:
    """Mean over rows of ``||dA - dA_hat||_F^2 + ||dB - dB_hat||_F^2``."""
    P = np.atleast_2d(pred_targets)
    E = np.atleast_2d(exact_targets)
    total = 0.0
    for p, e in zip(P, E):
        dA = (p[: n * n] - e[: n * n]).reshape(n, n)
        dB = (p[n * n:] - e[n * n:]).reshape(n, m)
        total += np.linalg.norm(dA, "fro") ** 2 + np.linalg.norm(dB, "fro") ** 2
    return total / len(P)


def default_model_arch(topo: CircuitTopology) -> list[int]:
    return [3 * topo.d, 64, 64, topo.n * topo.n + topo.n * topo.m]


def train_model_net(dataset: Dataset, n: int, m: int, arch=None, config: TrainConfig | None = None,
                    activation: str = "relu"):
    """Fit the model net to a :func:`build_model_dataset` table.

    One-hot inputs are not normalized; targets are standardized per entry.
    Returns ``(ModelNet, loss_history)``.
    """
    d3 = dataset.inputs.shape[1]
    arch = list(arch) if arch else [d3, 64, 64, n * n + n * m]
    if arch[0] != d3 or arch[-1] != n * n + n * m:
        raise ShapeMismatch(f"model arch {arch} must map {d3} one-hot inputs to {n * n + n * m} outputs")
    config = config or TrainConfig(epochs=500)
    dataset.fit_normalization(exempt_inputs=np.ones(d3, dtype=bool))
    net = mlp_init(arch, activation, config.seed)
    net, history = train(net, dataset, config)
    return ModelNet(net, dataset.target_norm, n, m), history


# ---------------------------------------------------------------------------
# solver net (scaled truncation residual)
# ---------------------------------------------------------------------------

@dataclass
class ResidualSample:
    t_prev: float
    x_prev: np.ndarray
    u_prev: np.ndarray
    h: float
    K: np.ndarray
    R: np.ndarray
    x_ref: np.ndarray


@dataclass
class SolverNet:
    net: MlpNetwork
    input_norm: Normalizer
    target_norm: Normalizer

    def predict(self, features) -> np.ndarray:
        return self.target_norm.denormalize(mlp_forward(self.net, self.input_norm.normalize(features)))


def solver_features(x, u, h, delta: DeltaMatrices) -> np.ndarray:
    """Solver-net input layout: ``(x, u, h, dA.ravel(), dB.ravel())``; time is excluded."""
    return np.concatenate([np.asarray(x, float), np.atleast_1d(np.asarray(u, float)), [float(h)], delta.flatten()])


def surrogate_matrices(topo: CircuitTopology, delta: DeltaMatrices) -> SystemMatrices:
    return SystemMatrices(topo.A0 + delta.dA, topo.B0 + delta.dB)


@dataclass(frozen=True)
class SamplingConfig:
    """How residual samples are drawn.

    ``state_box`` / ``input_box`` are per-component ``[low, high]`` ranges;
    every sampled ``(K, x0, u, h)`` is followed for ``horizon_steps`` steps
    of size ``h`` along the reference trajectory.
    """

    n_states: int = 50
    state_box: tuple = ()
    input_box: tuple = ()
    h_range: tuple = (1e-5, 4e-5)
    horizon_steps: int = 5
    seed: int = 0
    reference_rtol: float = REFERENCE_RTOL
    outlier_bound: float = OUTLIER_BOUND

    @classmethod
    def for_topology(cls, topo: CircuitTopology, **overrides) -> "SamplingConfig":
        """Defaults from the circuit file's ``[training]`` table, then overrides."""
        tr = topo.training
        kwargs = {
            "state_box": tuple(map(tuple, tr.get("state_box", [[-1.0, 1.0]] * topo.n))),
            "input_box": tuple(map(tuple, tr.get("input_box", [[-1.0, 1.0]] * topo.m))),
            "h_range": tuple(tr.get("h_range", (1e-5, 4e-5))),
        }
        for key in ("n_states", "horizon_steps"):
            if key in tr:
                kwargs[key] = int(tr[key])
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**kwargs)


def _residual_scale(mats: SystemMatrices, x, u, p: int) -> float:
    # Taylor size of R: |A|^(p+1) |x| + |A|^p |B u|
    a = np.linalg.norm(mats.A, np.inf)
    return a ** (p + 1) * np.max(np.abs(x)) + a ** p * np.max(np.abs(mats.B @ u)) + 1e-300


def build_solver_dataset(topo: CircuitTopology, model: ModelNet, sampling: SamplingConfig,
                         admissible_set=None, base_method: str = "heun") -> list[ResidualSample]:
    """Residual-fitting samples on the surrogate dynamics.

    The reference is adaptive Dormand-Prince at ``sampling.reference_rtol``
    landing exactly on each step boundary.  Samples whose residual exceeds
    ``outlier_bound`` times its Taylor scale are logged and dropped.
    """
    if not model.net.trained:
        raise SequentialTrainingError(
            "the model net must be trained (and frozen) before building the solver dataset"
        )
    if base_method not in BASE_METHODS:
        raise ConfigError(f"base method must be one of {sorted(BASE_METHODS)}")
    step, p = BASE_METHODS[base_method]
    if admissible_set is None:
        admissible_set = enumerate_admissible_switch_set(topo)
    sbox = np.array(sampling.state_box, dtype=float).reshape(topo.n, 2)
    ubox = np.array(sampling.input_box, dtype=float).reshape(topo.m, 2)
    h_lo, h_hi = sampling.h_range
    ref_cfg = SolverConfig(rtol=sampling.reference_rtol, atol=sampling.reference_rtol * 1e-2)
    rng = np.random.default_rng(sampling.seed)

    samples = []
    for K in admissible_set:
        K = switch_vector(K, topo.d)
        mats = surrogate_matrices(topo, model.predict_delta(K))
        f = LtiRhs(mats)
        x0s = rng.uniform(sbox[:, 0], sbox[:, 1], size=(sampling.n_states, topo.n))
        us = rng.uniform(ubox[:, 0], ubox[:, 1], size=(sampling.n_states, topo.m))
        hs = rng.uniform(h_lo, h_hi, size=sampling.n_states)
        for x, u, h in zip(x0s, us, hs):
            t = 0.0
            for _ in range(sampling.horizon_steps):
                x_ref = dopri54(f, t, t + h, x, u, ref_cfg).final
                R = (x_ref - step(f, t, x, u, h)) / h ** (p + 1)
                if np.max(np.abs(R)) > sampling.outlier_bound * _residual_scale(mats, x, u, p):
                    log.warning("dropping outlier residual sample K=%s t=%.3e", K.tolist(), t)
                else:
                    samples.append(ResidualSample(t, x, u, h, K, R, x_ref))
                x, t = x_ref, t + h
    return samples


def solver_dataset_arrays(model: ModelNet, samples) -> tuple[np.ndarray, np.ndarray]:
    cache = {}
    X, Y = [], []
    for s in samples:
        key = tuple(int(v) for v in s.K)
        if key not in cache:
            cache[key] = model.predict_delta(s.K)
        X.append(solver_features(s.x_prev, s.u_prev, s.h, cache[key]))
        Y.append(s.R)
    return np.array(X), np.array(Y)


def default_solver_arch(topo: CircuitTopology) -> list[int]:
    n, m = topo.n, topo.m
    return [n + m + 1 + n * n + n * m, 128, 128, n]


def train_solver_net(model: ModelNet, samples, arch=None, config: TrainConfig | None = None,
                     activation: str = "tanh"):
    """Fit the solver net to residual samples; returns ``(SolverNet, loss_history)``."""
    if not samples:
        raise ConfigError("no residual samples to train on")
    X, Y = solver_dataset_arrays(model, samples)
    width_in, n = X.shape[1], Y.shape[1]
    arch = list(arch) if arch else [width_in, 128, 128, n]
    if arch[0] != width_in or arch[-1] != n:
        raise ShapeMismatch(f"solver arch {arch} must map {width_in} inputs to {n} outputs")
    config = config or TrainConfig(epochs=50)
    ds = Dataset(X, Y).fit_normalization()
    net = mlp_init(arch, activation, config.seed)
    net, history = train(net, ds, config)
    return SolverNet(net, ds.input_norm, ds.target_norm), history


# ---------------------------------------------------------------------------
# bundle, stepping and simulation
# ---------------------------------------------------------------------------

@dataclass
class NssBundle:
    topo: CircuitTopology
    model: ModelNet
    solver: SolverNet | None = None
    base_method: str = "heun"
    h_range: tuple = (1e-5, 4e-5)

    def __post_init__(self):
        if self.base_method not in BASE_METHODS:
            raise ConfigError(f"base method must be one of {sorted(BASE_METHODS)}")
        n, m = self.topo.n, self.topo.m
        if self.model.net.layer_sizes[-1] != n * n + n * m:
            raise ShapeMismatch("model net output width must be n^2 + n*m")
        if self.solver is not None and self.solver.net.layer_sizes[-1] != n:
            raise ShapeMismatch("solver net output width must be n")

    @property
    def p(self) -> int:
        return BASE_METHODS[self.base_method][1]


def _warn_h(bundle: NssBundle, h: float):
    lo, hi = bundle.h_range
    if not lo * (1 - 1e-9) <= h <= hi * (1 + 1e-9):
        warnings.warn(f"step {h:.3e} s is outside the trained range [{lo:.3e}, {hi:.3e}]", stacklevel=3)


def nss_step(bundle: NssBundle, t: float, x, u_spec, h: float, K, delta: DeltaMatrices | None = None,
             correction=None) -> np.ndarray:
    """One corrected step ``base_step(x) + h**(p+1) * R``.

    ``R`` comes from the solver net unless ``correction`` is given.  The
    input is sampled once at ``t`` and held over the step; ``delta`` may be
    passed to reuse a cached model-net prediction.
    """
    step, p = BASE_METHODS[bundle.base_method]
    if delta is None:
        delta = bundle.model.predict_delta(K)
    u = np.atleast_1d(u_spec(t) if callable(u_spec) else np.asarray(u_spec, dtype=float))
    x = np.asarray(x, dtype=float)
    base = step(LtiRhs(surrogate_matrices(bundle.topo, delta)), t, x, u, h)
    if correction is None:
        _warn_h(bundle, h)
        correction = bundle.solver.predict(solver_features(x, u, h, delta))
    x_next = base + h ** (p + 1) * np.asarray(correction)
    if not np.all(np.isfinite(x_next)):
        raise NonFiniteState(f"NSS step produced NaN/Inf at t={t:.6e}")
    return x_next


def nss_simulate(topo: CircuitTopology, bundle: NssBundle, schedule: EventSchedule, x0, u_spec,
                 max_h: float, cache: bool = True) -> Trajectory:
    """Event-interval stepping with ``ceil(L / max_h)`` equal NSS steps per interval.

    ``rhs_evals`` in the result counts network forward passes: one model
    pass per interval (per step when ``cache`` is off) plus one solver pass
    per step.
    """
    if bundle.solver is None:
        raise SequentialTrainingError("bundle has no trained solver net")
    if not max_h > 0:
        raise ConfigError("max_h must be positive")
    x = np.array(x0, dtype=float)
    if x.shape != (topo.n,):
        raise ConfigError(f"initial state has shape {x.shape}, expected ({topo.n},)")
    traj = Trajectory(solver=f"nss-{bundle.base_method}")
    for k, ta, tb, K in schedule.intervals():
        L = tb - ta
        nsteps = max(1, math.ceil(L / max_h - 1e-9))
        h = L / nsteps
        traj.append(ta, x, interval=k)
        delta = None
        try:
            for i in range(nsteps):
                t = ta + i * h
                t_next = tb if i == nsteps - 1 else ta + (i + 1) * h
                passes = 1
                if delta is None or not cache:
                    delta = bundle.model.predict_delta(K)
                    passes += 1
                x = nss_step(bundle, t, x, u_spec, t_next - t, K, delta=delta)
                traj.append(t_next, x, t_next - t, passes, 0, k)
        except NssError as exc:
            raise type(exc)(str(exc), interval=k) from None
    return traj


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_bundle(bundle: NssBundle, directory) -> None:
    """Write ``model.nssw``, ``solver.nssw`` (if trained) and ``bundle.meta``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_weights(bundle.model.net, directory / "model.nssw")
    meta = {
        "format": BUNDLE_FORMAT,
        "base_method": bundle.base_method,
        "p": bundle.p,
        "h_range": [float(v).hex() for v in bundle.h_range],
        "topology": {"name": bundle.topo.name, "n": bundle.topo.n, "m": bundle.topo.m,
                     "d": bundle.topo.d, "checksum": bundle.topo.checksum()},
        "model": {"target_norm": bundle.model.target_norm.to_dict()},
        "solver": None,
    }
    if bundle.solver is not None:
        save_weights(bundle.solver.net, directory / "solver.nssw")
        meta["solver"] = {"input_norm": bundle.solver.input_norm.to_dict(),
                          "target_norm": bundle.solver.target_norm.to_dict()}
    (directory / "bundle.meta").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def has_trained_model(directory) -> bool:
    directory = Path(directory)
    return (directory / "model.nssw").is_file() and (directory / "bundle.meta").is_file()


def load_bundle(directory, topo: CircuitTopology, require_solver: bool = True) -> NssBundle:
    directory = Path(directory)
    meta_path = directory / "bundle.meta"
    if not meta_path.is_file():
        raise ParseError(f"no bundle.meta in {directory}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed bundle.meta: {exc}") from None
    if meta.get("format") != BUNDLE_FORMAT:
        raise ParseError(f"unsupported bundle format {meta.get('format')!r}")
    if meta["topology"]["checksum"] != topo.checksum():
        raise ChecksumMismatch(
            f"bundle in {directory} was trained for topology {meta['topology']['name']!r}, "
            f"not the supplied {topo.name!r}"
        )
    n, m = topo.n, topo.m
    model_net = load_weights(directory / "model.nssw")
    model = ModelNet(model_net, Normalizer.from_dict(meta["model"]["target_norm"]), n, m)
    solver = None
    if meta.get("solver") is not None:
        solver = SolverNet(load_weights(directory / "solver.nssw"),
                           Normalizer.from_dict(meta["solver"]["input_norm"]),
                           Normalizer.from_dict(meta["solver"]["target_norm"]))
    elif require_solver:
        raise SequentialTrainingError(f"bundle in {directory} has no trained solver net")
    return NssBundle(topo, model, solver, meta["base_method"],
                     tuple(float.fromhex(v) for v in meta["h_range"]))
