"""Piecewise-LTI circuit description and switch-dependent matrix assembly.

A topology is the six constant matrices of the switch-pair model.  Between
switching events the circuit obeys ``dx/dt = A_k x + B_k u`` with

    A_k = A0 + B1 K (I - D1 K)^-1 C1
    B_k = B0 + B1 K (I - D1 K)^-1 C2

where ``K = diag(k)`` and every ``k_j`` is one of -1, 0, +1.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    NonFiniteEntry,
    ParseError,
    SetTooLarge,
    SingularConfiguration,
)

try:  # Python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

COND_LIMIT = 1e12
SET_CAP = 65536
ADMISSIBLE_MODES = ("binary_pairs", "ternary_full", "explicit_list")
DATA_DIR = Path(__file__).parent / "data"


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CircuitTopology:
    """The six constant matrices of a switch-pair circuit model.

    Shapes: A0 (n, n), B0 (n, m), B1 (n, d), C1 (d, n), C2 (d, m), D1 (d, d).
    Arrays are copied and made read-only on construction.
    """

    A0: np.ndarray
    B0: np.ndarray
    B1: np.ndarray
    C1: np.ndarray
    C2: np.ndarray
    D1: np.ndarray
    name: str = "circuit"
    admissible_mode: str = "binary_pairs"
    switch_list: tuple = ()
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        for key in ("A0", "B0", "B1", "C1", "C2", "D1"):
            arr = _frozen(getattr(self, key))
            if arr.ndim != 2:
                raise DimensionMismatch(f"{key} must be a 2-D matrix, got shape {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise NonFiniteEntry(f"{key} contains NaN or Inf")
            object.__setattr__(self, key, arr)
        n, m, d = self.n, self.m, self.d
        expected = {
            "A0": (n, n), "B0": (n, m), "B1": (n, d),
            "C1": (d, n), "C2": (d, m), "D1": (d, d),
        }
        for key, shape in expected.items():
            if getattr(self, key).shape != shape:
                raise DimensionMismatch(
                    f"{key} has shape {getattr(self, key).shape}, expected {shape}"
                )
        if min(n, m, d) < 1:
            raise DimensionMismatch(f"dimensions must be >= 1, got n={n} m={m} d={d}")
        if self.admissible_mode not in ADMISSIBLE_MODES:
            raise ParseError(f"unknown admissible_mode {self.admissible_mode!r}")

    @property
    def n(self) -> int:
        return self.A0.shape[0]

    @property
    def m(self) -> int:
        return self.B0.shape[1]

    @property
    def d(self) -> int:
        return self.D1.shape[0]

    def checksum(self) -> str:
        """SHA-256 over dimensions and raw matrix bytes (little-endian float64)."""
        h = hashlib.sha256()
        h.update(np.array([self.n, self.m, self.d], dtype="<i8").tobytes())
        for key in ("A0", "B0", "B1", "C1", "C2", "D1"):
            h.update(np.ascontiguousarray(getattr(self, key), dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SystemMatrices:
    A: np.ndarray
    B: np.ndarray


@dataclass(frozen=True)
class DeltaMatrices:
    dA: np.ndarray
    dB: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([self.dA.ravel(), self.dB.ravel()])


def switch_vector(k: Iterable, d: int | None = None) -> np.ndarray:
    """Validate a switching vector and return it as an int array."""
    arr = np.asarray(list(k) if not isinstance(k, np.ndarray) else k)
    if arr.ndim != 1:
        raise ValueError(f"switch vector must be 1-D, got shape {arr.shape}")
    if not np.all(np.isin(arr, (-1, 0, 1))):
        raise ValueError(f"switch vector entries must be -1, 0 or 1, got {arr.tolist()}")
    if d is not None and arr.size != d:
        raise DimensionMismatch(f"switch vector has length {arr.size}, topology has d={d}")
    return arr.astype(np.int64)


def assemble_matrices(topo: CircuitTopology, K, cond_limit: float = COND_LIMIT) -> SystemMatrices:
    """Return ``(A_k, B_k)`` for switching vector ``K``.

    The inverse is never formed: ``(I - D1 K) X = [C1 C2]`` is solved by LU.
    Raises :class:`SingularConfiguration` when the 2-norm condition number of
    ``I - D1 K`` exceeds ``cond_limit``.
    """
    k = switch_vector(K, topo.d).astype(np.float64)
    n = topo.n
    M = np.eye(topo.d) - topo.D1 * k[None, :]
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularConfiguration(
            f"I - D1*diag(K) is singular for K={k.astype(int).tolist()} (cond={cond:.3g})"
        )
    X = scipy.linalg.lu_solve(scipy.linalg.lu_factor(M), np.hstack([topo.C1, topo.C2]))
    B1K = topo.B1 * k[None, :]
    A = topo.A0 + B1K @ X[:, :n]
    B = topo.B0 + B1K @ X[:, n:]
    return SystemMatrices(A, B)


def delta_matrices(topo: CircuitTopology, K, cond_limit: float = COND_LIMIT) -> DeltaMatrices:
    sm = assemble_matrices(topo, K, cond_limit)
    return DeltaMatrices(sm.A - topo.A0, sm.B - topo.B0)


def one_hot_encode(K) -> np.ndarray:
    """Encode each entry as a triplet: -1 -> (1,0,0), 0 -> (0,1,0), +1 -> (0,0,1)."""
    k = switch_vector(K)
    out = np.zeros((k.size, 3))
    out[np.arange(k.size), k + 1] = 1.0
    return out.ravel()


def enumerate_admissible_switch_set(
    topo: CircuitTopology | int,
    mode: str | None = None,
    switch_list: Sequence | None = None,
    cap: int = SET_CAP,
) -> list[np.ndarray]:
    """List the admissible switching vectors in lexicographic order.

    ``topo`` may be a topology (its ``admissible_mode``/``switch_list`` are
    the defaults) or a bare switch-pair count ``d``.
    """
    if isinstance(topo, CircuitTopology):
        d = topo.d
        mode = mode or topo.admissible_mode
        if switch_list is None and topo.switch_list:
            switch_list = topo.switch_list
    else:
        d = int(topo)
        mode = mode or "binary_pairs"
    if mode == "binary_pairs":
        levels = (-1, 1)
    elif mode == "ternary_full":
        levels = (-1, 0, 1)
    elif mode == "explicit_list":
        if switch_list is None:
            raise ParseError("explicit_list mode requires a switch_list")
        if len(switch_list) > cap:
            raise SetTooLarge(f"{len(switch_list)} switch vectors exceed the cap of {cap}")
        vecs = [switch_vector(k, d) for k in switch_list]
        return sorted(vecs, key=lambda v: tuple(v))
    else:
        raise ParseError(f"unknown admissible mode {mode!r}")
    count = len(levels) ** d
    if count > cap:
        raise SetTooLarge(f"{count} switch vectors exceed the cap of {cap}")
    return [np.array(v, dtype=np.int64) for v in itertools.product(levels, repeat=d)]


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

def load_topology(config_text: str) -> CircuitTopology:
    """Parse a circuit file (TOML) into a validated topology."""
    try:
        cfg = tomllib.loads(config_text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"malformed circuit config: {exc}") from None
    if not cfg:
        raise ParseError("circuit config is empty")
    required = ("n", "m", "d", "A0", "B0", "B1", "C1", "C2", "D1")
    missing = [key for key in required if key not in cfg]
    if missing:
        raise ParseError(f"circuit config missing fields: {', '.join(missing)}")
    try:
        n, m, d = (int(cfg[key]) for key in ("n", "m", "d"))
    except (TypeError, ValueError):
        raise ParseError("n, m, d must be integers") from None
    mats = {}
    for key in ("A0", "B0", "B1", "C1", "C2", "D1"):
        try:
            mats[key] = np.array(cfg[key], dtype=np.float64)
        except (TypeError, ValueError):
            raise ParseError(f"{key} is not a rectangular numeric matrix") from None
    expected = {
        "A0": (n, n), "B0": (n, m), "B1": (n, d),
        "C1": (d, n), "C2": (d, m), "D1": (d, d),
    }
    for key, shape in expected.items():
        if mats[key].shape != shape:
            raise DimensionMismatch(
                f"{key} has shape {mats[key].shape} but n={n}, m={m}, d={d} requires {shape}"
            )
    switch_list = tuple(tuple(int(v) for v in k) for k in cfg.get("switch_list", ()))
    return CircuitTopology(
        name=str(cfg.get("name", "circuit")),
        admissible_mode=cfg.get("admissible_mode", "binary_pairs"),
        switch_list=switch_list,
        training=dict(cfg.get("training", {})),
        **mats,
    )


def load_topology_file(path) -> CircuitTopology:
    path = Path(path)
    if not path.exists() and not path.is_absolute() and (DATA_DIR / path).exists():
        path = DATA_DIR / path
    return load_topology(path.read_text())


def bundled_circuit(name: str) -> CircuitTopology:
    """Load one of the circuits shipped in ``nssim/data`` (e.g. ``"buck"``)."""
    return load_topology_file(DATA_DIR / f"{name}.circuit")


def random_topology(n: int, m: int, d: int, seed: int, coupling: float = 0.3) -> CircuitTopology:
    """Random well-posed topology for property tests.

    ``A0`` is shifted to be Hurwitz and ``D1`` is scaled so that
    ``I - D1 K`` stays well conditioned for every admissible ``K``.
    """
    rng = np.random.default_rng(seed)
    A0 = rng.standard_normal((n, n))
    A0 -= (np.max(np.linalg.eigvals(A0).real) + 1.0) * np.eye(n)
    D1 = rng.standard_normal((d, d))
    D1 *= coupling / max(np.linalg.norm(D1, 2), 1e-12)
    return CircuitTopology(
        A0=A0,
        B0=rng.standard_normal((n, m)),
        B1=rng.standard_normal((n, d)),
        C1=rng.standard_normal((d, n)),
        C2=rng.standard_normal((d, m)),
        D1=D1,
        name=f"random-{n}-{m}-{d}-{seed}",
    )
