"""Acceptance suite: eleven end-to-end criteria, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v`` (the lines appear in the terminal summary)
or directly with ``python tests/test_acceptance.py``.
"""

import csv
import time

import numpy as np
import pytest

from conftest import stable_system
from nssim.bench import load_scenario, run_bench
from nssim.circuit import (
    DATA_DIR,
    assemble_matrices,
    bundled_circuit,
    delta_matrices,
    enumerate_admissible_switch_set,
    random_topology,
)
from nssim.cli import main
from nssim.neural import TrainConfig
from nssim.nss import (
    SamplingConfig,
    build_model_dataset,
    build_solver_dataset,
    nss_simulate,
    nss_step,
    train_model_net,
)
from nssim.solvers import (
    InputSpec,
    PwmSpec,
    SolverConfig,
    build_event_schedule,
    dopri54_integrate,
    event_driven_simulate,
    matrix_exponential_solution,
    piecewise_exact_solution,
)
from test_circuit import BUCK_OFF_A, BUCK_OFF_B, BUCK_ON_A, BUCK_ON_B, HB_A, HB_B
from test_neural import max_gradient_error
from test_solvers import convergence_slope

SCENARIO = DATA_DIR / "buck_dynamic.toml"
RESULTS = {}


def report(number: int, title: str, passed: bool, detail: str, elapsed: float, limit: float):
    ok = passed and elapsed < limit
    line = (f"ACCEPTANCE {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail} "
            f"[{elapsed:.2f} s, limit {limit:g} s]")
    RESULTS[number] = line
    return ok


def _rel(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / max(np.linalg.norm(b), 1e-300)


def test_1_assembly_exactness():
    t0 = time.perf_counter()
    buck, hb = bundled_circuit("buck"), bundled_circuit("halfbridge_rlc")
    worst = 0.0
    for K, A, B in (([1], BUCK_ON_A, BUCK_ON_B), ([-1], BUCK_OFF_A, BUCK_OFF_B)):
        mats = assemble_matrices(buck, K)
        worst = max(worst, _rel(mats.A, A), _rel(mats.B, B))
    for K in enumerate_admissible_switch_set(hb):
        mats = assemble_matrices(hb, K)
        worst = max(worst, _rel(mats.A, HB_A), np.linalg.norm(mats.B - HB_B[tuple(K)]) / max(np.linalg.norm(HB_B[tuple(K)]), 1.0))
    zero_exact = all(
        not (lambda dl: dl.dA.any() or dl.dB.any())(delta_matrices(t, np.zeros(t.d, dtype=int))) for t in (buck, hb)
    )
    ok = report(1, "matrix assembly exactness", worst <= 1e-12 and zero_exact,
                f"max relative deviation {worst:.2e}, delta(K=0) exactly zero: {zero_exact}",
                time.perf_counter() - t0, 1)
    assert ok


def test_2_integrator_orders():
    t0 = time.perf_counter()
    slopes = {m: convergence_slope(m) for m in ("euler", "heun", "rk4")}
    ok_slopes = (abs(slopes["euler"] - 1) <= 0.1 and abs(slopes["heun"] - 2) <= 0.1
                 and abs(slopes["rk4"] - 4) <= 0.2)
    worst_ratio = 0.0
    for rtol in (1e-6, 1e-8):
        for seed in range(20):
            mats, x0, u = stable_system(seed)
            exact = matrix_exponential_solution(mats, 0.0, 1e-2, x0, u)
            got = dopri54_integrate(mats, 0.0, 1e-2, x0, u, SolverConfig(rtol=rtol, atol=rtol * 1e-3)).final
            worst_ratio = max(worst_ratio, _rel(got, exact) / rtol)
    ok = report(2, "integrator orders", ok_slopes and worst_ratio <= 10,
                f"slopes euler {slopes['euler']:.3f}, heun {slopes['heun']:.3f}, rk4 {slopes['rk4']:.3f}; "
                f"dopri worst error {worst_ratio:.2f} x rtol over 20 systems",
                time.perf_counter() - t0, 30)
    assert ok


def test_3_event_driven_baseline():
    t0 = time.perf_counter()
    buck = bundled_circuit("buck")
    sched = build_event_schedule([PwmSpec(20000.0, 0.5)], 0.0, 3 / 20000.0)
    traj = event_driven_simulate(buck, sched, [0.0, 0.0], InputSpec.constant([12.0]),
                                 SolverConfig(rtol=1e-9, atol=1e-12))
    _, exact = piecewise_exact_solution(buck, sched, [0.0, 0.0], [12.0])
    err = _rel(traj.boundary_states()[1], exact)
    ok = report(3, "event-driven baseline vs exponential oracle", err <= 1e-7,
                f"relative L2 error {err:.2e} over {len(sched)} intervals", time.perf_counter() - t0, 10)
    assert ok


def test_4_gradient_correctness():
    t0 = time.perf_counter()
    worst = {act: max(max_gradient_error(seed, act) for seed in range(5)) for act in ("relu", "tanh")}
    ok = report(4, "backprop vs finite differences", max(worst.values()) <= 1e-4,
                f"max componentwise relative error relu {worst['relu']:.1e}, tanh {worst['tanh']:.1e}",
                time.perf_counter() - t0, 10)
    assert ok


def test_5_model_net_fit():
    t0 = time.perf_counter()
    topo = random_topology(3, 1, 4, 0)
    combos = enumerate_admissible_switch_set(topo, "binary_pairs")
    model, _ = train_model_net(build_model_dataset(topo, combos), topo.n, topo.m, [12, 64, 64, 12],
                               TrainConfig(epochs=5000, batch_size=16, lr=1e-3, seed=0))
    worst = 0.0
    for K in combos:
        exact, pred = delta_matrices(topo, K), model.predict_delta(K)
        for e, p in ((exact.dA, pred.dA), (exact.dB, pred.dB)):
            worst = max(worst, np.linalg.norm(p - e) / (np.linalg.norm(e) + 1e-12))
    ok = report(5, "model net fit on d=4 toy topology", len(combos) == 16 and worst <= 1e-2,
                f"{len(combos)} switch vectors, worst per-matrix relative Frobenius error {worst:.2e}",
                time.perf_counter() - t0, 180)
    assert ok


def test_6_residual_identity(buck_bundle):
    t0 = time.perf_counter()
    topo = buck_bundle.topo
    samples = build_solver_dataset(topo, buck_bundle.model, SamplingConfig.for_topology(topo, seed=1))
    worst = max(
        _rel(nss_step(buck_bundle, s.t_prev, s.x_prev, s.u_prev, s.h, s.K, correction=s.R), s.x_ref)
        for s in samples
    )
    ok = report(6, "true residual reproduces reference", worst <= 1e-10,
                f"worst relative deviation {worst:.2e} over {len(samples)} samples",
                time.perf_counter() - t0, 10)
    assert ok


def test_7_one_step_gain(buck_bundle):
    t0 = time.perf_counter()
    topo = buck_bundle.topo
    held_out = build_solver_dataset(topo, buck_bundle.model, SamplingConfig.for_topology(topo, n_states=50, seed=99))
    wins = 0
    for s in held_out:
        corrected = nss_step(buck_bundle, s.t_prev, s.x_prev, s.u_prev, s.h, s.K)
        base = nss_step(buck_bundle, s.t_prev, s.x_prev, s.u_prev, s.h, s.K, correction=np.zeros(topo.n))
        wins += np.linalg.norm(corrected - s.x_ref) <= 0.5 * np.linalg.norm(base - s.x_ref)
    frac = wins / len(held_out)
    ok = report(7, "one-step gain over the base method", frac >= 0.9,
                f"{100 * frac:.1f}% of {len(held_out)} held-out steps at <= 0.5x the Heun error",
                time.perf_counter() - t0, 120)
    assert ok


def test_8_end_to_end_accuracy(buck_bundle_dir):
    t0 = time.perf_counter()
    scn = load_scenario(SCENARIO, bundle_override=buck_bundle_dir)
    nss = next(c for c in scn.competitors if c.is_nss)
    bundle = scn.bundle(nss.bundle)
    sched = scn.schedule
    ref = event_driven_simulate(scn.topo, sched, scn.x0, scn.input_spec, scn.reference)
    traj = nss_simulate(scn.topo, bundle, sched, scn.x0, scn.input_spec, nss.max_h)
    err = _rel(traj.boundary_states()[1], ref.boundary_states()[1])
    steps = np.bincount(np.array(traj.interval_index)[np.array(traj.h) > 0], minlength=len(sched))
    lengths = np.diff(np.append(sched.times, sched.t_end))
    single = bool(np.all(steps[lengths <= nss.max_h] == 1))
    periods = (scn.tspan[1] - scn.tspan[0]) * scn.pwm[0].frequency
    ok = report(8, "end-to-end NSS accuracy", err <= 0.02 and single and round(periods) == 20,
                f"relative RMS {100 * err:.3f}% over {periods:.0f} periods, "
                f"one step per short interval: {single}", time.perf_counter() - t0, 60)
    assert ok


def _csv_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_9_cost_stability(buck_bundle_dir, tmp_path):
    t0 = time.perf_counter()
    scn = load_scenario(SCENARIO, bundle_override=buck_bundle_dir)
    run_bench("stepcost", scn, tmp_path)
    summary = {r["label"]: r for r in _csv_rows(tmp_path / "stepcost_summary.csv")}
    nss_std = float(summary["NSS"]["std"])
    dopri = summary["EDS-Dopri"]
    ok = report(9, "per-step cost stability", nss_std == 0.0 and int(dopri["min"]) < int(dopri["max"]),
                f"NSS std {nss_std:g} cycles; Dopri cycles range {dopri['min']}..{dopri['max']} "
                f"(std {float(dopri['std']):.2f})", time.perf_counter() - t0, 60)
    assert ok


def test_10_efficiency_direction(buck_bundle_dir, tmp_path):
    t0 = time.perf_counter()
    scn = load_scenario(SCENARIO, bundle_override=buck_bundle_dir)
    run_bench("pareto", scn, tmp_path)
    rows = _csv_rows(tmp_path / "pareto.csv")
    nss = next(r for r in rows if r["method"] == "nss")
    dopri = [r for r in rows if r["method"] == "dopri54" and float(r["rel_rms"]) <= 0.02]
    cheapest = min(int(r["ops"]) for r in dopri)
    ok = report(10, "efficiency vs EDS-Dopri at matched error",
                float(nss["rel_rms"]) <= 0.02 and bool(dopri) and int(nss["ops"]) < cheapest,
                f"NSS {nss['ops']} ops at {100 * float(nss['rel_rms']):.3f}% vs cheapest Dopri "
                f"within 2%: {cheapest} ops", time.perf_counter() - t0, 120)
    assert ok


def test_11_determinism(buck_bundle_dir, tmp_path):
    t0 = time.perf_counter()
    dirs = [tmp_path / "train_a", tmp_path / "train_b"]
    train_times = []
    for d in dirs:
        ts = time.perf_counter()
        assert main(["train", "--circuit", "buck.circuit", "--seed", "0", "--out", str(d)]) == 0
        train_times.append(time.perf_counter() - ts)
    files = ("model.nssw", "solver.nssw", "bundle.meta")
    same_train = all((dirs[0] / f).read_bytes() == (dirs[1] / f).read_bytes() ==
                     (buck_bundle_dir / f).read_bytes() for f in files)
    outs = [tmp_path / "bench_a", tmp_path / "bench_b"]
    for d, b in zip(outs, dirs):
        assert main(["bench", "all", "--scenario", str(SCENARIO), "--bundle", str(b), "--out", str(d)]) == 0
    names = sorted(p.name for p in outs[0].iterdir())
    same_bench = names == sorted(p.name for p in outs[1].iterdir()) and all(
        (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names)
    ok = report(11, "seeded pipelines are byte-reproducible",
                same_train and same_bench and max(train_times) < 300,
                f"train artifacts identical: {same_train} (slowest run {max(train_times):.1f} s), "
                f"{len(names)} bench artifacts identical: {same_bench}", time.perf_counter() - t0, 600)
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
