import math

import numpy as np
import pytest

from conftest import stable_system
from nssim.circuit import CircuitTopology, SystemMatrices, assemble_matrices
from nssim.errors import ConfigError, NonFiniteState, SingularConfiguration
from nssim.solvers import (
    EventSchedule,
    InputSpec,
    LtiRhs,
    PwmSpec,
    SolverConfig,
    build_event_schedule,
    dopri54_integrate,
    event_driven_simulate,
    fixed_step_integrate,
    matrix_exponential_solution,
    piecewise_exact_solution,
    read_trajectory_csv,
    rhs,
    step_euler,
    step_heun,
    step_rk4,
)

DECAY = SystemMatrices(np.array([[-1.0]]), np.array([[0.0]]))
ZERO2 = SystemMatrices(np.zeros((2, 2)), np.zeros((2, 1)))


def test_rhs_examples(buck):
    assert np.array_equal(rhs(ZERO2, 0.0, [1.0, 2.0], [1.0]), [0.0, 0.0])
    minus_i = SystemMatrices(-np.eye(2), np.zeros((2, 1)))
    assert np.array_equal(rhs(minus_i, 0.0, [1.0, 2.0], [0.0]), [-1.0, -2.0])
    on = assemble_matrices(buck, [1])
    assert np.array_equal(rhs(on, 0.0, [0.0, 0.0], [12.0]), [120000.0, 0.0])


@pytest.mark.parametrize("step", [step_euler, step_heun, step_rk4])
def test_zero_dynamics_fixed_point(step):
    f = LtiRhs(ZERO2)
    assert np.array_equal(step(f, 0.0, np.array([3.0, -1.0]), np.array([1.0]), 0.1), [3.0, -1.0])


def test_scalar_decay_single_steps():
    f = LtiRhs(DECAY)
    x = np.array([1.0])
    u = np.array([0.0])
    assert step_euler(f, 0.0, x, u, 0.1)[0] == pytest.approx(0.9, abs=1e-15)
    assert step_heun(f, 0.0, x, u, 0.1)[0] == pytest.approx(0.905, abs=1e-15)
    assert step_rk4(f, 0.0, x, u, 0.1)[0] == pytest.approx(0.9048375, abs=1e-15)
    assert abs(step_rk4(f, 0.0, x, u, 0.1)[0] - math.exp(-0.1)) < 1e-6


def test_nonfinite_state_raises():
    f = LtiRhs(SystemMatrices(np.array([[np.inf]]), np.array([[0.0]])))
    with pytest.raises(NonFiniteState):
        step_euler(f, 0.0, np.array([1.0]), np.array([0.0]), 0.1)


def convergence_slope(method: str) -> float:
    mats = SystemMatrices(np.array([[-2.0, 1.0], [-1.0, -3.0]]), np.array([[1.0], [0.5]]))
    x0, u, T = np.array([1.0, -1.0]), np.array([1.0]), 1.0
    exact = matrix_exponential_solution(mats, 0.0, T, x0, u)
    hs = [0.1 / 2 ** i for i in range(5)]
    errs = [np.linalg.norm(fixed_step_integrate(LtiRhs(mats), 0.0, T, x0, u, method, h).final - exact)
            for h in hs]
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def test_convergence_orders():
    assert abs(convergence_slope("euler") - 1.0) <= 0.1
    assert abs(convergence_slope("heun") - 2.0) <= 0.1
    assert abs(convergence_slope("rk4") - 4.0) <= 0.2


def test_fixed_step_times_and_accounting():
    traj = fixed_step_integrate(LtiRhs(DECAY), 0.0, 1.0, [1.0], [0.0], "heun", 0.3)
    assert traj.t == [0.0, 0.3, 0.6, 0.8999999999999999, 1.0]
    assert traj.total_rhs_evals == 4 * 2


def test_dopri_zero_dynamics_single_step():
    traj = dopri54_integrate(ZERO2, 0.0, 2.0, [1.0, 2.0], [0.0])
    assert traj.n_steps == 1 and traj.t[-1] == 2.0
    assert np.array_equal(traj.final, [1.0, 2.0])


def test_dopri_scalar_decay():
    cfg = SolverConfig(rtol=1e-8, atol=1e-8)
    traj = dopri54_integrate(DECAY, 0.0, 1.0, [1.0], [0.0], cfg)
    assert abs(traj.final[0] - math.exp(-1)) <= 1e-7
    assert traj.t[-1] == 1.0


@pytest.mark.parametrize("rtol", [1e-6, 1e-8])
def test_dopri_random_stable_systems(rtol):
    for seed in range(20):
        mats, x0, u = stable_system(seed)
        T = 1e-2
        exact = matrix_exponential_solution(mats, 0.0, T, x0, u)
        got = dopri54_integrate(mats, 0.0, T, x0, u, SolverConfig(rtol=rtol, atol=rtol * 1e-3)).final
        assert np.linalg.norm(got - exact) <= 10 * rtol * np.linalg.norm(exact), seed


def test_dopri_rhs_accounting():
    mats, x0, u = stable_system(0)
    traj = dopri54_integrate(mats, 0.0, 1e-2, x0, u, SolverConfig(rtol=1e-3, atol=1e-6))
    assert traj.total_rhs_evals == 6 * (traj.n_steps + traj.n_rejected) + 1
    assert traj.n_rejected > 0


def test_dopri_buck_subinterval_matches_expm(buck):
    on = assemble_matrices(buck, [1])
    x0 = np.array([1.0, 4.0])
    exact = matrix_exponential_solution(on, 0.0, 2.5e-5, x0, [12.0])
    rtol = 1e-9
    got = dopri54_integrate(on, 0.0, 2.5e-5, x0, [12.0], SolverConfig(rtol=rtol, atol=1e-12)).final
    assert np.linalg.norm(got - exact) <= 10 * rtol * np.linalg.norm(exact)


def test_expm_examples():
    assert np.array_equal(matrix_exponential_solution(ZERO2, 0.0, 1.0, [1.0, 2.0], [3.0]), [1.0, 2.0])
    assert matrix_exponential_solution(DECAY, 0.0, 1.0, [1.0], [0.0])[0] == pytest.approx(0.36787944117144233, rel=1e-14)
    integ = SystemMatrices(np.array([[0.0]]), np.array([[1.0]]))
    assert matrix_exponential_solution(integ, 0.0, 2.0, [0.5], [1.0])[0] == pytest.approx(2.5, rel=1e-14)


def test_schedule_examples():
    one = build_event_schedule([PwmSpec(1.0, 0.5)], 0.0, 1.0)
    assert one.times.tolist() == [0.0, 0.5]
    assert one.switches.tolist() == [[1], [-1]]
    full = build_event_schedule([PwmSpec(1.0, 1.0)], 0.0, 3.0)
    assert full.times.tolist() == [0.0] and full.switches.tolist() == [[1]]
    two = build_event_schedule([PwmSpec(1.0, 0.5), PwmSpec(1.0, 0.25)], 0.0, 1.0)
    assert two.times.tolist() == [0.0, 0.25, 0.5]
    assert two.switches.tolist() == [[1, 1], [1, -1], [-1, -1]]


def test_schedule_duty_step_and_errors():
    pwm = PwmSpec(20000.0, 0.5, duty_steps=((5e-4, 0.7),))
    sched = build_event_schedule([pwm], 0.0, 1e-3)
    assert len(sched) == 40
    lengths = np.diff(np.append(sched.times, sched.t_end))
    assert np.allclose(lengths[:20], 2.5e-5) and np.allclose(lengths[20::2], 3.5e-5)
    with pytest.raises(ConfigError):
        build_event_schedule([pwm], 1.0, 0.0)
    with pytest.raises(ConfigError):
        PwmSpec(1.0, 1.5)
    with pytest.raises(ConfigError):
        EventSchedule(np.array([0.0, 1.0]), np.array([[1], [1]]), 2.0)


def test_eds_constant_trajectory():
    topo = CircuitTopology(A0=np.zeros((2, 2)), B0=np.zeros((2, 1)), B1=np.zeros((2, 1)),
                           C1=np.zeros((1, 2)), C2=np.zeros((1, 1)), D1=np.zeros((1, 1)))
    traj = event_driven_simulate(topo, EventSchedule.single([0], 0.0, 1.0), [1.0, -2.0],
                                 InputSpec.constant([1.0]), SolverConfig())
    assert np.all(traj.states == [1.0, -2.0])


def test_eds_matches_piecewise_exact(buck):
    sched = build_event_schedule([PwmSpec(20000.0, 0.5)], 0.0, 1.5e-4)
    u = InputSpec.constant([12.0])
    traj = event_driven_simulate(buck, sched, [0.0, 0.0], u, SolverConfig(rtol=1e-9, atol=1e-12))
    _, exact = piecewise_exact_solution(buck, sched, [0.0, 0.0], [12.0])
    _, got = traj.boundary_states()
    assert np.linalg.norm(got - exact) <= 1e-7 * np.linalg.norm(exact)
    assert traj.assemblies == len(sched)


def test_eds_assembly_count_independent_of_steps(buck):
    sched = build_event_schedule([PwmSpec(20000.0, 0.3)], 0.0, 2e-4)
    u = InputSpec.constant([12.0])
    coarse = event_driven_simulate(buck, sched, [0.0, 0.0], u, SolverConfig("rk4", h=1e-5))
    fine = event_driven_simulate(buck, sched, [0.0, 0.0], u, SolverConfig("rk4", h=1e-6))
    assert fine.n_steps > coarse.n_steps
    assert coarse.assemblies == fine.assemblies == len(sched)


def test_eds_state_continuity(buck):
    sched = build_event_schedule([PwmSpec(20000.0, 0.4)], 0.0, 2e-4)
    traj = event_driven_simulate(buck, sched, [0.0, 0.0], InputSpec.constant([12.0]), SolverConfig(rtol=1e-6))
    idx = traj.interval_index
    for i in range(1, len(idx)):
        if idx[i] != idx[i - 1]:
            assert np.array_equal(traj.x[i], traj.x[i - 1])
            assert traj.t[i] == traj.t[i - 1]


def test_eds_error_names_interval():
    topo = CircuitTopology(A0=[[-1.0]], B0=[[1.0]], B1=[[1.0]], C1=[[1.0]], C2=[[1.0]], D1=[[1.0]])
    sched = build_event_schedule([PwmSpec(1.0, 0.5, high=-1, low=1)], 0.0, 1.0)
    with pytest.raises(SingularConfiguration, match="event interval 1"):
        event_driven_simulate(topo, sched, [0.0], InputSpec.constant([1.0]), SolverConfig())


def test_trajectory_csv_round_trip(tmp_path, buck):
    sched = build_event_schedule([PwmSpec(20000.0, 0.5)], 0.0, 1e-4)
    traj = event_driven_simulate(buck, sched, [0.0, 0.0], InputSpec.constant([12.0]), SolverConfig())
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    assert path.read_text().splitlines()[0] == "t,x0,x1,h,rhs_evals,interval_index"
    back = read_trajectory_csv(path)
    assert back.t == traj.t and np.array_equal(back.states, traj.states)
    assert back.rhs_evals == traj.rhs_evals


def test_solver_config_parse():
    cfg = SolverConfig.parse("dopri54,rtol=1e-9,atol=1e-12")
    assert (cfg.method, cfg.rtol, cfg.atol) == ("dopri54", 1e-9, 1e-12)
    assert SolverConfig.parse("rk4,h=1e-6").h == 1e-6
    for bad in ["", "midpoint", "rk4,h=-1", "rk4,step=1"]:
        with pytest.raises(ConfigError):
            SolverConfig.parse(bad)


def test_input_spec_kinds():
    pw = InputSpec.from_dict({"kind": "piecewise_constant", "times": [0.0, 1.0], "values": [[1.0], [2.0]]})
    assert pw(0.5)[0] == 1.0 and pw(1.0)[0] == 2.0
    sn = InputSpec.from_dict({"kind": "sinusoid", "amplitude": [2.0], "offset": [1.0], "frequency": 1.0})
    assert sn(0.25)[0] == pytest.approx(3.0)
