import math

import numpy as np
import pytest

from qswitch.analysis import plan_fidelity, reduce
from qswitch.emitter import emission_coefficients, photon_overlap, transmission_probability
from qswitch.network import NetworkSpec
from qswitch.protocols import (
    Gate,
    ProtocolPlan,
    ghz_witness_threshold,
    plan_bell,
    plan_ghz,
    plan_qst,
    plan_route,
    plan_w,
    populations,
    predicted_ghz_fidelity,
    predicted_route_norms,
    route_norms,
    simulate_plan,
    w_shift_schedule,
)

from conftest import KAPPA


@pytest.fixture(scope="module")
def tau(tp):
    return 25 / KAPPA + tp


@pytest.fixture(scope="module")
def w_spec():
    return NetworkSpec().with_chi(KAPPA / math.sqrt(2), KAPPA, KAPPA, KAPPA)


@pytest.fixture(scope="module")
def bell_run(spec, modes, tau):
    plan = plan_bell(spec, tau)
    return plan, *simulate_plan(plan, spec, modes)[:2]


@pytest.fixture(scope="module")
def w_run(w_spec, modes, tau):
    plan = plan_w(w_spec, 3, 2 * tau + 4 / KAPPA)
    return plan, *simulate_plan(plan, w_spec, modes)[:2]


def test_qst_pulse_placement(spec, tp):
    tau = 20 / KAPPA
    plan = plan_qst(spec, tau)
    emit, catch = plan.schedules
    assert (emit.coupling, catch.coupling) == (1, 2)
    assert emit.center == pytest.approx(-tp / 2) and catch.center == pytest.approx(tp / 2)
    assert catch.center - emit.center == pytest.approx(tp, rel=1e-12)
    assert catch.time_reversed and not emit.time_reversed
    assert emit.window == (-tau / 2, tau / 2)
    assert plan.switch_prep == (0, 0, 0, 0)
    assert plan.tau == pytest.approx(tau)


def test_qst_duration_checks(spec, tp):
    with pytest.raises(ValueError):
        plan_qst(spec, 2 * tp)
    with pytest.warns(UserWarning):
        plan_qst(spec, 8 / KAPPA + tp)


def test_qst_short_duration_is_incomplete(spec, modes, tp):
    f = []
    for x in (10, 20, 30):
        final, model, _ = simulate_plan(plan_qst(spec, x / KAPPA + tp), spec, modes)
        f.append(populations(final, model.layout)[1])
    assert f[0] < 0.99 < f[1] < f[2]


def test_open_emitter_switch_reproduces_coefficients(spec, modes, tau):
    closed = plan_qst(spec, tau)
    fc, model, _ = simulate_plan(closed, spec, modes)
    opened = ProtocolPlan.from_dict({**closed.to_dict(), "switch_prep": [{"bit": 1}, {"bit": 0}, {"bit": 0}, {"bit": 0}]})
    fo, _, _ = simulate_plan(opened, spec, modes)
    e = emission_coefficients(KAPPA, KAPPA)
    q1, q2 = (fo[0].amplitudes[model.layout.qubit(i)] for i in (1, 2))
    assert abs(q1 - e.alpha) < 1e-3
    assert abs(q2 - e.beta * fc[0].amplitudes[model.layout.qubit(2)]) < 1e-3


def test_emitted_shapes_indistinguishable(spec, modes, tau):
    plan = plan_qst(spec, tau)
    shapes = []
    for bit in (0, 1):
        p = ProtocolPlan.from_dict({**plan.to_dict(), "switch_prep": [{"bit": bit}] + [{"bit": 0}] * 3})
        _, model, trace = simulate_plan(p, spec, modes, dense=True)
        t = np.linspace(p.t_start, 0.0, 3001)
        shapes.append(trace.sample(t)[:, 0, model.layout.resonator(1)])
    assert abs(photon_overlap(shapes[0], shapes[1], t)) >= 1 - 1e-4


def test_bell_requires_chi_equal_kappa():
    with pytest.raises(ValueError, match="chi_s1 = kappa"):
        plan_bell(NetworkSpec().with_chi(2 * KAPPA, KAPPA, KAPPA, KAPPA), 30 / KAPPA)


def test_bell_coherent(bell_run):
    plan, final, model = bell_run
    pops = populations(final, model.layout)
    assert pops[0] == pytest.approx(0.5, abs=1e-3)
    assert pops[1] == pytest.approx(0.5, abs=1e-3)
    assert plan_fidelity(plan, reduce(final, plan.target_qubits, model)) >= 0.999
    switches = reduce(final, ("s1", "s2"), model)
    assert switches.matrix[0b10, 0b10].real == pytest.approx(1.0, abs=1e-12)
    rho = reduce(final, ("q1", "q2", "s1", "s2"), model)
    assert np.real(np.trace(rho.matrix @ rho.matrix)) == pytest.approx(1.0, abs=1e-3)


def test_closed_switch_resonators_empty(bell_run, w_run):
    for plan, final, model in (bell_run, w_run):
        for b in final:
            for m, bit in enumerate(b.bits, start=1):
                if not bit:
                    assert abs(b.amplitudes[model.layout.resonator(m)]) ** 2 < 1e-4


def test_ghz_matches_prediction(modes, tau):
    s = NetworkSpec().with_chi(2 * KAPPA, KAPPA, KAPPA, KAPPA)
    plan = plan_ghz(s, tau, modes)
    assert plan.target_qubits == ("q1", "q2", "s1")
    assert [g.name for g in plan.terminal_gates] == ["X", "P"]
    amp0, amp1 = plan.switch_prep[0]
    assert abs(amp0) == pytest.approx(abs(amp1)) == pytest.approx(1 / math.sqrt(2))
    final, model, _ = simulate_plan(plan, s, modes)
    f = plan_fidelity(plan, reduce(final, plan.target_qubits, model))
    assert f == pytest.approx(predicted_ghz_fidelity(2 * KAPPA, KAPPA), abs=1e-3)


def test_ghz_closed_forms():
    assert predicted_ghz_fidelity(KAPPA, KAPPA) == pytest.approx(0.7285533905932737, abs=1e-15)
    assert predicted_ghz_fidelity(1e6 * KAPPA, KAPPA) == pytest.approx(1.0, abs=1e-9)
    thr = ghz_witness_threshold(KAPPA)
    assert thr == pytest.approx(0.455 * KAPPA, abs=0.001 * KAPPA)
    assert predicted_ghz_fidelity(thr, KAPPA) == pytest.approx(0.5, abs=1e-12)
    assert predicted_ghz_fidelity(0.455 * KAPPA, KAPPA) == pytest.approx(0.5, abs=1e-3)


def test_w_schedule():
    assert w_shift_schedule(3, KAPPA) == pytest.approx([KAPPA / math.sqrt(2), KAPPA])
    sched = w_shift_schedule(5, 1.0)
    for k, chi in enumerate(sched, start=1):
        assert transmission_probability(chi, 1.0) == pytest.approx((5 - k) / (6 - k))
    assert transmission_probability(w_shift_schedule(3, 1.0)[0], 1.0) == pytest.approx(2 / 3)


def test_w_rejects_wrong_shifts(spec, tau):
    with pytest.raises(ValueError, match=r"chi_s1 = 4\.44288"):
        plan_w(spec, 3, 2 * tau)
    with pytest.raises(ValueError):
        plan_w(spec, 4, 2 * tau)


def test_w_plan_structure(w_run):
    plan = w_run[0]
    assert plan.switch_prep == (1, 0, 1, 0)
    (e1, c1, e2, c2) = plan.schedules
    assert (e1.coupling, c1.coupling, e2.coupling, c2.coupling) == (1, 2, 3, 4)
    assert e2.window[0] - e1.window[1] == pytest.approx(4 / KAPPA)
    assert plan.loss_qubits == ("q2", "q3")


def test_w_coherent(w_run):
    plan, final, model = w_run
    pops = populations(final, model.layout)
    assert np.allclose(pops, 1 / 3, atol=1e-3)
    assert plan_fidelity(plan, reduce(final, plan.target_qubits, model)) >= 0.999
    assert [b.bits for b in final] == [(1, 0, 1, 0)]


@pytest.fixture(scope="module")
def route_spec():
    return NetworkSpec()


@pytest.mark.parametrize(
    "order,bits",
    [("left_first", (0, 1)), ("left_first", (0, 0)), ("left_first", (1, 1)), ("right_first", (1, 1)),
     ("simultaneous_split", (0, 0))],
)
def test_routing_norms(route_spec, modes, order, bits):
    plan = plan_route(route_spec, order, bits)
    final, model, _ = simulate_plan(plan, route_spec, modes)
    got = route_norms(final, model)
    want = predicted_route_norms(order, KAPPA, KAPPA, bits, KAPPA)
    assert np.allclose(got, want, atol=1e-3)


def test_route_predictions():
    assert predicted_route_norms("left_first", KAPPA, KAPPA, (1, 1), KAPPA) == pytest.approx((0.5, 0.25, 0.25))
    assert predicted_route_norms("left_first", KAPPA, 3 * KAPPA, (0, 1), KAPPA) == pytest.approx((1, 0, 0), abs=1e-15)
    assert predicted_route_norms("simultaneous_split", KAPPA, KAPPA, (0, 0), KAPPA) == (0.5, 0.5, 0.0)


def test_route_mirror_symmetry(route_spec, modes):
    s = route_spec.with_chi(KAPPA, 0.6 * KAPPA, 2 * KAPPA, KAPPA)
    fl, model, _ = simulate_plan(plan_route(s, "left_first", (1, 1)), s, modes)
    mirrored = s.with_chi(KAPPA, 2 * KAPPA, 0.6 * KAPPA, KAPPA)
    fr, _, _ = simulate_plan(plan_route(mirrored, "right_first", (1, 1)), mirrored, modes)
    l1, r1, c1 = route_norms(fl, model)
    l2, r2, c2 = route_norms(fr, model)
    assert (l1, r1, c1) == pytest.approx((r2, l2, c2), abs=1e-9)


def test_route_rejects_bad_input(route_spec):
    with pytest.raises(ValueError, match="overlap"):
        plan_route(route_spec, "left_first", (1, 1), gap=-1 / KAPPA)
    with pytest.raises(ValueError):
        plan_route(route_spec, "simultaneous_split", (1, 0))
    with pytest.raises(ValueError):
        plan_route(route_spec, "sideways")
    with pytest.raises(ValueError):
        plan_route(NetworkSpec(n_nodes=2), "left_first")


def test_split_amplitudes(route_spec):
    plan = plan_route(route_spec, "simultaneous_split")
    scales = {s.coupling: s.amplitude_scale for s in plan.schedules}
    assert scales[2] == scales[3] == pytest.approx(1 / math.sqrt(2))
    assert scales[1] == scales[4] == 1.0


@pytest.mark.parametrize("maker", ["qst", "bell", "w", "route", "ghz"])
def test_plan_json_round_trip(maker, spec, w_spec, tau):
    plans = {
        "qst": lambda: plan_qst(spec, tau),
        "bell": lambda: plan_bell(spec, tau),
        "w": lambda: plan_w(w_spec, 3, 2 * tau + 4 / KAPPA),
        "route": lambda: plan_route(spec, "right_first", (1, 0)),
        "ghz": lambda: plan_ghz(spec, tau, phases=(0.3, -0.7)),
    }
    plan = plans[maker]()
    again = ProtocolPlan.from_json(plan.to_json())
    assert again == plan
    assert again.to_json() == plan.to_json()


def test_plan_validation(spec, tau):
    base = plan_qst(spec, tau).to_dict()
    with pytest.raises(ValueError):
        ProtocolPlan.from_dict({**base, "switch_prep": [{"superposition": [[1, 0], [1, 0]]}] + [{"bit": 0}] * 3})
    with pytest.raises(ValueError):
        ProtocolPlan.from_dict({**base, "t_end": base["t_start"] + 1e-9})
    with pytest.raises(ValueError):
        Gate("H", "q1")


def test_branches_of_superposition(spec, tau):
    plan = plan_ghz(spec, tau, phases=(0.0, 0.0))
    br = plan.branches()
    assert [b for b, _ in br] == [(0, 0, 0, 0), (1, 0, 0, 0)]
    assert sum(abs(w) ** 2 for _, w in br) == pytest.approx(1.0)
