"""Pulse programs, switch settings and terminal gates for the chain protocols.

Time origin is the middle of the protocol.  A single pitch-and-catch stage
spanning ``[a, b]`` places the emitter pulse at ``(a+b)/2 - t_p/2`` and the
time-mirrored receiver pulse at ``(a+b)/2 + t_p/2``; both are cut off at the
stage edges.

Qubit labels are ``"q1".."qN"`` for node qubits and ``"s1".."s{2N-2}"`` for
switches.
"""
from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .emitter import DEFAULT_RTOL, emission_coefficients
from .network import (
    BranchState,
    Layout,
    NetworkModel,
    NetworkSpec,
    assemble_rhs,
    build_modes,
    excited_state,
    propagation_delay,
)
from .pulses import PulseSchedule

__all__ = [
    "Gate",
    "ProtocolPlan",
    "PulseSchedule",
    "GUARD_GAP_KAPPAS",
    "plan_qst",
    "plan_bell",
    "plan_ghz",
    "plan_w",
    "plan_route",
    "simulate_plan",
    "initial_state",
    "calibrate_ghz_phases",
    "predicted_ghz_fidelity",
    "predicted_route_norms",
    "ghz_witness_threshold",
    "w_shift_schedule",
    "route_norms",
    "populations",
]

GUARD_GAP_KAPPAS = 4.0
ROUTE_ORDERS = ("left_first", "right_first", "simultaneous_split")
TARGETS = ("qst", "bell", "ghz", "w", "route")
_CHI_RTOL = 1e-9


@dataclass(frozen=True)
class Gate:
    """Error-free local gate: ``X`` or phase gate ``P(phase) = diag(1, e^{i phase})``."""

    name: str
    qubit: str
    phase: float = 0.0

    def __post_init__(self):
        if self.name not in ("X", "P"):
            raise ValueError(f"unsupported gate {self.name!r}")

    def matrix(self) -> np.ndarray:
        if self.name == "X":
            return np.array([[0, 1], [1, 0]], dtype=complex)
        return np.diag([1.0, np.exp(1j * self.phase)])


def _prep_entry(p):
    if isinstance(p, (int, np.integer)):
        if p not in (0, 1):
            raise ValueError(f"switch bit must be 0 or 1, got {p}")
        return int(p)
    a0, a1 = (complex(x) for x in p)
    if abs(abs(a0) ** 2 + abs(a1) ** 2 - 1.0) > 1e-12:
        raise ValueError("switch superposition weights must be normalised")
    return (a0, a1)


@dataclass(frozen=True)
class ProtocolPlan:
    """Everything needed to run one protocol on a chain.

    ``switch_prep`` holds, per switch, either a classical bit or the pair
    ``(amp0, amp1)`` of a superposition.  ``loss_qubits`` are the qubits
    whose excitation arrived through a link (one entry per traversal).
    """

    name: str
    n_nodes: int
    switch_prep: tuple
    schedules: tuple[PulseSchedule, ...]
    t_start: float
    t_end: float
    initial_qubit: int = 1
    terminal_gates: tuple[Gate, ...] = ()
    target: str = "qst"
    target_qubits: tuple[str, ...] = ("q1", "q2")
    loss_qubits: tuple[str, ...] = ()
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        n_sw = 2 * (self.n_nodes - 1)
        prep = tuple(_prep_entry(p) for p in self.switch_prep)
        if len(prep) != n_sw:
            raise ValueError(f"need {n_sw} switch preparations, got {len(prep)}")
        object.__setattr__(self, "switch_prep", prep)
        object.__setattr__(self, "schedules", tuple(self.schedules))
        object.__setattr__(self, "terminal_gates", tuple(self.terminal_gates))
        object.__setattr__(self, "target_qubits", tuple(self.target_qubits))
        object.__setattr__(self, "loss_qubits", tuple(self.loss_qubits))
        if not self.t_end > self.t_start:
            raise ValueError("protocol needs t_end > t_start")
        if self.target not in TARGETS:
            raise ValueError(f"unknown target {self.target!r}")
        if not 1 <= self.initial_qubit <= self.n_nodes:
            raise ValueError("initial qubit outside the chain")
        slack = 1e-12 * (self.t_end - self.t_start)
        for s in self.schedules:
            a, b = s.window
            if a < self.t_start - slack or b > self.t_end + slack:
                raise ValueError(f"schedule on g_{s.coupling} leaves the protocol interval")
            if s.coupling > n_sw:
                raise ValueError(f"no coupling g_{s.coupling} in a {self.n_nodes}-node chain")

    @property
    def tau(self) -> float:
        return self.t_end - self.t_start

    def branches(self) -> list[tuple[tuple[int, ...], complex]]:
        """Switch configurations with their amplitudes (zero-weight ones dropped)."""
        options = []
        for p in self.switch_prep:
            options.append([(p, 1.0)] if isinstance(p, int) else [(0, p[0]), (1, p[1])])
        out = []
        for combo in itertools.product(*options):
            w = complex(np.prod([a for _, a in combo]))
            if w != 0:
                out.append((tuple(b for b, _ in combo), w))
        return out

    def to_dict(self) -> dict:
        prep = [
            {"bit": p} if isinstance(p, int) else {"superposition": [[p[0].real, p[0].imag], [p[1].real, p[1].imag]]}
            for p in self.switch_prep
        ]
        return {
            "name": self.name,
            "n_nodes": self.n_nodes,
            "switch_prep": prep,
            "schedules": [s.to_dict() for s in self.schedules],
            "t_start": self.t_start,
            "t_end": self.t_end,
            "initial_qubit": self.initial_qubit,
            "terminal_gates": [{"name": g.name, "qubit": g.qubit, "phase": g.phase} for g in self.terminal_gates],
            "target": self.target,
            "target_qubits": list(self.target_qubits),
            "loss_qubits": list(self.loss_qubits),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolPlan":
        prep = []
        for p in d["switch_prep"]:
            if "bit" in p:
                prep.append(int(p["bit"]))
            else:
                (r0, i0), (r1, i1) = p["superposition"]
                prep.append((complex(r0, i0), complex(r1, i1)))
        return cls(
            name=d["name"],
            n_nodes=int(d["n_nodes"]),
            switch_prep=tuple(prep),
            schedules=tuple(PulseSchedule.from_dict(s) for s in d["schedules"]),
            t_start=float(d["t_start"]),
            t_end=float(d["t_end"]),
            initial_qubit=int(d["initial_qubit"]),
            terminal_gates=tuple(Gate(**g) for g in d["terminal_gates"]),
            target=d["target"],
            target_qubits=tuple(d["target_qubits"]),
            loss_qubits=tuple(d["loss_qubits"]),
            metadata=dict(d.get("metadata", {})),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ProtocolPlan":
        return cls.from_dict(json.loads(text))


def _stage(spec: NetworkSpec, emit: int, catch: int, a: float, b: float, scale: float = 1.0) -> list[PulseSchedule]:
    tp = propagation_delay(spec)
    mid = 0.5 * (a + b)
    k = spec.kappa
    return [
        PulseSchedule(emit, k, "sech", mid - 0.5 * tp, (a, b), amplitude_scale=scale),
        PulseSchedule(catch, k, "sech", mid + 0.5 * tp, (a, b), time_reversed=True),
    ]


def _check_tau(spec: NetworkSpec, tau: float) -> None:
    tp = propagation_delay(spec)
    if not tau > 2 * tp:
        raise ValueError(f"tau = {tau:.4e} s must exceed twice the link delay ({2 * tp:.4e} s)")
    if tau < 10.0 / spec.kappa + tp:
        warnings.warn("tau shorter than 10/kappa + t_p: pulse cores are truncated", stacklevel=3)


def _single_stage_plan(spec, tau, name, target, switch_prep, **kw) -> ProtocolPlan:
    _check_tau(spec, tau)
    return ProtocolPlan(
        name=name,
        n_nodes=spec.n_nodes,
        switch_prep=switch_prep,
        schedules=tuple(_stage(spec, 1, 2, -0.5 * tau, 0.5 * tau)),
        t_start=-0.5 * tau,
        t_end=0.5 * tau,
        initial_qubit=1,
        target=target,
        **kw,
    )


def _closed(spec: NetworkSpec) -> list:
    return [0] * spec.n_switches


def plan_qst(spec: NetworkSpec, tau: float) -> ProtocolPlan:
    """Transfer the excitation of qubit 1 to qubit 2 with all switches closed."""
    return _single_stage_plan(
        spec, tau, "qst", "qst", _closed(spec), target_qubits=("q1", "q2"), loss_qubits=("q2",)
    )


def plan_bell(spec: NetworkSpec, tau: float) -> ProtocolPlan:
    """Half-transfer through an open switch with ``chi_s1 = kappa``."""
    if not math.isclose(spec.chi[0], spec.kappa, rel_tol=_CHI_RTOL):
        raise ValueError(
            f"Bell protocol needs chi_s1 = kappa = {spec.kappa:.6e} rad/s, got {spec.chi[0]:.6e} rad/s"
        )
    prep = _closed(spec)
    prep[0] = 1
    return _single_stage_plan(
        spec, tau, "bell", "bell", prep, target_qubits=("q1", "q2"), loss_qubits=("q2",)
    )


def initial_state(plan: ProtocolPlan, layout: Layout) -> list[BranchState]:
    y = excited_state(layout, plan.initial_qubit)
    return [BranchState(bits, w, y.copy()) for bits, w in plan.branches()]


def simulate_plan(
    plan: ProtocolPlan,
    spec: NetworkSpec,
    modes=None,
    tol: float = DEFAULT_RTOL,
    dense: bool = False,
    model: NetworkModel | None = None,
):
    """Coherent run of a plan.  Returns ``(final_state, model, trace)``."""
    if model is None:
        modes = build_modes(spec) if modes is None else modes
        model = assemble_rhs(spec, modes, plan.schedules)
    state = initial_state(plan, model.layout)
    final, trace = model.evolve(state, plan.t_start, plan.t_end, tol=tol, dense=dense)
    return final, model, trace


def populations(state: Sequence[BranchState], layout: Layout) -> np.ndarray:
    """Node-qubit excitation probabilities summed over branches."""
    p = np.zeros(layout.n_nodes)
    for b in state:
        p += abs(b.weight) ** 2 * np.abs(b.amplitudes[layout.q]) ** 2
    return p


def calibrate_ghz_phases(spec: NetworkSpec, tau: float, modes=None) -> tuple[float, float]:
    """Propagation phase ``phi`` and the phase of the remaining amplitude ``alpha``.

    ``phi`` is the argument of qubit 2's amplitude after a closed-switch
    transfer; the ``alpha`` phase is that of qubit 1 after emission through
    the open switch.
    """
    modes = build_modes(spec) if modes is None else modes
    closed = plan_qst(spec, tau)
    final, model, _ = simulate_plan(closed, spec, modes)
    phi = float(np.angle(final[0].amplitudes[model.layout.qubit(2)]))
    prep = _closed(spec)
    prep[0] = 1
    opened = ProtocolPlan(**{**_plan_fields(closed), "switch_prep": tuple(prep)})
    final, model, _ = simulate_plan(opened, spec, modes)
    alpha_phase = float(np.angle(final[0].amplitudes[model.layout.qubit(1)]))
    return phi, alpha_phase


def _plan_fields(plan: ProtocolPlan) -> dict:
    return {f: getattr(plan, f) for f in plan.__dataclass_fields__}


def plan_ghz(spec: NetworkSpec, tau: float, modes=None, phases: tuple[float, float] | None = None) -> ProtocolPlan:
    """Three-qubit GHZ over (q1, q2, s1) from switch s1 in superposition.

    ``phases`` skips the two calibration runs when already known.
    """
    _check_tau(spec, tau)
    phi, alpha_phase = calibrate_ghz_phases(spec, tau, modes) if phases is None else phases
    prep = list(_closed(spec))
    r = 1 / math.sqrt(2)
    prep[0] = (r * complex(np.exp(-1j * phi)), complex(r))
    base = _single_stage_plan(spec, tau, "ghz", "ghz", prep)
    return ProtocolPlan(
        **{
            **_plan_fields(base),
            "terminal_gates": (Gate("X", "q2"), Gate("P", "q2", -alpha_phase)),
            "target_qubits": ("q1", "q2", "s1"),
            "loss_qubits": ("q2",),
            "metadata": {"phi": phi, "alpha_phase": alpha_phase, "chi_over_kappa": spec.chi[0] / spec.kappa},
        }
    )


def w_shift_schedule(n: int, kappa: float) -> list[float]:
    """Dispersive shifts of the emitting switches ``s_1, s_3, ..`` for a W_n state."""
    if n < 2:
        raise ValueError("W state needs at least two qubits")
    return [kappa / math.sqrt(n - k) for k in range(1, n)]


def plan_w(spec: NetworkSpec, n: int, tau: float, gap: float | None = None) -> ProtocolPlan:
    """Sequential W_n preparation over the node qubits.

    Stage ``k`` transfers from qubit ``k`` to ``k+1`` through open switch
    ``s_{2k-1}`` (receiver switches closed).  ``tau`` is the total duration;
    stages are separated by ``gap`` (default ``4/kappa``).
    """
    if n != spec.n_nodes:
        raise ValueError(f"W_{n} needs a {n}-node chain, spec has {spec.n_nodes}")
    required = w_shift_schedule(n, spec.kappa)
    actual = [spec.chi[2 * k] for k in range(n - 1)]
    if not all(math.isclose(a, r, rel_tol=_CHI_RTOL) for a, r in zip(actual, required)):
        want = ", ".join(f"chi_s{2 * k + 1} = {r:.6e}" for k, r in enumerate(required))
        raise ValueError(f"W_{n} needs {want} rad/s")
    gap = GUARD_GAP_KAPPAS / spec.kappa if gap is None else gap
    if gap < 0:
        raise ValueError("stage gap must be non-negative")
    stage = (tau - (n - 2) * gap) / (n - 1)
    _check_tau(spec, stage)
    t0 = -0.5 * tau
    schedules = []
    for k in range(1, n):
        a = t0 + (k - 1) * (stage + gap)
        schedules += _stage(spec, 2 * k - 1, 2 * k, a, a + stage)
    prep = [1 if m % 2 == 1 else 0 for m in range(1, spec.n_switches + 1)]
    return ProtocolPlan(
        name=f"w{n}",
        n_nodes=n,
        switch_prep=tuple(prep),
        schedules=tuple(schedules),
        t_start=t0,
        t_end=0.5 * tau,
        target="w",
        target_qubits=tuple(f"q{i}" for i in range(1, n + 1)),
        loss_qubits=tuple(f"q{i}" for i in range(2, n + 1)),
        metadata={"shift_schedule": required, "stage_duration": stage, "gap": gap},
    )


def _default_route_tau(spec: NetworkSpec, order: str) -> float:
    stage = 20.0 / spec.kappa + propagation_delay(spec)
    if order == "simultaneous_split":
        return stage
    return 2 * stage + GUARD_GAP_KAPPAS / spec.kappa


def plan_route(
    spec: NetworkSpec,
    order: str,
    switch_bits: tuple[int, int] = (0, 0),
    tau: float | None = None,
    gap: float | None = None,
) -> ProtocolPlan:
    """Emit from the central node of a three-node chain towards its neighbours.

    ``switch_bits`` sets the left (s2) and right (s3) switches.  Sequential
    orders emit on one side, then the other; ``simultaneous_split`` drives
    both couplings at once with amplitude ``1/sqrt(2)``.  Catch pulses on
    ``g_1`` and ``g_4`` absorb the photons at the outer nodes.
    """
    if spec.n_nodes != 3:
        raise ValueError("routing is defined on a three-node chain")
    if order not in ROUTE_ORDERS:
        raise ValueError(f"unknown routing order {order!r}; expected one of {ROUTE_ORDERS}")
    bl, br = (int(b) for b in switch_bits)
    if order == "simultaneous_split" and (bl or br):
        raise ValueError("split emission requires both switches closed")
    tau = _default_route_tau(spec, order) if tau is None else tau
    gap = GUARD_GAP_KAPPAS / spec.kappa if gap is None else gap
    t0, t1 = -0.5 * tau, 0.5 * tau
    if order == "simultaneous_split":
        _check_tau(spec, tau)
        r = 1 / math.sqrt(2)
        schedules = _stage(spec, 2, 1, t0, t1, scale=r) + _stage(spec, 3, 4, t0, t1, scale=r)
    else:
        stage = 0.5 * (tau - gap)
        _check_tau(spec, stage)
        first, second = (t0, t0 + stage), (t0 + stage + gap, t1)
        if first[1] > second[0]:
            raise ValueError("sequential routing windows overlap")
        left = (2, 1)
        right = (3, 4)
        a, b = (left, right) if order == "left_first" else (right, left)
        schedules = _stage(spec, *a, *first) + _stage(spec, *b, *second)
    return ProtocolPlan(
        name=f"route_{order}",
        n_nodes=3,
        switch_prep=(0, bl, br, 0),
        schedules=tuple(schedules),
        t_start=t0,
        t_end=t1,
        initial_qubit=2,
        target="route",
        target_qubits=("q1", "q2", "q3"),
        loss_qubits=("q1", "q3"),
        metadata={"order": order, "switch_bits": [bl, br]},
    )


def predicted_route_norms(order: str, chi_l: float, chi_r: float, switch_bits, kappa: float):
    """``(left, right, emitter)`` norms from the single-emitter coefficients."""
    bl, br = switch_bits
    if order == "simultaneous_split":
        if bl or br:
            raise ValueError("split emission requires both switches closed")
        return 0.5, 0.5, 0.0
    el = emission_coefficients(chi_l if bl else 0.0, kappa)
    er = emission_coefficients(chi_r if br else 0.0, kappa)
    if order == "left_first":
        left = abs(el.beta) ** 2
        right = abs(el.alpha) ** 2 * abs(er.beta) ** 2
    elif order == "right_first":
        right = abs(er.beta) ** 2
        left = abs(er.alpha) ** 2 * abs(el.beta) ** 2
    else:
        raise ValueError(f"unknown routing order {order!r}")
    return left, right, abs(el.alpha * er.alpha) ** 2


def route_norms(state: Sequence[BranchState], model: NetworkModel) -> tuple[float, float, float]:
    """Norm found in the left link subsystem, the right one, and the central node."""
    lay = model.layout
    w = model.norm_weights
    left = [lay.qubit(1), lay.resonator(1), *range(lay.link(1).start, lay.link(1).stop)]
    right = [lay.qubit(3), lay.resonator(4), *range(lay.link(2).start, lay.link(2).stop)]
    centre = [lay.qubit(2), lay.resonator(2), lay.resonator(3)]
    out = []
    for idx in (left, right, centre):
        out.append(sum(abs(b.weight) ** 2 * float(np.abs(b.amplitudes[idx]) ** 2 @ w[idx]) for b in state))
    return tuple(out)


def predicted_ghz_fidelity(chi: float, kappa: float) -> float:
    return 0.25 * (1.0 + math.sqrt(chi**2 / (chi**2 + kappa**2))) ** 2


def ghz_witness_threshold(kappa: float) -> float:
    """Smallest ``chi`` for which the predicted GHZ fidelity exceeds 1/2."""
    s2 = math.sqrt(2.0)
    return math.sqrt((3 - 2 * s2) / (2 * s2 - 2)) * kappa
