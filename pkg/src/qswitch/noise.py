"""T1 relaxation by quantum trajectories, photon loss and bootstrap statistics.

Trajectories use the waiting-time algorithm: draw ``r ~ U(0,1)``, evolve
under the non-Hermitian drift until the state norm squared falls to ``r``,
jump, renormalise, repeat.  The jump-free first segment is the same for
every trajectory of an ensemble, so it is integrated once and each
trajectory only looks up its own crossing time in the dense output.

Each trajectory ``i`` draws from its own Philox stream keyed by
``(master_seed, i)``, so an ensemble does not depend on how trajectories
are scheduled over workers.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq

from .analysis import ReducedDensityMatrix, plan_fidelity, reduce
from .emitter import DEFAULT_RTOL
from .network import BranchState, NetworkModel, NetworkSpec, assemble_rhs, build_modes
from .protocols import ProtocolPlan, initial_state


@dataclass(frozen=True)
class NoiseSpec:
    """Relaxation times (s) and photon loss per link traversal.

    ``t1_switch`` overrides the switch-qubit T1 (default: same as ``t1``).
    """

    t1: float = math.inf
    p_loss: float = 0.0
    t1_switch: float | None = None

    def __post_init__(self):
        if not self.t1 > 0:
            raise ValueError("t1 must be positive")
        if self.t1_switch is not None and not self.t1_switch > 0:
            raise ValueError("t1_switch must be positive")
        if not 0 <= self.p_loss < 1:
            raise ValueError("p_loss must lie in [0, 1)")

    @property
    def switch_t1(self) -> float:
        return self.t1 if self.t1_switch is None else self.t1_switch

    def rates(self, spec: NetworkSpec) -> tuple[np.ndarray, np.ndarray]:
        """Decay rates of node qubits and switches."""
        return (
            np.full(spec.n_nodes, 0.0 if math.isinf(self.t1) else 1.0 / self.t1),
            np.full(spec.n_switches, 0.0 if math.isinf(self.switch_t1) else 1.0 / self.switch_t1),
        )

    @property
    def coherent(self) -> bool:
        return math.isinf(self.t1) and math.isinf(self.switch_t1)


def trajectory_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for trajectory ``index``."""
    ss = np.random.SeedSequence(master_seed, spawn_key=(index,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Jump:
    time: float
    qubit: str


@dataclass
class TrajectoryResult:
    state: list[BranchState]
    jumps: list[Jump] = field(default_factory=list)


def _jump(model: NetworkModel, state: list[BranchState], rng: np.random.Generator) -> tuple[list[BranchState], str]:
    """Pick a decay channel with probability proportional to its rate times population."""
    lay = model.layout
    qrate, srate = model.qubit_decay, model.switch_decay
    weights = []
    for i in range(lay.n_nodes):
        pop = sum(abs(b.weight) ** 2 * abs(b.amplitudes[lay.qubit(i + 1)]) ** 2 for b in state)
        weights.append(qrate[i] * pop)
    branch_norms = [abs(b.weight) ** 2 * float((np.abs(b.amplitudes) ** 2) @ model.norm_weights) for b in state]
    for j in range(lay.n_res):
        pop = sum(n for b, n in zip(state, branch_norms) if b.bits[j])
        weights.append(srate[j] * pop)
    weights = np.array(weights)
    total = weights.sum()
    if not total > 0:
        raise RuntimeError("jump requested with no decaying population")
    k = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
    k = min(k, len(weights) - 1)
    if k < lay.n_nodes:
        idx = lay.qubit(k + 1)
        out = []
        for b in state:
            y = np.zeros_like(b.amplitudes)
            y[0] = b.amplitudes[idx]
            out.append(BranchState(b.bits, b.weight, y))
        label = f"q{k + 1}"
    else:
        j = k - lay.n_nodes
        out = []
        for b in state:
            if b.bits[j]:
                bits = tuple(0 if m == j else v for m, v in enumerate(b.bits))
                out.append(BranchState(bits, b.weight, b.amplitudes.copy()))
        label = f"s{j + 1}"
    out = [b for b in out if b.weight != 0 and np.any(b.amplitudes)]
    return model.normalize(out), label


def _is_vacuum(state: list[BranchState]) -> bool:
    return all(not np.any(b.amplitudes[1:]) for b in state)


def _vacuum_step(model, state, t, t_end, r):
    """Waiting-time step for a vacuum state, where only switches decay.

    Each branch just loses weight at its own constant rate, so the norm is
    a sum of exponentials and the crossing time is found directly.
    """
    rates = np.array([float(np.dot(model.switch_decay, b.bits)) for b in state])
    n0 = np.array([abs(b.weight) ** 2 * abs(b.amplitudes[0]) ** 2 for b in state])

    def norm(dt):
        return float(np.sum(n0 * np.exp(-rates * dt)))

    def at(dt):
        return [BranchState(b.bits, b.weight * math.exp(-0.5 * g * dt), b.amplitudes) for b, g in zip(state, rates)]

    if norm(t_end - t) > r:
        return None, at(t_end - t)
    dt = brentq(lambda x: norm(x) - r, 0.0, t_end - t, xtol=1e-15 * max(t_end - t, 1e-300), rtol=1e-15)
    return t + dt, at(dt)


def _propagate(
    model: NetworkModel,
    state: list[BranchState],
    t: float,
    t_end: float,
    rng: np.random.Generator,
    tol: float,
    jumps: list[Jump],
) -> list[BranchState]:
    while True:
        r = rng.random()
        if _is_vacuum(state):
            tj, st = _vacuum_step(model, state, t, t_end, r)
            if tj is None:
                return model.normalize(st)
            state, label = _jump(model, st, rng)
            jumps.append(Jump(tj, label))
            t = tj
            continue
        _, trace = model.evolve(state, t, t_end, tol=tol, dense=True)
        tj = trace.first_time_norm_below(r)
        if tj is None:
            return model.normalize(trace.state(trace.t1))
        state, label = _jump(model, trace.state(tj), rng)
        jumps.append(Jump(tj, label))
        t = tj
        if t >= t_end:
            return state


def _noisy_model(plan: ProtocolPlan, spec: NetworkSpec, noise: NoiseSpec, modes) -> NetworkModel:
    modes = build_modes(spec) if modes is None else modes
    qd, sd = noise.rates(spec)
    return assemble_rhs(spec, modes, plan.schedules, qubit_decay=qd, switch_decay=sd)


def run_trajectory(
    plan: ProtocolPlan,
    spec: NetworkSpec,
    noise: NoiseSpec,
    seed,
    modes=None,
    tol: float = DEFAULT_RTOL,
    model: NetworkModel | None = None,
) -> TrajectoryResult:
    """One quantum trajectory of ``plan``.

    ``seed`` is an int master seed or a ready ``numpy`` Generator.  With no
    relaxation the result is the coherent final state, untouched.
    """
    rng = seed if isinstance(seed, np.random.Generator) else trajectory_rng(int(seed), 0)
    model = _noisy_model(plan, spec, noise, modes) if model is None else model
    state = initial_state(plan, model.layout)
    if noise.coherent:
        final, _ = model.evolve(state, plan.t_start, plan.t_end, tol=tol)
        return TrajectoryResult(final)
    jumps: list[Jump] = []
    final = _propagate(model, state, plan.t_start, plan.t_end, rng, tol, jumps)
    return TrajectoryResult(final, jumps)


@dataclass(eq=False)
class Ensemble:
    """Trajectory outcomes stored as distinct final states with multiplicities.

    ``assignment[i]`` is the index into ``states`` of trajectory ``i``.
    """

    plan: ProtocolPlan
    spec: NetworkSpec
    noise: NoiseSpec
    model: NetworkModel
    master_seed: int
    states: list[list[BranchState]]
    assignment: np.ndarray
    jumps: list[list[Jump]]

    def __len__(self) -> int:
        return len(self.assignment)

    @property
    def counts(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=len(self.states))

    @property
    def jump_counts(self) -> np.ndarray:
        return np.array([len(j) for j in self.jumps])

    def trajectory(self, i: int) -> list[BranchState]:
        return self.states[self.assignment[i]]

    def reduced_states(self, labels: Sequence[str] | None = None) -> np.ndarray:
        """Reduced matrix of every distinct state, shape ``(n_states, d, d)``."""
        labels = self.plan.target_qubits if labels is None else tuple(labels)
        key = tuple(labels)
        cache = self.__dict__.setdefault("_reduced", {})
        if key not in cache:
            cache[key] = np.array([reduce(s, labels, self.model).matrix for s in self.states])
        return cache[key]

    def average(self, labels: Sequence[str] | None = None, subset=None) -> ReducedDensityMatrix:
        """Mean reduced state over all trajectories or the given trajectory indices."""
        labels = self.plan.target_qubits if labels is None else tuple(labels)
        mats = self.reduced_states(labels)
        idx = self.assignment if subset is None else self.assignment[np.asarray(subset)]
        counts = np.bincount(idx, minlength=len(self.states))
        rho = np.tensordot(counts / counts.sum(), mats, axes=1)
        return ReducedDensityMatrix(labels, rho)


def run_ensemble(
    plan: ProtocolPlan,
    spec: NetworkSpec,
    noise: NoiseSpec,
    n_trajectories: int,
    master_seed: int = 0,
    modes=None,
    tol: float = DEFAULT_RTOL,
    workers: int = 1,
) -> Ensemble:
    """Run ``n_trajectories`` trajectories of ``plan``; results are ordered by index."""
    if n_trajectories < 1:
        raise ValueError("need at least one trajectory")
    model = _noisy_model(plan, spec, noise, modes)
    state0 = initial_state(plan, model.layout)
    if noise.coherent:
        final, _ = model.evolve(state0, plan.t_start, plan.t_end, tol=tol)
        return Ensemble(
            plan, spec, noise, model, master_seed, [final],
            np.zeros(n_trajectories, dtype=int), [[] for _ in range(n_trajectories)],
        )
    _, first = model.evolve(state0, plan.t_start, plan.t_end, tol=tol, dense=True)
    no_jump = model.normalize(first.state(first.t1))

    def one(i: int):
        rng = trajectory_rng(master_seed, i)
        r = rng.random()
        tj = first.first_time_norm_below(r)
        if tj is None:
            return None, []
        jumps: list[Jump] = []
        state, label = _jump(model, first.state(tj), rng)
        jumps.append(Jump(tj, label))
        if tj < plan.t_end:
            state = _propagate(model, state, tj, plan.t_end, rng, tol, jumps)
        return state, jumps

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, range(n_trajectories)))
    else:
        results = [one(i) for i in range(n_trajectories)]

    states = [no_jump]
    assignment = np.zeros(n_trajectories, dtype=int)
    jumps = []
    for i, (st, js) in enumerate(results):
        jumps.append(js)
        if st is not None:
            assignment[i] = len(states)
            states.append(st)
    return Ensemble(plan, spec, noise, model, master_seed, states, assignment, jumps)


def apply_photon_loss(rho: ReducedDensityMatrix, p_loss: float, affected: Sequence[str]) -> ReducedDensityMatrix:
    """Amplitude damping with probability ``p_loss`` on each listed qubit (repeats apply again)."""
    if not 0 <= p_loss <= 1:
        raise ValueError("p_loss must lie in [0, 1]")
    rho.check(trace_tol=1e-6, psd_tol=1e-9)
    if p_loss == 0:
        return rho
    k0 = np.array([[1, 0], [0, math.sqrt(1 - p_loss)]], dtype=complex)
    k1 = np.array([[0, math.sqrt(p_loss)], [0, 0]], dtype=complex)
    m = rho.matrix
    n = rho.n_qubits
    for q in affected:
        if q not in rho.labels:
            raise ValueError(f"qubit {q!r} not in density matrix labels {rho.labels}")
        pos = rho.labels.index(q)
        a0 = _embed_op(k0, pos, n)
        a1 = _embed_op(k1, pos, n)
        m = a0 @ m @ a0.conj().T + a1 @ m @ a1.conj().T
    return ReducedDensityMatrix(rho.labels, m)


def _embed_op(op, pos, n):
    return np.kron(np.kron(np.eye(2**pos), op), np.eye(2 ** (n - pos - 1)))


@dataclass(frozen=True)
class BootstrapSpec:
    n_resamples: int = 100
    sample_size: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.n_resamples < 1 or self.sample_size < 1:
            raise ValueError("resample count and size must be positive")


def bootstrap_fidelity(
    ensemble: Ensemble,
    fidelity_fn: Callable[[ReducedDensityMatrix], float] | None,
    bootstrap: BootstrapSpec,
) -> tuple[float, float]:
    """Mean and standard deviation of the fidelity over resampled sub-ensembles.

    Each resample draws ``sample_size`` distinct trajectories, averages their
    reduced states over the plan's target qubits, applies photon loss to the
    plan's loss qubits and then the terminal gates.  ``fidelity_fn`` defaults
    to the plan's target fidelity.
    """
    n = len(ensemble)
    m = bootstrap.sample_size
    if m > n:
        raise ValueError(f"sample size {m} exceeds ensemble size {n}")
    plan = ensemble.plan
    if fidelity_fn is None:
        def fidelity_fn(rho):
            return plan_fidelity(plan, rho)
        gates = ()
    else:
        gates = plan.terminal_gates
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(bootstrap.seed)))
    values = []
    for _ in range(bootstrap.n_resamples):
        idx = rng.choice(n, size=m, replace=False)
        rho = ensemble.average(subset=idx)
        rho = apply_photon_loss(rho, ensemble.noise.p_loss, plan.loss_qubits)
        values.append(fidelity_fn(rho.apply_gates(gates)))
    values = np.array(values)
    # offsets from the first value keep a constant sample exactly constant
    dev = values - values[0]
    std = float(dev.std(ddof=1)) if len(values) > 1 else 0.0
    return float(values[0] + dev.mean()), std


def ensemble_fidelity(ensemble: Ensemble) -> float:
    """Fidelity of the full-ensemble average after photon loss and terminal gates."""
    rho = apply_photon_loss(ensemble.average(), ensemble.noise.p_loss, ensemble.plan.loss_qubits)
    return plan_fidelity(ensemble.plan, rho)
