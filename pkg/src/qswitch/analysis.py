"""Reduced states, target fidelities and the operation-time trade-off."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import minimize

from .emitter import DEFAULT_RTOL
from .network import BranchState, NetworkModel, NetworkSpec, build_modes, propagation_delay
from .protocols import Gate, ProtocolPlan, plan_qst, simulate_plan

CSV_SCHEMA_VERSION = 1
VAC = -1


@dataclass(frozen=True, eq=False)
class ReducedDensityMatrix:
    """Density matrix over ``labels``; the first label is the most significant bit."""

    labels: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=complex)
        n = len(self.labels)
        if m.shape != (2**n, 2**n):
            raise ValueError(f"matrix shape {m.shape} does not match {n} qubits")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "matrix", m)

    @property
    def n_qubits(self) -> int:
        return len(self.labels)

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.matrix + self.matrix.conj().T))

    def check(self, trace_tol: float = 1e-10, psd_tol: float = 1e-12) -> None:
        """Raise ``ValueError`` unless Hermitian, unit trace and positive semidefinite."""
        m = self.matrix
        if not np.allclose(m, m.conj().T, atol=1e-12, rtol=0):
            raise ValueError("density matrix is not Hermitian")
        if abs(self.trace() - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {self.trace():.12f} differs from 1")
        if self.eigenvalues().min() < -psd_tol:
            raise ValueError("density matrix is not positive semidefinite")

    def apply_local(self, qubit: str, op: np.ndarray) -> "ReducedDensityMatrix":
        """Conjugate by a single-qubit operator acting on ``qubit``."""
        u = _embed(op, self.labels.index(qubit), self.n_qubits)
        return ReducedDensityMatrix(self.labels, u @ self.matrix @ u.conj().T)

    def apply_gates(self, gates: Sequence[Gate]) -> "ReducedDensityMatrix":
        rho = self
        for g in gates:
            rho = rho.apply_local(g.qubit, g.matrix())
        return rho


def _embed(op: np.ndarray, pos: int, n: int) -> np.ndarray:
    return np.kron(np.kron(np.eye(2**pos), op), np.eye(2 ** (n - pos - 1)))


def _parse_label(label: str, model: NetworkModel) -> tuple[str, int]:
    kind, num = label[0], label[1:]
    if kind not in "qs" or not num.isdigit():
        raise ValueError(f"bad qubit label {label!r}")
    i = int(num)
    limit = model.layout.n_nodes if kind == "q" else model.layout.n_res
    if not 1 <= i <= limit:
        raise ValueError(f"no qubit {label!r} in this network")
    return kind, i


def reduce(state: Sequence[BranchState], labels: Sequence[str], model: NetworkModel) -> ReducedDensityMatrix:
    """Partial trace of a single-excitation branch state onto ``labels``.

    Resonators, link modes and unlisted qubits are traced out; an
    excitation sitting in any of them looks like vacuum to the kept qubits.
    """
    labels = tuple(labels)
    if not labels:
        raise ValueError("empty qubit subset")
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate qubit labels")
    parsed = [_parse_label(l, model) for l in labels]
    n = len(labels)
    lay = model.layout
    dim = lay.dim
    scale = np.sqrt(model.norm_weights)
    kept_switch = [(pos, i - 1) for pos, (k, i) in enumerate(parsed) if k == "s"]
    kept_node = {i: pos for pos, (k, i) in enumerate(parsed) if k == "q"}
    traced_switch = [m for m in range(lay.n_res) if (m + 1) not in {i for k, i in parsed if k == "s"}]

    # row = environment location (kept node qubits fold into the vacuum row)
    row_of = np.arange(dim)
    col_extra = np.zeros(dim, dtype=int)
    for i, pos in kept_node.items():
        idx = lay.qubit(i)
        row_of[idx] = 0
        col_extra[idx] = 1 << (n - 1 - pos)

    groups: dict[tuple[int, ...], np.ndarray] = {}
    for br in state:
        env_bits = tuple(br.bits[m] for m in traced_switch)
        base = sum(br.bits[m] << (n - 1 - pos) for pos, m in kept_switch)
        a = groups.setdefault(env_bits, np.zeros((dim, 2**n), dtype=complex))
        np.add.at(a, (row_of, base + col_extra), br.weight * scale * br.amplitudes)
    rho = np.zeros((2**n, 2**n), dtype=complex)
    for a in groups.values():
        rho += a.T @ a.conj()
    return ReducedDensityMatrix(labels, rho)


def _two_state_fidelity(rho: ReducedDensityMatrix, n: int, a: int, b: int) -> float:
    if rho.n_qubits != n:
        raise ValueError(f"expected a {n}-qubit density matrix, got {rho.n_qubits}")
    m = rho.matrix
    return float(0.5 * (m[a, a].real + m[b, b].real) + abs(m[a, b]))


def fidelity_bell(rho: ReducedDensityMatrix) -> float:
    """``max_theta <Psi+(theta)|rho|Psi+(theta)>`` with ``Psi+ ~ |01> + e^{i theta}|10>``."""
    return _two_state_fidelity(rho, 2, 0b01, 0b10)


def fidelity_ghz(rho: ReducedDensityMatrix) -> float:
    return _two_state_fidelity(rho, 3, 0b000, 0b111)


def fidelity_qst(rho: ReducedDensityMatrix) -> float:
    """Population transferred to the second qubit of a two-qubit register."""
    if rho.n_qubits != 2:
        raise ValueError("expected a two-qubit density matrix")
    return float(rho.matrix[0b01, 0b01].real)


_W_BASIS = (0b100, 0b010, 0b001)


def _w_value(rho_sub: np.ndarray, th1, th2):
    u0 = np.ones_like(th1, dtype=complex)
    u = np.stack([u0, np.exp(1j * th1), np.exp(1j * th2)])
    return np.real(np.einsum("i...,ij,j...->...", u.conj(), rho_sub, u)) / 3.0


def fidelity_w(rho: ReducedDensityMatrix, grid: int = 64) -> float:
    """``max_{theta1,theta2} <W(theta)|rho|W(theta)>``, W over (100, 010, 001).

    Coarse grid followed by a local quasi-Newton refinement.
    """
    if rho.n_qubits != 3:
        raise ValueError(f"expected a 3-qubit density matrix, got {rho.n_qubits}")
    sub = rho.matrix[np.ix_(_W_BASIS, _W_BASIS)]
    th = np.linspace(0, 2 * np.pi, grid, endpoint=False)
    t1, t2 = np.meshgrid(th, th, indexing="ij")
    vals = _w_value(sub, t1, t2)
    i, j = np.unravel_index(np.argmax(vals), vals.shape)
    res = minimize(
        lambda x: -_w_value(sub, x[0], x[1]),
        x0=[th[i], th[j]],
        method="BFGS",
        options={"gtol": 1e-12, "xrtol": 1e-10},
    )
    return float(max(-res.fun, vals[i, j]))


FIDELITY_FUNCTIONS = {
    "qst": fidelity_qst,
    "bell": fidelity_bell,
    "ghz": fidelity_ghz,
    "w": fidelity_w,
}


def plan_fidelity(plan: ProtocolPlan, rho: ReducedDensityMatrix) -> float:
    """Apply the plan's terminal gates and evaluate its target fidelity."""
    if plan.target not in FIDELITY_FUNCTIONS:
        raise ValueError(f"plan target {plan.target!r} has no fidelity")
    return FIDELITY_FUNCTIONS[plan.target](rho.apply_gates(plan.terminal_gates))


def qst_decohered_fidelity(f_coh: float, p1: float, p2: float, t1: float, p_loss: float) -> float:
    """``(1 - p_loss) F e^{-(p1 + p2)/T1}`` with ``p_j`` time-integrated populations."""
    if p1 < 0 or p2 < 0:
        raise ValueError("integrated populations must be non-negative")
    if not t1 > 0:
        raise ValueError("T1 must be positive")
    if not 0 <= p_loss < 1:
        raise ValueError("p_loss must lie in [0, 1)")
    decay = 1.0 if math.isinf(t1) else math.exp(-(p1 + p2) / t1)
    return (1.0 - p_loss) * f_coh * decay


@dataclass(frozen=True)
class QstPoint:
    tau: float
    fidelity: float
    p1: float
    p2: float


def qst_point(spec: NetworkSpec, tau: float, modes=None, tol: float = DEFAULT_RTOL, samples: int = 2001) -> QstPoint:
    """Coherent QST fidelity and the integrated node populations for one duration."""
    with warnings.catch_warnings():
        # sweeps deliberately include short durations
        warnings.simplefilter("ignore", UserWarning)
        plan = plan_qst(spec, tau)
    final, model, trace = simulate_plan(plan, spec, modes, tol=tol, dense=True)
    lay = model.layout
    t = np.linspace(plan.t_start, plan.t_end, samples)
    amps = trace.sample(t)[:, 0, :]
    p1 = simpson(np.abs(amps[:, lay.qubit(1)]) ** 2, x=t)
    p2 = simpson(np.abs(amps[:, lay.qubit(2)]) ** 2, x=t)
    f = abs(final[0].amplitudes[lay.qubit(2)]) ** 2
    return QstPoint(tau, float(f), float(p1), float(p2))


class SweepBracketError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SweepResult:
    taus: np.ndarray
    fidelities: np.ndarray
    p1: np.ndarray
    p2: np.ndarray
    t1s: tuple[float, ...]
    p_loss: float
    decohered: np.ndarray  # (len(t1s), len(taus))
    tau_opt: np.ndarray
    f_opt: np.ndarray
    bracketed: np.ndarray = field(default=None)

    def to_csv(self, path) -> None:
        """Long format: one row per (T1, tau)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"# schema_version={CSV_SCHEMA_VERSION}"])
            w.writerow(["t1_s", "tau_s", "fidelity_coherent", "p1_s", "p2_s", "fidelity_decohered"])
            for i, t1 in enumerate(self.t1s):
                for j, tau in enumerate(self.taus):
                    w.writerow(
                        [_fmt(t1), _fmt(tau), _fmt(self.fidelities[j]), _fmt(self.p1[j]), _fmt(self.p2[j]),
                         _fmt(self.decohered[i, j])]
                    )

    def optimum_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"# schema_version={CSV_SCHEMA_VERSION}"])
            w.writerow(["t1_s", "tau_opt_s", "fidelity_opt", "bracketed"])
            for t1, to, fo, b in zip(self.t1s, self.tau_opt, self.f_opt, self.bracketed):
                w.writerow([_fmt(t1), _fmt(to), _fmt(fo), int(b)])


def _fmt(x: float) -> str:
    return "%.17e" % x


def parabolic_peak(x: np.ndarray, y: np.ndarray, i: int) -> tuple[float, float]:
    """Vertex of the parabola through points ``i-1, i, i+1``."""
    xs, ys = x[i - 1 : i + 2], y[i - 1 : i + 2]
    a, b, c = np.polyfit(xs - xs[1], ys, 2)
    if a >= 0:
        return float(x[i]), float(y[i])
    dx = -b / (2 * a)
    dx = min(max(dx, xs[0] - xs[1]), xs[2] - xs[1])
    return float(xs[1] + dx), float(c - b * b / (4 * a))


def decohered_curves(points: Sequence[QstPoint], t1s, p_loss: float) -> np.ndarray:
    return np.array(
        [[qst_decohered_fidelity(p.fidelity, p.p1, p.p2, t1, p_loss) for p in points] for t1 in t1s]
    )


def sweep_optimal_tau(
    spec: NetworkSpec,
    t1_list: Sequence[float],
    tau_grid: Sequence[float],
    p_loss: float = 0.0,
    modes=None,
    tol: float = DEFAULT_RTOL,
    strict: bool = True,
    points: Sequence[QstPoint] | None = None,
) -> SweepResult:
    """Coherent QST over ``tau_grid``, then the decohered optimum per T1.

    With ``strict`` a maximum on the grid edge raises
    :class:`SweepBracketError`; otherwise it is flagged in ``bracketed``.
    Precomputed ``points`` (matching ``tau_grid``) skip the simulations.
    """
    taus = np.asarray(sorted(tau_grid), dtype=float)
    if taus.size < 3:
        raise ValueError("need at least three durations")
    if points is None:
        modes = build_modes(spec) if modes is None else modes
        points = [qst_point(spec, t, modes, tol) for t in taus]
    else:
        points = sorted(points, key=lambda p: p.tau)
        if not np.allclose([p.tau for p in points], taus, rtol=1e-12, atol=0):
            raise ValueError("points do not match tau_grid")
    t1s = tuple(float(t) for t in t1_list)
    dec = decohered_curves(points, t1s, p_loss)
    tau_opt, f_opt, ok = [], [], []
    for row, t1 in zip(dec, t1s):
        i = int(np.argmax(row))
        if i == 0 or i == len(taus) - 1:
            if strict:
                raise SweepBracketError(
                    f"optimum for T1 = {t1:.3e} s sits on the grid edge (tau = {taus[i]:.4e} s); extend tau_grid"
                )
            tau_opt.append(float(taus[i]))
            f_opt.append(float(row[i]))
            ok.append(False)
            continue
        to, fo = parabolic_peak(taus, row, i)
        tau_opt.append(to)
        f_opt.append(fo)
        ok.append(True)
    return SweepResult(
        taus=taus,
        fidelities=np.array([p.fidelity for p in points]),
        p1=np.array([p.p1 for p in points]),
        p2=np.array([p.p2 for p in points]),
        t1s=t1s,
        p_loss=p_loss,
        decohered=dec,
        tau_opt=np.array(tau_opt),
        f_opt=np.array(f_opt),
        bracketed=np.array(ok),
    )


def default_tau_grid(spec: NetworkSpec, lo: float = 6.0, hi: float = 40.0, step: float = 1.0) -> np.ndarray:
    """Durations ``kappa*tau - kappa*t_p`` from ``lo`` to ``hi`` in steps of ``step``."""
    tp = propagation_delay(spec)
    return np.arange(lo, hi + 0.5 * step, step) / spec.kappa + tp


def fit_log_slope(t1s, tau_opt) -> float:
    """Least-squares ``a`` in ``tau_opt = a ln(T1 / 1 ns)`` (no intercept)."""
    x = np.log(np.asarray(t1s, dtype=float) / 1e-9)
    y = np.asarray(tau_opt, dtype=float)
    return float(np.dot(x, y) / np.dot(x, x))
