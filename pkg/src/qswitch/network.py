"""Single-excitation dynamics of a chain of nodes linked by rectangular waveguides.

Node ``i`` (1-based) holds qubit ``q_i``.  Link ``j`` joins resonator
``2j-1`` (node ``j``, left end of the link) to resonator ``2j`` (node
``j+1``, right end).  Resonator ``m`` carries switch ``s_m`` and is driven
by coupling ``g_m``.  Waveguide mode ``k`` couples with strength ``G_k`` to
the left-end resonator and ``(-1)^k G_k`` to the right-end one.

Everything is written in the frame rotating at the carrier ``omega_tr``.  A
full state is a list of :class:`BranchState`, one per switch configuration;
the switches are passive so branches never mix.

Amplitude vector layout per branch::

    [vacuum, q_1 .. q_N, c_1 .. c_R, psi^(1)_k ..., psi^(2)_k ..., ...]
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.optimize import brentq

from .emitter import DEFAULT_RTOL, IntegrationError
from .pulses import PulseSchedule

C_LIGHT = 299_792_458.0
TWO_PI = 2.0 * math.pi
DEFAULT_WINDOW_KAPPAS = 40.0


@dataclass(frozen=True)
class NetworkSpec:
    """Physical parameters of the chain (SI units, angular frequencies in rad/s).

    ``mode_window`` is the half-width of included mode detunings; when both
    it and ``n_modes`` are unset the window defaults to ``40 kappa``.
    """

    omega_tr: float = TWO_PI * 8e9
    kappa: float = TWO_PI * 10e6
    length: float = 10.0
    l_c: float = 0.0286
    chi: tuple[float, ...] | None = None
    n_nodes: int = 3
    mode_window: float | None = None
    n_modes: int | None = None
    v_g_override: float | None = None
    lamb_shift_compensation: bool = True
    far_band_correction: bool = True

    def __post_init__(self):
        if self.n_nodes < 2:
            raise ValueError("a chain needs at least two nodes")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if not self.length > 0:
            raise ValueError("link length must be positive")
        if not self.l_c > 0:
            raise ValueError("broad wall dimension must be positive")
        if not self.omega_tr > self.cutoff:
            raise ValueError(
                f"carrier {self.omega_tr / TWO_PI:.4e} Hz is below the waveguide cutoff "
                f"{self.cutoff / TWO_PI:.4e} Hz"
            )
        chi = (self.kappa,) * self.n_switches if self.chi is None else tuple(float(x) for x in self.chi)
        if len(chi) != self.n_switches:
            raise ValueError(f"need {self.n_switches} dispersive shifts, got {len(chi)}")
        if any(x < 0 for x in chi):
            raise ValueError("dispersive shifts must be non-negative")
        object.__setattr__(self, "chi", chi)
        if self.mode_window is not None and not self.mode_window > 0:
            raise ValueError("mode_window must be positive")
        if self.n_modes is not None and self.n_modes < 1:
            raise ValueError("n_modes must be at least 1")
        if self.v_g_override is not None and not 0 < self.v_g_override <= C_LIGHT:
            raise ValueError("v_g_override must lie in (0, c]")

    @property
    def n_switches(self) -> int:
        return 2 * (self.n_nodes - 1)

    @property
    def n_links(self) -> int:
        return self.n_nodes - 1

    @property
    def cutoff(self) -> float:
        return C_LIGHT * math.pi / self.l_c

    @property
    def window(self) -> float:
        return DEFAULT_WINDOW_KAPPAS * self.kappa if self.mode_window is None else self.mode_window

    def with_chi(self, *chi: float) -> "NetworkSpec":
        return replace(self, chi=tuple(chi))

    def replace(self, **changes) -> "NetworkSpec":
        return replace(self, **changes)


def dispersion_group_velocity(omega: float, l_c: float) -> float:
    """``d omega / d k_z`` of the TE10 branch; zero at cutoff."""
    ratio = C_LIGHT * math.pi / (l_c * omega)
    if ratio >= 1.0:
        return 0.0
    return C_LIGHT * math.sqrt(1.0 - ratio * ratio)


def group_velocity(spec: NetworkSpec) -> float:
    if spec.v_g_override is not None:
        return spec.v_g_override
    return dispersion_group_velocity(spec.omega_tr, spec.l_c)


def propagation_delay(spec: NetworkSpec) -> float:
    """Node-to-node photon delay ``t_p = L / v_g``."""
    return spec.length / group_velocity(spec)


def free_spectral_range(spec: NetworkSpec) -> float:
    """Mode spacing at the carrier from the dispersion relation (rad/s)."""
    return math.pi * dispersion_group_velocity(spec.omega_tr, spec.l_c) / spec.length


def mode_frequency(k, spec: NetworkSpec):
    k = np.asarray(k, dtype=float)
    return C_LIGHT * np.sqrt((math.pi / spec.l_c) ** 2 + (k * math.pi / spec.length) ** 2)


@dataclass(frozen=True, eq=False)
class ModeSet:
    """Waveguide modes of one link."""

    link: int
    k: np.ndarray
    omega: np.ndarray
    coupling: np.ndarray
    sign: np.ndarray

    def __len__(self) -> int:
        return len(self.k)


def build_modes(spec: NetworkSpec) -> tuple[ModeSet, ...]:
    """Mode sets for every link (all links share the same geometry).

    The set is symmetric in mode index about the mode nearest the carrier
    and covers every mode with ``|omega_k - omega_tr| <= window``; an even
    count leaves an uncancelled edge term in the parity-alternating
    cross coupling, so the outermost mode on the short side may be added.
    """
    kz = math.sqrt((spec.omega_tr / C_LIGHT) ** 2 - (math.pi / spec.l_c) ** 2)
    kc = max(1, int(round(spec.length * kz / math.pi)))
    if spec.n_modes is not None:
        lower = max(1, kc - spec.n_modes // 2)
        ks = np.arange(lower, lower + spec.n_modes)
    else:
        w = spec.window
        fsr = free_spectral_range(spec)
        # generous candidate range, then keep the literal in-window modes
        span = int(w / fsr) + 3
        cand = np.arange(max(1, kc - span), kc + span + 1)
        inside = cand[np.abs(mode_frequency(cand, spec) - spec.omega_tr) <= w]
        if inside.size == 0:
            raise ValueError("mode window contains no waveguide modes")
        half = max(kc - inside.min(), inside.max() - kc)
        half = min(half, kc - 1)
        ks = np.arange(kc - half, kc + half + 1)
    if ks.size == 0:
        raise ValueError("empty mode set")
    omega = mode_frequency(ks, spec)
    vg = group_velocity(spec)
    coupling = np.sqrt(spec.kappa * vg * omega / (2.0 * spec.omega_tr * spec.length))
    sign = np.where(ks % 2 == 0, 1.0, -1.0)
    return tuple(
        ModeSet(link=j + 1, k=ks, omega=omega, coupling=coupling, sign=sign)
        for j in range(spec.n_links)
    )


def _coupling_density(spec: NetworkSpec):
    """``G(omega)^2`` times the mode density ``dk/d omega`` (dimensionless)."""
    vg = group_velocity(spec)

    def density(omega):
        v = dispersion_group_velocity(omega, spec.l_c)
        return spec.kappa * vg * omega / (TWO_PI * spec.omega_tr * v)

    return density


def resonator_corrections(spec: NetworkSpec, modes: ModeSet) -> tuple[float, float]:
    """Lamb shift of a transfer resonator and far-band weight.

    Returns ``(shift, far)`` where ``shift`` is the principal-value shift
    ``P sum_k G_k^2 / (omega_tr - omega_k)`` in the continuum limit over the
    included band, and ``far`` is ``sum G^2 / Delta^2`` over a flat
    continuation beyond it.  Either is zero when its correction is disabled.
    """
    omega = modes.omega
    if len(omega) > 1:
        lo = omega[0] - 0.5 * (omega[1] - omega[0])
        hi = omega[-1] + 0.5 * (omega[-1] - omega[-2])
    else:
        fsr = free_spectral_range(spec)
        lo, hi = omega[0] - 0.5 * fsr, omega[0] + 0.5 * fsr
    density = _coupling_density(spec)
    shift = 0.0
    if spec.lamb_shift_compensation and lo < spec.omega_tr < hi:
        # quad's cauchy weight integrates f(w) / (w - wvar)
        val, _ = quad(density, lo, hi, weight="cauchy", wvar=spec.omega_tr, limit=400)
        shift = -val
    far = 0.0
    if spec.far_band_correction:
        rho = density(spec.omega_tr)
        far = rho * (1.0 / max(spec.omega_tr - lo, 1e-300) + 1.0 / max(hi - spec.omega_tr, 1e-300))
    return shift, far


@dataclass(frozen=True)
class Layout:
    n_nodes: int
    n_modes: int

    @property
    def n_res(self) -> int:
        return 2 * (self.n_nodes - 1)

    @property
    def n_links(self) -> int:
        return self.n_nodes - 1

    @property
    def q(self) -> slice:
        return slice(1, 1 + self.n_nodes)

    @property
    def c(self) -> slice:
        return slice(1 + self.n_nodes, 1 + self.n_nodes + self.n_res)

    @property
    def psi(self) -> slice:
        return slice(1 + self.n_nodes + self.n_res, self.dim)

    @property
    def dim(self) -> int:
        return 1 + self.n_nodes + self.n_res + self.n_links * self.n_modes

    def qubit(self, i: int) -> int:
        """Vector index of node qubit ``i`` (1-based)."""
        if not 1 <= i <= self.n_nodes:
            raise IndexError(f"no node qubit {i}")
        return i

    def resonator(self, m: int) -> int:
        if not 1 <= m <= self.n_res:
            raise IndexError(f"no resonator {m}")
        return self.n_nodes + m

    def link(self, j: int) -> slice:
        if not 1 <= j <= self.n_links:
            raise IndexError(f"no link {j}")
        start = 1 + self.n_nodes + self.n_res + (j - 1) * self.n_modes
        return slice(start, start + self.n_modes)

    @staticmethod
    def node_of_resonator(m: int) -> int:
        return m // 2 + 1

    @staticmethod
    def link_of_resonator(m: int) -> int:
        return (m + 1) // 2


@dataclass
class BranchState:
    """Amplitudes attached to one switch configuration.

    The branch contributes ``weight * amplitudes`` to the full state.
    """

    bits: tuple[int, ...]
    weight: complex
    amplitudes: np.ndarray = field(repr=False)

    def scaled(self) -> np.ndarray:
        return self.weight * self.amplitudes


def excited_state(layout: Layout, qubit: int) -> np.ndarray:
    y = np.zeros(layout.dim, dtype=complex)
    y[layout.qubit(qubit)] = 1.0
    return y


class Trace:
    """Dense output of :meth:`NetworkModel.evolve` over ``[t0, t1]``."""

    def __init__(self, model: "NetworkModel", branches: list[BranchState], edges, solutions):
        self.model = model
        self.bits = [b.bits for b in branches]
        self.weights = np.array([b.weight for b in branches], dtype=complex)
        self.edges = np.asarray(edges, dtype=float)
        self._solutions = solutions  # [branch][piece] -> OdeSolution

    @property
    def t0(self) -> float:
        return float(self.edges[0])

    @property
    def t1(self) -> float:
        return float(self.edges[-1])

    def _piece(self, t: float) -> int:
        i = int(np.searchsorted(self.edges, t, side="right")) - 1
        return min(max(i, 0), len(self.edges) - 2)

    def amplitudes(self, t: float) -> np.ndarray:
        """Unweighted branch amplitudes at ``t``, shape ``(n_branch, dim)``."""
        p = self._piece(t)
        return np.array([sols[p](t) for sols in self._solutions])

    def state(self, t: float) -> list[BranchState]:
        amps = self.amplitudes(t)
        return [BranchState(b, w, a) for b, w, a in zip(self.bits, self.weights, amps)]

    def sample(self, times) -> np.ndarray:
        """Weighted amplitudes on a grid, shape ``(n_times, n_branch, dim)``."""
        times = np.asarray(times, dtype=float)
        out = np.empty((len(times), len(self._solutions), self.model.layout.dim), dtype=complex)
        pieces = np.clip(np.searchsorted(self.edges, times, side="right") - 1, 0, len(self.edges) - 2)
        for p in np.unique(pieces):
            sel = pieces == p
            for b, sols in enumerate(self._solutions):
                out[sel, b, :] = sols[p](times[sel]).T
        return out * self.weights[None, :, None]

    def norm(self, t: float) -> float:
        amps = self.amplitudes(t)
        per_branch = (np.abs(amps) ** 2) @ self.model.norm_weights
        return float(np.sum(np.abs(self.weights) ** 2 * per_branch))

    def first_time_norm_below(self, level: float) -> float | None:
        """Earliest time at which the state norm squared drops to ``level``."""
        if self.norm(self.t1) > level:
            return None
        for a, b in zip(self.edges[:-1], self.edges[1:]):
            if self.norm(b) <= level:
                fa = self.norm(a) - level
                if fa <= 0:
                    return float(a)
                return float(brentq(lambda t: self.norm(t) - level, a, b, xtol=(b - a) * 1e-13, rtol=1e-15))
        return None


class NetworkModel:
    """Immutable right-hand-side evaluator for a spec, mode set and pulse program.

    Optional ``qubit_decay`` (per node qubit) and ``switch_decay`` (per switch)
    rates add the non-Hermitian drift ``-(rate/2) sigma+ sigma-``.
    """

    def __init__(
        self,
        spec: NetworkSpec,
        modes: Sequence[ModeSet],
        schedules: Sequence[PulseSchedule],
        qubit_decay=None,
        switch_decay=None,
    ):
        self.spec = spec
        self.modes = tuple(modes)
        if len(self.modes) != spec.n_links:
            raise ValueError(f"need one mode set per link ({spec.n_links}), got {len(self.modes)}")
        m0 = self.modes[0]
        self.layout = Layout(spec.n_nodes, len(m0))
        for s in schedules:
            if not 1 <= s.coupling <= self.layout.n_res:
                raise ValueError(
                    f"schedule references coupling g_{s.coupling}; network has g_1..g_{self.layout.n_res}"
                )
        self.schedules = tuple(schedules)
        self.detuning = m0.omega - spec.omega_tr
        self.g_left = m0.coupling.copy()
        self.g_right = m0.coupling * m0.sign
        self.lamb_shift, self.far_band = resonator_corrections(spec, m0)
        self.res_scale = 1.0 / (1.0 + self.far_band)
        self.chi = np.asarray(spec.chi, dtype=float)
        self.res_node = np.array([Layout.node_of_resonator(m) - 1 for m in range(1, self.layout.n_res + 1)])

        n = spec.n_nodes
        self.qubit_decay = np.zeros(n) if qubit_decay is None else np.asarray(qubit_decay, dtype=float)
        self.switch_decay = (
            np.zeros(self.layout.n_res) if switch_decay is None else np.asarray(switch_decay, dtype=float)
        )
        if self.qubit_decay.shape != (n,) or self.switch_decay.shape != (self.layout.n_res,):
            raise ValueError("decay rates must have one entry per node qubit / switch")
        self._has_decay = bool(np.any(self.qubit_decay) or np.any(self.switch_decay))

        w = np.ones(self.layout.dim)
        w[self.layout.c] = 1.0 + self.far_band
        self.norm_weights = w

        edges = set()
        for s in self.schedules:
            edges.update(s.breakpoints())
        self.breakpoints = tuple(sorted(edges))

    def couplings(self, t: float) -> np.ndarray:
        g = np.zeros(self.layout.n_res)
        for s in self.schedules:
            g[s.coupling - 1] += s(t)
        return g

    def branch_rhs(self, bits: Sequence[int]):
        """Return ``f(t, y)`` for the branch with switch configuration ``bits``."""
        bits_arr = np.asarray(bits, dtype=float)
        if bits_arr.shape != (self.layout.n_res,):
            raise ValueError("one switch bit per resonator required")
        lay = self.layout
        qs, cs, ps = lay.q, lay.c, lay.psi
        n_links, n_modes = lay.n_links, lay.n_modes
        # +i*shift cancels the band's Lamb shift; -i*chi for open switches
        res_diag = 1j * (self.lamb_shift - self.chi * bits_arr)
        scale = self.res_scale
        det = self.detuning
        gl, gr = self.g_left, self.g_right
        res_node = self.res_node
        couplings = self.couplings
        qdec = 0.5 * self.qubit_decay
        bdec = 0.5 * float(np.dot(self.switch_decay, bits_arr))
        has_decay = self._has_decay

        def f(t, y):
            g = couplings(t)
            q = y[qs]
            c = y[cs]
            psi = y[ps].reshape(n_links, n_modes)
            dy = np.empty_like(y)
            dy[0] = 0.0
            gc = g * c
            dq = np.zeros_like(q)
            dq[:-1] += gc[0::2]
            dq[1:] += gc[1::2]
            dy[qs] = -1j * dq
            field = np.empty_like(c)
            field[0::2] = psi @ gl
            field[1::2] = psi @ gr
            dy[cs] = scale * (-1j * (g * q[res_node] + field) + res_diag * c)
            dpsi = det * psi + gl * c[0::2, None] + gr * c[1::2, None]
            dy[ps] = (-1j * dpsi).ravel()
            if has_decay:
                dy[qs] -= qdec * q
                if bdec:
                    dy -= bdec * y
            return dy

        return f

    def norm(self, state: Sequence[BranchState]) -> float:
        return float(
            sum(abs(b.weight) ** 2 * float((np.abs(b.amplitudes) ** 2) @ self.norm_weights) for b in state)
        )

    def normalize(self, state: Sequence[BranchState]) -> list[BranchState]:
        nrm = math.sqrt(self.norm(state))
        if nrm == 0:
            raise ValueError("cannot normalise a zero state")
        return [BranchState(b.bits, b.weight / nrm, b.amplitudes) for b in state]

    def edges(self, t0: float, t1: float) -> list[float]:
        inner = [b for b in self.breakpoints if t0 < b < t1]
        return [t0, *inner, t1]

    def evolve(
        self,
        state: Sequence[BranchState],
        t0: float,
        t1: float,
        tol: float = DEFAULT_RTOL,
        atol: float | None = None,
        dense: bool = False,
    ) -> tuple[list[BranchState], Trace | None]:
        """Propagate every branch from ``t0`` to ``t1``.

        Integration restarts at pulse-window edges so that truncated pulses
        are never stepped across.  Returns the final state and, when
        ``dense`` is set, a :class:`Trace` for interpolation.
        """
        if not t1 > t0:
            raise ValueError("need t1 > t0")
        atol = tol * 1e-2 if atol is None else atol
        edges = self.edges(t0, t1)
        out: list[BranchState] = []
        solutions = []
        for br in state:
            f = self.branch_rhs(br.bits)
            y = np.asarray(br.amplitudes, dtype=complex)
            sols = []
            for a, b in zip(edges[:-1], edges[1:]):
                sol = solve_ivp(f, (a, b), y, method="DOP853", rtol=tol, atol=atol, dense_output=dense)
                if sol.status != 0:
                    raise IntegrationError(sol.message, float(sol.t[-1]))
                y = sol.y[:, -1]
                if dense:
                    sols.append(sol.sol)
            out.append(BranchState(tuple(br.bits), br.weight, y))
            solutions.append(sols)
        trace = Trace(self, list(state), edges, solutions) if dense else None
        return out, trace


def assemble_rhs(
    spec: NetworkSpec,
    modes: Sequence[ModeSet],
    schedules: Sequence[PulseSchedule],
    qubit_decay=None,
    switch_decay=None,
) -> NetworkModel:
    return NetworkModel(spec, modes, schedules, qubit_decay=qubit_decay, switch_decay=switch_decay)


def evolve(
    state: Sequence[BranchState],
    model: NetworkModel,
    t0: float,
    t1: float,
    tol: float = DEFAULT_RTOL,
    dense: bool = False,
):
    return model.evolve(state, t0, t1, tol=tol, dense=dense)
