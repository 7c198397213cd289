"""Experiment drivers behind the command line.

Each driver takes a resolved config and returns a :class:`RunResult`:
named tables (fixed column order) plus derived values for the manifest.
Nothing here reads the clock or the environment, so results depend only on
the config.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    CSV_SCHEMA_VERSION,
    default_tau_grid,
    fit_log_slope,
    plan_fidelity,
    qst_decohered_fidelity,
    qst_point,
    reduce,
    sweep_optimal_tau,
)
from .config import bootstrap_spec, network_spec, noise_spec
from .emitter import (
    EmitterParams,
    analytic_c,
    analytic_q,
    integrate_emitter,
    reduced_bandwidth_control,
    sech,
    sech_control,
    transmission_probability,
)
from .network import (
    NetworkSpec,
    build_modes,
    free_spectral_range,
    group_velocity,
    propagation_delay,
    resonator_corrections,
)
from .noise import NoiseSpec, bootstrap_fidelity, run_ensemble
from .protocols import (
    GUARD_GAP_KAPPAS,
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

log = logging.getLogger("qswitch")

MANIFEST_VERSION = 1
AUTO_TAU_FALLBACK_KAPPAS = 30.0
EMITTER_CHECK_TOL = 1e-8
EMITTER_CHECK_RATIOS = (0.0, 0.3, 1.0, 2.0, 5.0, 20.0)


@dataclass
class Table:
    columns: list[str]
    rows: list[list] = field(default_factory=list)

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError("row length does not match columns")
        self.rows.append(list(values))

    def write(self, path: Path, experiment: str) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"# schema_version={CSV_SCHEMA_VERSION}", f"experiment={experiment}"])
            w.writerow(self.columns)
            for r in self.rows:
                w.writerow([_cell(v) for v in r])


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "%.17e" % v
    return str(v)


@dataclass
class RunResult:
    command: str
    tables: dict[str, Table]
    derived: dict = field(default_factory=dict)
    exit_code: int = 0


class Context:
    """Objects shared by the drivers of one run."""

    def __init__(self, cfg: dict, command: str, workers: int = 1):
        self.cfg = cfg
        self.command = command
        self.workers = workers
        self.spec = network_spec(cfg)
        self.noise = noise_spec(cfg)
        self.boot = bootstrap_spec(cfg)
        self.modes = build_modes(self.spec)
        self.kappa = self.spec.kappa
        self.tp = propagation_delay(self.spec)
        self._points = None

    @property
    def mc(self) -> dict:
        return self.cfg["monte_carlo"]

    def network_summary(self) -> dict:
        m = self.modes[0]
        shift, far = resonator_corrections(self.spec, m)
        return {
            "n_modes_per_link": len(m),
            "mode_index_range": [int(m.k[0]), int(m.k[-1])],
            "group_velocity_m_per_s": group_velocity(self.spec),
            "propagation_delay_s": self.tp,
            "free_spectral_range_rad_per_s": free_spectral_range(self.spec),
            "lamb_shift_rad_per_s": shift,
            "far_band_weight": far,
        }

    def tau_grid(self) -> np.ndarray:
        g = self.cfg["protocol"]["tau_grid"]
        return default_tau_grid(self.spec, g["start"], g["stop"], g["step"])

    def qst_points(self):
        if self._points is None:
            grid = self.tau_grid()
            log.info("coherent QST sweep over %d durations", len(grid))
            self._points = [qst_point(self.spec, t, self.modes) for t in grid]
        return self._points

    def stage_tau(self, t1: float | None = None) -> tuple[float, str]:
        """Duration of one pitch-and-catch stage and how it was chosen."""
        tau_ns = self.cfg["protocol"]["tau_ns"]
        if tau_ns != "auto":
            return tau_ns * 1e-9, "config"
        t1 = self.noise.t1 if t1 is None else t1
        if math.isinf(t1):
            return AUTO_TAU_FALLBACK_KAPPAS / self.kappa + self.tp, "auto_fallback"
        res = sweep_optimal_tau(
            self.spec, [t1], self.tau_grid(), self.noise.p_loss, strict=False, points=self.qst_points()
        )
        if not res.bracketed[0]:
            log.warning("tau_opt for T1 = %.3e s sits on the grid edge", t1)
        return float(res.tau_opt[0]), "auto_sweep"

    def ensemble(self, plan, spec: NetworkSpec | None = None, noise: NoiseSpec | None = None):
        spec = self.spec if spec is None else spec
        noise = self.noise if noise is None else noise
        return run_ensemble(
            plan, spec, noise, self.mc["trajectories"], self.mc["seed"], modes=self.modes, workers=self.workers
        )


def _coherent_fidelity(plan, spec, modes):
    final, model, _ = simulate_plan(plan, spec, modes)
    rho = reduce(final, plan.target_qubits, model)
    return plan_fidelity(plan, rho), populations(final, model.layout)


def run_qst(ctx: Context) -> RunResult:
    tau, source = ctx.stage_tau()
    plan = plan_qst(ctx.spec, tau)
    pt = qst_point(ctx.spec, tau, ctx.modes)
    f_dec = qst_decohered_fidelity(pt.fidelity, pt.p1, pt.p2, ctx.noise.t1, ctx.noise.p_loss)
    ens = ctx.ensemble(plan)
    mean, std = bootstrap_fidelity(ens, None, ctx.boot)
    t = Table(
        ["tau_s", "t1_s", "p_loss", "fidelity_coherent", "p1_s", "p2_s", "fidelity_decohered_formula",
         "fidelity_mc_mean", "fidelity_mc_std", "n_trajectories"]
    )
    t.add(tau, ctx.noise.t1, ctx.noise.p_loss, pt.fidelity, pt.p1, pt.p2, f_dec, mean, std, len(ens))
    log.info("qst: tau = %.4e s, coherent infidelity %.3e, MC F = %.6f +- %.2e", tau, 1 - pt.fidelity, mean, std)
    return RunResult("qst", {"qst": t}, {"tau_s": tau, "tau_source": source, "plan": plan.to_dict()})


_ENTANGLE_COLUMNS = [
    "protocol", "chi_s1_over_kappa", "t1_s", "p_loss", "tau_s", "fidelity_predicted", "fidelity_coherent",
    "fidelity_mean", "fidelity_std", "n_trajectories", "resamples", "sample_size", "pop_q1", "pop_q2", "pop_q3",
]


def _entangle_plan(ctx: Context, name: str, spec: NetworkSpec, tau: float):
    if name == "bell":
        return plan_bell(spec, tau), 1.0
    if name == "ghz":
        return plan_ghz(spec, tau, ctx.modes), predicted_ghz_fidelity(spec.chi[0], spec.kappa)
    if name == "w":
        n = ctx.cfg["protocol"]["n"]
        gap = GUARD_GAP_KAPPAS / spec.kappa
        return plan_w(spec, n, (n - 1) * tau + (n - 2) * gap), 1.0
    if name == "qst":
        return plan_qst(spec, tau), 1.0
    raise ValueError(f"unknown protocol {name!r}")


def _entangle_row(ctx, table, name, spec, noise, tau):
    plan, predicted = _entangle_plan(ctx, name, spec, tau)
    f_coh, pops = _coherent_fidelity(plan, spec, ctx.modes)
    ens = ctx.ensemble(plan, spec, noise)
    mean, std = bootstrap_fidelity(ens, None, ctx.boot)
    pops = list(pops) + [0.0] * (3 - len(pops))
    table.add(
        name, spec.chi[0] / spec.kappa, noise.t1, noise.p_loss, plan.tau, predicted, f_coh, mean, std,
        len(ens), ctx.boot.n_resamples, ctx.boot.sample_size, *pops[:3],
    )
    log.info("%s chi/kappa=%.3g T1=%.3e: coherent F %.6f, MC F %.6f +- %.2e", name, spec.chi[0] / spec.kappa,
             noise.t1, f_coh, mean, std)
    return plan


def run_entangle(ctx: Context, name: str) -> RunResult:
    tau, source = ctx.stage_tau()
    t = Table(list(_ENTANGLE_COLUMNS))
    plan = _entangle_row(ctx, t, name, ctx.spec, ctx.noise, tau)
    derived = {"tau_s": tau, "tau_source": source, "plan": plan.to_dict()}
    if name == "w":
        derived["shift_schedule_rad_per_s"] = w_shift_schedule(ctx.cfg["protocol"]["n"], ctx.kappa)
        derived["shift_schedule_over_kappa"] = w_shift_schedule(ctx.cfg["protocol"]["n"], 1.0)
    if name == "ghz":
        derived["phases"] = {"phi": plan.metadata["phi"], "alpha_phase": plan.metadata["alpha_phase"]}
    return RunResult(name, {name: t}, derived)


def run_route(ctx: Context) -> RunResult:
    p = ctx.cfg["protocol"]
    order = p["order"]
    bits = tuple(p["switch_bits"]) if order != "simultaneous_split" else (0, 0)
    tau_ns = p["tau_ns"]
    stage = AUTO_TAU_FALLBACK_KAPPAS / ctx.kappa + ctx.tp if tau_ns == "auto" else tau_ns * 1e-9
    gap = GUARD_GAP_KAPPAS / ctx.kappa
    tau = stage if order == "simultaneous_split" else 2 * stage + gap
    plan = plan_route(ctx.spec, order, bits, tau=tau, gap=gap)
    final, model, _ = simulate_plan(plan, ctx.spec, ctx.modes)
    left, right, centre = route_norms(final, model)
    chi_l, chi_r = ctx.spec.chi[1], ctx.spec.chi[2]
    pl, pr, pc = predicted_route_norms(order, chi_l, chi_r, bits, ctx.kappa)
    t = Table(
        ["order", "switch_left", "switch_right", "chi_left_over_kappa", "chi_right_over_kappa", "tau_s",
         "norm_left", "norm_right", "norm_emitter", "predicted_left", "predicted_right", "predicted_emitter"]
    )
    t.add(order, bits[0], bits[1], chi_l / ctx.kappa, chi_r / ctx.kappa, tau, left, right, centre, pl, pr, pc)
    log.info("route %s %s: left %.6f right %.6f emitter %.6f", order, bits, left, right, centre)
    return RunResult("route", {"route": t}, {"tau_s": tau, "plan": plan.to_dict()})


def run_sweep_tau(ctx: Context) -> RunResult:
    t1s = [x * 1e-6 for x in ctx.cfg["protocol"]["t1_us_values"]]
    res = sweep_optimal_tau(
        ctx.spec, t1s, ctx.tau_grid(), ctx.noise.p_loss, strict=False, points=ctx.qst_points()
    )
    curve = Table(["t1_s", "tau_s", "fidelity_coherent", "p1_s", "p2_s", "fidelity_decohered"])
    for i, t1 in enumerate(res.t1s):
        for j, tau in enumerate(res.taus):
            curve.add(t1, tau, res.fidelities[j], res.p1[j], res.p2[j], res.decohered[i, j])
    opt = Table(["t1_s", "tau_opt_s", "fidelity_opt", "bracketed"])
    for t1, to, fo, b in zip(res.t1s, res.tau_opt, res.f_opt, res.bracketed):
        opt.add(t1, to, fo, bool(b))
    ok = res.bracketed
    derived = {}
    if ok.sum() >= 1:
        derived["log_slope_s"] = fit_log_slope(np.array(res.t1s)[ok], res.tau_opt[ok])
    for t1, to, b in zip(res.t1s, res.tau_opt, ok):
        log.info("T1 = %.3e s: tau_opt = %.4e s%s", t1, to, "" if b else " (grid edge)")
    return RunResult("sweep-tau", {"sweep_tau": curve, "tau_opt": opt}, derived)


def run_sweep_chi(ctx: Context) -> RunResult:
    tau, source = ctx.stage_tau()
    t = Table(list(_ENTANGLE_COLUMNS))
    for x in ctx.cfg["protocol"]["chi_values"]:
        chi = list(ctx.spec.chi)
        chi[0] = x * ctx.kappa
        _entangle_row(ctx, t, "ghz", ctx.spec.with_chi(*chi), ctx.noise, tau)
    return RunResult("sweep-chi", {"sweep_chi": t}, {"tau_s": tau, "tau_source": source})


def run_sweep_t1(ctx: Context) -> RunResult:
    target = ctx.cfg["protocol"]["target"]
    t = Table(list(_ENTANGLE_COLUMNS))
    taus = {}
    for x in ctx.cfg["protocol"]["t1_us_values"]:
        noise = NoiseSpec(t1=x * 1e-6, p_loss=ctx.noise.p_loss, t1_switch=ctx.noise.t1_switch)
        tau, _ = ctx.stage_tau(noise.t1)
        taus[str(x)] = tau
        _entangle_row(ctx, t, target, ctx.spec, noise, tau)
    return RunResult("sweep-t1", {"sweep_t1": t}, {"stage_tau_s_by_t1_us": taus, "target": target})


def emitter_battery(kappa: float, tol: float = 1e-12) -> Table:
    """Analytic-versus-numeric deviations of the single-emitter solutions."""
    t = Table(["check", "chi_over_kappa", "max_deviation", "tolerance", "passed"])
    span = 40.0 / kappa
    grid = np.linspace(-span, span, 2001)
    ctrl = lambda x: sech_control(x, kappa)  # noqa: E731
    ref = None
    for r in EMITTER_CHECK_RATIOS:
        chi = r * kappa
        q0, c0 = analytic_q(-span, chi, kappa), analytic_c(-span, chi, kappa)
        tr = integrate_emitter(EmitterParams(kappa, chi, True), ctrl, -span, span, tol=tol, t_eval=grid,
                               q0=q0, c0=c0, atol=tol * 1e-3)
        dq = np.max(np.abs(tr.q - analytic_q(grid, chi, kappa)))
        dc = np.max(np.abs(tr.c - analytic_c(grid, chi, kappa)))
        t.add("analytic_q", r, dq, EMITTER_CHECK_TOL, dq < EMITTER_CHECK_TOL)
        t.add("analytic_c", r, dc, EMITTER_CHECK_TOL, dc < EMITTER_CHECK_TOL)
        if r == 0.0:
            ref = tr
        else:
            pt = transmission_probability(chi, kappa)
            ds = np.max(np.abs(np.abs(tr.gamma) ** 2 - pt * np.abs(ref.gamma) ** 2)) / kappa
            t.add("shape_invariance", r, ds, EMITTER_CHECK_TOL, ds < EMITTER_CHECK_TOL)
    kp = 0.5 * kappa
    span_r = 60.0 / kp
    grid_r = np.linspace(-span_r, span_r, 2001)
    target = lambda x: 0.5 * np.sqrt(kp) * sech(0.5 * kp * x)  # noqa: E731
    tr = integrate_emitter(
        EmitterParams(kappa), lambda x: reduced_bandwidth_control(x, kappa, kp), -span_r, span_r, tol=tol,
        t_eval=grid_r, atol=tol * 1e-3,
    )
    d = np.max(np.abs(np.abs(tr.gamma) - target(grid_r))) / math.sqrt(kappa)
    t.add("reduced_bandwidth_shape", kp / kappa, d, EMITTER_CHECK_TOL, d < EMITTER_CHECK_TOL)
    return t


def run_emitter_check(ctx: Context) -> RunResult:
    t = emitter_battery(ctx.kappa)
    failed = [r for r in t.rows if not r[-1]]
    for r in t.rows:
        log.info("%-24s chi/kappa=%-5g dev=%.3e %s", r[0], r[1], r[2], "PASS" if r[-1] else "FAIL")
    return RunResult("emitter-check", {"emitter_check": t}, {"failed": len(failed)}, exit_code=1 if failed else 0)


COMMANDS = {
    "qst": run_qst,
    "bell": lambda ctx: run_entangle(ctx, "bell"),
    "ghz": lambda ctx: run_entangle(ctx, "ghz"),
    "w": lambda ctx: run_entangle(ctx, "w"),
    "route": run_route,
    "sweep-tau": run_sweep_tau,
    "sweep-chi": run_sweep_chi,
    "sweep-t1": run_sweep_t1,
    "emitter-check": run_emitter_check,
}


def execute(cfg: dict, command: str, workers: int = 1) -> RunResult:
    ctx = Context(cfg, command, workers)
    result = COMMANDS[command](ctx)
    result.derived = {"network": ctx.network_summary(), **result.derived}
    return result


def write_outputs(result: RunResult, cfg: dict, out: Path) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, table in result.tables.items():
        p = out / f"{name}.csv"
        table.write(p, result.command)
        paths.append(p)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "command": result.command,
        "config": cfg,
        "derived": result.derived,
        "outputs": [p.name for p in paths],
    }
    mp = out / "manifest.json"
    mp.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return [mp, *paths]


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(f"cannot serialise {type(o).__name__}")
