"""Markovian single-node emission.

A node qubit ``q`` coupled through a real control ``g(t)`` to a transfer
resonator ``c`` that leaks into the link at rate ``kappa``.  A switch qubit
in state ``|1>`` shifts the resonator by ``chi``.  In the frame rotating at
the resonator reference frequency::

    dq/dt = -i g(t) c
    dc/dt = -i g(t) q - i chi q_s c - kappa c / 2

and the emitted field is ``gamma(t) = -i sqrt(kappa) c(t)``.

The closed forms below (sech control) are used as oracles by the rest of the
package.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp, trapezoid

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12


class IntegrationError(RuntimeError):
    """Raised when the ODE solver fails; carries the time of failure."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6e} s)")
        self.time = time


def sech(x):
    """Overflow-free hyperbolic secant."""
    ax = np.abs(np.asarray(x, dtype=float))
    e = np.exp(-ax)
    return 2.0 * e / (1.0 + e * e)


@dataclass(frozen=True)
class EmitterParams:
    kappa: float
    chi: float = 0.0
    switch_excited: bool = False

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.chi < 0:
            raise ValueError(f"chi must be non-negative, got {self.chi}")

    @property
    def shift(self) -> float:
        return self.chi if self.switch_excited else 0.0


@dataclass(frozen=True, eq=False)
class EmitterTrace:
    """Sampled emitter dynamics.

    ``emitted`` is the cumulative photon norm ``int_{t0}^{t} |gamma|^2``,
    integrated alongside the amplitudes.
    """

    times: np.ndarray
    q: np.ndarray
    c: np.ndarray
    gamma: np.ndarray
    emitted: np.ndarray

    def norm_defect(self) -> np.ndarray:
        return np.abs(self.q) ** 2 + np.abs(self.c) ** 2 + self.emitted - 1.0


@dataclass(frozen=True)
class EmissionCoefficients:
    alpha: complex
    beta: complex


def sech_control(t, kappa: float):
    """Control ``(kappa/2) sech(kappa t / 2)`` emitting a bandwidth-kappa sech photon."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    return 0.5 * kappa * sech(0.5 * kappa * np.asarray(t, dtype=float))


def reduced_bandwidth_control(t, kappa: float, kappa_prime: float):
    """Control emitting ``sqrt(kappa'/4) sech(kappa' t/2)`` from a kappa resonator.

    ``g(t) = (kappa - kappa' tanh(kappa' t/2)) / (2 sqrt((1 + exp(-kappa' t)) kappa/kappa' - 1))``

    Unlike :func:`sech_control` it does not close at late times:
    ``g -> (kappa - kappa') / (2 sqrt(kappa/kappa' - 1))``.
    """
    if not 0 < kappa_prime < kappa:
        raise ValueError(
            f"need 0 < kappa_prime < kappa, got kappa_prime={kappa_prime}, kappa={kappa}"
        )
    x = kappa_prime * np.asarray(t, dtype=float)
    r = kappa / kappa_prime
    numerator = kappa - kappa_prime * np.tanh(0.5 * x)
    # 1/sqrt(r e^{-x} + r - 1), rewritten for x < 0 to avoid overflow
    neg = x < 0
    xs = np.where(neg, x, 0.0)
    xp = np.where(neg, 0.0, x)
    inv_den = np.where(
        neg,
        np.exp(0.5 * xs) / np.sqrt(r + (r - 1.0) * np.exp(xs)),
        1.0 / np.sqrt(r * np.exp(-xp) + r - 1.0),
    )
    return 0.5 * numerator * inv_den


def integrate_emitter(
    params: EmitterParams,
    control: Callable[[float], float],
    t0: float,
    t1: float,
    tol: float = DEFAULT_RTOL,
    t_eval=None,
    q0: complex = 1.0,
    c0: complex = 0.0,
    atol: float | None = None,
) -> EmitterTrace:
    """Integrate the two-amplitude emitter equations on ``[t0, t1]``.

    Args:
        params: decay rate, dispersive shift and switch state.
        control: real coupling ``g(t)``; called with scalar times.
        t0, t1: integration interval, ``t0 < t1``.
        tol: relative tolerance of the adaptive step control.
        t_eval: output grid (dense output); defaults to the solver's own steps.
        q0, c0: initial amplitudes.
        atol: absolute tolerance, default ``tol * 1e-2``.

    Returns:
        An :class:`EmitterTrace` on the requested grid.
    """
    if not t0 < t1:
        raise ValueError("need t0 < t1")
    kappa = params.kappa
    shift = params.shift
    sqrt_kappa = np.sqrt(kappa)

    def rhs(t, y):
        q, c = y[0], y[1]
        g = float(control(t))
        return np.array(
            [
                -1j * g * c,
                -1j * g * q - (1j * shift + 0.5 * kappa) * c,
                kappa * (c.real * c.real + c.imag * c.imag),
            ]
        )

    y0 = np.array([q0, c0, 0.0], dtype=complex)
    sol = solve_ivp(
        rhs,
        (t0, t1),
        y0,
        method="DOP853",
        rtol=tol,
        atol=tol * 1e-2 if atol is None else atol,
        t_eval=None if t_eval is None else np.asarray(t_eval, dtype=float),
    )
    if sol.status != 0:
        raise IntegrationError(sol.message, float(sol.t[-1]))
    q, c, emitted = sol.y
    return EmitterTrace(
        times=sol.t,
        q=q,
        c=c,
        gamma=-1j * sqrt_kappa * c,
        emitted=emitted.real,
    )


def analytic_q(t, chi: float, kappa: float):
    """Emitter amplitude under the sech control, from ``q(-inf) = 1``."""
    if chi == 0 and kappa == 0:
        raise ValueError("chi and kappa cannot both vanish")
    tanh = np.tanh(0.5 * kappa * np.asarray(t, dtype=float))
    return (2 * chi + 1j * kappa * (tanh - 1.0)) / (2 * (chi - 1j * kappa))


def analytic_c(t, chi: float, kappa: float):
    """Resonator amplitude under the sech control."""
    return 0.5 * kappa * sech(0.5 * kappa * np.asarray(t, dtype=float)) / (1j * kappa - chi)


def analytic_gamma(t, chi: float, kappa: float):
    return -1j * np.sqrt(kappa) * analytic_c(t, chi, kappa)


def transmission_probability(chi: float, kappa: float) -> float:
    """Photon transmission probability through an open switch, ``kappa^2/(chi^2+kappa^2)``."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if chi < 0:
        raise ValueError("chi must be non-negative")
    return kappa**2 / (chi**2 + kappa**2)


def emission_coefficients(chi: float, kappa: float) -> EmissionCoefficients:
    """Remaining (alpha) and transmitted (beta) amplitudes for an open switch.

    ``beta`` is the photon amplitude relative to the resonant (chi = 0) photon.
    """
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    den = chi - 1j * kappa
    return EmissionCoefficients(alpha=complex(chi / den), beta=complex(-1j * kappa / den))


def photon_overlap(gamma1, gamma2, times) -> complex:
    """Normalised overlap ``int g1* g2 dt / (|g1| |g2|)`` on a shared grid."""
    g1 = np.asarray(gamma1, dtype=complex)
    g2 = np.asarray(gamma2, dtype=complex)
    t = np.asarray(times, dtype=float)
    if g1.shape != g2.shape or g1.shape != t.shape:
        raise ValueError("fields and times must share one grid")
    n1 = trapezoid(np.abs(g1) ** 2, t)
    n2 = trapezoid(np.abs(g2) ** 2, t)
    if n1 <= 0 or n2 <= 0:
        raise ValueError("zero-norm field")
    return complex(trapezoid(np.conj(g1) * g2, t) / np.sqrt(n1 * n2))
