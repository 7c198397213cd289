"""Time-dependent qubit-resonator coupling programs."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .emitter import reduced_bandwidth_control, sech

SHAPES = ("sech", "reduced_sech", "zero")


@dataclass(frozen=True)
class PulseSchedule:
    """Coupling ``g_m(t)`` on resonator ``coupling`` (1-based, as ``g_1 .. g_4``).

    The pulse is exactly zero outside ``window``.  ``time_reversed`` mirrors
    the shape about ``center``; it only matters for asymmetric shapes.
    """

    coupling: int
    kappa: float
    shape: str = "sech"
    center: float = 0.0
    window: tuple[float, float] = (-np.inf, np.inf)
    amplitude_scale: float = 1.0
    time_reversed: bool = False
    kappa_prime: float | None = None

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ValueError(f"unknown pulse shape {self.shape!r}; expected one of {SHAPES}")
        if self.coupling < 1:
            raise ValueError("coupling index is 1-based")
        if not self.amplitude_scale > 0:
            raise ValueError("amplitude_scale must be positive")
        ta, tb = self.window
        if not ta < tb:
            raise ValueError(f"empty pulse window {self.window}")
        if self.shape != "zero" and not ta <= self.center <= tb:
            raise ValueError(f"pulse center {self.center} outside window {self.window}")
        if self.shape == "reduced_sech":
            if self.kappa_prime is None or not 0 < self.kappa_prime < self.kappa:
                raise ValueError("reduced_sech needs 0 < kappa_prime < kappa")
        object.__setattr__(self, "window", (float(ta), float(tb)))

    def __call__(self, t: float) -> float:
        ta, tb = self.window
        if self.shape == "zero" or t < ta or t > tb:
            return 0.0
        x = (self.center - t) if self.time_reversed else (t - self.center)
        if self.shape == "sech":
            value = 0.5 * self.kappa * float(sech(0.5 * self.kappa * x))
        else:
            value = float(reduced_bandwidth_control(x, self.kappa, self.kappa_prime))
        return self.amplitude_scale * value

    def sample(self, times) -> np.ndarray:
        return np.array([self(t) for t in np.asarray(times, dtype=float)])

    def breakpoints(self) -> tuple[float, ...]:
        return tuple(t for t in self.window if np.isfinite(t))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSchedule":
        d = dict(d)
        d["window"] = tuple(d["window"])
        return cls(**d)
