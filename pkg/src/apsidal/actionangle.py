"""Actions, frequencies and non-degeneracy determinants expressed through time maps.

The actions are ``(I1, I2) = (A / 2 pi + L, L)``. The unperturbed Hamiltonian
``K0(I1, I2)`` is never written down; only its gradient is needed and it follows
from the radial period and the apsidal angle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .model import SystemSpec
from .timemaps import classify, orbit_area, time_maps, timemap_partials

TWO_PI = 2 * math.pi


@dataclass(frozen=True)
class FrequencyData:
    """Actions and the gradient of ``K0`` at one point of the bounded-orbit region."""

    I1: float
    I2: float
    dK0_dI1: float
    dK0_dI2: float
    ratio: float
    tau_star: float
    n1: int

    def as_dict(self) -> dict:
        return {"I1": self.I1, "I2": self.I2, "dK0_dI1": self.dK0_dI1, "dK0_dI2": self.dK0_dI2,
                "ratio": self.ratio, "tau_star": self.tau_star, "n1": self.n1}


@dataclass(frozen=True)
class DeterminantReport:
    value: float
    error: float
    verdict: str

    def as_dict(self) -> dict:
        return {"value": self.value, "error": self.error, "verdict": self.verdict}


def psi(spec: SystemSpec, H: float, L: float) -> tuple[float, float]:
    """Action coordinates of the torus labelled by ``(H, L)``."""
    return orbit_area(spec, H, L) / TWO_PI + L, float(L)


def frequencies(spec: SystemSpec, H: float, L: float, n1: int = 1) -> FrequencyData:
    """Actions, ``grad K0`` and the period ``n1 * T`` of an ``n1``-fold radial loop."""
    if int(n1) != n1 or n1 < 1:
        raise ValueError(f"n1 must be a positive integer (got {n1})")
    tm = time_maps(spec, H, L)
    w1 = TWO_PI / tm.T
    w2 = (tm.Theta - TWO_PI) / tm.T
    # equals w2 / w1; taken from Theta so that ratio + 1 == Theta / 2 pi up to rounding
    ratio = tm.Theta / TWO_PI - 1.0
    tau = TWO_PI * int(n1) / abs(w1)
    return FrequencyData(tm.Area / TWO_PI + L, float(L), w1, w2, ratio, tau, int(n1))


def isoenergetic_determinant(spec: SystemSpec, H: float, L: float, *,
                             step: float | None = None) -> DeterminantReport:
    """``d/dL (Theta(H, L) / 2 pi - 1)`` by central differences with an error bar.

    The verdict uses the same rule as :func:`apsidal.timemaps.nondegeneracy`,
    with every quantity divided by ``2 pi``.
    """
    tm = time_maps(spec, H, L)
    pt = timemap_partials(spec, H, L, step=step)
    value = pt.dTheta_dL / TWO_PI
    error = pt.errors["dTheta_dL"] / TWO_PI
    scale = tm.Theta / L / TWO_PI
    return DeterminantReport(value, error, classify(value, error, scale))
