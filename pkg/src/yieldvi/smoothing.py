"""Smooth approximations of ``beta * |x|`` and their first two derivatives.

Three families are available:

``huber-local``
    Exact subgradient ``beta * sign(x)`` outside a ``1/gamma`` band around the
    kink, linear ``gamma * x`` near zero, with a quadratic blend in between.
    C^1 derivative; the second derivative is continuous and piecewise linear.
``global-sqrt``
    ``beta * sqrt(x**2 + gamma**-2)``.
``global-power``
    ``beta / (gamma + 1) * (gamma |x|) ** ((gamma + 1) / gamma)``.

All functions broadcast over numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("huber-local", "global-sqrt", "global-power")


@dataclass(frozen=True)
class Smoothing:
    kind: str
    beta: float
    gamma: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown smoothing kind {self.kind!r}; choose from {KINDS}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be nonnegative, got {self.beta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.kind == "huber-local" and self.beta > 0 and not self.beta - 0.5 / self.gamma > 0:
            raise ValueError(
                f"huber-local needs beta - 1/(2 gamma) > 0; gamma={self.gamma} too small "
                f"for beta={self.beta}"
            )

    @property
    def power_exponent(self) -> float:
        """Exponent of the global-power family, ``(gamma + 1) / gamma``."""
        return (self.gamma + 1.0) / self.gamma

    @property
    def breakpoints(self) -> tuple[float, float]:
        """``|x|`` values bounding the huber-local blending band."""
        b, g = self.beta, self.gamma
        return (b - 0.5 / g) / g, (b + 0.5 / g) / g

    def with_gamma(self, gamma: float) -> "Smoothing":
        return Smoothing(self.kind, self.beta, gamma)


def phi(x, s: Smoothing):
    """The smoothed functional itself (primitive of :func:`phi_prime`, zero at 0 for huber-local)."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    b, g = s.beta, s.gamma
    if b == 0:
        return np.zeros_like(x)
    if s.kind == "global-sqrt":
        return b * np.sqrt(x * x + g**-2)
    if s.kind == "global-power":
        return b / (g + 1.0) * (g * ax) ** s.power_exponent
    lo, hi = s.breakpoints
    c2 = 0.5 * g * lo * lo - b * lo - 1.0 / (6.0 * g**3)
    blend = b - g * ax + 0.5 / g
    return np.where(
        ax <= lo,
        0.5 * g * ax * ax,
        np.where(ax >= hi, b * ax + c2, b * ax + blend**3 / 6.0 + c2),
    )


def phi_prime(x, s: Smoothing):
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    sgn = np.sign(x)
    b, g = s.beta, s.gamma
    if b == 0:
        return np.zeros_like(x)
    if s.kind == "global-sqrt":
        return b * x / np.sqrt(x * x + g**-2)
    if s.kind == "global-power":
        return b * (g * ax) ** (1.0 / g) * sgn
    gx = g * ax
    mid = sgn * (b - 0.5 * g * (b - gx + 0.5 / g) ** 2)
    return np.where(gx >= b + 0.5 / g, b * sgn, np.where(gx <= b - 0.5 / g, g * x, mid))


def phi_second(x, s: Smoothing):
    """Almost-everywhere derivative of :func:`phi_prime`; always nonnegative.

    For huber-local the three branches meet continuously (value ``gamma`` at
    the lower breakpoint, ``0`` at the upper), so the kink selection has no
    effect on the returned values.  global-power is singular at ``x = 0``
    for ``gamma > 1`` and returns ``inf`` there.
    """
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    b, g = s.beta, s.gamma
    if b == 0:
        return np.zeros_like(x)
    if s.kind == "global-sqrt":
        return b * g**-2 / (x * x + g**-2) ** 1.5
    if s.kind == "global-power":
        with np.errstate(divide="ignore"):
            return b * (g * ax) ** (1.0 / g - 1.0)
    gx = g * ax
    mid = g * g * (b - gx + 0.5 / g)
    return np.where(gx <= b - 0.5 / g, g, np.where(gx >= b + 0.5 / g, 0.0, mid))
