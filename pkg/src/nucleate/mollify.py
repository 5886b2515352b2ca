"""Mollified Heaviside and Dirac functions with compact support.

The C1 sine-based family is used throughout: inside [-eps, eps],

    H_eps(t) = (1 + t/eps + sin(pi t / eps) / pi) / 2

clamped to 0 below -eps and 1 above +eps. Its derivative

    delta_eps(t) = (1 + cos(pi t / eps)) / (2 eps)

is symmetric, nonnegative, integrates to one, and vanishes outside the band,
which keeps every field derived from it banded around the zero level set.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mollifier:
    """Half-width eps_h of the smoothing band, in world units."""

    eps_h: float

    def __post_init__(self):
        if not self.eps_h > 0:
            raise ValueError("mollifier width must be positive")

    def heaviside(self, t):
        return smoothed_heaviside(t, self)

    def delta(self, t):
        return smoothed_delta(t, self)


def smoothed_heaviside(t, m: Mollifier):
    """Smoothed step, 0 deep inside (t << 0) and 1 deep outside (t >> 0)."""
    t = np.asarray(t, dtype=np.float64)
    s = np.clip(t / m.eps_h, -1.0, 1.0)
    out = np.clip(0.5 * (1.0 + s + np.sin(np.pi * s) / np.pi), 0.0, 1.0)
    return out if out.ndim else float(out)


def smoothed_delta(t, m: Mollifier):
    """Derivative of the smoothed step; zero for |t| >= eps_h."""
    t = np.asarray(t, dtype=np.float64)
    s = t / m.eps_h
    out = np.where(np.abs(s) < 1.0, (1.0 + np.cos(np.pi * np.clip(s, -1, 1))) / (2.0 * m.eps_h), 0.0)
    return out if out.ndim else float(out)
