"""C-infinity cutoff functions built from the exp(-1/t) glue."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erfc


def _glue(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """0 for t <= 0, 1 for t >= 1, C-infinity and monotone in between."""
    t = np.asarray(t, dtype=float)
    a, b = _glue(t), _glue(1.0 - t)
    return a / (a + b)


def smoothstep_deriv(t):
    t = np.asarray(t, dtype=float)
    a, b = _glue(t), _glue(1.0 - t)
    da = np.where(t > 0, a / np.where(t > 0, t, 1.0) ** 2, 0.0)
    s = 1.0 - t
    db = np.where(s > 0, b / np.where(s > 0, s, 1.0) ** 2, 0.0)
    den = (a + b) ** 2
    return (da * b + a * db) / den


def omega(y, p: int):
    """Excision: 0 for |y| <= 1 and ``|y|^{p-1}/y^{p-1}`` for |y| >= 2."""
    y = np.asarray(y, dtype=float)
    far = np.sign(y) ** (p - 1) if (p - 1) % 2 else np.ones_like(y)
    return smoothstep(np.abs(y) - 1.0) * far


def psi(y):
    """1 for |y| <= 1/2, 0 for |y| >= 1, values in [0, 1]."""
    y = np.asarray(y, dtype=float)
    return 1.0 - smoothstep(2.0 * np.abs(y) - 1.0)


def rho(s):
    """Time cutoff: 0 for s <= 1, 1 for s >= 2."""
    return smoothstep(np.asarray(s, dtype=float) - 1.0)


@dataclass(frozen=True)
class CutoffPair:
    """The excision omega and the localizer psi, with the periodic-box edge taper.

    Transform symbols are multiplied by ``taper(x, L)``, an erfc profile
    centred at ``edge * L`` with width ``edge_width * L``, so they return to
    zero (to round-off) before the seam at |x| = L. The Gaussian spectral
    decay of the profile keeps e^{+-Lambda} resolved on the grid.
    """

    p: int
    edge: float = 0.6
    edge_width: float = 0.08

    def omega(self, y):
        return omega(y, self.p)

    def psi(self, y):
        return psi(y)

    def taper(self, x, L):
        x = np.asarray(x, dtype=float)
        if self.edge >= 1.0:
            return np.ones_like(x)
        return 0.5 * erfc((np.abs(x) - self.edge * L) / (self.edge_width * L))

    def taper_deriv(self, x, L):
        """d/dx of ``taper``."""
        x = np.asarray(x, dtype=float)
        if self.edge >= 1.0:
            return np.zeros_like(x)
        w = self.edge_width * L
        z = (np.abs(x) - self.edge * L) / w
        return -np.sign(x) * np.exp(-z * z) / (w * np.sqrt(np.pi))
