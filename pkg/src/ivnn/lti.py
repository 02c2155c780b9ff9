"""Discrete-time rational filters in transposed direct form II."""

from __future__ import annotations

import numpy as np

from .errors import PoleAtDc
from .signals import Signal

# Feedback controller and disturbance-shaping filter of the friction example.
CONTROLLER_NUM = (123.38, -122.76)
CONTROLLER_DEN = (1.0, -1.908, 0.91)
NOISE_NUM = (0.8048, -1.61, 0.8048)
NOISE_DEN = (1.0, -1.57, 0.65)


class RationalFilter:
    """Proper transfer function ``num(z)/den(z)``, coefficients in descending powers of z.

    The numerator is aligned to the denominator degree, so a strictly proper
    filter has a zero direct feedthrough term and its output at step k only
    depends on inputs up to k-1.
    """

    def __init__(self, num, den):
        num = np.trim_zeros(np.atleast_1d(np.asarray(num, dtype=float)), "f")
        den = np.trim_zeros(np.atleast_1d(np.asarray(den, dtype=float)), "f")
        if den.size == 0:
            raise ValueError("denominator must be nonzero")
        if num.size == 0:
            num = np.zeros(1)
        if num.size > den.size:
            raise ValueError("filter must be proper: deg(num) <= deg(den)")
        self.num = num / den[0]
        self.den = den / den[0]
        self.order = self.den.size - 1
        # numerator in powers of z^-1, padded to the denominator length
        self._b = np.concatenate([np.zeros(self.den.size - self.num.size), self.num])
        self._a = self.den
        self.state = np.zeros(self.order)

    @classmethod
    def controller(cls) -> "RationalFilter":
        return cls(CONTROLLER_NUM, CONTROLLER_DEN)

    @classmethod
    def noise_shaping(cls) -> "RationalFilter":
        return cls(NOISE_NUM, NOISE_DEN)

    @property
    def strictly_proper(self) -> bool:
        return self._b[0] == 0.0

    @property
    def relative_degree(self) -> int:
        nz = np.flatnonzero(self._b)
        return int(nz[0]) if nz.size else self.order

    def copy(self) -> "RationalFilter":
        """Fresh instance with the same coefficients and zero state."""
        return RationalFilter(self.num, self.den)

    def reset(self):
        self.state = np.zeros(self.order)

    def step(self, x: float) -> float:
        b, a, z = self._b, self._a, self.state
        y = b[0] * x + (z[0] if self.order else 0.0)
        for i in range(self.order - 1):
            z[i] = z[i + 1] + b[i + 1] * x - a[i + 1] * y
        if self.order:
            z[-1] = b[-1] * x - a[-1] * y
        return y

    def peek(self) -> float:
        """Output of the next step when the filter is strictly proper (input-independent)."""
        return self.state[0] if self.order else 0.0

    def to_dict(self) -> dict:
        return {"num": self.num.tolist(), "den": self.den.tolist()}

    def __repr__(self):
        return f"RationalFilter(num={self.num.tolist()}, den={self.den.tolist()})"


def filter_step(f: RationalFilter, x: float) -> float:
    return f.step(float(x))


def filter_signal(f: RationalFilter, x: Signal) -> Signal:
    """Reset ``f`` and run it over every sample of ``x``."""
    f.reset()
    out = np.empty(len(x))
    for k, xk in enumerate(x.values):
        out[k] = f.step(xk)
    return Signal(out, x.ts)


def dc_gain(f: RationalFilter) -> float:
    den1 = np.polyval(f.den, 1.0)
    if abs(den1) < 1e-12:
        raise PoleAtDc(f"denominator vanishes at z=1 ({den1:g})")
    return float(np.polyval(f.num, 1.0) / den1)


def impulse_response(f: RationalFilter, n: int) -> np.ndarray:
    g = f.copy()
    x = np.zeros(n)
    x[0] = 1.0
    return np.array([g.step(v) for v in x])
