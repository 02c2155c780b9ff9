"""Sampled signals, fourth-order reference profiles and delay-line utilities."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import IndexOutOfRange, InfeasibleProfile, InvalidSignal


@dataclass(frozen=True)
class Signal:
    """Finite-time scalar sequence ``values[k-1] = s(k)``, ``k = 1..N``."""

    values: np.ndarray
    ts: float

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if v.size < 1:
            raise InvalidSignal("signal must contain at least one sample")
        if not np.all(np.isfinite(v)):
            raise InvalidSignal("signal contains NaN or Inf")
        if not self.ts > 0:
            raise InvalidSignal(f"sample period must be positive, got {self.ts}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "ts", float(self.ts))

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)

    @property
    def time(self) -> np.ndarray:
        return np.arange(len(self)) * self.ts

    def derivative(self, order: int = 1) -> np.ndarray:
        """Backward differences of the given order, zero pre-padded, divided by ts**order."""
        x = self.values
        for _ in range(order):
            x = np.diff(x, prepend=0.0)
        return x / self.ts**order

    def to_csv(self, path, header: str = "value"):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", header])
            for t, v in zip(self.time, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "Signal":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        t = np.array([float(r[0]) for r in rows])
        v = np.array([float(r[1]) for r in rows])
        ts = float(t[1] - t[0]) if t.size > 1 else 1.0
        return cls(v, ts)


@dataclass(frozen=True)
class FourthOrderLimits:
    """Bounds for a snap-limited point-to-point move (SI units)."""

    v_max: float = 0.5
    a_max: float = 1.0
    j_max: float = 62.0
    s_max: float = 4100.0
    stroke: float = 0.25
    lead_in: float = 0.5
    total_duration: float = 2.0

    def __post_init__(self):
        for name in ("v_max", "a_max", "j_max", "s_max", "total_duration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.stroke < 0:
            raise ValueError("stroke must be non-negative")
        if self.lead_in < 0:
            raise ValueError("lead_in must be non-negative")


def _positive_root(coeffs) -> float:
    """Smallest non-negative real root of a polynomial (descending powers)."""
    roots = np.roots(coeffs)
    real = roots[np.abs(roots.imag) <= 1e-9 * (1 + np.abs(roots.real))].real
    real = real[real >= -1e-15]
    return max(0.0, float(real.min())) if real.size else np.inf


def fourth_order_phase_durations(limits: FourthOrderLimits) -> tuple[float, float, float, float]:
    """Phase durations ``(t_snap, t_jerk, t_acc, t_vel)`` of the symmetric profile.

    Each duration is chosen as large as the remaining bounds allow, saturating
    snap first, then jerk, acceleration and velocity. The total move time is
    ``8*t_snap + 4*t_jerk + 2*t_acc + t_vel``.
    """
    x, v, a, j, s = limits.stroke, limits.v_max, limits.a_max, limits.j_max, limits.s_max
    if x == 0:
        return 0.0, 0.0, 0.0, 0.0

    t_s = min((x / (8 * s)) ** 0.25, (v / (2 * s)) ** (1 / 3), np.sqrt(a / s), j / s)
    jerk = s * t_s

    # displacement x = J (ts+tj)(2ts+tj)(4ts+2tj), velocity v = J (ts+tj)(2ts+tj)
    p_x = np.polymul(np.polymul([1, t_s], [1, 2 * t_s]), [2, 4 * t_s]) * jerk
    p_v = np.polymul([1, t_s], [1, 2 * t_s]) * jerk
    t_j = min(
        _positive_root(np.polysub(p_x, [x])),
        _positive_root(np.polysub(p_v, [v])),
        max(0.0, a / jerk - t_s),
    )
    acc = jerk * (t_s + t_j)

    # with a constant-acceleration phase: x = A (2ts+tj+ta)(4ts+2tj+ta), v = A (2ts+tj+ta)
    c1, c2 = 2 * t_s + t_j, 4 * t_s + 2 * t_j
    t_a = min(
        _positive_root(np.polysub(acc * np.polymul([1, c1], [1, c2]), [x])),
        max(0.0, v / acc - c1),
    )
    vel = acc * (c1 + t_a)
    t_v = max(0.0, x / vel - (c2 + t_a))
    return float(t_s), float(t_j), float(t_a), float(t_v)


def _snap_segments(limits: FourthOrderLimits):
    t_s, t_j, t_a, t_v = fourth_order_phase_durations(limits)
    s = limits.s_max
    # one acceleration half: jerk pulse up, hold, jerk pulse down
    jerk_pulse = [(t_s, s), (t_j, 0.0), (t_s, -s)]
    acc_up = jerk_pulse + [(t_a, 0.0)] + [(d, -q) for d, q in jerk_pulse]
    acc_down = [(d, -q) for d, q in acc_up]
    return [seg for seg in acc_up + [(t_v, 0.0)] + acc_down if seg[0] > 0]


def make_fourth_order_reference(limits: FourthOrderLimits, ts: float) -> Signal:
    """Sample a snap-limited point-to-point position profile.

    The profile is zero for ``lead_in`` seconds, moves ``stroke`` metres and
    then holds until ``total_duration``. Sampling is exact: each sample is the
    closed-form polynomial evaluation of the piecewise-constant snap profile.
    """
    if not ts > 0:
        raise ValueError("ts must be positive")
    n = int(round(limits.total_duration / ts))
    segments = _snap_segments(limits)
    move_time = sum(d for d, _ in segments)
    if limits.lead_in + move_time > limits.total_duration + 1e-12:
        raise InfeasibleProfile(
            f"move needs {move_time:.6g} s after a {limits.lead_in:.6g} s lead-in, "
            f"only {limits.total_duration:.6g} s available"
        )

    t = np.arange(n) * ts - limits.lead_in
    pos = np.zeros(n)
    # state [p, v, a, j] at the start of each segment
    state = np.zeros(4)
    t0 = 0.0
    for dur, snap in segments:
        mask = (t >= t0) & (t < t0 + dur)
        tau = t[mask] - t0
        p, v, a, j = state
        pos[mask] = p + v * tau + a * tau**2 / 2 + j * tau**3 / 6 + snap * tau**4 / 24
        state = np.array([
            p + v * dur + a * dur**2 / 2 + j * dur**3 / 6 + snap * dur**4 / 24,
            v + a * dur + j * dur**2 / 2 + snap * dur**3 / 6,
            a + j * dur + snap * dur**2 / 2,
            j + snap * dur,
        ])
        t0 += dur
    # the move ends exactly at the stroke by construction; pin it against round-off
    pos[t >= t0] = limits.stroke
    return Signal(pos, ts)


def delay_line(s, k: int, p: int) -> np.ndarray:
    """Return ``[s(k), s(k-1), ..., s(k-p)]`` with 1-based ``k`` and zero pre-padding."""
    values = np.asarray(s, dtype=float)
    n = values.size
    if not 1 <= k <= n:
        raise IndexOutOfRange(f"k={k} outside [1, {n}]")
    if p < 0:
        raise ValueError("p must be non-negative")
    out = np.zeros(p + 1)
    m = min(p + 1, k)
    out[:m] = values[k - 1::-1][:m]
    return out


def delay_matrix(s, p: int) -> np.ndarray:
    """Stack every delay line of ``s``: row ``k-1`` is ``delay_line(s, k, p)``."""
    values = np.asarray(s, dtype=float)
    n = values.size
    out = np.zeros((n, p + 1))
    for i in range(p + 1):
        out[i:, i] = values[: n - i]
    return out


def derivative_basis_matrix(ts: float, scale=None) -> np.ndarray:
    """Matrix mapping ``[r(k), r(k-1), r(k-2)]`` onto ``[r, dr, d2r]``.

    ``scale`` optionally divides each row so the outputs are of order one.
    """
    if not ts > 0:
        raise ValueError("ts must be positive")
    T = np.array([
        [1.0, 0.0, 0.0],
        [1.0 / ts, -1.0 / ts, 0.0],
        [1.0 / ts**2, -2.0 / ts**2, 1.0 / ts**2],
    ])
    if scale is not None:
        T = T / np.asarray(scale, dtype=float)[:, None]
    return T


def derivative_scales(r: Signal) -> np.ndarray:
    """Peak magnitudes of ``r``, ``dr`` and ``d2r``; zeros are replaced by one."""
    scales = np.array([np.max(np.abs(r.derivative(i))) for i in range(3)])
    scales[scales == 0] = 1.0
    return scales
