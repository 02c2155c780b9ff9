"""Mass-damper plant with smooth Stribeck friction and its closed-loop simulator.

The plant is only known through its inverse: the force that produced the
newest output is a static function of the output and two of its lags. Each
simulation step therefore solves that relation for ``y(k)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlgebraicLoop, DimensionMismatch, NoConvergence
from .lti import RationalFilter, filter_signal
from .signals import Signal

MAX_NEWTON_ITERS = 100


@dataclass(frozen=True)
class StribeckPlant:
    m: float = 5.0
    c1: float = 1.0
    c2: float = 20.0
    alpha: float = 2.5
    ts: float = 1e-3
    max_delay: int = 2

    def __post_init__(self):
        if not self.m > 0:
            raise ValueError("mass must be positive")
        if not self.ts > 0:
            raise ValueError("ts must be positive")
        if not (self.c2 >= self.c1 >= 0):
            raise ValueError("friction levels must satisfy c2 >= c1 >= 0")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def friction(self, v):
        """Friction force at velocity ``v`` (viscous plus Stribeck bump)."""
        v = np.asarray(v, dtype=float)
        return self.c1 * v + (self.c2 - self.c1) * v / np.cosh(self.alpha * v)

    def friction_slope(self, v):
        """Derivative of :meth:`friction` with respect to velocity."""
        av = self.alpha * np.asarray(v, dtype=float)
        return self.c1 + (self.c2 - self.c1) * (1.0 - av * np.tanh(av)) / np.cosh(av)

    def force_from_increments(self, dy: float, dy_prev: float) -> float:
        """Input force given the newest and previous output increments."""
        v = dy / self.ts
        acc = (dy - dy_prev) / self.ts**2
        c = math.cosh(self.alpha * v)
        return self.m * acc + self.c1 * v + (self.c2 - self.c1) * v / c


def g_y(p: StribeckPlant, y_window) -> float:
    """Inverse plant map ``[y(k), y(k-1), y(k-2)] -> u~(k)``."""
    w = np.asarray(y_window, dtype=float)
    if w.shape != (3,):
        raise DimensionMismatch("window must be [y(k), y(k-1), y(k-2)]")
    return p.force_from_increments(w[0] - w[1], w[1] - w[2])


def g_y_signal(p: StribeckPlant, y: Signal) -> np.ndarray:
    """Vectorised :func:`g_y` over a whole signal (zero initial rest)."""
    dy = np.diff(y.values, prepend=0.0)
    dy_prev = np.concatenate([[0.0], dy[:-1]])
    v = dy / p.ts
    return p.m * (dy - dy_prev) / p.ts**2 + p.friction(v)


def solve_increment(p: StribeckPlant, u_tilde: float, dy_prev: float) -> tuple[float, float]:
    """Solve ``force_from_increments(dy, dy_prev) = u_tilde`` for ``dy``.

    Newton from the constant-velocity guess, falling back to bisection inside
    a maintained bracket whenever Newton leaves it or stalls. Returns the
    increment and the final absolute residual.
    """
    tol = 1e-10 * max(1.0, abs(u_tilde))
    ts, m = p.ts, p.m
    fn = p.force_from_increments

    x = dy_prev
    r = fn(x, dy_prev) - u_tilde
    if abs(r) <= 1e-3 * tol:
        return x, abs(r)
    lo = hi = None
    best_x, best_r = x, abs(r)
    for _ in range(MAX_NEWTON_ITERS):
        if r > 0:
            hi = x if hi is None or x < hi else hi
        else:
            lo = x if lo is None or x > lo else lo
        slope = m / ts**2 + float(p.friction_slope(x / ts)) / ts
        x_new = x - r / slope if slope > 0 else x
        inside = (lo is None or x_new > lo) and (hi is None or x_new < hi)
        if not inside or x_new == x:
            if lo is not None and hi is not None:
                x_new = 0.5 * (lo + hi)
            elif x_new == x:
                break
        if x_new == x:
            break
        x = x_new
        r = fn(x, dy_prev) - u_tilde
        if abs(r) < best_r:
            best_x, best_r = x, abs(r)
        if best_r <= 1e-3 * tol:
            break
    if best_r > tol:
        raise NoConvergence(f"residual {best_r:.3e} above {tol:.3e} for u~={u_tilde:g}")
    return best_x, best_r


def plant_step(p: StribeckPlant, u_tilde: float, y_prev) -> float:
    """Newest output ``y(k)`` given ``u~(k)`` and ``y_prev = [y(k-1), y(k-2)]``."""
    y1, y2 = (float(v) for v in y_prev)
    dy, _ = solve_increment(p, float(u_tilde), y1 - y2)
    return y1 + dy


def simulate_open_loop(p: StribeckPlant, u_tilde: Signal) -> Signal:
    y = np.empty(len(u_tilde))
    y1 = y2 = 0.0
    for k, uk in enumerate(u_tilde.values):
        dy, _ = solve_increment(p, uk, y1 - y2)
        y[k] = y1 + dy
        y1, y2 = y[k], y1
    return Signal(y, u_tilde.ts)


def generate_disturbance(h: RationalFilter, sigma_nu: float, seed: int, n: int, ts: float = 1e-3) -> Signal:
    """Gaussian white noise of std ``sigma_nu`` shaped by ``h``; deterministic in ``seed``."""
    if sigma_nu < 0:
        raise ValueError("sigma_nu must be non-negative")
    nu = sigma_nu * np.random.default_rng(seed).standard_normal(n)
    return filter_signal(h, Signal(nu, ts))


@dataclass
class ClosedLoopDataset:
    r: Signal
    u: Signal
    y: Signal
    d: Signal
    f: Signal | None = None
    sigma_nu: float = 0.0
    seed: int = 0
    max_residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n, ts = len(self.r), self.r.ts
        for name in ("u", "y", "d", "f"):
            s = getattr(self, name)
            if s is not None and (len(s) != n or s.ts != ts):
                raise DimensionMismatch(f"channel {name} does not match r in length/ts")

    @property
    def n(self) -> int:
        return len(self.r)

    @property
    def ts(self) -> float:
        return self.r.ts

    def to_csv(self, path, meta_path=None):
        path = Path(path)
        f = self.f.values if self.f is not None else np.zeros(self.n)
        cols = [self.r.time, self.r.values, self.u.values, self.y.values, self.d.values, f]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time_s", "r", "u", "y", "d", "f"])
            for row in zip(*cols):
                w.writerow([repr(float(v)) for v in row])
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".meta.json")
        meta = {
            "seed": int(self.seed),
            "sigma_nu": float(self.sigma_nu),
            "ts": self.ts,
            "n": self.n,
            "has_feedforward": self.f is not None,
            "max_residual": float(self.max_residual),
            **self.meta,
        }
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path, meta_path=None) -> "ClosedLoopDataset":
        path = Path(path)
        meta_path = Path(meta_path) if meta_path else path.with_suffix(".meta.json")
        meta = json.loads(meta_path.read_text())
        with path.open(newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        data = np.array([[float(v) for v in row] for row in rows])
        ts = meta["ts"]
        sig = lambda i: Signal(data[:, i], ts)  # noqa: E731
        extra = {k: v for k, v in meta.items() if k not in ("seed", "sigma_nu", "ts", "n", "has_feedforward", "max_residual")}
        return cls(
            r=sig(1), u=sig(2), y=sig(3), d=sig(4),
            f=sig(5) if meta["has_feedforward"] else None,
            sigma_nu=meta["sigma_nu"], seed=meta["seed"],
            max_residual=meta["max_residual"], meta=extra,
        )


def simulate_closed_loop(
    p: StribeckPlant,
    c: RationalFilter,
    r: Signal,
    d: Signal,
    ff: Signal | None = None,
    *,
    sigma_nu: float = 0.0,
    seed: int = 0,
) -> ClosedLoopDataset:
    """Run ``y = P(u + d)``, ``u = C(r - y) + ff`` from zero initial rest.

    ``c`` must be strictly proper so ``u(k)`` is available before ``y(k)``.
    The recorded ``u`` is the measured channel and excludes ``d``.
    """
    if len(d) != len(r) or d.ts != r.ts:
        raise DimensionMismatch("r and d must share length and ts")
    if ff is not None and (len(ff) != len(r) or ff.ts != r.ts):
        raise DimensionMismatch("feedforward must match r")
    if not c.strictly_proper:
        raise AlgebraicLoop("controller must be strictly proper to close the loop causally")

    ctrl = c.copy()
    n = len(r)
    rv, dv = r.values, d.values
    fv = ff.values if ff is not None else np.zeros(n)
    u = np.empty(n)
    y = np.empty(n)
    y1 = y2 = 0.0
    max_res = 0.0
    for k in range(n):
        u[k] = ctrl.peek() + fv[k]
        dy, res = solve_increment(p, u[k] + dv[k], y1 - y2)
        y[k] = y1 + dy
        max_res = max(max_res, res)
        ctrl.step(rv[k] - y[k])
        y1, y2 = y[k], y1
    return ClosedLoopDataset(
        r=r, u=Signal(u, r.ts), y=Signal(y, r.ts), d=d,
        f=ff, sigma_nu=sigma_nu, seed=seed, max_residual=max_res,
        meta={"plant": asdict(p), "controller": c.to_dict()},
    )
