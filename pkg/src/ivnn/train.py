"""Least-squares and instrumental-variable training of the feedforward network."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, LinearSolveFailure, NotConverged
from .lti import RationalFilter
from .nn import MlpParams, MlpShape, flatten, forward_windows, init_params, jacobian_windows, unflatten
from .plant import ClosedLoopDataset, StribeckPlant, simulate_closed_loop
from .signals import Signal, delay_matrix

log = logging.getLogger(__name__)

LS = "LS"
IV = "IV"


@dataclass(frozen=True)
class InstrumentMatrix:
    Z: np.ndarray
    description: str = "reference lags"

    def __post_init__(self):
        Z = np.array(self.Z, dtype=float)
        if Z.ndim != 2:
            raise DimensionMismatch("instrument matrix must be 2-D")
        if not np.all(np.isfinite(Z)):
            raise ValueError("instrument matrix contains NaN or Inf")
        Z.setflags(write=False)
        object.__setattr__(self, "Z", Z)

    @property
    def shape(self):
        return self.Z.shape


def build_instruments(r: Signal, n_phi: int) -> InstrumentMatrix:
    """Row k holds ``r(k), r(k-1), ..., r(k-n_phi+1)`` (zero before the first sample)."""
    return InstrumentMatrix(delay_matrix(r, n_phi - 1), "reference lags")


def _as_Z(Z, n: int) -> np.ndarray:
    Z = Z.Z if isinstance(Z, InstrumentMatrix) else np.asarray(Z, dtype=float)
    if Z.ndim != 2 or Z.shape[0] != n:
        raise DimensionMismatch(f"instrument matrix needs {n} rows, got shape {Z.shape}")
    return Z


def _windows(phi: MlpParams, ds: ClosedLoopDataset) -> np.ndarray:
    return delay_matrix(ds.y, phi.shape.input_delay)


def residual(phi: MlpParams, ds: ClosedLoopDataset) -> np.ndarray:
    """``u - F_phi(y)`` over the whole record."""
    return ds.u.values - forward_windows(phi, _windows(phi, ds))


def loss_ls(phi: MlpParams, ds: ClosedLoopDataset) -> float:
    e = residual(phi, ds)
    return float(e @ e)


def loss_iv(phi: MlpParams, ds: ClosedLoopDataset, Z) -> float:
    g = _as_Z(Z, ds.n).T @ residual(phi, ds)
    return float(g @ g)


def grad_ls(phi: MlpParams, ds: ClosedLoopDataset) -> np.ndarray:
    out, J = jacobian_windows(phi, _windows(phi, ds))
    return -2.0 * J.T @ (ds.u.values - out)


def grad_iv(phi: MlpParams, ds: ClosedLoopDataset, Z) -> np.ndarray:
    Zm = _as_Z(Z, ds.n)
    out, J = jacobian_windows(phi, _windows(phi, ds))
    return -2.0 * (Zm.T @ J).T @ (Zm.T @ (ds.u.values - out))


@dataclass
class OptimizerOptions:
    max_iters: int = 500
    grad_tol: float = 1e-9
    lambda_init: float = 1e-3
    lambda_min: float = 1e-10
    lambda_factor: float = 10.0
    lambda_max: float = 1e20

    @classmethod
    def from_dict(cls, d: dict | None) -> "OptimizerOptions":
        return cls(**(d or {}))


@dataclass
class TrainReport:
    phi_hat: MlpParams
    criterion: str
    final_cost: float
    iterations: int
    grad_norm: float
    converged: bool
    status: str = ""
    cost_history: list = field(default_factory=list)
    # Euclidean norm including directions below the cost rounding error
    full_grad_norm: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "final_cost": self.final_cost,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
            "full_grad_norm": self.full_grad_norm,
            "converged": self.converged,
            "status": self.status,
            "cost_history": list(self.cost_history),
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")


@dataclass
class _GradientState:
    w: np.ndarray
    V: np.ndarray
    proj: np.ndarray
    gnorm: float
    full_gnorm: float


class _Problem:
    """Residual vector and its Jacobian for one criterion on one dataset."""

    def __init__(self, criterion, shape: MlpShape, ds: ClosedLoopDataset, Z=None):
        self.criterion = criterion
        self.shape = shape
        self.windows = delay_matrix(ds.y, shape.input_delay)
        self.u = ds.u.values
        if criterion == IV:
            if Z is None:
                raise ValueError("IV criterion requires an instrument matrix")
            self.Zt = _as_Z(Z, ds.n).T
        elif criterion == LS:
            self.Zt = None
        else:
            raise ValueError(f"unknown criterion {criterion!r}")
        # bound on the rounding error of one evaluation of the residual vector
        mag = np.abs(self.u) if self.Zt is None else np.abs(self.Zt) @ np.abs(self.u)
        self.residual_error = 8.0 * np.finfo(float).eps * float(np.linalg.norm(mag))

    def cost_error(self, cost: float) -> float:
        return 2.0 * np.sqrt(cost) * self.residual_error + self.residual_error ** 2

    def gradient_state(self, res, A) -> "_GradientState":
        """Eigen-decomposed normal matrix and the gradient norm above rounding noise."""
        try:
            w, V = np.linalg.eigh(A.T @ A)
        except np.linalg.LinAlgError as exc:
            raise LinearSolveFailure(f"eigendecomposition of the {self.criterion} normal matrix failed: {exc}") from exc
        if not np.all(np.isfinite(w)):
            raise LinearSolveFailure(f"non-finite {self.criterion} normal matrix")
        w = np.clip(w, 0.0, None)
        proj = V.T @ (A.T @ res)
        # a residual perturbation of norm residual_error moves proj_i by up to sqrt(w_i) times it
        eps = np.finfo(float).eps
        noise = np.sqrt(w) * self.residual_error + 8.0 * eps * float(np.linalg.norm(np.abs(A).T @ np.abs(res)))
        keep = np.abs(proj) > noise
        return _GradientState(w, V, proj, 2.0 * float(np.linalg.norm(proj[keep])), 2.0 * float(np.linalg.norm(proj)))

    def residual(self, theta):
        e = self.u - forward_windows(unflatten(theta, self.shape), self.windows)
        return e if self.Zt is None else self.Zt @ e

    def residual_and_jacobian(self, theta):
        out, J = jacobian_windows(unflatten(theta, self.shape), self.windows)
        e = self.u - out
        if self.Zt is None:
            return e, J
        return self.Zt @ e, self.Zt @ J


def minimize(criterion: str, phi_init: MlpParams, ds: ClosedLoopDataset, Z=None, opts: OptimizerOptions | None = None) -> TrainReport:
    """Full-batch Levenberg-Marquardt on ``u - F_phi(y)`` (LS) or ``Z^T(u - F_phi(y))`` (IV).

    The damped step solves ``(A^T A + lam I) delta = A^T res`` with ``A`` the
    Jacobian of the network output (projected on the instruments for IV).
    Steps are accepted when the criterion strictly decreases. A step whose
    predicted and measured changes of the cost are both below the cost's own
    rounding error is judged by the gradient instead, and accepted when the
    resolvable gradient norm drops. Iteration
    stops once the gradient norm is at most ``grad_tol * (1 + cost)``, after
    ``max_iters``, or when no damping up to ``lambda_max`` yields a decrease
    (reported as stalled).

    The gradient norm excludes eigendirections of ``A^T A`` in which the
    projected gradient is below its own rounding noise, i.e. what a residual
    perturbation at the level of the evaluation error could produce. The full
    Euclidean norm is reported as ``full_grad_norm``.
    """
    opts = opts or OptimizerOptions()
    prob = _Problem(criterion, phi_init.shape, ds, Z)
    theta = flatten(phi_init)
    res, A = prob.residual_and_jacobian(theta)
    cost = float(res @ res)
    state = prob.gradient_state(res, A)
    history = [cost]
    lam = None
    status = "max_iters"
    it = 0
    while True:
        tol = opts.grad_tol * (1.0 + cost)
        if state.gnorm <= tol:
            status = "grad_tol"
            break
        if it >= opts.max_iters:
            break
        w, V, proj = state.w, state.V, state.proj
        scale = float(w.sum()) / theta.size
        if lam is None:
            lam = opts.lambda_init * scale
        lam = max(lam, opts.lambda_min * scale)
        noise = prob.cost_error(cost)
        accepted = False
        while lam <= opts.lambda_max * max(1.0, scale):
            step = proj / (w + lam)
            delta = V @ step
            if not np.all(np.isfinite(delta)):
                raise LinearSolveFailure("damped step is not finite")
            trial = theta + delta
            res_t = prob.residual(trial)
            cost_t = float(res_t @ res_t)
            if cost_t < cost:
                accepted = True
            elif cost_t <= cost + noise and float(step @ (2.0 * proj - w * step)) <= noise:
                # the cost cannot tell the step apart from rounding: judge it by the gradient instead
                res_t, A_t = prob.residual_and_jacobian(trial)
                state_t = prob.gradient_state(res_t, A_t)
                accepted = state_t.gnorm < state.gnorm
            if accepted:
                break
            lam *= opts.lambda_factor
        if not accepted:
            status = "stalled"
            break
        theta = trial
        lam /= opts.lambda_factor
        res, A = prob.residual_and_jacobian(theta)
        cost = float(res @ res)
        state = prob.gradient_state(res, A)
        history.append(cost)
        it += 1
    gnorm, full_gnorm = state.gnorm, state.full_gnorm
    return TrainReport(
        phi_hat=unflatten(theta, phi_init.shape),
        criterion=criterion,
        final_cost=cost,
        iterations=it,
        grad_norm=gnorm,
        converged=gnorm <= tol,
        status=status,
        cost_history=history,
        full_grad_norm=full_gnorm,
    )


@dataclass
class PretrainResult:
    phi0: MlpParams
    dataset: ClosedLoopDataset
    report: TrainReport
    floor_rms: float

    @property
    def floor_norm(self) -> float:
        return self.floor_rms * np.sqrt(self.dataset.n)


def pretrain_noiseless(
    shape: MlpShape,
    plant: StribeckPlant,
    controller: RationalFilter,
    r: Signal,
    optimizer_opts: OptimizerOptions | None = None,
    seed: int = 0,
    *,
    strict: bool = True,
    polish_lambda_min: float | None = 1e-6,
    polish_iters: int = 1000,
) -> PretrainResult:
    """Fit the network to the disturbance-free closed-loop pair ``(u0, y0)`` by LS.

    A small damping floor gives the lowest residual floor, but near the end
    the accepted steps wander along the almost flat directions and keep
    re-creating gradient in the stiff ones. When the main run stops short of
    the gradient tolerance it is therefore continued for at most
    ``polish_iters`` iterations with the floor raised to ``polish_lambda_min``
    (``None`` disables this). The returned report covers both stages.

    Raises :class:`NotConverged` (carrying the partial report) when the
    gradient tolerance is not met and ``strict`` is set.
    """
    opts = optimizer_opts or OptimizerOptions()
    ds0 = simulate_closed_loop(plant, controller, r, Signal(np.zeros(len(r)), r.ts))
    report = minimize(LS, init_params(shape, seed), ds0, opts=opts)
    if not report.converged and polish_lambda_min is not None and polish_iters > 0:
        log.info("pretraining: %s after %d iterations, polishing", report.status, report.iterations)
        polish = minimize(LS, report.phi_hat, ds0,
                          opts=replace(opts, lambda_min=max(opts.lambda_min, polish_lambda_min), max_iters=polish_iters))
        polish.iterations += report.iterations
        polish.cost_history = report.cost_history + polish.cost_history[1:]
        report = polish
    floor = float(np.sqrt(report.final_cost / ds0.n))
    log.info("pretraining: %s after %d iterations, floor rms %.3e", report.status, report.iterations, floor)
    if strict and not report.converged:
        raise NotConverged(
            f"pretraining stopped ({report.status}) after {report.iterations} iterations "
            f"with gradient norm {report.grad_norm:.3e}",
            report,
        )
    return PretrainResult(report.phi_hat, ds0, report, floor)
