"""Local closed-form estimates, Monte-Carlo consistency sweeps and metrics."""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, SingularCrossMatrix, SingularNormalMatrix
from .lti import RationalFilter
from .nn import MlpParams, flatten, forward_signal, param_jacobian
from .plant import ClosedLoopDataset, StribeckPlant, generate_disturbance, simulate_closed_loop
from .signals import Signal, delay_matrix
from .train import IV, LS, InstrumentMatrix, OptimizerOptions, TrainReport, build_instruments, minimize

log = logging.getLogger(__name__)

# entry (3, 1) of the first weight matrix, 0-based
MONITORED_WEIGHT = (0, 2, 0)

RESULT_COLUMNS = [
    "sigma_index", "realization", "sigma_nu", "seed", "criterion", "monitored_coeff",
    "residual_norm", "converged", "iterations", "final_cost", "status", "error",
]


def _solve_square(Z, F, d, error_cls):
    Z = np.asarray(Z, dtype=float)
    F = np.asarray(F, dtype=float)
    d = np.asarray(d, dtype=float).reshape(-1)
    if Z.shape[0] != F.shape[0] or F.shape[0] != d.size:
        raise DimensionMismatch(f"row mismatch: Z {Z.shape}, F {F.shape}, d {d.shape}")
    if Z.shape[1] != F.shape[1]:
        raise DimensionMismatch("Z and F must have the same number of columns")
    M = Z.T @ F
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond * np.finfo(float).eps >= 1.0:
        raise error_cls(f"matrix is numerically singular (condition number {cond:.3e})")
    return -np.linalg.solve(M, Z.T @ d), float(cond)


def local_ls_estimate(F, d, *, return_cond: bool = False):
    """``-(F^T F)^{-1} F^T d``: the first-order LS parameter shift caused by ``d``."""
    delta, cond = _solve_square(F, F, d, SingularNormalMatrix)
    return (delta, cond) if return_cond else delta


def local_iv_estimate(Z, F, d, *, return_cond: bool = False):
    """``-(Z^T F)^{-1} Z^T d``: the first-order IV parameter shift caused by ``d``."""
    Z = Z.Z if isinstance(Z, InstrumentMatrix) else Z
    delta, cond = _solve_square(Z, F, d, SingularCrossMatrix)
    return (delta, cond) if return_cond else delta


def residual_trace(phi_hat: MlpParams, ds0: ClosedLoopDataset) -> tuple[Signal, float]:
    """``(f0 - F_phi(y0)) / max|f0|`` on the noiseless record, with the normaliser."""
    f0 = ds0.u.values
    scale = float(np.max(np.abs(f0))) or 1.0
    e = f0 - forward_signal(phi_hat, ds0.y).values
    return Signal(e / scale, ds0.ts), scale


def residual_norm(phi_hat: MlpParams, ds0: ClosedLoopDataset) -> float:
    return float(np.linalg.norm(ds0.u.values - forward_signal(phi_hat, ds0.y).values))


@dataclass
class LinearizationRow:
    scale: float
    optimizer_shift: float
    closed_form_shift: float
    discrepancy: float
    report: TrainReport | None = None

    @property
    def ratio(self) -> float:
        return self.discrepancy / self.closed_form_shift if self.closed_form_shift > 0 else 0.0


def linearization_check(
    ds0: ClosedLoopDataset,
    phi0: MlpParams,
    criterion: str,
    scales,
    direction,
    Z=None,
    opts: OptimizerOptions | None = None,
) -> list[LinearizationRow]:
    """Compare trained parameter shifts with the closed-form local estimates.

    The regressor is held at the noiseless output ``y0`` and the target is
    replaced by ``F_phi0(y0) - s * d``, so ``phi0`` reproduces the clean part
    exactly and the only perturbation is the scaled disturbance. For each
    scale the network is retrained from ``phi0`` and the shift is compared
    against the closed form evaluated at the same ``s * d``.
    """
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != ds0.n:
        raise DimensionMismatch("disturbance direction must match the dataset length")
    base = forward_signal(phi0, ds0.y).values
    F = param_jacobian(phi0, ds0.y)
    if criterion == IV:
        if Z is None:
            Z = build_instruments(ds0.r, phi0.n_phi)
        Zm = Z.Z if isinstance(Z, InstrumentMatrix) else np.asarray(Z, dtype=float)
        unit = local_iv_estimate(Zm, F, d)
    elif criterion == LS:
        Zm = None
        unit = local_ls_estimate(F, d)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    theta0 = flatten(phi0)
    rows = []
    for s in scales:
        s = float(s)
        if s == 0.0:
            rows.append(LinearizationRow(0.0, 0.0, 0.0, 0.0))
            continue
        target = Signal(base - s * d, ds0.ts)
        ds = ClosedLoopDataset(r=ds0.r, u=target, y=ds0.y, d=Signal(s * d, ds0.ts), sigma_nu=0.0, seed=ds0.seed)
        rep = minimize(criterion, phi0, ds, Zm, opts)
        shift = flatten(rep.phi_hat) - theta0
        cf = s * unit
        rows.append(LinearizationRow(s, float(np.linalg.norm(shift)), float(np.linalg.norm(cf)),
                                     float(np.linalg.norm(shift - cf)), rep))
    return rows


def loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    return float(np.polyfit(lx, ly, 1)[0])


@dataclass
class SweepConfig:
    plant: StribeckPlant
    controller: RationalFilter
    noise_filter: RationalFilter
    reference: Signal
    phi0: MlpParams
    sigma_levels: tuple = tuple(i / 1000 for i in range(11))
    realizations: int = 20
    master_seed: int = 0
    optimizer: OptimizerOptions = field(default_factory=OptimizerOptions)
    workers: int = 1


@dataclass(frozen=True)
class Cell:
    sigma_index: int
    realization: int
    sigma_nu: float
    seed: int

    @property
    def key(self) -> tuple[int, int]:
        return self.sigma_index, self.realization


@dataclass
class SweepResult:
    sigma_nu: float
    seed: int
    criterion: str
    phi_hat: np.ndarray | None
    monitored_coeff: float
    residual_norm: float
    report: TrainReport | None
    sigma_index: int = 0
    realization: int = 0
    error: str = ""

    @property
    def converged(self) -> bool:
        return bool(self.report is not None and self.report.converged)

    def status_text(self) -> str:
        return self.error or (self.report.status if self.report else "failed")

    def row(self) -> dict:
        rep = self.report
        return {
            "sigma_index": self.sigma_index,
            "realization": self.realization,
            "sigma_nu": repr(float(self.sigma_nu)),
            "seed": self.seed,
            "criterion": self.criterion,
            "monitored_coeff": repr(float(self.monitored_coeff)),
            "residual_norm": repr(float(self.residual_norm)),
            "converged": str(self.converged).lower(),
            "iterations": rep.iterations if rep else 0,
            "final_cost": repr(float(rep.final_cost)) if rep else "nan",
            "status": rep.status if rep else "failed",
            "error": self.error,
        }


def cell_seed(master_seed: int, sigma_index: int, realization: int) -> int:
    """64-bit noise seed of one sweep cell, derived from the master seed."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(sigma_index), int(realization)))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def sweep_cells(cfg: SweepConfig) -> list[Cell]:
    return [
        Cell(i, j, float(sigma), cell_seed(cfg.master_seed, i, j))
        for i, sigma in enumerate(cfg.sigma_levels)
        for j in range(cfg.realizations)
    ]


def noiseless_dataset(cfg: SweepConfig) -> ClosedLoopDataset:
    zeros = Signal(np.zeros(len(cfg.reference)), cfg.reference.ts)
    return simulate_closed_loop(cfg.plant, cfg.controller, cfg.reference, zeros)


def run_cell(cfg: SweepConfig, cell: Cell, ds0: ClosedLoopDataset | None = None, Z=None) -> list[SweepResult]:
    """Train LS and IV from ``phi0`` on one noise realization; errors are captured."""
    ds0 = ds0 if ds0 is not None else noiseless_dataset(cfg)
    Z = Z if Z is not None else build_instruments(cfg.reference, cfg.phi0.n_phi)
    idx = cfg.phi0.shape.weight_index(*MONITORED_WEIGHT)
    common = dict(sigma_nu=cell.sigma_nu, seed=cell.seed, sigma_index=cell.sigma_index, realization=cell.realization)
    try:
        d = generate_disturbance(cfg.noise_filter, cell.sigma_nu, cell.seed, len(cfg.reference), cfg.reference.ts)
        ds = simulate_closed_loop(cfg.plant, cfg.controller, cfg.reference, d, sigma_nu=cell.sigma_nu, seed=cell.seed)
    except Exception as exc:  # recorded per cell, never aborts the sweep
        return [SweepResult(criterion=c, phi_hat=None, monitored_coeff=math.nan, residual_norm=math.nan,
                            report=None, error=f"{type(exc).__name__}: {exc}", **common) for c in (LS, IV)]
    out = []
    for crit in (LS, IV):
        try:
            rep = minimize(crit, cfg.phi0, ds, Z, cfg.optimizer)
            theta = flatten(rep.phi_hat)
            out.append(SweepResult(criterion=crit, phi_hat=theta, monitored_coeff=float(theta[idx]),
                                   residual_norm=residual_norm(rep.phi_hat, ds0), report=rep, **common))
        except Exception as exc:
            out.append(SweepResult(criterion=crit, phi_hat=None, monitored_coeff=math.nan, residual_norm=math.nan,
                                   report=None, error=f"{type(exc).__name__}: {exc}", **common))
    return out


_WORKER_STATE = {}


def _init_worker(cfg):
    _WORKER_STATE["cfg"] = cfg
    _WORKER_STATE["ds0"] = noiseless_dataset(cfg)
    _WORKER_STATE["Z"] = build_instruments(cfg.reference, cfg.phi0.n_phi)


def _worker(cell):
    s = _WORKER_STATE
    return run_cell(s["cfg"], cell, s["ds0"], s["Z"])


def consistency_sweep(cfg: SweepConfig, cells: list[Cell] | None = None, on_cell=None) -> list[SweepResult]:
    """Run every (sigma, realization) cell under both criteria.

    Results come back ordered by cell key regardless of ``cfg.workers``.
    ``on_cell(cell, results)`` is called as each cell finishes.
    """
    cells = sweep_cells(cfg) if cells is None else cells
    results: dict = {}
    if cfg.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            for cell, res in zip(cells, pool.map(_worker, cells)):
                results[cell.key] = res
                if on_cell:
                    on_cell(cell, res)
    else:
        ds0 = noiseless_dataset(cfg)
        Z = build_instruments(cfg.reference, cfg.phi0.n_phi)
        for cell in cells:
            res = run_cell(cfg, cell, ds0, Z)
            results[cell.key] = res
            log.info("cell sigma=%.4g realization=%d done", cell.sigma_nu, cell.realization)
            if on_cell:
                on_cell(cell, res)
    return [r for key in sorted(results) for r in results[key]]


def write_results_csv(results, path):
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULT_COLUMNS)
        w.writeheader()
        for res in results:
            w.writerow(res.row())


def read_results_csv(path) -> list[dict]:
    """Rows of a results file with numeric columns converted."""
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for k in ("sigma_index", "realization", "seed", "iterations"):
            row[k] = int(row[k])
        for k in ("sigma_nu", "monitored_coeff", "residual_norm", "final_cost"):
            row[k] = float(row[k])
        row["converged"] = row["converged"] == "true"
    return rows


def _field(row, key):
    return row[key] if isinstance(row, dict) else getattr(row, key)


def group_by_sigma(rows, criterion: str, column: str) -> dict[float, np.ndarray]:
    """``{sigma: values}`` for one criterion; ``rows`` are result dicts or SweepResults."""
    out: dict[float, list] = {}
    for row in rows:
        get = lambda k, _r=row: _field(_r, k)  # noqa: E731
        if get("criterion") != criterion:
            continue
        out.setdefault(float(get("sigma_nu")), []).append(float(get(column)))
    return {k: np.array(v) for k, v in sorted(out.items())}


def median_realization(results, sigma_nu: float, criterion: str = LS) -> int:
    """Realization index of median residual norm among one criterion's cells at ``sigma_nu``."""
    cells = [r for r in results if _field(r, "criterion") == criterion
             and np.isclose(_field(r, "sigma_nu"), sigma_nu) and np.isfinite(_field(r, "residual_norm"))]
    if not cells:
        raise ValueError(f"no {criterion} cells at sigma={sigma_nu}")
    cells.sort(key=lambda r: (_field(r, "residual_norm"), _field(r, "realization")))
    return _field(cells[(len(cells) - 1) // 2], "realization")


def linear_regressors(y: Signal, basis: np.ndarray) -> np.ndarray:
    """Jacobian of an affine network on the derivative basis: rows ``[T D_2 y(k), 1]``."""
    X = delay_matrix(y, basis.shape[0] - 1) @ basis.T
    return np.hstack([X, np.ones((len(y), 1))])
