"""Retrain the feedforward from noisy closed-loop data with LS and with IV.

Starting from a clean fit phi0, each realization adds filtered noise at the
plant input, reruns the loop and retrains with both criteria. The table shows
how far the monitored first-layer weight drifts from its clean value and how
well each estimate still reproduces the clean input u0.

Run:  python demos/noise_sweep.py [--phi0 phi0.json] [--realizations 5]

Without --phi0 a small 3-6-1 network is pretrained first (a minute or two).
"""

import argparse

import numpy as np

from ivnn import (MONITORED_WEIGHT, FourthOrderLimits, MlpShape, OptimizerOptions, RationalFilter, StribeckPlant,
                  SweepConfig, consistency_sweep, derivative_basis_matrix, derivative_scales, flatten, load_params,
                  make_fourth_order_reference, pretrain_noiseless, residual_norm)
from ivnn.analysis import noiseless_dataset

TS = 1e-3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--phi0", help="parameter file from pretraining")
    ap.add_argument("--realizations", type=int, default=5)
    ap.add_argument("--sigmas", type=float, nargs="*", default=[0.0, 0.001, 0.002, 0.005])
    args = ap.parse_args()

    r = make_fourth_order_reference(FourthOrderLimits(), TS)
    plant, ctrl = StribeckPlant(), RationalFilter.controller()
    if args.phi0:
        phi0 = load_params(args.phi0)
    else:
        shape = MlpShape((3, 6, 1), "tanh", derivative_basis_matrix(TS, derivative_scales(r)))
        phi0 = pretrain_noiseless(shape, plant, ctrl, r, OptimizerOptions(max_iters=20000), strict=False).phi0
    cfg = SweepConfig(plant, ctrl, RationalFilter.noise_shaping(), r, phi0, sigma_levels=tuple(args.sigmas),
                      realizations=args.realizations, optimizer=OptimizerOptions(max_iters=200))
    results = consistency_sweep(cfg)

    floor = residual_norm(phi0, noiseless_dataset(cfg))
    w0 = flatten(phi0)[phi0.shape.weight_index(*MONITORED_WEIGHT)]
    print(f"monitored weight in phi0: {w0:.6f}, clean residual norm {floor:.3e}\n")
    print(f"{'sigma':>7} {'crit':>4} {'|dW|':>11} {'residual':>11}")
    for s in args.sigmas:
        for crit in ("LS", "IV"):
            sel = [x for x in results if x.sigma_nu == s and x.criterion == crit and not x.error]
            dw = np.mean([abs(x.monitored_coeff - w0) for x in sel])
            res = np.mean([x.residual_norm for x in sel])
            print(f"{s:7.4f} {crit:>4} {dw:11.3e} {res:11.3e}")


if __name__ == "__main__":
    main()
