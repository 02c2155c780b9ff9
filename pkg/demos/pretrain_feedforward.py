"""Simulate the Stribeck motion loop and fit the neural inverse on clean data.

The noiseless closed loop gives the input u0 that produced y0. A network
F(y(k), y(k-1), y(k-2)) trained by least squares on that pair is the optimal
feedforward phi0 against which the noisy estimates are judged later. The
remaining misfit (the floor) is what the network family cannot represent.

Run:  python demos/pretrain_feedforward.py [--hidden 10 10] [--out phi0.json]

The default 3-10-10-1 network takes about two minutes on one core.
"""

import argparse
import time

import numpy as np

from ivnn import (FourthOrderLimits, MlpShape, OptimizerOptions, RationalFilter, StribeckPlant,
                  derivative_basis_matrix, derivative_scales, make_fourth_order_reference, pretrain_noiseless,
                  save_params)

TS = 1e-3


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, nargs="*", default=[10, 10])
    ap.add_argument("--out", default=None, help="write the fitted parameters here")
    args = ap.parse_args()

    r = make_fourth_order_reference(FourthOrderLimits(), TS)
    print(f"reference: {len(r)} samples, stroke {r.values[-1]:.3f} m, "
          f"peak velocity {np.abs(r.derivative(1)).max():.3f} m/s")

    shape = MlpShape((3, *args.hidden, 1), "tanh", derivative_basis_matrix(TS, derivative_scales(r)))
    print(f"network sizes {shape.sizes}, {shape.n_phi} parameters")

    t0 = time.time()
    res = pretrain_noiseless(shape, StribeckPlant(), RationalFilter.controller(), r,
                             OptimizerOptions(max_iters=20000), strict=False)
    rep, ds0 = res.report, res.dataset
    print(f"pretraining: {rep.status} after {rep.iterations} iterations ({time.time() - t0:.0f} s)")
    print(f"  gradient norm {rep.grad_norm:.2e}")
    print(f"  tracking error at the end of the record {abs(r.values[-1] - ds0.y.values[-1]):.2e} m")
    print(f"  floor rms {res.floor_rms:.3e} N against rms(u0) {np.sqrt(np.mean(ds0.u.values**2)):.3e} N")
    if args.out:
        save_params(res.phi0, args.out)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
