"""Two-photon fringe versus L-arm delay, with a Gaussian fit."""

import argparse

import numpy as np

from paritylink.protocol import Scenario, fit_fringe, interference_scan
from paritylink.states import OverlapKernel


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--v-m", type=float, default=0.959)
    ap.add_argument("--l-c", type=float, default=75.0, help="coherence length in um")
    ap.add_argument("--span", type=float, default=200.0)
    ap.add_argument("--step", type=float, default=5.0)
    args = ap.parse_args()

    s = Scenario(kernel=OverlapKernel(args.l_c, args.v_m), analytic=True)
    offsets = np.arange(-args.span, args.span + args.step / 2, args.step)
    rows = interference_scan(s, offsets)
    print("offset_um  rate_d      rate_dbar   visibility")
    for r in rows:
        print(f"{r.offset_um:9.1f}  {r.rate_d:.8f}  {r.rate_dbar:.8f}  {r.visibility:+.4f}")
    fit = fit_fringe(rows)
    if fit is None:
        print("no fringe to fit")
    else:
        print(f"fit: V(0) = {fit['zero_delay_visibility']:.4f}, FWHM = {fit['fwhm_um']:.2f} um")


if __name__ == "__main__":
    main()
