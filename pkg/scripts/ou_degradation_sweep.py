"""Protocol fidelity under Ornstein-Uhlenbeck phase noise with finite correlation time."""

import argparse

from paritylink.noise import ORNSTEIN_UHLENBECK, NoiseModel
from paritylink.protocol import Scenario, run_endtoend
from paritylink.tomography import average_fidelity, entanglement_fidelity, reconstruct_process


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sigma", type=float, default=1.0, help="stationary phase spread in rad")
    ap.add_argument("--trials", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=4)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    print("tau_c_ns  F_avg")
    for tau_c in (0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 1000.0):
        noise = NoiseModel(ORNSTEIN_UHLENBECK, tau_c, args.sigma, args.seed)
        rep = run_endtoend(Scenario(trials=args.trials, noise=noise), workers=args.workers)
        chi = reconstruct_process({o.name: o.rho for o in rep.outputs}).chi
        f = average_fidelity(min(max(entanglement_fidelity(chi), 0.0), 1.0))
        print(f"{tau_c:8.1f}  {f:.5f}")


if __name__ == "__main__":
    main()
