"""Average fidelity of direct transmission against the parity-check protocol."""

import argparse

from paritylink.noise import NoiseModel
from paritylink.protocol import Scenario, run_endtoend
from paritylink.tomography import average_fidelity, entanglement_fidelity, reconstruct_process


def process_fidelity(s: Scenario, workers: int) -> float:
    rep = run_endtoend(s, workers=workers)
    chi = reconstruct_process({o.name: o.rho for o in rep.outputs}).chi
    return average_fidelity(min(max(entanglement_fidelity(chi), 0.0), 1.0))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=10_000)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    print("seed  direct    protocol")
    for seed in range(args.seeds):
        noise = NoiseModel(seed=seed)
        d = process_fidelity(Scenario(mode="direct", trials=args.trials, noise=noise), args.workers)
        p = process_fidelity(Scenario(trials=args.trials, noise=noise), args.workers)
        print(f"{seed:4d}  {d:.5f}  {p:.8f}")


if __name__ == "__main__":
    main()
