"""Acceptance gate: ten end-to-end criteria, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python -m tests.test_acceptance``.
"""

import math
import time

import numpy as np
import pytest

from paritylink.cli import main as cli_main
from paritylink.config import parse_config
from paritylink.noise import NoiseModel, NoiseRealization, rng_for
from paritylink.protocol import (
    Conventions,
    ProtocolModel,
    Scenario,
    budget,
    fidelity_to,
    fit_fringe,
    interference_scan,
    run_endtoend,
)
from paritylink.states import JonesVector, OverlapKernel
from paritylink.tomography import (
    PROBES,
    SZ,
    average_fidelity,
    chi_from_kraus,
    entanglement_fidelity,
    entanglement_fidelity_bell,
    haar_average_fidelity,
    random_chi,
    reconstruct_process,
    reconstruct_state,
    simulate_counts,
    state_fidelity,
    trace_preservation_error,
    unitary_chi,
    validate_density,
)

from . import oracles

REALISTIC_KERNEL = OverlapKernel(75.0, 0.959)


_capsys = None


def verdict(number: int, title: str, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {title}: {detail}"
    if _capsys is None:
        print(line, flush=True)
    else:
        with _capsys.disabled():
            print("\n" + line, flush=True)
    return ok


@pytest.fixture(autouse=True)
def show(capsys):
    global _capsys
    _capsys = capsys
    yield
    _capsys = None


def random_signal(rng) -> JonesVector:
    return JonesVector(*oracles.random_pure(rng))


def test_01_phase_invariance():
    rng = rng_for(101)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        sig = random_signal(rng)
        model = ProtocolModel.build(Scenario(), sig)
        for ph, pv in rng.uniform(0, 2 * math.pi, (100, 2)):
            rho, _ = model.output_state(model.realization_K(NoiseRealization.constant(ph, pv)))
            worst = max(worst, abs(1 - fidelity_to(rho, sig)))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-9 and elapsed < 10
    assert verdict(1, "fixed phases leave the output intact",
                   ok, f"max |1-F| = {worst:.1e} over 10^4 cases in {elapsed:.1f} s")


def test_02_stage_amplitudes():
    rng = rng_for(102)
    worst = 0.0
    for _ in range(20):
        sig = random_signal(rng)
        ph, pv = rng.uniform(0, 2 * math.pi, 2)
        tau = rng.uniform(0, 0.5)
        for got, want in zip(oracles.pipeline_stages(sig, ph, pv, tau),
                             oracles.expected_stages(sig, ph, pv, tau)):
            worst = max(worst, oracles.max_amplitude_gap(got, want))
    assert verdict(2, "sent / received / pre-parity-check amplitudes",
                   worst < 1e-12, f"max |d amplitude| = {worst:.1e} over 20 draws")


def test_03_success_ledger():
    table = budget(Scenario())
    got = {k: v.as_fractions()["p_total"] for k, v in table.items()}
    pipe_gap = max(abs(v.p_pipeline - v.p_total) for v in table.values())
    ok = got == oracles.LEDGER and pipe_gap < 1e-14
    detail = ", ".join(f"switches={fs} ff={ff}: {got[(fs, ff)]}" for fs, ff in got)
    assert verdict(3, "success probabilities", ok, detail)


def test_04_fringe():
    cfg = parse_config("scenario: {v_m: 0.959, l_c_um: 75.0}\nscan: {start_um: -200, stop_um: 200, step_um: 5}\n")
    start = time.perf_counter()
    rows = interference_scan(cfg.scenario, cfg.scan.offsets())
    fit = fit_fringe(rows)
    elapsed = time.perf_counter() - start
    ok = (fit is not None and abs(fit["zero_delay_visibility"] - 0.959) <= 0.002
          and abs(fit["fwhm_um"] - 75.0) <= 1.5 and elapsed < 30)
    assert verdict(4, "two-photon fringe", ok,
                   f"V(0) = {fit['zero_delay_visibility']:.4f}, FWHM = {fit['fwhm_um']:.2f} um, "
                   f"{len(rows)} points in {elapsed:.1f} s")


def test_05_histogram():
    s = Scenario()
    model = ProtocolModel.build(s)
    centers, probs = model.detection_table(model.analytic_K()).histogram(s.delta_t_a_ns)
    got = {round(float(c), 6): float(p) for c, p in zip(centers, probs) if p > 1e-15}
    want = {round(k * s.delta_t_a_ns, 6): v for k, v in oracles.histogram_peaks(s.signal).items()}
    ok = got.keys() == want.keys() and all(abs(got[k] - want[k]) < 1e-14 for k in want)
    assert verdict(5, "detection-time peaks", ok,
                   ", ".join(f"{k:+.0f} ns: {got.get(k, 0):.6f}" for k in sorted(want)))


def test_06_fidelity_metrics():
    rng = rng_for(106)
    worst_z, worst_bell = 0.0, 0.0
    for i in range(20):
        chi = random_chi(rng)
        mean, se = haar_average_fidelity(chi, 100_000, rng_for(106, i))
        worst_z = max(worst_z, abs(mean - average_fidelity(entanglement_fidelity(chi))) / se)
        worst_bell = max(worst_bell, abs(entanglement_fidelity(chi) - entanglement_fidelity_bell(chi)))
    deph = average_fidelity(entanglement_fidelity(chi_from_kraus([np.eye(2) / math.sqrt(2),
                                                                   SZ / math.sqrt(2)])))
    ident = average_fidelity(entanglement_fidelity(unitary_chi(np.eye(2))))
    ok = worst_z < 3 and worst_bell < 1e-10 and abs(deph - 2 / 3) <= 0.01 and abs(ident - 1) < 1e-12
    assert verdict(6, "average / entanglement fidelity", ok,
                   f"max Haar deviation {worst_z:.2f} SE, Bell route gap {worst_bell:.1e}, "
                   f"dephasing {deph:.4f}, identity {ident:.4f}")


def test_07_tomography_round_trip():
    s = Scenario(kernel=REALISTIC_KERNEL, analytic=True)
    truth = {}
    for p in PROBES:
        m = ProtocolModel.build(s, JonesVector.named(p))
        truth[p], _ = m.output_state(m.analytic_K())
    exact_err = max(np.max(np.abs(reconstruct_state(simulate_counts(r, exact=True)) - r))
                    for r in truth.values())
    fids, invariants = [], True
    for rep in range(200):
        rng = rng_for(107, rep)
        est = {p: reconstruct_state(simulate_counts(truth[p], n_total=10_000, rng=rng)) for p in PROBES}
        for p in PROBES:
            validate_density(est[p])
            fids.append(state_fidelity(est[p], truth[p]))
        proc = reconstruct_process(est).chi
        invariants &= bool(np.allclose(proc, proc.conj().T)
                           and np.linalg.eigvalsh(proc).min() > -1e-12
                           and trace_preservation_error(proc) < 1e-8)
    mean = float(np.mean(fids))
    ok = exact_err < 1e-12 and mean >= 0.995 and invariants
    assert verdict(7, "tomography round trip", ok,
                   f"exact error {exact_err:.1e}, mean fidelity {mean:.4f} over 200 reps x 4 probes, "
                   f"invariants {'held' if invariants else 'violated'}")


def process_average_fidelity(s: Scenario) -> float:
    rep = run_endtoend(s)
    chi = reconstruct_process({o.name: o.rho for o in rep.outputs}).chi
    return average_fidelity(min(max(entanglement_fidelity(chi), 0.0), 1.0))


def test_08_contrast():
    noise = NoiseModel(seed=0)
    direct = process_average_fidelity(Scenario(mode="direct", trials=10_000, noise=noise))
    protocol = process_average_fidelity(Scenario(trials=10_000, noise=noise))
    ok = abs(direct - 2 / 3) <= 0.005 and abs(protocol - 1) <= 1e-6
    assert verdict(8, "direct vs. ancilla-assisted", ok,
                   f"direct F = {direct:.4f}, protocol F = {protocol:.8f}")


def test_09_completeness():
    rng = rng_for(109)
    worst = 0.0
    for _ in range(50):
        s = Scenario(
            signal=random_signal(rng),
            tau_ns=float(rng.uniform(0, 0.5)),
            delta_t_b_ns=3.0 + float(rng.uniform(-5e-4, 5e-4)),
            kernel=OverlapKernel(float(rng.uniform(20, 150)), float(rng.uniform(0, 1))),
            fast_switches=bool(rng.integers(2)),
            conventions=Conventions(oracles.random_unit(rng), oracles.random_unit(rng)),
        )
        model = ProtocolModel.build(s)
        ph, pv = rng.uniform(0, 2 * math.pi, 2)
        for Ks in (model.realization_K(NoiseRealization.constant(ph, pv)), model.analytic_K()):
            worst = max(worst, abs(model.detection_table(Ks).total() - 1))
    assert verdict(9, "outcome probabilities sum to one", worst < 1e-10,
                   f"max |sum - 1| = {worst:.1e} over 50 scenarios")


def test_10_determinism(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("seed: 11\nscenario: {mode: direct, trials: 9000}\n"
                   "scan: {start_um: -40, stop_um: 40, step_um: 20}\n"
                   "tomography: {n_total: 10000, repetitions: 4}\n")
    proto = tmp_path / "proto.yaml"
    proto.write_text("seed: 11\nscenario: {trials: 9000, v_m: 0.959}\n"
                     "scan: {start_um: -40, stop_um: 40, step_um: 20}\n"
                     "tomography: {n_total: 10000, repetitions: 4}\n")
    snapshots = []
    for tag, workers in (("a", 1), ("b", 1), ("c", 4)):
        files = {}
        for name, c in (("direct", cfg), ("protocol", proto)):
            out = tmp_path / f"{tag}_{name}"
            for cmd in ("simulate", "scan", "tomo", "budget"):
                assert cli_main([cmd, "--config", str(c), "--out", str(out), "--workers", str(workers)]) == 0
            files.update({f"{name}/{p.name}": p.read_bytes() for p in sorted(out.iterdir())})
        snapshots.append(files)
    ok = snapshots[0] == snapshots[1] == snapshots[2]
    assert verdict(10, "byte-identical CLI outputs", ok,
                   f"{len(snapshots[0])} files, 2 runs at 1 worker and 1 run at 4 workers")


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    failures = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                if "tmp_path" in fn.__code__.co_varnames[:fn.__code__.co_argcount]:
                    with tempfile.TemporaryDirectory() as d:
                        fn(Path(d))
                else:
                    fn()
            except AssertionError:
                failures += 1
    sys.exit(1 if failures else 0)
