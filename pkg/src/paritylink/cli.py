"""Command line: ``paritylink {simulate,scan,tomo,budget} --config FILE``.

Outputs go to ``--out``, else ``output.dir`` from the config, else
``$PARITYLINK_OUT_DIR``, else ``./paritylink_out``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import Config, ConfigError, config_to_dict, load_config
from .noise import rng_for
from .protocol import (
    ProtocolModel,
    budget,
    fit_fringe,
    interference_scan,
    run_endtoend,
)
from .states import JonesVector
from .tomography import (
    PROBES,
    average_fidelity,
    entanglement_fidelity,
    entanglement_fidelity_bell,
    fidelity,
    matrix_to_json,
    read_counts_csv,
    reconstruct_process,
    reconstruct_state,
    simulate_counts,
    state_fidelity,
    trace_preservation_error,
)

log = logging.getLogger("paritylink")

ENV_OUT = "PARITYLINK_OUT_DIR"


def fmt(x: float) -> str:
    return format(float(x), ".9g")


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path: Path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _ledger_dict(led) -> dict:
    d = dict(led.__dict__)
    d["p_total_fraction"] = str(led.as_fractions()["p_total"])
    return d


def _process_block(outputs: dict) -> dict:
    est = reconstruct_process(outputs)
    fe = entanglement_fidelity(est.chi)
    return {
        "chi": matrix_to_json(est.chi),
        "psd_projected": est.psd_projected,
        "trace_preservation_error": trace_preservation_error(est.chi),
        "entanglement_fidelity": fe,
        "entanglement_fidelity_bell": entanglement_fidelity_bell(est.chi),
        "average_fidelity": average_fidelity(min(max(fe, 0.0), 1.0)),
    }


def cmd_simulate(cfg: Config, out: Path, workers: int = 1) -> dict:
    report = run_endtoend(cfg.scenario, workers)
    outputs = {o.name: o.rho for o in report.outputs}
    doc = {
        "config": config_to_dict(cfg),
        "outputs": [
            {"input": o.name, "rho": matrix_to_json(o.rho), "fidelity": o.fidelity,
             "p_success": o.p_success}
            for o in report.outputs
        ],
        "ledger": _ledger_dict(report.ledger),
        "detection_total": report.detection_total,
    }
    if all(p in outputs for p in PROBES):
        doc["process"] = _process_block(outputs)
    centers, probs = report.histogram
    write_json(out / "report.json", doc)
    write_csv(out / "histogram.csv", ["t_x_minus_t_y_ns", "probability"],
              [(float(c), float(p)) for c, p in zip(centers, probs)])
    return doc


def cmd_scan(cfg: Config, out: Path, workers: int = 1) -> dict | None:
    offsets = cfg.scan.offsets()
    if len(offsets) == 1:
        warnings.warn("scan step exceeds the range; single point, no fit", stacklevel=2)
    rows = interference_scan(cfg.scenario, offsets, workers)
    write_csv(out / "scan.csv", ["delta_t_b_um", "rate_d", "rate_dbar", "visibility"],
              [tuple(r) for r in rows])
    fit = fit_fringe(rows) if len(rows) > 1 else None
    doc = {"fit": fit, "fringe": fit is not None, "points": len(rows)}
    write_json(out / "scan_fit.json", doc)
    return fit


def _tomo_outputs(cfg: Config, workers: int) -> dict[str, np.ndarray]:
    outs = {}
    sc = replace(cfg.scenario, inputs=PROBES)
    for name in PROBES:
        model = ProtocolModel.build(sc, JonesVector.named(name))
        rho, _ = model.output_state(model.averaged_K(workers))
        outs[name] = rho
    return outs


def cmd_tomo(cfg: Config, out: Path, workers: int = 1) -> dict:
    t = cfg.tomography
    per_rep: list[dict[str, np.ndarray]] = []
    if t.counts_csv:
        counts = read_counts_csv(t.counts_csv)
        per_rep.append({p: counts[p] for p in PROBES})
        truth = None
    else:
        truth = _tomo_outputs(cfg, workers)
        reps = 1 if t.exact else t.repetitions
        for rep in range(reps):
            rng = rng_for(cfg.seed, 7, rep)
            per_rep.append({p: simulate_counts(truth[p], n_total=t.n_total, rng=rng, exact=t.exact)
                            for p in PROBES})
    pooled = {p: sum(r[p] for r in per_rep) for p in PROBES}
    rhos = {p: reconstruct_state(pooled[p]) for p in PROBES}
    doc = {
        "config": config_to_dict(cfg),
        "rho": {p: matrix_to_json(r) for p, r in rhos.items()},
        "fidelity": {p: fidelity(r, JonesVector.named(p)) for p, r in rhos.items()},
        "process": _process_block(rhos),
        "repetitions": len(per_rep),
    }
    if truth is not None:
        doc["true_rho"] = {p: matrix_to_json(r) for p, r in truth.items()}
    if len(per_rep) > 1:
        fe = []
        fid = {p: [] for p in PROBES}
        to_truth = []
        for r in per_rep:
            rr = {p: reconstruct_state(r[p]) for p in PROBES}
            fe.append(entanglement_fidelity(reconstruct_process(rr).chi))
            for p in PROBES:
                fid[p].append(fidelity(rr[p], JonesVector.named(p)))
                if truth is not None:
                    to_truth.append(state_fidelity(rr[p], truth[p]))
        fe = np.array(fe)
        fbar = (2 * fe + 1) / 3
        doc["dispersion"] = {
            "entanglement_fidelity": [float(fe.mean()), float(fe.std(ddof=1))],
            "average_fidelity": [float(fbar.mean()), float(fbar.std(ddof=1))],
            "fidelity": {p: [float(np.mean(v)), float(np.std(v, ddof=1))] for p, v in fid.items()},
        }
        if to_truth:
            doc["dispersion"]["mean_fidelity_to_truth"] = float(np.mean(to_truth))
    write_json(out / "tomo.json", doc)
    return doc


def cmd_budget(cfg: Config, out: Path, workers: int = 1) -> dict:
    table = budget(cfg.scenario)
    fields = ["p_prep", "p_transmit", "p_route", "p_parity", "p_readout", "p_total", "p_pipeline"]
    rows = []
    doc = {}
    for (fs, ff), led in table.items():
        rows.append([str(fs).lower(), str(ff).lower()] + [getattr(led, f) for f in fields]
                    + [str(led.as_fractions()["p_total"])])
        doc[f"fast_switches={str(fs).lower()},feed_forward={str(ff).lower()}"] = _ledger_dict(led)
    write_csv(out / "budget.csv", ["fast_switches", "feed_forward"] + fields + ["p_total_fraction"], rows)
    write_json(out / "budget.json", doc)
    return doc


COMMANDS = {"simulate": cmd_simulate, "scan": cmd_scan, "tomo": cmd_tomo, "budget": cmd_budget}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="paritylink", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", type=Path, help="YAML scenario file (defaults apply if omitted)")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--workers", type=int, default=1, help="processes for Monte Carlo trials")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else Config()
        cfg = cfg.with_seed(cfg.seed if args.seed is None else args.seed)
        out = args.out or Path(cfg.output.dir or os.environ.get(ENV_OUT, "paritylink_out"))
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, max(1, args.workers))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    log.info("wrote results to %s", out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
