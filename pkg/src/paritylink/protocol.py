"""End-to-end ancilla-assisted transmission over the dephasing dual-rail channel.

Pipeline: Alice turns two source photons into a reference ``|D>`` at t=0 and
the signal at ``delta_t_a``, merges them on BS_A and splits polarizations onto
the rails CH/CV with PBS_A. The rails add phases. Bob recombines on PBS_B,
splits into a short (S) and long (L) arm on BS_B, rotates L by 90 degrees,
delays it by ``delta_t_b`` and mixes both arms on PBS_P into the detector
arms X and Y. A coincidence inside the central time window with the X photon
found in ``|D>`` leaves the signal on Y.

Only the noise phases are random. Everything downstream of the rails is
linear, so the channel state is split into components that share a phase
signature (which rail each photon used, and when). A noise realization is
then a coefficient vector ``c`` over components, and every reported number is
a bilinear form in ``c``. Averages over realizations only need the matrix
``K = E[conj(c) c^T]``, which is either computed in closed form (uniform
phases) or estimated by Monte Carlo.
"""

from __future__ import annotations

import cmath
import logging
import math
import warnings
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from .noise import (
    CHANNEL_H,
    CHANNEL_V,
    CHANNELS,
    IID_UNIFORM,
    NoiseModel,
    NoiseRealization,
    apply_phase_channel,
    phase_orbit,
    phase_signature,
    rng_for,
    sample_phases,
)
from .optics import (
    BS,
    PBS,
    Circuit,
    Delay,
    HWP,
    Jones,
    Loss,
    PhaseShift,
    Retarder,
    Switch,
    apply_circuit,
)
from .states import (
    C_UM_PER_NS,
    JonesVector,
    OverlapKernel,
    PhotonicState,
    StateError,
    gram_inner,
    gram_norm,
    make_single_photon,
    tensor,
)

log = logging.getLogger(__name__)

SIGNAL, REFERENCE = "s", "r"
PROBES = ("H", "V", "D", "L")
MC_CHUNK = 4096
CLUSTER_GAP_NS = 0.02

XY, XX, YY, SINGLE, NONE = "XY", "XX", "YY", "single", "none"


class UndefinedConditionalError(ValueError):
    """Conditioning event has zero probability."""


@dataclass(frozen=True)
class Conventions:
    """Reflection phases for beam splitters and polarizing beam splitters."""

    bs_r: complex = 1j
    pbs_r: complex = 1j


@dataclass(frozen=True)
class Scenario:
    signal: JonesVector = field(default_factory=lambda: JonesVector.named("D"))
    delta_t_a_ns: float = 3.0
    delta_t_b_ns: float | None = None
    tau_ns: float = 0.0
    kernel: OverlapKernel = field(default_factory=OverlapKernel)
    noise: NoiseModel = field(default_factory=NoiseModel)
    window_ns: float = 2.5
    fast_switches: bool = False
    feed_forward: bool = False
    trials: int = 1000
    analytic: bool = False
    transmittance: tuple[tuple[str, float], ...] = ()
    mode: str = "protocol"
    inputs: tuple[str, ...] = PROBES
    conventions: Conventions = field(default_factory=Conventions)

    def __post_init__(self):
        if self.delta_t_b_ns is None:
            object.__setattr__(self, "delta_t_b_ns", self.delta_t_a_ns)
        object.__setattr__(self, "transmittance", tuple(sorted(dict(self.transmittance).items())))
        if not self.window_ns > 0:
            raise ValueError("window must be positive")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.mode not in ("protocol", "direct"):
            raise ValueError(f"unknown mode {self.mode!r}")
        for name in self.inputs:
            JonesVector.named(name)
        for path, t in self.transmittance:
            if path not in CHANNELS:
                raise ValueError(f"transmittance given for unknown rail {path!r}")
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"transmittance of {path} must lie in [0, 1]")
        if abs(C_UM_PER_NS * self.delta_t_a_ns) < 10 * self.kernel.coherence_length_um:
            warnings.warn("delta_t_a is within 10 coherence lengths: time bins overlap",
                          stacklevel=2)

    @property
    def rail_transmittance(self) -> dict[str, float]:
        return dict(self.transmittance)


class Branch(NamedTuple):
    label: str
    weight: float
    state: PhotonicState | None


# ---------------------------------------------------------------------------
# Circuits


def signal_plates(signal: JonesVector) -> tuple[float, float, float]:
    """(HWP angle, retarder phase, global phase) turning |H> into ``signal``."""
    a, b = abs(signal.alpha), abs(signal.beta)
    theta = 0.5 * math.atan2(b, a)
    pa = cmath.phase(signal.alpha) if a > 0 else cmath.phase(signal.beta)
    pb = cmath.phase(signal.beta) if b > 0 else pa
    return theta, pb - pa, pa


def alice_circuit(signal: JonesVector, delta_t_a_ns: float, fast_switches: bool = False,
                  conv: Conventions = Conventions()) -> Circuit:
    theta, delta, glob = signal_plates(signal)
    elems = [
        HWP("long", theta, name="HWP_S"),
        Retarder("long", delta, name="LCR_S"),
        PhaseShift("long", glob, name="signal_phase"),
        Delay("long", delta_t_a_ns, name="long_path"),
        HWP("short", math.pi / 8, name="HWP_R"),
    ]
    if fast_switches:
        elems.append(Switch(("long", "short"), "A", "A", 0.0, name="switch_A"))
    else:
        elems.append(BS("long", "short", 0.5, out=("A", "A_lost"), r=conv.bs_r, name="BS_A"))
    elems.append(PBS("A", "A_aux", out=(CHANNEL_H, CHANNEL_V), r=conv.pbs_r, name="PBS_A"))
    return Circuit(tuple(elems))


def channel_circuit(transmittance: dict[str, float]) -> Circuit:
    elems = [Loss(p, t, name=f"loss_{p}") for p, t in sorted(transmittance.items()) if t < 1.0]
    return Circuit(tuple(elems), frozenset(CHANNELS))


def parity_compensation(conv: Conventions) -> float:
    # V photons on both output arms pick up one PBS_P reflection each.
    return -2.0 * cmath.phase(conv.pbs_r)


def bob_routing_circuit(delta_t_a_ns: float, tau_ns: float, fast_switches: bool = False,
                        conv: Conventions = Conventions()) -> Circuit:
    elems = [PBS(CHANNEL_H, CHANNEL_V, out=("B", "B_aux"), r=conv.pbs_r, name="PBS_B")]
    if fast_switches:
        elems.append(Switch(("B",), "L", "S", 0.5 * (delta_t_a_ns + tau_ns), name="switch_B"))
    else:
        elems.append(BS("B", "B_vac", 0.5, out=("S", "L"), r=conv.bs_r, name="BS_B"))
    return Circuit(tuple(elems))


def bob_parity_circuit(delta_t_b_ns: float, conv: Conventions = Conventions()) -> Circuit:
    return Circuit((
        HWP("L", math.pi / 4, name="HWP_L"),
        Delay("L", delta_t_b_ns, name="long_arm"),
        PBS("L", "S", out=("Y", "X"), r=conv.pbs_r, name="PBS_P"),
        Retarder("Y", parity_compensation(conv), name="calibration_Y"),
    ))


def direct_circuit(conv: Conventions = Conventions()) -> Circuit:
    return Circuit((
        PBS(CHANNEL_H, CHANNEL_V, out=("Y", "B_aux"), r=conv.pbs_r, name="PBS_B"),
        Retarder("Y", -2.0 * cmath.phase(conv.pbs_r), name="calibration_Y"),
    ))


def analysis_matrix(e: JonesVector) -> np.ndarray:
    """Maps ``e`` to H and its orthogonal complement to V."""
    f = e.orthogonal()
    return np.array([[e.alpha.conjugate(), e.beta.conjugate()],
                     [f.alpha.conjugate(), f.beta.conjugate()]])


def x_analysis(x_projection: JonesVector) -> Circuit:
    return Circuit((Jones("X", analysis_matrix(x_projection), name="X_analyzer"),))


# ---------------------------------------------------------------------------
# Alice and Bob


def _split_branches(state: PhotonicState, discard: set[str], label_fn) -> list[Branch]:
    """Trace out photons on ``discard`` paths; orthogonal leftovers become branches."""
    groups: dict[tuple, dict] = defaultdict(dict)
    for k, a in state.terms.items():
        env = tuple(m for m in k if m.path in discard)
        kept = tuple(m for m in k if m.path not in discard)
        groups[env][kept] = groups[env].get(kept, 0) + a
    out = []
    for env in sorted(groups):
        terms = groups[env]
        w = sum(abs(a) ** 2 for a in terms.values())
        if w < 1e-30:
            continue
        s = math.sqrt(w)
        st = PhotonicState({k: a / s for k, a in terms.items()})
        out.append(Branch(label_fn(next(iter(terms))), w, st))
    return _merge_labels(out)


def _merge_labels(branches: list[Branch]) -> list[Branch]:
    # Stable order: success-type labels first, then by label name.
    return sorted(branches, key=lambda b: (b.label, -b.weight))


def _alice_label(ket) -> str:
    srcs = {m.source for m in ket}
    if srcs == {SIGNAL, REFERENCE}:
        return "both"
    if srcs == {SIGNAL}:
        return "signal_only"
    if srcs == {REFERENCE}:
        return "reference_only"
    return "none"


def source_state() -> PhotonicState:
    h = JonesVector.named("H")
    return tensor(make_single_photon(h, "short", 0.0, REFERENCE),
                  make_single_photon(h, "long", 0.0, SIGNAL))


def run_alice(signal: JonesVector, delta_t_a_ns: float = 3.0, fast_switches: bool = False,
              conv: Conventions = Conventions()) -> list[Branch]:
    """Routing branches of Alice's preparation, photons on the rails CH/CV.

    The photon leaving BS_A through the unused port is traced out, so branches
    are incoherent. The ``both`` branch carries the two-photon state that is
    sent down the channel.
    """
    out = apply_circuit(source_state(), alice_circuit(signal, delta_t_a_ns, fast_switches, conv))
    return _split_branches(out, {"A_lost"}, _alice_label)


def prepared_state(signal: JonesVector, delta_t_a_ns: float = 3.0,
                   conv: Conventions = Conventions()) -> PhotonicState:
    """State on the common path A after BS_A, in the two-photon branch (unnormalized)."""
    c = alice_circuit(signal, delta_t_a_ns, False, conv)
    st = apply_circuit(source_state(), Circuit(c.elements[:-1], c.paths))
    return st.restricted(lambda k: all(m.path == "A" for m in k) and len(k) == 2)


def route_label(ket) -> str:
    parts = []
    for src, name in ((SIGNAL, "sig"), (REFERENCE, "ref")):
        paths = [m.path for m in ket if m.source == src]
        if paths:
            parts.append(f"{name}_{paths[0]}")
    return "+".join(parts) if parts else "none"


SUCCESS_ROUTE = "sig_S+ref_L"


@dataclass(frozen=True)
class BobResult:
    state: PhotonicState | None       # coherent state on X/Y
    branches: tuple[Branch, ...]      # per BS_B routing, each propagated to X/Y
    routed: PhotonicState | None      # state on S/L just after BS_B


def run_bob(channel_state: PhotonicState, delta_t_b_ns: float = 3.0, tau_ns: float = 0.0,
            delta_t_a_ns: float = 3.0, fast_switches: bool = False,
            conv: Conventions = Conventions()) -> BobResult:
    """Bob's interferometer and parity check on a state already on the rails.

    ``tau_ns`` is the CV-over-CH path mismatch, applied here as a rail delay.
    """
    pre = apply_circuit(channel_state, Circuit((Delay(CHANNEL_V, tau_ns),), frozenset(CHANNELS)))
    routed = apply_circuit(pre, bob_routing_circuit(delta_t_a_ns, tau_ns, fast_switches, conv))
    parity = bob_parity_circuit(delta_t_b_ns, conv)
    branches = []
    if routed is not None:
        groups: dict[str, dict] = defaultdict(dict)
        for k, a in routed.terms.items():
            groups[route_label(k)][k] = a
        for label in sorted(groups):
            part = PhotonicState(groups[label])
            w = gram_norm(part, OverlapKernel())
            out = apply_circuit(part, parity)
            branches.append(Branch(label, w, out.scaled(1 / math.sqrt(w)) if out else None))
    state = apply_circuit(routed, parity) if routed is not None else None
    return BobResult(state, tuple(branches), routed)


# ---------------------------------------------------------------------------
# Detection


@dataclass(frozen=True, order=True)
class DetectionOutcome:
    pattern: str
    t_x: float | None = None
    t_y: float | None = None
    x_result: str | None = None
    peak: int | None = None


def _time_clusters(components, gap: float = CLUSTER_GAP_NS) -> dict[float, float]:
    times = sorted({m.time for s in components if s is not None for k in s.terms for m in k})
    rep, out = None, {}
    prev = None
    for t in times:
        if prev is None or t - prev > gap:
            rep = t
        out[t] = rep
        prev = t
    return out


def _class_key(ket, clusters, unresolved: str | None = None) -> tuple:
    return tuple(sorted((m.path, "H" if m.path == unresolved else m.pol, clusters[m.time])
                        for m in ket))


def outcome_classes(components, unresolved: str | None = None) -> dict[tuple, list]:
    """Group kets of all components into mutually orthogonal detection classes.

    Polarization on the ``unresolved`` path is left out of the class key, so
    coherence between its H and V parts survives inside a class.
    Returns ``{class_key: [restricted component or None, ...]}``.
    """
    clusters = _time_clusters(components)
    keys: dict[tuple, list[dict]] = {}
    for i, s in enumerate(components):
        if s is None:
            continue
        for k, a in s.terms.items():
            key = _class_key(k, clusters, unresolved)
            if key not in keys:
                keys[key] = [dict() for _ in components]
            keys[key][i][k] = a
    return {key: [PhotonicState(t) if t else None for t in parts] for key, parts in keys.items()}


def classify(key: tuple, peak_spacing_ns: float) -> DetectionOutcome:
    xs = [(pol, t) for path, pol, t in key if path == "X"]
    ys = [(pol, t) for path, pol, t in key if path == "Y"]
    n = len(xs) + len(ys)
    if len(xs) == 1 and len(ys) == 1:
        tx, ty = xs[0][1], ys[0][1]
        res = "D" if xs[0][0] == "H" else "Dbar"
        peak = int(round((tx - ty) / peak_spacing_ns)) if peak_spacing_ns else 0
        return DetectionOutcome(XY, tx, ty, res, peak)
    if len(xs) == 2:
        return DetectionOutcome(XX, xs[0][1], None)
    if len(ys) == 2:
        return DetectionOutcome(YY, None, ys[0][1])
    if n == 1:
        if xs:
            return DetectionOutcome(SINGLE, xs[0][1], None, "D" if xs[0][0] == "H" else "Dbar")
        return DetectionOutcome(SINGLE, None, ys[0][1])
    return DetectionOutcome(NONE)


def in_window(o: DetectionOutcome, window_ns: float, center_ns: float = 0.0) -> bool:
    return o.pattern == XY and abs(o.t_x - o.t_y - center_ns) <= 0.5 * window_ns


class DetectionTable(dict):
    """``{DetectionOutcome: probability}`` with convenience queries."""

    window_ns: float = 2.5

    def total(self) -> float:
        return float(sum(self.values()))

    def central(self, x_result: str | None = None) -> float:
        return float(sum(p for o, p in self.items() if in_window(o, self.window_ns)
                         and (x_result is None or o.x_result == x_result)))

    def histogram(self, delta_t_a_ns: float, bin_ns: float = 0.1, x_result: str | None = "D"):
        """XY coincidence probability binned in ``t_X - t_Y``.

        Bins are centered on multiples of ``bin_ns`` over +-2.5 ``delta_t_a``.
        """
        half = int(round(2.5 * delta_t_a_ns / bin_ns))
        centers = np.arange(-half, half + 1) * bin_ns
        counts = np.zeros(len(centers))
        for o, p in self.items():
            if o.pattern != XY or (x_result is not None and o.x_result != x_result):
                continue
            idx = int(round((o.t_x - o.t_y) / bin_ns)) + half
            if 0 <= idx < len(counts):
                counts[idx] += p
        return centers, counts


def _as_components(states):
    """Normalize detect/extract inputs to ``[(weight, state)]``."""
    if isinstance(states, PhotonicState) or states is None:
        return [(1.0, states)]
    return [(w, s) for w, s in states]


def detect(pre_detection_states, kernel: OverlapKernel, window_ns: float = 2.5,
           x_projection: JonesVector | None = None, peak_spacing_ns: float = 3.0) -> DetectionTable:
    """Outcome probabilities for states on the detector arms X and Y.

    ``pre_detection_states`` is a coherent state or a list of ``(weight, state)``
    mixture components. The X photon is analyzed in the basis of
    ``x_projection`` (default ``|D>``).
    """
    if not window_ns > 0:
        raise ValueError("window must be positive")
    xa = x_analysis(x_projection or JonesVector.named("D"))
    table = DetectionTable()
    table.window_ns = window_ns
    for w, s in _as_components(pre_detection_states):
        if s is None:
            continue
        s = apply_circuit(s, xa)
        for key, (part,) in outcome_classes([s]).items():
            o = classify(key, peak_spacing_ns)
            table[o] = table.get(o, 0.0) + w * gram_norm(part, kernel)
    return table


def _y_components(part: PhotonicState | None):
    """Split by Y polarization and relabel Y to H, for partial inner products."""
    if part is None:
        return None, None
    out = []
    for pol in ("H", "V"):
        sub = part.restricted(lambda k, pol=pol: any(m.path == "Y" and m.pol == pol for m in k))
        if sub is not None:
            sub = sub.map_modes(lambda m: m._replace(pol="H") if m.path == "Y" else m)
        out.append(sub)
    return tuple(out)


def _conditional_tensor(components, kernel, window_ns, x_projection, peak_spacing_ns):
    """``T[x_result][b, b', p, q] = <psi_{b,q} | psi_{b',p}>`` over accepted classes."""
    xa = x_analysis(x_projection)
    analyzed = [apply_circuit(s, xa) if s is not None else None for s in components]
    nb = len(components)
    T = {"D": np.zeros((nb, nb, 2, 2), complex), "Dbar": np.zeros((nb, nb, 2, 2), complex)}
    for key, parts in outcome_classes(analyzed, unresolved="Y").items():
        o = classify(key, peak_spacing_ns)
        if not in_window(o, window_ns):
            continue
        ys = [_y_components(p) for p in parts]
        for b in range(nb):
            for c in range(nb):
                for p in range(2):
                    for q in range(2):
                        T[o.x_result][b, c, p, q] += gram_inner(ys[b][q], ys[c][p], kernel)
    return T


Z = np.diag([1.0, -1.0]).astype(complex)


def _merge_readout(T, feed_forward: bool):
    if not feed_forward:
        return T["D"]
    return T["D"] + np.einsum("pr,bcrs,sq->bcpq", Z, T["Dbar"], Z)


def extract_output_qubit(state, kernel: OverlapKernel, window_ns: float = 2.5,
                         x_projection: JonesVector | None = None, feed_forward: bool = False,
                         peak_spacing_ns: float = 3.0, x_result: str = "D"):
    """Polarization state of the Y photon given a central-window coincidence.

    Returns ``(rho, probability)``; ``rho`` is normalized. With
    ``feed_forward`` the D-bar outcome is phase-corrected and merged in;
    otherwise only ``x_result`` is kept.
    """
    comps = _as_components(state)
    T = _conditional_tensor([s for _, s in comps], kernel, window_ns,
                            x_projection or JonesVector.named("D"), peak_spacing_ns)
    if feed_forward:
        M = _merge_readout(T, True)
    else:
        M = T[x_result]
    w = np.array([wt for wt, _ in comps])
    rho = np.einsum("b,bbpq->pq", w, M)
    p = float(np.trace(rho).real)
    if p <= 1e-300:
        raise UndefinedConditionalError("conditioning event has zero probability")
    return rho / p, p


# ---------------------------------------------------------------------------
# Linear engine over phase-signature components


def _rail_components(state: PhotonicState):
    groups: dict[tuple, dict] = defaultdict(dict)
    for k, a in state.terms.items():
        groups[phase_signature(k)][k] = a
    sigs = sorted(groups)
    return sigs, [PhotonicState(groups[s]) for s in sigs]


@dataclass
class BranchEngine:
    """One Alice branch propagated to the detectors, split by phase signature."""

    label: str
    weight: float
    signatures: list
    outputs: list               # component states on X/Y (None if fully lost)
    class_gram: dict            # DetectionOutcome -> (nb, nb) matrix
    cond: dict                  # {"D","Dbar"} -> (nb, nb, 2, 2)

    def orbit_K(self) -> np.ndarray:
        orb = [phase_orbit(s) for s in self.signatures]
        n = len(orb)
        return np.array([[1.0 if orb[i] == orb[j] else 0.0 for j in range(n)] for i in range(n)])

    def coefficients(self, phi_h, phi_v, time_index) -> np.ndarray:
        """Phase factors ``c[trial, b]`` from sampled rail phases."""
        phi_h, phi_v = np.atleast_2d(phi_h), np.atleast_2d(phi_v)
        c = np.zeros((phi_h.shape[0], len(self.signatures)), complex)
        for b, sig in enumerate(self.signatures):
            tot = np.zeros(phi_h.shape[0])
            for rail, t in sig:
                tot = tot + (phi_h if rail == CHANNEL_H else phi_v)[:, time_index[t]]
            c[:, b] = np.exp(1j * tot)
        return c


def _build_engine(branch: Branch, scenario: Scenario, x_projection: JonesVector) -> BranchEngine:
    s = scenario
    conv = s.conventions
    chan = channel_circuit(s.rail_transmittance)
    if branch.state is None or branch.state.photon_count == 0:
        sigs, comps = [()], [branch.state]
    else:
        sigs, comps = _rail_components(branch.state)
    outputs = []
    for comp in comps:
        st = apply_circuit(comp, chan) if comp is not None else None
        if st is None:
            outputs.append(None)
            continue
        if s.mode == "direct":
            st = apply_circuit(apply_circuit(st, Circuit((Delay(CHANNEL_V, s.tau_ns),),
                                                         frozenset(CHANNELS))), direct_circuit(conv))
        else:
            st = run_bob(st, s.delta_t_b_ns, s.tau_ns, s.delta_t_a_ns, s.fast_switches, conv).state
        outputs.append(st)
    xa = x_analysis(x_projection)
    analyzed = [apply_circuit(o, xa) if o is not None else None for o in outputs]
    nb = len(comps)
    grams: dict[DetectionOutcome, np.ndarray] = {}
    for key, parts in outcome_classes(analyzed).items():
        o = classify(key, s.delta_t_a_ns)
        G = np.zeros((nb, nb), complex)
        for b in range(nb):
            for c in range(nb):
                G[b, c] = gram_inner(parts[b], parts[c], s.kernel)
        grams[o] = grams.get(o, 0) + G
    if s.mode == "direct":
        cond = _direct_tensor(outputs, s.kernel)
    else:
        cond = _conditional_tensor(outputs, s.kernel, s.window_ns, x_projection, s.delta_t_a_ns)
    return BranchEngine(branch.label, branch.weight, sigs, outputs, grams, cond)


def _direct_tensor(outputs, kernel):
    nb = len(outputs)
    T = np.zeros((nb, nb, 2, 2), complex)
    ys = []
    for o in outputs:
        if o is None:
            ys.append((None, None))
            continue
        ys.append(tuple(
            (sub.map_modes(lambda m: m._replace(pol="H")) if sub is not None else None)
            for sub in (o.restricted(lambda k, p=p: len(k) == 1 and k[0].path == "Y" and k[0].pol == p)
                        for p in ("H", "V"))
        ))
    for b in range(nb):
        for c in range(nb):
            for p in range(2):
                for q in range(2):
                    T[b, c, p, q] = gram_inner(ys[b][q], ys[c][p], kernel)
    return {"D": T, "Dbar": np.zeros_like(T)}


@dataclass
class ProtocolModel:
    """Precomputed linear model of one scenario for one input state."""

    scenario: Scenario
    signal: JonesVector
    engines: list[BranchEngine]
    times: tuple[float, ...]

    @classmethod
    def build(cls, scenario: Scenario, signal: JonesVector | None = None,
              x_projection: JonesVector | None = None) -> ProtocolModel:
        signal = signal or scenario.signal
        xp = x_projection or JonesVector.named("D")
        if scenario.mode == "direct":
            st = apply_circuit(make_single_photon(signal, "A", 0.0, SIGNAL),
                               Circuit((PBS("A", "A_aux", out=CHANNELS, r=scenario.conventions.pbs_r),)))
            branches = [Branch("direct", 1.0, st)]
        else:
            branches = run_alice(signal, scenario.delta_t_a_ns, scenario.fast_switches,
                                 scenario.conventions)
        engines = [_build_engine(b, scenario, xp) for b in branches]
        times = sorted({t for e in engines for sig in e.signatures for _, t in sig})
        return cls(scenario, signal, engines, tuple(times))

    @property
    def main(self) -> BranchEngine:
        for e in self.engines:
            if e.label in ("both", "direct"):
                return e
        raise KeyError("no two-photon branch")

    # -- phase-correlation matrices --------------------------------------

    def realization_K(self, realization: NoiseRealization) -> list[np.ndarray]:
        idx = {t: i for i, t in enumerate(self.times)}
        if realization.times:
            ph = np.array([[realization.phase(CHANNEL_H, t) for t in self.times]])
            pv = np.array([[realization.phase(CHANNEL_V, t) for t in self.times]])
        else:
            ph = np.full((1, len(self.times)), realization.phi_h[0])
            pv = np.full((1, len(self.times)), realization.phi_v[0])
        out = []
        for e in self.engines:
            c = e.coefficients(ph, pv, idx)[0]
            out.append(np.outer(c.conj(), c))
        return out

    def analytic_K(self) -> list[np.ndarray]:
        if self.scenario.noise.kind != IID_UNIFORM:
            raise ValueError("closed-form average needs the iid_uniform model")
        return [e.orbit_K() for e in self.engines]

    def monte_carlo_K(self, trials: int | None = None, seed: int | None = None,
                      workers: int = 1) -> list[np.ndarray]:
        s = self.scenario
        trials = trials or s.trials
        seed = s.noise.seed if seed is None else seed
        sums = monte_carlo_sums(self, trials, seed, workers)
        return [S / trials for S in sums]

    def averaged_K(self, workers: int = 1) -> list[np.ndarray]:
        if self.scenario.analytic and self.scenario.noise.kind == IID_UNIFORM:
            return self.analytic_K()
        return self.monte_carlo_K(workers=workers)

    # -- bilinear readouts -----------------------------------------------

    def detection_table(self, Ks) -> DetectionTable:
        table = DetectionTable()
        table.window_ns = self.scenario.window_ns
        for e, K in zip(self.engines, Ks):
            for o, G in e.class_gram.items():
                table[o] = table.get(o, 0.0) + e.weight * float(np.sum(G * K).real)
        return table

    def conditional_unnormalized(self, Ks, feed_forward: bool | None = None,
                                 x_result: str = "D") -> np.ndarray:
        ff = self.scenario.feed_forward if feed_forward is None else feed_forward
        rho = np.zeros((2, 2), complex)
        for e, K in zip(self.engines, Ks):
            M = _merge_readout(e.cond, True) if ff else e.cond[x_result]
            rho += e.weight * np.einsum("bc,bcpq->pq", K, M)
        return rho

    def output_state(self, Ks, feed_forward: bool | None = None, x_result: str = "D"):
        """Normalized output qubit and its success probability."""
        rho = self.conditional_unnormalized(Ks, feed_forward, x_result)
        p = float(np.trace(rho).real)
        if p <= 1e-300:
            raise UndefinedConditionalError("conditioning event has zero probability")
        rho = rho / p
        return 0.5 * (rho + rho.conj().T), p


def _mc_chunk(args):
    kind, tau_c, sigma, seed, chunk, n, times, engines_sigs = args
    model = NoiseModel(kind, tau_c, sigma, seed)
    rng = rng_for(seed, chunk)
    ph, pv = sample_phases(model, rng, times, n)
    idx = {t: i for i, t in enumerate(times)}
    out = []
    for sigs in engines_sigs:
        eng = BranchEngine("", 0.0, sigs, [], {}, {})
        c = eng.coefficients(ph, pv, idx)
        out.append(c.conj().T @ c)
    return out


def monte_carlo_sums(model: ProtocolModel, trials: int, seed: int, workers: int = 1):
    """Sum over trials of ``conj(c) c^T`` per engine.

    Trials are cut into fixed-size chunks with independent streams, so the
    result does not depend on ``workers``.
    """
    nm = model.scenario.noise
    sigs = [e.signatures for e in model.engines]
    jobs = []
    for chunk, start in enumerate(range(0, trials, MC_CHUNK)):
        n = min(MC_CHUNK, trials - start)
        jobs.append((nm.kind, nm.correlation_time_ns, nm.sigma_phi_rad, seed, chunk, n,
                     model.times, sigs))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_mc_chunk, jobs))
    else:
        parts = [_mc_chunk(j) for j in jobs]
    totals = [np.zeros((len(s), len(s)), complex) for s in sigs]
    for part in parts:
        for i, S in enumerate(part):
            totals[i] = totals[i] + S
    return totals


# ---------------------------------------------------------------------------
# Success accounting


@dataclass(frozen=True)
class SuccessLedger:
    p_prep: float
    p_transmit: float
    p_route: float
    p_parity: float
    p_readout: float
    p_total: float
    p_pipeline: float   # success probability of the full simulated pipeline

    def as_fractions(self, max_denominator: int = 1 << 16) -> dict[str, Fraction]:
        return {k: Fraction(v).limit_denominator(max_denominator)
                for k, v in self.__dict__.items()}


def success_ledger(scenario: Scenario) -> SuccessLedger:
    """Factorized success probability, each factor from explicit enumeration."""
    s = scenario
    conv = s.conventions
    alice = run_alice(s.signal, s.delta_t_a_ns, s.fast_switches, conv)
    both = [b for b in alice if b.label == "both"]
    p_prep = sum(b.weight for b in both)
    if not both:
        return SuccessLedger(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    chan_state = both[0].state
    transmitted = apply_circuit(chan_state, channel_circuit(s.rail_transmittance))
    p_transmit = gram_norm(transmitted, s.kernel) if transmitted is not None else 0.0
    zero = NoiseRealization.constant(0.0, 0.0)
    p_route = p_parity = p_readout = 0.0
    if transmitted is not None:
        bob = run_bob(apply_phase_channel(transmitted, zero).scaled(1 / math.sqrt(p_transmit)),
                      s.delta_t_b_ns, s.tau_ns, s.delta_t_a_ns, s.fast_switches, conv)
        ok = [b for b in bob.branches if b.label == SUCCESS_ROUTE]
        if ok:
            p_route = ok[0].weight
            table = detect(ok[0].state, s.kernel, s.window_ns, peak_spacing_ns=s.delta_t_a_ns)
            p_parity = table.central()
            if p_parity > 0:
                p_readout = (table.central() if s.feed_forward else table.central("D")) / p_parity
    p_total = p_prep * p_transmit * p_route * p_parity * p_readout
    model = ProtocolModel.build(s)
    _, p_pipe = model.output_state(model.analytic_K() if s.noise.kind == IID_UNIFORM
                                   else model.realization_K(zero), s.feed_forward)
    return SuccessLedger(p_prep, p_transmit, p_route, p_parity, p_readout, p_total, p_pipe)


FLAG_COMBINATIONS = ((False, False), (True, False), (False, True), (True, True))


def budget(scenario: Scenario) -> dict[tuple[bool, bool], SuccessLedger]:
    return {(fs, ff): success_ledger(replace(scenario, fast_switches=fs, feed_forward=ff))
            for fs, ff in FLAG_COMBINATIONS}


# ---------------------------------------------------------------------------
# Reports


def fidelity_to(rho: np.ndarray, psi: JonesVector) -> float:
    v = psi.as_array()
    return float(np.real(v.conj() @ rho @ v))


@dataclass
class InputReport:
    name: str
    rho: np.ndarray
    fidelity: float
    p_success: float


@dataclass
class ScenarioReport:
    scenario: Scenario
    outputs: list[InputReport]
    ledger: SuccessLedger
    histogram: tuple[np.ndarray, np.ndarray]
    detection_total: float
    scan: list | None = None
    scan_fit: dict | None = None


def run_endtoend(s: Scenario, workers: int = 1, scan_offsets_um=None) -> ScenarioReport:
    """Averaged output state for every probe input, ledger and histogram."""
    outputs = []
    for name in s.inputs:
        psi = JonesVector.named(name)
        model = ProtocolModel.build(s, psi)
        Ks = model.averaged_K(workers)
        rho, p = model.output_state(Ks)
        outputs.append(InputReport(name, rho, fidelity_to(rho, psi), p))
    model = ProtocolModel.build(s)
    Ks = model.averaged_K(workers)
    table = model.detection_table(Ks)
    hist = table.histogram(s.delta_t_a_ns)
    ledger = success_ledger(s) if s.mode == "protocol" else SuccessLedger(1, 1, 1, 1, 1, 1, 1)
    report = ScenarioReport(s, outputs, ledger, hist, table.total())
    if scan_offsets_um is not None and s.mode == "protocol":
        report.scan = interference_scan(s, scan_offsets_um, workers)
        report.scan_fit = fit_fringe(report.scan)
    return report


class ScanPoint(NamedTuple):
    offset_um: float
    rate_d: float
    rate_dbar: float
    visibility: float


def interference_scan(s: Scenario, offsets_um, workers: int = 1) -> list[ScanPoint]:
    """Central-window coincidence rates on Y=|D> and Y=|Dbar> versus L-arm delay.

    The input is ``|D>`` and X is projected onto ``|D>``. ``offsets_um`` are
    optical path differences relative to ``delta_t_b = delta_t_a``.
    """
    d = JonesVector.named("D")
    dv, av = d.as_array(), JonesVector.named("A").as_array()
    span = max((abs(x) for x in offsets_um), default=0.0) / C_UM_PER_NS
    if span > 0.25 * CLUSTER_GAP_NS:
        warnings.warn("scan range approaches the detector time-cluster gap", stacklevel=2)
    rows = []
    for x in offsets_um:
        sc = replace(s, signal=d, delta_t_b_ns=s.delta_t_a_ns + x / C_UM_PER_NS, feed_forward=False)
        model = ProtocolModel.build(sc, d)
        rho = model.conditional_unnormalized(model.averaged_K(workers), False)
        rd = float(np.real(dv.conj() @ rho @ dv))
        ra = float(np.real(av.conj() @ rho @ av))
        vis = (rd - ra) / (rd + ra) if rd + ra > 0 else 0.0
        rows.append(ScanPoint(float(x), rd, ra, vis))
    return rows


def gaussian(x, amp, center, fwhm):
    return amp * np.exp(-4.0 * math.log(2.0) * (x - center) ** 2 / fwhm ** 2)


def fit_fringe(rows: list[ScanPoint]) -> dict | None:
    """Least-squares Gaussian fit of ``rate_d - rate_dbar``; None when there is nothing to fit."""
    from scipy.optimize import curve_fit

    if len(rows) < 4:
        return None
    x = np.array([r.offset_um for r in rows])
    y = np.array([r.rate_d - r.rate_dbar for r in rows])
    scale = max(np.max(np.abs([r.rate_d + r.rate_dbar for r in rows])), 1e-300)
    if np.max(np.abs(y)) <= 1e-9 * scale:
        return None
    i = int(np.argmax(y))
    half = y[i] / 2
    above = x[y >= half]
    w0 = max(above.max() - above.min(), np.min(np.diff(np.sort(x))))
    with warnings.catch_warnings():
        # A noiseless scan fits exactly and leaves the covariance undefined.
        warnings.simplefilter("ignore")
        (amp, center, fwhm), cov = curve_fit(gaussian, x, y, p0=(y[i], x[i], w0))
    zero = min(rows, key=lambda r: abs(r.offset_um))
    return {
        "fwhm_um": abs(float(fwhm)),
        "center_um": float(center),
        "amplitude": float(amp),
        "fwhm_stderr_um": float(np.sqrt(abs(cov[2, 2]))) if np.all(np.isfinite(cov)) else None,
        "zero_delay_visibility": zero.visibility,
    }
