"""Linear optical elements acting on labeled modes, and their composition.

Conventions used throughout the package:

* Wave-plate angles are measured from the H axis, with
  ``R(t) = [[cos t, -sin t], [sin t, cos t]]``.
* A beam splitter transmits into the same-index output and reflects into the
  other with phase ``r`` from port a and ``-conj(r)`` from port b (``r = i``
  gives the symmetric convention).
* A polarizing beam splitter transmits H and reflects V with phase ``r`` from
  either input.
"""

from __future__ import annotations

import cmath
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .states import ModeLabel, PhotonicState, StateError

KINDS = ("BS", "PBS", "HWP", "QWP", "Retarder", "Delay", "PhaseShift", "Loss", "Switch", "Jones")
TWO_PORT = ("BS", "PBS")
UNITARITY_TOL = 1e-12


class ConfigurationError(ValueError):
    """Malformed element or circuit."""


def rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]], dtype=complex)


def hwp_matrix(theta: float) -> np.ndarray:
    return rotation(theta) @ np.diag([1, -1]).astype(complex) @ rotation(-theta)


def qwp_matrix(theta: float) -> np.ndarray:
    return rotation(theta) @ np.diag([1, 1j]) @ rotation(-theta)


def retarder_matrix(delta: float) -> np.ndarray:
    return np.diag([1.0, cmath.exp(1j * delta)])


@dataclass(frozen=True)
class OpticalElement:
    """A single linear element.

    ``parameter`` is the angle (HWP/QWP, rad), phase (Retarder/PhaseShift, rad),
    delay (Delay, ns), transmittance (Loss), reflectivity (BS) or switching
    time (Switch, ns). ``out_ports`` renames the outputs of BS/PBS/Switch;
    by default outputs reuse the input path names.

    A Switch routes every photon on any of its ports to ``out_ports[0]`` if it
    arrives before ``parameter`` and to ``out_ports[1]`` otherwise.
    A Jones element applies the 2x2 matrix in ``matrix`` to the polarization.
    """

    kind: str
    ports: tuple[str, ...]
    parameter: float = 0.0
    out_ports: tuple[str, ...] | None = None
    reflection_phase: complex = 1j
    matrix: tuple | None = field(default=None, compare=False)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "ports", tuple(self.ports))
        if self.out_ports is not None:
            object.__setattr__(self, "out_ports", tuple(self.out_ports))
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown element kind {self.kind!r}")
        if self.kind in TWO_PORT and len(self.ports) != 2:
            raise ConfigurationError(f"{self.kind} needs exactly two ports, got {self.ports}")
        if self.kind not in TWO_PORT + ("Switch",) and len(self.ports) != 1:
            raise ConfigurationError(f"{self.kind} acts on exactly one port, got {self.ports}")
        if self.kind == "Switch":
            if not self.ports or self.out_ports is None or len(self.out_ports) != 2:
                raise ConfigurationError("Switch needs input ports and two out_ports (early, late)")
        elif self.out_ports is not None and len(self.out_ports) != len(self.ports):
            raise ConfigurationError("out_ports must match ports in length")
        if self.kind == "Loss" and not 0.0 <= self.parameter <= 1.0:
            raise ConfigurationError("Loss transmittance must lie in [0, 1]")
        if self.kind == "BS" and not 0.0 <= self.parameter <= 1.0:
            raise ConfigurationError("BS reflectivity must lie in [0, 1]")
        if self.kind in TWO_PORT and not math.isclose(abs(self.reflection_phase), 1.0, abs_tol=1e-12):
            raise ConfigurationError("reflection_phase must have unit modulus")
        if self.kind == "Jones":
            m = np.asarray(self.matrix, dtype=complex)
            if m.shape != (2, 2):
                raise ConfigurationError("Jones element needs a 2x2 matrix")
            object.__setattr__(self, "matrix", tuple(map(tuple, m)))

    @property
    def outputs(self) -> tuple[str, ...]:
        return self.out_ports if self.out_ports is not None else self.ports

    def jones(self) -> np.ndarray | None:
        k = self.kind
        if k == "HWP":
            return hwp_matrix(self.parameter)
        if k == "QWP":
            return qwp_matrix(self.parameter)
        if k == "Retarder":
            return retarder_matrix(self.parameter)
        if k == "Jones":
            return np.array(self.matrix, dtype=complex)
        return None

    @property
    def is_unitary(self) -> bool:
        return self.kind not in ("Loss", "Switch", "Jones")


def BS(a, b, reflectivity=0.5, out=None, r=1j, name=""):
    return OpticalElement("BS", (a, b), reflectivity, out, r, name=name)


def PBS(a, b, out=None, r=1j, name=""):
    return OpticalElement("PBS", (a, b), 0.0, out, r, name=name)


def HWP(path, theta, name=""):
    return OpticalElement("HWP", (path,), theta, name=name)


def QWP(path, theta, name=""):
    return OpticalElement("QWP", (path,), theta, name=name)


def Retarder(path, delta, name=""):
    return OpticalElement("Retarder", (path,), delta, name=name)


def Delay(path, dt_ns, name=""):
    return OpticalElement("Delay", (path,), dt_ns, name=name)


def PhaseShift(path, phi, name=""):
    return OpticalElement("PhaseShift", (path,), phi, name=name)


def Loss(path, transmittance, name=""):
    return OpticalElement("Loss", (path,), transmittance, name=name)


def Switch(ports, early, late, t_switch_ns, name=""):
    return OpticalElement("Switch", tuple(ports), t_switch_ns, (early, late), name=name)


def Jones(path, matrix, name=""):
    return OpticalElement("Jones", (path,), 0.0, matrix=matrix, name=name)


def element_transform(e: OpticalElement):
    """Single-photon action of ``e`` as a function ``ModeLabel -> [(ModeLabel, amp)]``.

    Modes on paths the element does not touch map to themselves.
    """
    k = e.kind
    ports = e.ports
    outs = e.outputs

    if k == "BS":
        R = e.parameter
        t, rho = math.sqrt(1.0 - R), math.sqrt(R)
        ra, rb = e.reflection_phase, -e.reflection_phase.conjugate()
        (a, b), (oa, ob) = ports, outs

        def f(m):
            if m.path == a:
                return [(m._replace(path=oa), t), (m._replace(path=ob), ra * rho)]
            if m.path == b:
                return [(m._replace(path=ob), t), (m._replace(path=oa), rb * rho)]
            return [(m, 1.0)]
        return f

    if k == "PBS":
        r = e.reflection_phase
        (a, b), (oa, ob) = ports, outs
        route = {(a, "H"): (oa, 1.0), (a, "V"): (ob, r), (b, "H"): (ob, 1.0), (b, "V"): (oa, r)}

        def f(m):
            hit = route.get((m.path, m.pol))
            if hit is None:
                return [(m, 1.0)]
            return [(m._replace(path=hit[0]), hit[1])]
        return f

    J = e.jones()
    if J is not None:
        (p,) = ports
        cols = {"H": J[:, 0], "V": J[:, 1]}

        def f(m):
            if m.path != p:
                return [(m, 1.0)]
            col = cols[m.pol]
            return [(m._replace(pol="H"), col[0]), (m._replace(pol="V"), col[1])]
        return f

    if k == "Delay":
        (p,), dt = ports, e.parameter
        return lambda m: [(m._replace(time=m.time + dt), 1.0)] if m.path == p else [(m, 1.0)]

    if k == "PhaseShift":
        (p,), ph = ports, cmath.exp(1j * e.parameter)
        return lambda m: [(m, ph)] if m.path == p else [(m, 1.0)]

    if k == "Loss":
        (p,), amp = ports, math.sqrt(e.parameter)
        return lambda m: [(m, amp)] if m.path == p else [(m, 1.0)]

    if k == "Switch":
        pset, (early, late), t0 = set(ports), outs, e.parameter

        def f(m):
            if m.path not in pset:
                return [(m, 1.0)]
            return [(m._replace(path=early if m.time < t0 else late), 1.0)]
        return f

    raise ConfigurationError(f"unknown element kind {k!r}")


def mode_matrix(e: OpticalElement) -> np.ndarray:
    """Matrix of the (path, pol) map on the element's input ports (time ignored)."""
    ins = [(p, s) for p in e.ports for s in ("H", "V")]
    outs = sorted({(p, s) for p in e.outputs for s in ("H", "V")} | set(ins))
    f = element_transform(e)
    M = np.zeros((len(outs), len(ins)), dtype=complex)
    for j, (p, s) in enumerate(ins):
        for m, a in f(ModeLabel(p, s, 0.0)):
            M[outs.index((m.path, m.pol)), j] += a
    return M


def check_unitary(e: OpticalElement, tol: float = UNITARITY_TOL) -> bool:
    M = mode_matrix(e)
    return bool(np.allclose(M.conj().T @ M, np.eye(M.shape[1]), atol=tol))


def apply_element(state: PhotonicState, e: OpticalElement,
                  declared: set[str] | frozenset[str] | None = None) -> PhotonicState | None:
    """Push every photon of ``state`` through ``e``.

    Returns None when nothing survives (e.g. a Loss with zero transmittance).
    """
    if declared is not None:
        missing = (set(e.ports) | set(e.outputs)) - set(declared)
        if missing:
            raise ConfigurationError(f"element {e.kind} uses undeclared paths {sorted(missing)}")
    f = element_transform(e)
    acc: dict[tuple, complex] = defaultdict(complex)
    cache: dict[ModeLabel, list] = {}
    for ket, amp in state.terms.items():
        images = []
        for m in ket:
            if m not in cache:
                cache[m] = f(m)
            images.append(cache[m])
        if not images:
            acc[ket] += amp
        elif len(images) == 1:
            for m, c in images[0]:
                acc[(m,)] += amp * c
        else:
            for m1, c1 in images[0]:
                for m2, c2 in images[1]:
                    key = (m1, m2) if m1 <= m2 else (m2, m1)
                    acc[key] += amp * c1 * c2
    try:
        return PhotonicState(dict(acc))
    except StateError:
        return None


@dataclass(frozen=True)
class Circuit:
    """Ordered list of elements over a declared set of paths."""

    elements: tuple[OpticalElement, ...]
    paths: frozenset[str] = None

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        used = set()
        for e in self.elements:
            used |= set(e.ports) | set(e.outputs)
        if self.paths is None:
            object.__setattr__(self, "paths", frozenset(used))
        else:
            object.__setattr__(self, "paths", frozenset(self.paths))
            missing = used - self.paths
            if missing:
                raise ConfigurationError(f"circuit uses undeclared paths {sorted(missing)}")

    def __add__(self, other: Circuit) -> Circuit:
        return Circuit(self.elements + other.elements, self.paths | other.paths)

    @classmethod
    def from_records(cls, records, paths=None) -> Circuit:
        """Build from ``{kind, ports, parameter[, out_ports, name]}`` dicts."""
        elems = []
        for i, rec in enumerate(records):
            rec = dict(rec)
            try:
                kind = rec.pop("kind")
                ports = tuple(rec.pop("ports"))
            except KeyError as exc:
                raise ConfigurationError(f"element #{i}: missing field {exc}") from None
            param = float(rec.pop("parameter", 0.0))
            out = rec.pop("out_ports", None)
            name = rec.pop("name", "")
            if rec:
                raise ConfigurationError(f"element #{i}: unknown fields {sorted(rec)}")
            elems.append(OpticalElement(kind, ports, param, tuple(out) if out else None, name=name))
        return cls(tuple(elems), frozenset(paths) if paths else None)


def apply_circuit(state: PhotonicState, c: Circuit) -> PhotonicState | None:
    for e in c.elements:
        if state is None:
            return None
        state = apply_element(state, e, c.paths)
    return state
