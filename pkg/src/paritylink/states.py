"""Few-photon pure states over labeled optical modes.

A state is a sparse map from canonical kets to complex amplitudes. A ket is a
sorted tuple of :class:`ModeLabel`; its amplitude multiplies the product of
creation operators for those modes acting on the vacuum. Kets whose photons sit
in the same (path, pol) but at nearby times, or that carry different source
tags, are not orthogonal: inner products go through the bosonic Gram form built
on :class:`OverlapKernel`.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import NamedTuple

import numpy as np

POLARIZATIONS = ("H", "V")
MAX_PHOTONS = 2
PRUNE_THRESHOLD = 1e-15
JONES_TOLERANCE = 1e-12

# Speed of light in micrometers per nanosecond.
C_UM_PER_NS = 299_792.458


class StateError(ValueError):
    """Invalid state construction or operand."""


class CapacityError(StateError):
    """More photons than the simulator supports."""


class ModeLabel(NamedTuple):
    """One photonic mode: spatial path, polarization, arrival time in ns.

    ``source`` tags the emitter a photon came from. Photons from different
    sources overlap only partially (see :class:`OverlapKernel`).
    """

    path: str
    pol: str
    time: float
    source: str = ""

    def with_(self, **changes) -> ModeLabel:
        return self._replace(**changes)


Ket = tuple  # tuple[ModeLabel, ...], sorted


def make_mode(path: str, pol: str, time: float = 0.0, source: str = "") -> ModeLabel:
    if pol not in POLARIZATIONS:
        raise StateError(f"polarization must be 'H' or 'V', got {pol!r}")
    time = float(time)
    if not math.isfinite(time):
        raise StateError(f"mode time must be finite, got {time!r}")
    return ModeLabel(str(path), pol, time, str(source))


def make_ket(*modes: ModeLabel) -> Ket:
    """Canonical ket from an unordered collection of modes."""
    if len(modes) > MAX_PHOTONS:
        raise CapacityError(f"at most {MAX_PHOTONS} photons supported, got {len(modes)}")
    return tuple(sorted(modes))


@dataclass(frozen=True)
class JonesVector:
    """Normalized single-photon polarization state alpha|H> + beta|V>."""

    alpha: complex
    beta: complex

    def __post_init__(self):
        a, b = complex(self.alpha), complex(self.beta)
        object.__setattr__(self, "alpha", a)
        object.__setattr__(self, "beta", b)
        norm = abs(a) ** 2 + abs(b) ** 2
        if not abs(norm - 1.0) <= JONES_TOLERANCE:
            raise StateError(f"Jones vector not normalized: |alpha|^2+|beta|^2 = {norm!r}")

    @classmethod
    def normalized(cls, alpha: complex, beta: complex) -> JonesVector:
        n = math.sqrt(abs(alpha) ** 2 + abs(beta) ** 2)
        if n == 0.0:
            raise StateError("zero Jones vector")
        return cls(alpha / n, beta / n)

    @classmethod
    def named(cls, name: str) -> JonesVector:
        try:
            a, b = _NAMED[name]
        except KeyError:
            raise StateError(f"unknown polarization name {name!r}; expected one of {sorted(_NAMED)}") from None
        return cls(a, b)

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta], dtype=complex)

    def orthogonal(self) -> JonesVector:
        return JonesVector(-self.beta.conjugate(), self.alpha.conjugate())


_S = 1 / math.sqrt(2)
_NAMED = {
    "H": (1.0, 0.0),
    "V": (0.0, 1.0),
    "D": (_S, _S),
    "A": (_S, -_S),  # anti-diagonal, written D-bar in the lab notation
    "L": (_S, 1j * _S),
    "R": (_S, -1j * _S),
}


@dataclass(frozen=True)
class OverlapKernel:
    """Inner product between single-photon modes.

    Modes with different path or polarization are orthogonal. For matching
    (path, pol) the overlap is a Gaussian in the optical path difference,
    ``exp(-2 ln2 (c dt)^2 / l_c^2)``, so that the product of two such factors
    (the two-photon fringe envelope) has FWHM ``coherence_length_um``.
    Photons from different sources pick up an extra ``sqrt(visibility)``,
    making the zero-delay two-photon visibility equal to ``visibility``.
    """

    coherence_length_um: float = 75.0
    visibility: float = 1.0

    def __post_init__(self):
        if not self.coherence_length_um > 0:
            raise StateError("coherence length must be positive")
        if not 0.0 <= self.visibility <= 1.0:
            raise StateError("visibility must lie in [0, 1]")

    @property
    def source_overlap(self) -> float:
        return math.sqrt(self.visibility)

    def temporal(self, dt_ns: float) -> float:
        x = C_UM_PER_NS * dt_ns / self.coherence_length_um
        return math.exp(-2.0 * math.log(2.0) * x * x)

    def __call__(self, m: ModeLabel, n: ModeLabel) -> float:
        if m.path != n.path or m.pol != n.pol:
            return 0.0
        g = self.temporal(m.time - n.time) if m.time != n.time else 1.0
        if m.source != n.source:
            g *= self.source_overlap
        return g


@dataclass(frozen=True)
class PhotonicState:
    """Immutable sparse superposition of kets with a common photon number."""

    terms: Mapping[Ket, complex]
    photon_count: int = field(init=False)

    def __post_init__(self):
        pruned = {}
        for k, a in self.terms.items():
            a = complex(a)
            if abs(a) >= PRUNE_THRESHOLD:
                pruned[k] = a
        if not pruned:
            raise StateError("state has no terms above the pruning threshold")
        counts = {len(k) for k in pruned}
        if len(counts) != 1:
            raise StateError(f"mixed photon counts in one state: {sorted(counts)}")
        n = counts.pop()
        if n > MAX_PHOTONS:
            raise CapacityError(f"at most {MAX_PHOTONS} photons supported, got {n}")
        for k in pruned:
            if tuple(sorted(k)) != k:
                raise StateError(f"ket not in canonical order: {k}")
        object.__setattr__(self, "terms", MappingProxyType(pruned))
        object.__setattr__(self, "photon_count", n)

    @classmethod
    def from_terms(cls, pairs: Iterable[tuple[Iterable[ModeLabel], complex]]) -> PhotonicState:
        """Build from (modes, amplitude) pairs, canonicalizing and merging."""
        acc: dict[Ket, complex] = defaultdict(complex)
        for modes, amp in pairs:
            acc[make_ket(*modes)] += amp
        return cls(dict(acc))

    @classmethod
    def vacuum(cls) -> PhotonicState:
        return cls({(): 1.0})

    def __len__(self):
        return len(self.terms)

    def items(self):
        return self.terms.items()

    def paths(self) -> set[str]:
        return {m.path for k in self.terms for m in k}

    def scaled(self, factor: complex) -> PhotonicState:
        return PhotonicState({k: a * factor for k, a in self.terms.items()})

    def restricted(self, predicate) -> PhotonicState | None:
        """Terms whose ket satisfies ``predicate``; None if nothing survives."""
        kept = {k: a for k, a in self.terms.items() if predicate(k)}
        try:
            return PhotonicState(kept)
        except StateError:
            return None

    def map_modes(self, fn) -> PhotonicState:
        """Relabel every mode through ``fn`` (must keep kets distinct enough to merge)."""
        return PhotonicState.from_terms(((fn(m) for m in k), a) for k, a in self.terms.items())

    def amplitude(self, *modes: ModeLabel) -> complex:
        return self.terms.get(make_ket(*modes), 0.0)

    def to_json(self) -> str:
        """Debug serialization: sorted list of [modes, [re, im]]."""
        rows = [
            [[list(m) for m in k], [a.real, a.imag]]
            for k, a in sorted(self.terms.items(), key=lambda kv: kv[0])
        ]
        return json.dumps(rows)

    @classmethod
    def from_json(cls, text: str) -> PhotonicState:
        rows = json.loads(text)
        return cls.from_terms(
            ([ModeLabel(*m) for m in modes], complex(re, im)) for modes, (re, im) in rows
        )


def add(*states: PhotonicState | None) -> PhotonicState:
    acc: dict[Ket, complex] = defaultdict(complex)
    for s in states:
        if s is None:
            continue
        for k, a in s.terms.items():
            acc[k] += a
    return PhotonicState(dict(acc))


def make_single_photon(pol_state: JonesVector, path: str, time: float = 0.0,
                       source: str = "") -> PhotonicState:
    """One photon in ``path`` at ``time`` with polarization ``pol_state``."""
    if not isinstance(pol_state, JonesVector):
        raise StateError("pol_state must be a JonesVector")
    return PhotonicState.from_terms([
        ([make_mode(path, "H", time, source)], pol_state.alpha),
        ([make_mode(path, "V", time, source)], pol_state.beta),
    ])


def tensor(a: PhotonicState, b: PhotonicState) -> PhotonicState:
    """Product state: creation operators of ``a`` followed by those of ``b``."""
    if a.photon_count + b.photon_count > MAX_PHOTONS:
        raise CapacityError(
            f"tensor product would hold {a.photon_count + b.photon_count} photons"
        )
    return PhotonicState.from_terms(
        (ka + kb, xa * xb) for ka, xa in a.terms.items() for kb, xb in b.terms.items()
    )


def ket_overlap(k: Ket, l: Ket, kernel: OverlapKernel) -> float:
    """<k|l> for creation-operator kets: permanent of the mode-overlap matrix."""
    if len(k) != len(l):
        return 0.0
    if not k:
        return 1.0
    if len(k) == 1:
        return kernel(k[0], l[0])
    return kernel(k[0], l[0]) * kernel(k[1], l[1]) + kernel(k[0], l[1]) * kernel(k[1], l[0])


def _orth_class(k: Ket) -> tuple:
    # Kets can only overlap when their (path, pol) multisets agree.
    return tuple(sorted((m.path, m.pol) for m in k))


def gram_inner(a: PhotonicState | None, b: PhotonicState | None,
               kernel: OverlapKernel) -> complex:
    """<a|b> under the bosonic Gram form."""
    if a is None or b is None:
        return 0j
    groups: dict[tuple, list] = defaultdict(list)
    for l, y in b.terms.items():
        groups[_orth_class(l)].append((l, y))
    total = 0j
    for k, x in a.terms.items():
        xc = x.conjugate()
        for l, y in groups.get(_orth_class(k), ()):
            g = ket_overlap(k, l, kernel)
            if g:
                total += xc * y * g
    return total


def gram_norm(state: PhotonicState | None, kernel: OverlapKernel) -> float:
    """Squared norm of ``state``; kets at nearby times interfere via the kernel."""
    return max(gram_inner(state, state, kernel).real, 0.0)

