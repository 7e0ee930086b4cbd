"""Correlated dephasing on the dual-rail channel.

Both rails (``CH`` and ``CV``) carry independent phase processes. A photon on a
rail at time ``t`` picks up ``exp(i phi_rail(t))``. Two processes are provided:

* ``iid_uniform``: each trial draws constant phases uniformly on [0, 2pi);
  within a trial the phases do not change.
* ``ornstein_uhlenbeck``: stationary Gaussian process with variance
  ``sigma**2`` and autocorrelation ``exp(-|dt| / tau_c)``, sampled exactly at
  the photon passage times.
"""

from __future__ import annotations

import cmath
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .states import PhotonicState

CHANNEL_H = "CH"
CHANNEL_V = "CV"
CHANNELS = (CHANNEL_H, CHANNEL_V)

IID_UNIFORM = "iid_uniform"
ORNSTEIN_UHLENBECK = "ornstein_uhlenbeck"


class UnsupportedModelError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    kind: str = IID_UNIFORM
    correlation_time_ns: float = math.inf
    sigma_phi_rad: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (IID_UNIFORM, ORNSTEIN_UHLENBECK):
            raise ValueError(f"unknown noise model {self.kind!r}")
        if self.kind == ORNSTEIN_UHLENBECK:
            if not self.correlation_time_ns > 0:
                raise ValueError("OU correlation time must be positive")
            if not self.sigma_phi_rad >= 0:
                raise ValueError("OU sigma must be nonnegative")


@dataclass(frozen=True)
class NoiseRealization:
    """Rail phases at a sorted set of passage times for one trial."""

    times: tuple[float, ...]
    phi_h: tuple[float, ...]
    phi_v: tuple[float, ...]

    @classmethod
    def constant(cls, phi_h: float, phi_v: float) -> NoiseRealization:
        return cls((), (phi_h,), (phi_v,))

    def phase(self, rail: str, t: float) -> float:
        table = self.phi_h if rail == CHANNEL_H else self.phi_v
        if not self.times:
            return table[0]
        try:
            return table[self.times.index(t)]
        except ValueError:
            raise KeyError(f"no phase sampled at t={t!r}") from None


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Independent reproducible stream for a (seed, key...) pair."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def sample_phases(model: NoiseModel, rng: np.random.Generator, times, n: int):
    """Arrays ``(phi_h, phi_v)`` of shape ``(n, len(times))`` for ``n`` trials.

    ``times`` must be sorted ascending.
    """
    times = np.asarray(times, dtype=float)
    m = len(times)
    if model.kind == IID_UNIFORM:
        ph = rng.uniform(0.0, 2 * np.pi, size=(n, 2))
        return (np.repeat(ph[:, :1], m, axis=1), np.repeat(ph[:, 1:], m, axis=1))
    out = []
    for _ in range(2):
        z = rng.standard_normal((n, max(m, 1)))
        phi = np.empty((n, m))
        if m:
            phi[:, 0] = model.sigma_phi_rad * z[:, 0]
        for j in range(1, m):
            rho = math.exp(-(times[j] - times[j - 1]) / model.correlation_time_ns)
            phi[:, j] = rho * phi[:, j - 1] + model.sigma_phi_rad * math.sqrt(1 - rho * rho) * z[:, j]
        out.append(phi)
    return out[0], out[1]


def sample_realization(model: NoiseModel, rng: np.random.Generator, times) -> NoiseRealization:
    times = tuple(sorted(set(float(t) for t in times)))
    ph, pv = sample_phases(model, rng, times, 1)
    return NoiseRealization(times, tuple(ph[0]), tuple(pv[0]))


def apply_phase_channel(state: PhotonicState, r: NoiseRealization,
                        rails: tuple[str, str] = CHANNELS) -> PhotonicState:
    """Multiply each ket by the rail phases of its photons."""
    h, v = rails
    rail_of = {h: CHANNEL_H, v: CHANNEL_V}
    out = {}
    for k, a in state.terms.items():
        phi = 0.0
        for m in k:
            rail = rail_of.get(m.path)
            if rail is not None:
                phi += r.phase(rail, m.time)
        out[k] = a * cmath.exp(1j * phi)
    return PhotonicState(out)


def phase_signature(ket, rails: tuple[str, str] = CHANNELS) -> tuple:
    """Sorted (rail, time) of every photon on a rail."""
    return tuple(sorted((m.path, m.time) for m in ket if m.path in rails))


def phase_orbit(signature: tuple, rails: tuple[str, str] = CHANNELS) -> tuple[int, int]:
    """Photon counts (on H rail, on V rail): the net phase is nH*phi_H + nV*phi_V."""
    return (sum(1 for p, _ in signature if p == rails[0]),
            sum(1 for p, _ in signature if p == rails[1]))


def dephase_average(state: PhotonicState, model: NoiseModel | None = None,
                    rails: tuple[str, str] = CHANNELS):
    """Uniform-phase average of ``|state><state|`` as a block mixture.

    Terms with different net channel phase lose coherence under independent
    uniform phases, so the average is block diagonal over phase orbits.
    Returns a list of ``(orbit, weight, normalized_state)`` where weight is the
    plain squared norm of the block (blocks are orthogonal by path occupancy).
    """
    if model is not None and model.kind != IID_UNIFORM:
        raise UnsupportedModelError("closed-form dephasing average needs the iid_uniform model")
    blocks: dict[tuple, dict] = defaultdict(dict)
    for k, a in state.terms.items():
        blocks[phase_orbit(phase_signature(k, rails), rails)][k] = a
    out = []
    for orbit in sorted(blocks):
        terms = blocks[orbit]
        w = sum(abs(a) ** 2 for a in terms.values())
        s = math.sqrt(w)
        out.append((orbit, w, PhotonicState({k: a / s for k, a in terms.items()})))
    return out
