"""Single-qubit state and process tomography, plus channel fidelity metrics.

Process matrices use the Pauli basis ``(I, X, Y, Z)`` with
``E(rho) = sum_mn chi[m, n] s_m rho s_n^dagger``. With H as ``|0>``, the
probe states ``D`` and ``L`` are the +1 eigenvectors of X and Y.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass

import numpy as np

from .optics import hwp_matrix, qwp_matrix
from .states import JonesVector

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULI = (I2, SX, SY, SZ)
PROBES = ("H", "V", "D", "L")

DENSITY_TOL = 1e-10
TP_TOL = 1e-8


class TomographyError(ValueError):
    pass


class InsufficientDataError(TomographyError):
    pass


@dataclass(frozen=True)
class MeasurementSetting:
    """Analyzer: QWP then HWP then a polarizer passing H."""

    qwp_angle: float
    hwp_angle: float

    def analysis_state(self) -> np.ndarray:
        U = hwp_matrix(self.hwp_angle) @ qwp_matrix(self.qwp_angle)
        return U.conj().T @ np.array([1, 0], dtype=complex)

    def projector(self) -> np.ndarray:
        e = self.analysis_state()
        return np.outer(e, e.conj())


STANDARD_SETTINGS = {
    "H": MeasurementSetting(0.0, 0.0),
    "V": MeasurementSetting(0.0, math.pi / 4),
    "D": MeasurementSetting(math.pi / 4, math.pi / 8),
    "L": MeasurementSetting(math.pi / 4, 0.0),
}


def validate_density(rho, tol: float = DENSITY_TOL) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (2, 2):
        raise TomographyError(f"expected a 2x2 density matrix, got shape {rho.shape}")
    if not np.allclose(rho, rho.conj().T, atol=tol):
        raise TomographyError("density matrix is not Hermitian")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise TomographyError(f"density matrix trace is {np.trace(rho).real!r}")
    if np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min() < -tol:
        raise TomographyError("density matrix has a negative eigenvalue")
    return rho


def pure(psi: JonesVector) -> np.ndarray:
    v = psi.as_array()
    return np.outer(v, v.conj())


def fidelity(rho, psi: JonesVector) -> float:
    """<psi|rho|psi>."""
    v = psi.as_array()
    return float(np.real(v.conj() @ np.asarray(rho) @ v))


def state_fidelity(rho, sigma) -> float:
    """Uhlmann fidelity ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2``."""
    w, v = np.linalg.eigh(0.5 * (rho + np.conj(rho).T))
    root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T
    inner = np.linalg.eigvalsh(root @ sigma @ root)
    return float(np.sum(np.sqrt(np.clip(inner, 0.0, None))) ** 2)


def simulate_counts(rho, settings=None, n_total: int = 10_000,
                    rng: np.random.Generator | None = None, exact: bool = False) -> np.ndarray:
    """Poisson counts with means ``n_total * Tr(rho P_i)``, one per setting.

    ``exact`` returns the means themselves.
    """
    rho = validate_density(rho)
    if n_total < 1:
        raise TomographyError("n_total must be at least 1")
    if settings is None:
        settings = STANDARD_SETTINGS
    if isinstance(settings, Mapping):
        settings = list(settings.values())
    means = np.array([n_total * np.real(np.trace(rho @ s.projector())) for s in settings])
    means = np.clip(means, 0.0, None)
    if exact:
        return means
    rng = rng if rng is not None else np.random.default_rng()
    return rng.poisson(means).astype(float)


def project_psd(m: np.ndarray) -> tuple[np.ndarray, bool]:
    """Closest unit-trace PSD matrix by eigenvalue clipping; flag if clipping happened."""
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    if w.min() >= 0:
        return m / np.trace(m).real, False
    w = np.clip(w, 0.0, None)
    if w.sum() <= 0:
        raise TomographyError("no positive spectrum left after clipping")
    out = (v * w) @ v.conj().T
    return out / np.trace(out).real, True


def reconstruct_state(counts) -> np.ndarray:
    """Linear Stokes inversion from (N_H, N_V, N_D, N_L), repaired to a valid state."""
    nh, nv, nd, nl = (float(c) for c in counts)
    norm = nh + nv
    if norm <= 0:
        raise InsufficientDataError("N_H + N_V must be positive")
    s1 = (nh - nv) / norm
    s2 = 2 * nd / norm - 1
    s3 = 2 * nl / norm - 1
    rho = 0.5 * (I2 + s1 * SZ + s2 * SX + s3 * SY)
    rho, _ = project_psd(rho)
    return rho


def _basis_vectors() -> np.ndarray:
    # Column m is vec(s_m) in the |j> (x) s|j> ordering used by the Choi matrix.
    return np.stack([s.T.reshape(-1) for s in PAULI], axis=1)


def choi_from_outputs(outputs: Mapping[str, np.ndarray]) -> np.ndarray:
    """Choi matrix sum_jk |j><k| (x) E(|j><k|) from outputs for H, V, D, L."""
    missing = [p for p in PROBES if p not in outputs]
    if missing:
        raise TomographyError(f"missing probe outputs: {missing}")
    eh, ev, ed, el = (np.asarray(outputs[p], dtype=complex) for p in PROBES)
    a = 2 * ed - eh - ev           # E(|H><V| + |V><H|)
    b = 2 * el - eh - ev           # E(i(|V><H| - |H><V|))
    ehv = 0.5 * (a + 1j * b)
    evh = 0.5 * (a - 1j * b)
    blocks = [[eh, ehv], [evh, ev]]
    C = np.zeros((4, 4), dtype=complex)
    for j in range(2):
        for k in range(2):
            C[2 * j:2 * j + 2, 2 * k:2 * k + 2] = blocks[j][k]
    return C


def chi_from_choi(C: np.ndarray) -> np.ndarray:
    B = _basis_vectors()
    return B.conj().T @ C @ B / 4.0


def choi_from_chi(chi: np.ndarray) -> np.ndarray:
    B = _basis_vectors()
    return B @ chi @ B.conj().T


@dataclass(frozen=True)
class ProcessEstimate:
    chi: np.ndarray
    psd_projected: bool


def reconstruct_process(outputs: Mapping[str, np.ndarray]) -> ProcessEstimate:
    """Linear process tomography from the four probe outputs."""
    for p in PROBES:
        if p in outputs:
            validate_density(outputs[p], tol=1e-8)
    chi = chi_from_choi(choi_from_outputs(outputs))
    chi = 0.5 * (chi + chi.conj().T)
    if np.linalg.eigvalsh(chi).min() < -1e-12:
        chi, flag = project_psd(chi)
        return ProcessEstimate(restore_trace_preservation(chi), flag)
    return ProcessEstimate(chi, False)


def restore_trace_preservation(chi: np.ndarray) -> np.ndarray:
    """Rescale the input side of a PSD process so it is trace preserving again.

    With Choi matrix C and M = Tr_out C, (M^-1/2 (x) I) C (M^-1/2 (x) I) keeps C
    positive and has partial trace I.
    """
    C = choi_from_chi(chi)
    M = np.einsum("iaja->ij", C.reshape(2, 2, 2, 2))
    w, v = np.linalg.eigh(0.5 * (M + M.conj().T))
    if w.min() <= 1e-12:
        raise TomographyError("process estimate has no support on some input")
    S = np.kron((v / np.sqrt(w)) @ v.conj().T, I2)
    C = S @ C @ S
    chi = chi_from_choi(0.5 * (C + C.conj().T))
    return 0.5 * (chi + chi.conj().T)


def apply_chi(chi: np.ndarray, rho: np.ndarray) -> np.ndarray:
    out = np.zeros((2, 2), dtype=complex)
    for m in range(4):
        for n in range(4):
            if chi[m, n] != 0:
                out += chi[m, n] * PAULI[m] @ rho @ PAULI[n].conj().T
    return out


def trace_preservation_error(chi: np.ndarray) -> float:
    acc = sum(chi[m, n] * PAULI[n].conj().T @ PAULI[m] for m in range(4) for n in range(4))
    return float(np.max(np.abs(acc - I2)))


def entanglement_fidelity(chi: np.ndarray) -> float:
    """F_e as the identity-identity element of chi."""
    return float(np.real(chi[0, 0]))


BELL = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


def entanglement_fidelity_bell(process) -> float:
    """F_e by sending half of ``(|HH> + |VV>)/sqrt(2)`` through ``process``.

    ``process`` is a chi matrix or a callable acting linearly on 2x2 operators.
    """
    apply = _as_callable(process)
    out = np.zeros((4, 4), dtype=complex)
    for j in range(2):
        for k in range(2):
            ejk = np.zeros((2, 2), dtype=complex)
            ejk[j, k] = 1.0
            out += 0.5 * np.kron(ejk, apply(ejk))
    return float(np.real(BELL.conj() @ out @ BELL))


def average_fidelity(f_e: float) -> float:
    """Average fidelity of a qubit channel from its entanglement fidelity."""
    if not -1e-12 <= f_e <= 1 + 1e-12:
        raise TomographyError(f"entanglement fidelity {f_e!r} outside [0, 1]")
    return (2.0 * f_e + 1.0) / 3.0


def _as_callable(process) -> Callable[[np.ndarray], np.ndarray]:
    if callable(process):
        return process
    chi = np.asarray(process, dtype=complex)
    return lambda rho: apply_chi(chi, rho)


def haar_states(n: int, rng: np.random.Generator) -> np.ndarray:
    z = rng.standard_normal((n, 2)) + 1j * rng.standard_normal((n, 2))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def haar_average_fidelity(process, n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo mean of <psi|E(psi)|psi> over Haar-random pure states.

    Returns ``(mean, standard_error)``.
    """
    psis = haar_states(n_samples, rng)
    if callable(process):
        vals = np.array([np.real(p.conj() @ process(np.outer(p, p.conj())) @ p) for p in psis])
    else:
        chi = np.asarray(process, dtype=complex)
        # <psi| s_m |psi> for every sample and Pauli.
        amps = np.stack([np.einsum("ni,ij,nj->n", psis.conj(), s, psis) for s in PAULI], axis=1)
        vals = np.real(np.einsum("nm,mk,nk->n", amps, chi, amps.conj()))
    se = float(vals.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return float(vals.mean()), se


def chi_from_kraus(kraus) -> np.ndarray:
    coef = np.array([[np.trace(s.conj().T @ K) / 2 for s in PAULI] for K in kraus])
    return coef.T @ coef.conj()


def random_chi(rng: np.random.Generator, rank: int = 4) -> np.ndarray:
    """Random CPTP qubit channel with ``rank`` Kraus operators (Stinespring)."""
    d = 2 * rank
    z = (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))) / math.sqrt(2)
    q, r = np.linalg.qr(z)
    q = q * (np.diag(r) / np.abs(np.diag(r)))
    W = q[:, :2]
    return chi_from_kraus([W[2 * a:2 * a + 2, :] for a in range(rank)])


def unitary_chi(U: np.ndarray) -> np.ndarray:
    return chi_from_kraus([np.asarray(U, dtype=complex)])


def matrix_to_json(m) -> list:
    """Row-major list of [re, im] pairs."""
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.asarray(m, dtype=complex)]


def matrix_from_json(rows) -> np.ndarray:
    return np.array([[complex(re, im) for re, im in row] for row in rows])


def read_counts_csv(path) -> dict[str, np.ndarray]:
    """Counts table with columns ``probe,H,V,D,L``, one row per input probe."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"probe", *STANDARD_SETTINGS}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise TomographyError(f"counts CSV needs columns {sorted(need)}")
        for row in reader:
            out[row["probe"]] = np.array([float(row[k]) for k in STANDARD_SETTINGS])
    return out
