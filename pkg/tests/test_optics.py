import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from paritylink.optics import (
    BS,
    HWP,
    KINDS,
    PBS,
    QWP,
    Circuit,
    ConfigurationError,
    Delay,
    Jones,
    Loss,
    OpticalElement,
    PhaseShift,
    Retarder,
    Switch,
    apply_circuit,
    apply_element,
    check_unitary,
    hwp_matrix,
    mode_matrix,
    qwp_matrix,
)
from paritylink.states import JonesVector, OverlapKernel, gram_norm, make_single_photon, tensor

H, V, D = (JonesVector.named(n) for n in "HVD")
angle = st.floats(-math.pi, math.pi)
unit_phase = st.floats(0, 2 * math.pi).map(lambda t: complex(math.cos(t), math.sin(t)))


@given(angle)
def test_wave_plates_are_unitary(theta):
    for e in (HWP("a", theta), QWP("a", theta), Retarder("a", theta)):
        assert check_unitary(e)


@given(st.floats(0, 1), unit_phase)
def test_beam_splitters_are_unitary(R, r):
    assert check_unitary(BS("a", "b", R, r=r))
    assert check_unitary(PBS("a", "b", r=r))


@given(angle)
def test_hwp_is_an_involution(theta):
    assert hwp_matrix(theta) @ hwp_matrix(theta) == pytest.approx(np.eye(2))


def test_qwp_twice_is_a_hwp():
    for theta in (0.0, 0.3, math.pi / 4):
        assert qwp_matrix(theta) @ qwp_matrix(theta) == pytest.approx(hwp_matrix(theta))


def test_hwp_at_22_5_degrees_makes_d():
    out = apply_element(make_single_photon(H, "a"), HWP("a", math.pi / 8))
    s = 1 / math.sqrt(2)
    assert [out.terms[k] for k in sorted(out.terms)] == pytest.approx([s, s])


def test_hwp_at_45_degrees_swaps_h_and_v():
    assert hwp_matrix(math.pi / 4) == pytest.approx(np.array([[0, 1], [1, 0]]))


def test_fully_transmitting_bs_is_identity():
    s = tensor(make_single_photon(D, "a", 0.0, "r"), make_single_photon(H, "b", 1.0, "s"))
    out = apply_element(s, BS("a", "b", 0.0))
    assert out.terms == pytest.approx(dict(s.terms))


def test_pbs_routes_by_polarization():
    out = apply_element(make_single_photon(D, "a"), PBS("a", "b", out=("x", "y"), r=1j))
    amps = {(m.path, m.pol): a for (m,), a in out.terms.items()}
    s = 1 / math.sqrt(2)
    assert amps[("x", "H")] == pytest.approx(s)
    assert amps[("y", "V")] == pytest.approx(1j * s)


def test_pbs_twice_restores_up_to_reflection_phase():
    # Reflected photons cross back: a second PBS returns V to its port with phase r^2.
    s = make_single_photon(D, "a")
    c = Circuit((PBS("a", "b", r=1j), PBS("a", "b", r=1j)))
    out = apply_circuit(s, c)
    amps = {(m.path, m.pol): a for (m,), a in out.terms.items()}
    assert amps[("a", "H")] == pytest.approx(1 / math.sqrt(2))
    assert amps[("a", "V")] == pytest.approx(-1 / math.sqrt(2))


def test_hom_bunching_on_balanced_bs():
    k = OverlapKernel()
    s = tensor(make_single_photon(H, "a", 0.0, "r"), make_single_photon(H, "b", 0.0, "s"))
    out = apply_element(s, BS("a", "b", 0.5))
    coinc = out.restricted(lambda ket: {m.path for m in ket} == {"a", "b"})
    assert coinc is None or gram_norm(coinc, k) < 1e-12
    assert gram_norm(out, k) == pytest.approx(1.0)


def test_partially_distinguishable_hom():
    k = OverlapKernel(visibility=0.5)
    s = tensor(make_single_photon(H, "a", 0.0, "r"), make_single_photon(H, "b", 0.0, "s"))
    out = apply_element(s, BS("a", "b", 0.5))
    coinc = out.restricted(lambda ket: {m.path for m in ket} == {"a", "b"})
    # Coincidence probability (1 - v)/2.
    assert gram_norm(coinc, k) == pytest.approx(0.25)


def test_bs_convention_flip_keeps_unitarity_and_moves_phases():
    m1 = mode_matrix(BS("a", "b", 0.5, r=1j))
    m2 = mode_matrix(BS("a", "b", 0.5, r=-1.0))
    assert np.allclose(m1.conj().T @ m1, np.eye(4))
    assert np.allclose(m2.conj().T @ m2, np.eye(4))
    assert not np.allclose(m1, m2)


def test_delay_phase_and_loss():
    s = make_single_photon(H, "a", 1.0)
    out = apply_circuit(s, Circuit((Delay("a", 2.0), PhaseShift("a", math.pi), Loss("a", 0.25))))
    ((m,), amp), = out.terms.items()
    assert m.time == 3.0
    assert amp == pytest.approx(-0.5)
    assert apply_element(s, Loss("a", 0.0)) is None


def test_switch_routes_by_arrival_time():
    s = tensor(make_single_photon(H, "a", 0.0), make_single_photon(H, "a", 3.0))
    out = apply_element(s, Switch(("a",), "early", "late", 1.5))
    ((m1, m2),) = out.terms
    assert {(m1.path, m1.time), (m2.path, m2.time)} == {("early", 0.0), ("late", 3.0)}


def test_jones_element_applies_matrix():
    J = np.array([[1, 1], [1, -1]]) / math.sqrt(2)
    out = apply_element(make_single_photon(D, "a"), Jones("a", J))
    assert len(out) == 1
    ((m,), amp), = out.terms.items()
    assert m.pol == "H" and amp == pytest.approx(1.0)


def test_configuration_errors():
    with pytest.raises(ConfigurationError):
        OpticalElement("Mirror", ("a",))
    with pytest.raises(ConfigurationError):
        OpticalElement("BS", ("a",))
    with pytest.raises(ConfigurationError):
        OpticalElement("HWP", ("a", "b"))
    with pytest.raises(ConfigurationError):
        Loss("a", 1.5)
    with pytest.raises(ConfigurationError):
        BS("a", "b", 0.5, r=2.0)
    with pytest.raises(ConfigurationError):
        Circuit((HWP("a", 0.0),), frozenset({"b"}))
    with pytest.raises(ConfigurationError):
        Circuit.from_records([{"kind": "HWP"}])
    assert "Switch" in KINDS and "Jones" in KINDS


def test_from_records():
    c = Circuit.from_records([
        {"kind": "HWP", "ports": ["a"], "parameter": math.pi / 8},
        {"kind": "PBS", "ports": ["a", "b"], "out_ports": ["x", "y"]},
    ])
    out = apply_circuit(make_single_photon(H, "a"), c)
    assert {k[0].path for k in out.terms} == {"x", "y"}
    with pytest.raises(ConfigurationError):
        Circuit.from_records([{"kind": "HWP", "ports": ["a"], "color": "red"}])
