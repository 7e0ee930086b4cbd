import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from paritylink.states import (
    C_UM_PER_NS,
    CapacityError,
    JonesVector,
    ModeLabel,
    OverlapKernel,
    PhotonicState,
    StateError,
    add,
    gram_inner,
    gram_norm,
    ket_overlap,
    make_ket,
    make_mode,
    make_single_photon,
    tensor,
)

from .conftest import jones_from_angles

H, V, D = (JonesVector.named(n) for n in "HVD")
angles = st.floats(0, math.pi / 2)
phases = st.floats(0, 2 * math.pi)


def test_ket_order_does_not_matter():
    a, b = make_mode("p", "H", 1.0), make_mode("q", "V", 0.0)
    assert make_ket(a, b) == make_ket(b, a)
    s1 = PhotonicState.from_terms([((a, b), 1.0)])
    s2 = PhotonicState.from_terms([((b, a), 1.0)])
    assert s1.terms == s2.terms


def test_from_terms_merges_duplicates():
    a, b = make_mode("p", "H"), make_mode("q", "H")
    s = PhotonicState.from_terms([((a, b), 0.5), ((b, a), 0.25)])
    assert len(s) == 1
    assert s.amplitude(a, b) == pytest.approx(0.75)


def test_tiny_amplitudes_are_pruned():
    a, b = make_mode("p", "H"), make_mode("p", "V")
    s = PhotonicState({(a,): 1.0, (b,): 1e-17})
    assert list(s.terms) == [(a,)]


def test_rejects_bad_input():
    with pytest.raises(StateError):
        make_mode("p", "X")
    with pytest.raises(StateError):
        make_mode("p", "H", float("nan"))
    with pytest.raises(StateError):
        JonesVector(1.0, 1.0)
    with pytest.raises(StateError):
        PhotonicState({})
    with pytest.raises(StateError):
        PhotonicState({(make_mode("p", "H"),): 1.0, (): 1.0})
    with pytest.raises(StateError):
        make_single_photon((1, 0), "p")


def test_three_photons_rejected():
    one = make_single_photon(H, "p")
    with pytest.raises(CapacityError):
        tensor(tensor(one, one), one)
    with pytest.raises(CapacityError):
        make_ket(*(make_mode("p", "H", t) for t in range(3)))


def test_named_polarizations():
    assert JonesVector.named("D").as_array() == pytest.approx([1 / math.sqrt(2)] * 2)
    assert JonesVector.named("L").beta == pytest.approx(1j / math.sqrt(2))
    with pytest.raises(StateError):
        JonesVector.named("Q")


def test_json_round_trip():
    s = tensor(make_single_photon(D, "a", 0.0, "r"), make_single_photon(H, "b", 3.0, "s"))
    back = PhotonicState.from_json(s.to_json())
    assert back.terms == s.terms


def test_product_of_two_d_photons():
    # |D>_t0 (x) |D>_t1 on one path: four equal terms, unit norm since the bins are far apart.
    s = tensor(make_single_photon(D, "a", 0.0), make_single_photon(D, "a", 3.0))
    assert len(s) == 4
    assert all(abs(x) == pytest.approx(0.5) for x in s.terms.values())
    assert gram_norm(s, OverlapKernel()) == pytest.approx(1.0)


def test_same_mode_pair_has_norm_two():
    # (a^dagger)^2 |0> has norm 2.
    m = make_mode("a", "H")
    s = PhotonicState({(m, m): 1.0})
    assert gram_norm(s, OverlapKernel()) == pytest.approx(2.0)


def test_kernel_fwhm_and_visibility():
    k = OverlapKernel(75.0, 0.9)
    half = 0.5 * 75.0 / C_UM_PER_NS
    # Two-photon envelope is the square of the single-photon factor.
    assert k.temporal(half) ** 2 == pytest.approx(0.5)
    a, b = ModeLabel("p", "H", 0.0, "r"), ModeLabel("p", "H", 0.0, "s")
    assert k(a, a) == 1.0
    assert k(a, b) ** 2 == pytest.approx(0.9)
    assert k(a, a._replace(pol="V")) == 0.0


def test_hom_dip_from_permanent():
    # Two identical photons on distinct paths vs. the same pair with a swapped label.
    k = OverlapKernel()
    a1, b1 = make_mode("a", "H", 0.0, "r"), make_mode("b", "H", 0.0, "s")
    a2, b2 = make_mode("a", "H", 0.0, "s"), make_mode("b", "H", 0.0, "r")
    assert ket_overlap(make_ket(a1, b1), make_ket(a2, b2), k) == pytest.approx(1.0)
    k0 = OverlapKernel(visibility=0.0)
    assert ket_overlap(make_ket(a1, b1), make_ket(a2, b2), k0) == pytest.approx(0.0)


@given(angles, phases, angles, phases, st.floats(-0.001, 0.001))
def test_gram_form_is_hermitian_and_positive(t1, p1, t2, p2, dt):
    k = OverlapKernel(75.0, 0.8)
    s = tensor(make_single_photon(jones_from_angles(t1, p1), "a", 0.0, "r"),
               make_single_photon(jones_from_angles(t2, p2), "a", dt, "s"))
    u = tensor(make_single_photon(jones_from_angles(t2, p1), "a", dt, "r"),
               make_single_photon(jones_from_angles(t1, p2), "a", 0.0, "s"))
    assert gram_inner(s, u, k) == pytest.approx(gram_inner(u, s, k).conjugate(), abs=1e-12)
    assert gram_inner(s, s, k).real >= -1e-12
    assert abs(gram_inner(s, s, k).imag) < 1e-12


@given(angles, phases)
def test_single_photon_norm_is_one(t, p):
    s = make_single_photon(jones_from_angles(t, p), "a", 1.5)
    assert gram_norm(s, OverlapKernel()) == pytest.approx(1.0)


def test_add_and_none_operands():
    a = make_single_photon(H, "a")
    b = make_single_photon(V, "a")
    s = add(a, None, b)
    assert len(s) == 2
    assert gram_inner(None, s, OverlapKernel()) == 0
