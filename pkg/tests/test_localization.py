import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_lab.errors import InsufficientSupportError, NoCenterError, OutsideProbeBoxError
from anderson_lab.lattice import PotentialRealization, PotentialSpec, assemble_hamiltonian, make_box, sample_potential
from anderson_lab.localization import (
    decay_rate_batch,
    decay_rate_fit,
    designated_center,
    finite_volume_witness,
    is_localized_in,
    localization_centers,
    localization_records,
    localized_in_batch,
    tail_mass,
    tail_mass_batch,
)
from anderson_lab.spectral import eigendecompose

LINE = make_box(1, 0, 21)  # sites -10..10
STRONG = PotentialSpec("uniform", 0.0, 1.0, 10.0)


def delta(*sites, box=LINE):
    v = np.zeros(box.size)
    for s in sites:
        v[box.index_of(np.array([[s]]))[0]] = 1.0
    return v / np.linalg.norm(v)


def sites(a):
    return [int(r[0]) for r in a]


class TestCenters:
    def test_point_mass(self):
        assert sites(localization_centers(delta(0), LINE)) == [0]

    def test_tie(self):
        assert sites(localization_centers(delta(0, 5), LINE)) == [0, 5]

    def test_strict_max(self):
        box = make_box(1, 0, 3)
        phi = np.array([0.1, 0.9894987, 0.1])
        assert sites(localization_centers(phi / np.linalg.norm(phi), box)) == [0]

    def test_zero_vector(self):
        with pytest.raises(NoCenterError, match="no center"):
            localization_centers(np.zeros(LINE.size), LINE)

    def test_tolerance_range(self):
        with pytest.raises(ValueError):
            localization_centers(delta(0), LINE, tol=1e-3)

    def test_designated_is_lexicographic_min(self):
        assert designated_center(delta(3, -4, 7), LINE) == (-4,)

    @given(st.lists(st.floats(-1, 1, allow_nan=False), min_size=21, max_size=21), st.sampled_from([-3.7, 2.0, -1e-3]))
    @settings(max_examples=60, deadline=None)
    def test_scale_invariance(self, values, c):
        phi = np.array(values)
        if not np.any(phi != 0):
            return
        a = localization_centers(phi, LINE)
        b = localization_centers(c * phi, LINE)
        assert np.array_equal(a, b)

    def test_scale_invariance_named_constant(self):
        phi = np.exp(-np.abs(LINE.sites[:, 0] - 2.0)) * np.cos(LINE.sites[:, 0])
        assert np.array_equal(localization_centers(phi, LINE), localization_centers(-3.7 * phi, LINE))


class TestLocalizedIn:
    def test_examples(self):
        assert is_localized_in(delta(0), LINE, make_box(1, 0, 5))
        assert not is_localized_in(delta(9), LINE, make_box(1, 0, 5))
        assert is_localized_in(delta(0, 5), LINE, make_box(1, 5, 3))

    def test_batch_agrees(self):
        V = np.column_stack([delta(0), delta(9), delta(0, 5)])
        np.testing.assert_array_equal(localized_in_batch(V, LINE, make_box(1, 5, 3)), [False, False, True])


class TestTailMass:
    def test_examples(self):
        assert tail_mass(delta(0), LINE, make_box(1, 0, 3)) == 0.0
        assert tail_mass(delta(0, 9), LINE, make_box(1, 0, 5)) == pytest.approx(1 / math.sqrt(2))
        assert tail_mass(delta(-2, 1, 2), LINE, make_box(1, 0, 5)) == 0.0

    def test_nested_monotone(self, rng):
        phi = rng.normal(size=LINE.size)
        phi /= np.linalg.norm(phi)
        masses = [tail_mass(phi, LINE, make_box(1, 0, L)) for L in range(1, 22, 2)]
        assert all(a >= b for a, b in zip(masses, masses[1:]))
        assert masses[-1] == 0.0 and 0 <= masses[0] <= 1

    def test_batch(self, rng):
        V = rng.normal(size=(LINE.size, 4))
        box = make_box(1, 2, 7)
        np.testing.assert_allclose(tail_mass_batch(V, LINE, box), [tail_mass(V[:, j], LINE, box) for j in range(4)])


class TestDecayFit:
    def test_exact_exponential(self):
        phi = np.exp(-np.abs(LINE.sites[:, 0]).astype(float))
        g, r = decay_rate_fit(phi / np.linalg.norm(phi), LINE, (0,))
        assert g == pytest.approx(2.0, abs=1e-8)
        assert r < 1e-10

    def test_point_mass(self):
        with pytest.raises(InsufficientSupportError, match="insufficient support"):
            decay_rate_fit(delta(0), LINE, (0,))

    def test_two_dimensional(self):
        box = make_box(2, (0, 0), 9)
        dist = np.max(np.abs(box.sites - np.array([1, -1])), axis=1)
        g, _ = decay_rate_fit(np.exp(-0.75 * dist), box, (1, -1))
        assert g == pytest.approx(1.5, abs=1e-10)

    def test_pilot_regression(self):
        # pilot: n=201, lambda=10, seed 2024, eigenpair 100 (E = 4.4515...)
        box = make_box(1, 0, 201)
        H = assemble_hamiltonian(box, sample_potential(STRONG, 2024, box), 10.0)
        sd = eigendecompose(H)
        phi = sd.eigenvectors[:, 100]
        c = designated_center(phi, box)
        g, r = decay_rate_fit(phi, box, c)
        assert c == (-19,)
        assert g > 0
        assert g == pytest.approx(1.2528013551555695, rel=1e-6)
        gb, _ = decay_rate_batch(sd.eigenvectors[:, [100]], box)
        assert gb[0] == pytest.approx(g, rel=1e-12)


class TestWitness:
    def test_exact_eigenvector(self):
        box = make_box(1, 0, 11)
        H = assemble_hamiltonian(box, sample_potential(STRONG, 1, box), 10.0)
        sd = eigendecompose(H)
        w = finite_volume_witness(sd.eigenvectors[:, 4], sd.eigenvalues[4], box, sd)
        assert w.distance == pytest.approx(0.0, abs=1e-12) and w.holds

    def test_scalar_probe(self):
        box = make_box(1, 0, 1)
        H = assemble_hamiltonian(box, PotentialRealization(box, np.array([0.4])), 2.5)
        w = finite_volume_witness(np.array([1.0]), 1.0, box, eigendecompose(H))
        assert w.distance == 0.0 and w.holds

    def test_zero_restricted_mass(self):
        probe = make_box(1, -8, 3)
        H = assemble_hamiltonian(probe, PotentialRealization(probe, np.zeros(3)), 1.0)
        with pytest.raises(OutsideProbeBoxError, match="outside probe box"):
            finite_volume_witness(delta(5), 0.0, LINE, eigendecompose(H))

    def test_pilot_magnitudes(self):
        box = make_box(1, 0, 301)
        H = assemble_hamiltonian(box, sample_potential(STRONG, 2024, box), 10.0)
        sd = eigendecompose(H)
        phi = sd.eigenvectors[:, 150]
        c = designated_center(phi, box)
        probe = make_box(1, c, 101)
        w = finite_volume_witness(phi, sd.eigenvalues[150], box, eigendecompose(H.sub_hamiltonian(probe)))
        assert w.holds
        assert w.distance < 1e-4 and w.residual_bound < 1e-4


def test_records_flag_degeneracy():
    box = make_box(2, (0, 0), 5)
    H = assemble_hamiltonian(box, PotentialRealization(box, np.zeros(box.size)), 0.0)
    recs = localization_records(eigendecompose(H), probe_sides=(3,))
    assert len(recs) == box.size
    assert any(r.near_degenerate for r in recs)
    assert all(0.0 <= r.tail_masses[3] <= 1.0 + 1e-12 for r in recs)
