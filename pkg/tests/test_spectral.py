import math

import numpy as np
import pytest
import sympy
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_lab.errors import BoxTooLargeError, ResolventSingular
from anderson_lab.lattice import (
    PotentialRealization,
    PotentialSpec,
    assemble_hamiltonian,
    make_block,
    make_box,
    sample_potential,
)
from anderson_lab.spectral import (
    ResolventFactorization,
    count_in_interval,
    eigendecompose,
    eigenvalues,
    greens_element,
    greens_to_boundary,
    min_gap,
)


def free(box):
    return assemble_hamiltonian(box, PotentialRealization(box, np.zeros(box.size)), 1.0)


def random_h(d, L, lam=1.0, seed=0):
    spec = PotentialSpec("uniform", 0.0, 1.0, lam)
    box = make_box(d, (0,) * d, L)
    return assemble_hamiltonian(box, sample_potential(spec, seed, box), lam)


class TestEigendecompose:
    def test_three_site_path(self):
        sd = eigendecompose(free(make_box(1, 0, 3)))
        np.testing.assert_allclose(sd.eigenvalues, [-math.sqrt(2), 0.0, math.sqrt(2)], atol=1e-14)
        assert sd.min_gap == pytest.approx(math.sqrt(2))

    def test_scalar(self):
        box = make_box(1, 0, 1)
        sd = eigendecompose(assemble_hamiltonian(box, PotentialRealization(box, np.array([0.25])), 2.0))
        assert sd.eigenvalues.tolist() == [0.5]

    def test_dirichlet_line(self):
        box = make_block(1, 1, 100)
        w = eigendecompose(free(box)).eigenvalues
        ref = np.sort(2 * np.cos(np.arange(1, 101) * np.pi / 101))
        assert np.max(np.abs(w - ref)) < 1e-10

    @pytest.mark.parametrize("d,L", [(1, 101), (2, 11), (3, 5)])
    def test_certificates(self, d, L):
        sd = eigendecompose(random_h(d, L, 2.0, seed=7))
        assert sd.eigenvalues.size == sd.hamiltonian.size
        assert np.all(np.diff(sd.eigenvalues) >= 0)
        assert sd.gram_deviation() < 1e-10
        assert sd.max_residual() < 1e-10 * max(1.0, sd.spectral_radius)

    def test_values_path_matches_vectors_path(self):
        H = random_h(1, 201, 3.0, seed=2)
        np.testing.assert_allclose(eigenvalues(H), eigendecompose(H).eigenvalues, atol=1e-12)

    def test_deterministic(self):
        a = eigendecompose(random_h(2, 9, 1.0, seed=5))
        b = eigendecompose(random_h(2, 9, 1.0, seed=5))
        assert a.eigenvalues.tobytes() == b.eigenvalues.tobytes()
        assert a.eigenvectors.tobytes() == b.eigenvectors.tobytes()

    def test_cap(self):
        with pytest.raises(BoxTooLargeError):
            eigendecompose(random_h(2, 11), max_sites=100)

    @pytest.mark.parametrize("d,L,seed", [(1, 1, 0), (1, 5, 1), (1, 7, 2), (2, 1, 3), (1, 3, 4), (2, 3, 5)])
    def test_characteristic_polynomial_oracle(self, d, L, seed):
        # independent route: exact rational matrix -> charpoly -> mpmath roots
        spec = PotentialSpec("uniform", -1.0, 1.0, 1.5)
        box = make_box(d, (0,) * d, L)
        if box.size > 8:
            box = make_block(d, 0, 2)
        H = assemble_hamiltonian(box, sample_potential(spec, seed, box), 1.5)
        M = sympy.Matrix(H.toarray().tolist()).applyfunc(sympy.nsimplify)
        lam = sympy.Symbol("lam")
        roots = sympy.Poly(M.charpoly(lam).as_expr(), lam).nroots(n=30, maxsteps=200)
        ref = np.sort([float(sympy.re(r)) for r in roots])
        np.testing.assert_allclose(eigenvalues(H), ref, atol=1e-8)


class TestCounting:
    w = np.array([-math.sqrt(2), 0.0, math.sqrt(2)])

    @pytest.mark.parametrize("J,n", [((-0.5, 0.5), 1), ((-3, 3), 3), ((5, 6), 0), ((0.0, 1.0), 0)])
    def test_examples(self, J, n):
        assert count_in_interval(self.w, J) == n

    def test_multiplicity(self):
        assert count_in_interval(np.array([1.0, 1.0, 2.0]), (0.5, 1.5)) == 2

    def test_min_gap(self):
        assert min_gap(np.array([1.0, 1.0, 2.0])) == 0.0
        assert min_gap(np.array([3.0])) == math.inf

    def test_bad_interval(self):
        with pytest.raises(ValueError):
            count_in_interval(self.w, (1.0, 0.0))


class TestResolvent:
    def test_scalar(self):
        box = make_box(1, 0, 1)
        H = assemble_hamiltonian(box, PotentialRealization(box, np.array([0.3])), 2.0)
        g = greens_element(H, 0.1, 0, 0)
        assert g.value == pytest.approx(1.0 / (0.6 - 0.1))
        assert g.distance_to_spectrum == pytest.approx(0.5)

    def test_two_site_is_own_inverse(self):
        box = make_block(1, 0, 2)
        H = free(box)
        assert greens_element(H, 0.0, 0, 1).value == pytest.approx(1.0)
        assert greens_element(H, 0.0, 0, 0).value == pytest.approx(0.0, abs=1e-15)

    def test_singular(self):
        H = free(make_box(1, 0, 3))
        with pytest.raises(ResolventSingular, match="resolvent singular") as exc:
            greens_element(H, 0.0, 0, 1)
        assert exc.value.distance < 1e-12

    @given(
        d=st.sampled_from([1, 2]),
        L=st.integers(1, 7),
        seed=st.integers(0, 2**32),
        E=st.floats(-3.0, 6.0),
    )
    @settings(max_examples=60, deadline=None)
    def test_identity_and_symmetry(self, d, L, seed, E):
        H = random_h(d, L, 3.0, seed)
        if H.size > 50:
            return
        try:
            fac = ResolventFactorization(H, E)
        except ResolventSingular:
            return
        A = H.toarray() - E * np.eye(H.size)
        G = np.column_stack([fac.column(j) for j in range(H.size)])
        for j in range(H.size):
            e = np.zeros(H.size)
            e[j] = 1.0
            assert np.linalg.norm(A @ G[:, j] - e) < 1e-10 * max(1.0, np.abs(G).max())
        np.testing.assert_allclose(G, G.T, atol=1e-10 * max(1.0, np.abs(G).max()))

    @pytest.mark.parametrize("d,L", [(1, 21), (2, 7)])
    def test_boundary_batch_matches_single(self, d, L):
        H = random_h(d, L, 5.0, seed=3)
        E = 2.345
        batch = greens_to_boundary(H, E)
        assert len(batch) == H.box.boundary.shape[0]
        inv = np.linalg.inv(H.toarray() - E * np.eye(H.size))
        for gv in batch:
            single = greens_element(H, E, gv.source, gv.target)
            assert gv.value == pytest.approx(single.value, rel=1e-12, abs=1e-300)
            ix, iy = H.box.index_of(np.array([gv.source, gv.target]))
            assert gv.value == pytest.approx(inv[ix, iy], rel=1e-9, abs=1e-14)
