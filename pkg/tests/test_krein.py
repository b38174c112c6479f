import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.krein import (
    AdmissibilityError,
    AdmissibleInvolution,
    ComplementarityError,
    KreinSpace,
    SingularBlockError,
    Subspace,
    admissibility_report,
    analyze_pair,
    bogoliubov_blocks,
    check_admissible,
    classify_subspace,
    q_complement,
    verify_pseudo_unitary,
)
from artifact.sampling import (
    random_admissible_involution,
    random_krein_space,
    random_q_unitary,
)

Q_FLIP = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)


def single_mode(omega: float):
    space = KreinSpace(2, Q_FLIP)
    b = np.array([[0.0, 1.0], [omega**2, 0.0]], dtype=complex)
    return space, check_admissible(space, b / omega)


class TestAdmissibility:
    def test_single_mode_metric(self):
        """The compatible metric of the frequency involution is diag(omega, 1/omega)."""
        space, inv = single_mode(2.0)
        assert np.allclose(inv.g, np.diag([2.0, 0.5]), atol=1e-13)
        assert np.allclose(inv.pi_plus + inv.pi_minus, np.eye(2), atol=1e-14)
        assert np.allclose(inv.pi_plus @ inv.pi_minus, 0.0, atol=1e-14)
        assert inv.k_plus == 1 and inv.k_minus == 1

    def test_plus_basis_is_metric_normalized(self):
        space, inv = single_mode(2.0)
        v = inv.basis_plus[:, 0]
        assert abs(v.conj() @ inv.g @ v - 1.0) < 1e-13
        # spans the (1, omega) direction
        assert abs(v[1] / v[0] - 2.0) < 1e-13

    def test_report_flags_non_involution(self):
        space = KreinSpace(2, Q_FLIP)
        rep = admissibility_report(space, 0.5 * np.eye(2))
        assert rep["involution"] > 0.5
        with pytest.raises(AdmissibilityError, match="involution"):
            check_admissible(space, 0.5 * np.eye(2))

    def test_report_flags_non_hermitian_metric(self):
        space = KreinSpace(2, np.diag([1.0, -1.0]).astype(complex))
        s = np.array([[1.0, 1.0], [0.0, -1.0]], dtype=complex)
        assert np.allclose(s @ s, np.eye(2))
        with pytest.raises(AdmissibilityError, match="metric_hermitian"):
            check_admissible(space, s)

    def test_report_flags_indefinite_metric(self):
        space = KreinSpace(2, np.diag([1.0, -1.0]).astype(complex))
        with pytest.raises(AdmissibilityError, match="metric_positive"):
            check_admissible(space, np.diag([-1.0, 1.0]).astype(complex))

    def test_space_rejects_singular_form(self):
        with pytest.raises(ValueError):
            KreinSpace(2, np.diag([1.0, 0.0]).astype(complex))


class TestSubspaces:
    def test_q_complement_of_null_line_is_itself(self):
        space = KreinSpace(2, Q_FLIP)
        line = Subspace.from_columns(np.array([[1.0], [0.0]], dtype=complex))
        comp = q_complement(space, line)
        assert comp.dim == 1
        assert abs(abs(comp.basis[0, 0]) - 1.0) < 1e-13
        again = q_complement(space, comp)
        assert np.allclose(np.abs(again.basis), np.abs(line.basis), atol=1e-13)

    def test_classify_frequency_halves(self):
        space, inv = single_mode(2.0)
        up = classify_subspace(space, Subspace.from_columns(inv.basis_plus))
        down = classify_subspace(space, Subspace.from_columns(inv.basis_minus))
        assert up.label == "m-positive"
        assert down.label == "m-negative"
        assert not up.degenerate and not down.degenerate

    def test_classify_null_line_is_degenerate(self):
        space = KreinSpace(2, Q_FLIP)
        line = Subspace.from_columns(np.array([[1.0], [0.0]], dtype=complex))
        out = classify_subspace(space, line)
        assert out.degenerate

    def test_classify_non_maximal_positive(self):
        q = np.diag([1.0, 1.0, -1.0, -1.0]).astype(complex)
        space = KreinSpace(4, q)
        cols = np.zeros((4, 1), dtype=complex)
        cols[0, 0] = 1.0
        out = classify_subspace(space, Subspace.from_columns(cols))
        assert out.label == "positive-not-maximal"


class TestPairCalculus:
    def test_sudden_frequency_change_parameter(self):
        """Frequency jump 1 -> 3 gives |c| = (3-1)/(3+1) = 1/2 exactly."""
        space, inv1 = single_mode(1.0)
        _, inv2 = single_mode(3.0)
        pair = analyze_pair(space, inv1, inv2)
        assert abs(pair.c_norm - 0.5) < 1e-12
        assert max(pair.residuals.values()) < 1e-12

    def test_anti_commuting_pair_rejected(self):
        # -S is not admissible, so assemble its involution data by hand;
        # the pair analysis must still refuse it on complementarity grounds
        space, inv = single_mode(2.0)
        neg = AdmissibleInvolution(
            space=space, s=-inv.s, pi_plus=inv.pi_minus, pi_minus=inv.pi_plus,
            g=-inv.g, basis_plus=inv.basis_minus, basis_minus=inv.basis_plus,
        )
        with pytest.raises(ComplementarityError):
            analyze_pair(space, inv, neg)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**9), st.sampled_from([2, 4, 8]))
    def test_random_pair_invariants(self, seed, dim):
        rng = np.random.default_rng(seed)
        space = random_krein_space(rng, dim)
        inv1 = random_admissible_involution(rng, space)
        inv2 = random_admissible_involution(rng, space)
        pair = analyze_pair(space, inv1, inv2)
        worst = max(pair.residuals.values())
        assert worst < 1e-9, f"worst pair residual {worst:.3e}"
        assert pair.c_norm < 1.0

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**9), st.sampled_from([2, 4, 8]))
    def test_random_map_preserves_structure(self, seed, dim):
        rng = np.random.default_rng(seed)
        space = random_krein_space(rng, dim)
        inv1 = random_admissible_involution(rng, space)
        inv2 = random_admissible_involution(rng, space)
        r = random_q_unitary(rng, space)
        rep = verify_pseudo_unitary(space, r, inv1, inv2)
        worst = max(rep.values())
        assert worst < 1e-9, f"worst map residual {worst:.3e}"

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10**9), st.sampled_from([2, 4, 8]))
    def test_random_block_normal_form(self, seed, dim):
        rng = np.random.default_rng(seed)
        space = random_krein_space(rng, dim)
        inv1 = random_admissible_involution(rng, space)
        inv2 = random_admissible_involution(rng, space)
        r = random_q_unitary(rng, space)
        blocks = bogoliubov_blocks(space, r, inv1, inv2)
        assert blocks.c_discrepancy < 1e-9
        assert blocks.d_discrepancy < 1e-9
        assert blocks.factorization_residual < 1e-9
        assert max(blocks.residuals.values()) < 1e-9
        # both off-diagonal parameters are strict contractions
        assert np.linalg.norm(blocks.c, 2) < 1.0
        assert np.linalg.norm(blocks.d, 2) < 1.0

    def test_identity_map_blocks(self):
        space, inv1 = single_mode(1.0)
        _, inv2 = single_mode(3.0)
        blocks = bogoliubov_blocks(space, np.eye(2, dtype=complex), inv1, inv2)
        # the identity map between the two frequency splittings carries the pair's c
        assert abs(np.linalg.norm(blocks.c, 2) - 0.5) < 1e-12

    def test_degenerate_block_rejected(self):
        space, inv = single_mode(2.0)
        # exchange matrix maps each frequency half onto the other
        swap = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex)
        with pytest.raises(SingularBlockError):
            bogoliubov_blocks(space, swap, inv, inv)


class TestTransportedInvolution:
    def test_conjugated_involution_stays_admissible(self):
        space, inv = single_mode(2.0)
        rng = np.random.default_rng(5)
        r = random_q_unitary(rng, space)
        moved = check_admissible(space, r @ inv.s @ np.linalg.inv(r))
        assert isinstance(moved, AdmissibleInvolution)
        rep = verify_pseudo_unitary(space, r, inv, moved)
        assert max(rep.values()) < 1e-10
