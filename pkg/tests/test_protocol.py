import numpy as np
import pytest
from math import exp, pi

from dmcv_keyrate.channel import ChannelModel, SimulatedMoments, homodyne_statistics, heterodyne_region_probs
from dmcv_keyrate.channel import simulated_joint_state, simulated_moments
from dmcv_keyrate.entropy import relative_entropy
from dmcv_keyrate.fock_ops import FockDim, coherent_fock_vector
from dmcv_keyrate.protocol import (
    HETERODYNE,
    HOMODYNE,
    ProtocolSpec,
    alice_reduced_state,
    apply_G,
    apply_G_adjoint,
    apply_Z,
    build_constraints,
    key_blocks,
    kraus_heterodyne,
    kraus_homodyne,
    postprocessing_maps,
)
from helpers import partial_trace_b, random_density, random_hermitian

D10 = FockDim(10)


class TestProtocolSpec:
    def test_default_constellations(self):
        hom = ProtocolSpec(HOMODYNE, 0.5)
        het = ProtocolSpec(HETERODYNE, 0.5)
        np.testing.assert_allclose(hom.amplitudes, [0.5, -0.5, 0.5j, -0.5j])
        np.testing.assert_allclose(het.amplitudes, [0.5, 0.5j, -0.5, -0.5j])
        np.testing.assert_allclose(hom.probs, 0.25)
        assert hom.key_states == (0, 1)
        assert het.key_states == (0, 1, 2, 3)

    @pytest.mark.parametrize("kwargs", [
        dict(detection="direct", alpha=0.4),
        dict(detection=HOMODYNE, alpha=0.0),
        dict(detection=HOMODYNE, alpha=0.4, probabilities=(0.5, 0.5, 0.1, -0.1)),
        dict(detection=HOMODYNE, alpha=0.4, probabilities=(0.3, 0.3, 0.3, 0.3)),
        dict(detection=HOMODYNE, alpha=0.4, delta_c=-1.0),
        dict(detection=HETERODYNE, alpha=0.4, delta_p=1.0),
        dict(detection=HOMODYNE, alpha=0.4, beta=0.0),
        dict(detection=HOMODYNE, alpha=0.4, probabilities=(0.5, 0.5)),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ProtocolSpec(**kwargs)


class TestAliceState:
    def test_identical_states_limit(self):
        rho = alice_reduced_state(ProtocolSpec(HOMODYNE, 1e-9))
        np.testing.assert_allclose(rho, np.full((4, 4), 0.25), atol=1e-12)
        w = np.linalg.eigvalsh(rho)
        assert w[-1] == pytest.approx(1.0, abs=1e-12)

    def test_overlap_value(self):
        rho = alice_reduced_state(ProtocolSpec(HOMODYNE, 0.4))
        assert (4 * rho[0, 1]).real == pytest.approx(exp(-0.32), abs=1e-14)
        assert (4 * rho[0, 1]).real == pytest.approx(0.72615, abs=1e-5)

    def test_fock_series_crosscheck(self):
        spec = ProtocolSpec(HETERODYNE, 0.8)
        vecs = [coherent_fock_vector(a, FockDim(40)) for a in spec.amplitudes]
        gram = np.array([[np.vdot(vj, vi) for vj in vecs] for vi in vecs])
        np.testing.assert_allclose(alice_reduced_state(spec), gram / 4, atol=1e-14)

    @pytest.mark.parametrize("alpha", [0.1, 0.4, 1.0, 2.0])
    def test_density(self, alpha):
        rho = alice_reduced_state(ProtocolSpec(HOMODYNE, alpha))
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-14)
        assert np.linalg.eigvalsh(rho).min() >= -1e-12


class TestConstraints:
    def setup_method(self):
        self.spec = ProtocolSpec(HOMODYNE, 0.4)
        self.ch = ChannelModel.from_distance(20, 0.01)
        self.cs = build_constraints(self.spec, simulated_moments(self.ch, self.spec), D10)

    def test_count(self):
        assert len(self.cs) == 33
        assert self.cs.labels[0] == "trace"

    def test_imaginary_displacement_q_target(self):
        idx = self.cs.labels.index("q[2]")
        assert self.spec.constellation[2] == 0.4j
        assert self.cs.targets[idx] == 0.0

    def test_all_hermitian(self):
        for g in self.cs.observables:
            np.testing.assert_allclose(g, g.conj().T, atol=0)

    def test_missing_moment(self):
        m = simulated_moments(self.ch, self.spec)
        broken = SimulatedMoments(m.q[:3], m.p, m.n, m.d)
        with pytest.raises(ValueError):
            build_constraints(self.spec, broken, D10)
        nan = SimulatedMoments(m.q, m.p, np.array([np.nan, 0, 0, 0]), m.d)
        with pytest.raises(ValueError):
            build_constraints(self.spec, nan, D10)

    def test_simulated_state_satisfies(self):
        rho = simulated_joint_state(self.ch, self.spec, D10)
        assert np.max(np.abs(self.cs.residuals(rho))) < 1e-8

    def test_partial_trace_block_matches(self):
        rho = random_density(44, np.random.default_rng(3))
        ra = partial_trace_b(rho, 4, 11)
        res = self.cs.residuals(rho)
        for i, lab in enumerate(self.cs.labels):
            if lab.startswith("rhoA:") and len(lab) == 7 and lab[5] == lab[6]:
                k = int(lab[5])
                assert res[i] + self.cs.targets[i] == pytest.approx(ra[k, k].real, abs=1e-14)


class TestKrausHomodyne:
    def test_trace_on_product_state(self):
        spec = ProtocolSpec(HOMODYNE, 0.4)
        maps = kraus_homodyne(spec, D10)
        vac = np.zeros((11, 11))
        vac[0, 0] = 1.0
        rho = np.kron(alice_reduced_state(spec), vac)
        assert np.trace(apply_G(maps, rho)).real == pytest.approx(0.5, abs=1e-12)
        assert maps.key_weight == 0.5
        assert maps.key_dim == 2

    def test_contraction(self):
        maps = kraus_homodyne(ProtocolSpec(HOMODYNE, 0.4, delta_c=0.6), D10)
        kk = maps.kraus.conj().T @ maps.kraus
        assert np.linalg.eigvalsh(kk).max() <= 1 + 1e-12

    def test_far_threshold(self):
        maps = kraus_homodyne(ProtocolSpec(HOMODYNE, 0.4, delta_c=100.0), D10)
        assert np.abs(maps.kraus).max() == 0.0
        rho = random_density(44, np.random.default_rng(0))
        assert np.abs(apply_G(maps, rho)).max() == 0.0

    def test_wrong_detection(self):
        with pytest.raises(ValueError):
            kraus_homodyne(ProtocolSpec(HETERODYNE, 0.4), D10)


class TestKrausHeterodyne:
    def test_isometry_without_postselection(self):
        maps = kraus_heterodyne(ProtocolSpec(HETERODYNE, 0.7), D10)
        np.testing.assert_allclose(maps.kraus.conj().T @ maps.kraus, np.eye(44), atol=1e-10)
        assert maps.key_dim == 4

    def test_empty_windows(self):
        maps = kraus_heterodyne(ProtocolSpec(HETERODYNE, 0.7, delta_p=pi / 4), D10)
        assert np.abs(maps.kraus).max() < 1e-7

    def test_trace_range(self):
        maps = kraus_heterodyne(ProtocolSpec(HETERODYNE, 0.7, delta_a=0.5, delta_p=0.1), D10)
        rng = np.random.default_rng(1)
        for _ in range(5):
            t = np.trace(apply_G(maps, random_density(44, rng))).real
            assert 0.0 <= t <= 1.0

    def test_general_constellation_rejected(self):
        spec = ProtocolSpec(HETERODYNE, 0.7, constellation=(0.7, -0.7), probabilities=(0.5, 0.5))
        with pytest.raises(NotImplementedError):
            postprocessing_maps(spec, D10)


class TestMaps:
    def setup_method(self):
        self.maps = kraus_heterodyne(ProtocolSpec(HETERODYNE, 0.7, delta_a=0.3), FockDim(4))
        self.rng = np.random.default_rng(7)

    def test_pinching(self):
        sigma = random_density(self.maps.output_dim, self.rng)
        z = apply_Z(self.maps, sigma)
        np.testing.assert_allclose(apply_Z(self.maps, z), z)
        assert np.trace(z).real == pytest.approx(np.trace(sigma).real, abs=1e-14)
        b = self.maps.block_dim
        for i in range(4):
            for j in range(4):
                if i != j:
                    assert not z[i * b:(i + 1) * b, j * b:(j + 1) * b].any()

    def test_projectors(self):
        proj = self.maps.projectors()
        np.testing.assert_allclose(sum(proj), np.eye(self.maps.output_dim))
        for i, p in enumerate(proj):
            for j, q in enumerate(proj):
                np.testing.assert_allclose(p @ q, p if i == j else 0 * p)
        sigma = random_density(self.maps.output_dim, self.rng)
        np.testing.assert_allclose(sum(p @ sigma @ p for p in proj), apply_Z(self.maps, sigma), atol=1e-15)

    def test_pinching_preserves_trace_of_G(self):
        rho = random_density(self.maps.input_dim, self.rng)
        g = apply_G(self.maps, rho)
        assert np.trace(apply_Z(self.maps, g)).real == pytest.approx(np.trace(g).real, abs=1e-14)

    def test_adjoint(self):
        rho = random_density(self.maps.input_dim, self.rng)
        x = random_hermitian(self.maps.output_dim, self.rng)
        lhs = np.vdot(x, apply_G(self.maps, rho))
        rhs = np.vdot(apply_G_adjoint(self.maps, x), rho)
        assert lhs == pytest.approx(rhs, abs=1e-12)

    def test_key_blocks(self):
        sigma = random_density(self.maps.output_dim, self.rng)
        blocks = key_blocks(self.maps, sigma)
        assert len(blocks) == 4
        assert sum(np.trace(b).real for b in blocks) == pytest.approx(1.0, abs=1e-14)


class TestPassProbabilityConsistency:
    def test_homodyne(self):
        spec = ProtocolSpec(HOMODYNE, 0.45, delta_c=0.6)
        ch = ChannelModel.from_distance(20, 0.02)
        rho = simulated_joint_state(ch, spec, D10)
        maps = postprocessing_maps(spec, D10)
        tr = np.trace(apply_G(maps, rho)).real
        assert tr == pytest.approx(maps.key_weight * homodyne_statistics(ch, spec).p_pass, abs=1e-6)

    def test_heterodyne(self):
        spec = ProtocolSpec(HETERODYNE, 0.6, delta_a=0.6)
        ch = ChannelModel.from_distance(20, 0.04)
        rho = simulated_joint_state(ch, spec, D10)
        maps = postprocessing_maps(spec, D10)
        tr = np.trace(apply_G(maps, rho)).real
        p_pass = heterodyne_region_probs(ch, spec).sum(axis=0) @ spec.probs
        assert tr == pytest.approx(p_pass, abs=1e-6)


class TestRelativeEntropyKernel:
    def test_nonnegative_and_zero_for_block_diagonal(self):
        maps = kraus_heterodyne(ProtocolSpec(HETERODYNE, 0.7), FockDim(3))
        rng = np.random.default_rng(11)
        rho = random_density(maps.input_dim, rng)
        g = apply_G(maps, rho)
        assert relative_entropy(g, apply_Z(maps, g)) >= 0
        blockdiag = apply_Z(maps, g)
        assert relative_entropy(blockdiag, apply_Z(maps, blockdiag)) == pytest.approx(0.0, abs=1e-12)

    def test_quantum_classical_decomposition(self):
        # D(sum p_j |j><j| x r_j || sum q_j |j><j| x s_j) = sum p_j D(r_j||s_j) + D(p||q)
        rng = np.random.default_rng(5)
        k, n = 4, 5
        p = rng.dirichlet(np.ones(k))
        q = rng.dirichlet(np.ones(k))
        rs = [random_density(n, rng) for _ in range(k)]
        ss = [random_density(n, rng) for _ in range(k)]

        def blockdiag(w, mats):
            out = np.zeros((k * n, k * n), dtype=complex)
            for j in range(k):
                out[j * n:(j + 1) * n, j * n:(j + 1) * n] = w[j] * mats[j]
            return out

        lhs = relative_entropy(blockdiag(p, rs), blockdiag(q, ss))
        rhs = sum(p[j] * relative_entropy(rs[j], ss[j]) for j in range(k)) + float(np.sum(p * np.log2(p / q)))
        assert lhs == pytest.approx(rhs, abs=1e-9)

    def test_support_mismatch_is_infinite(self):
        assert relative_entropy(np.diag([0.5, 0.5]), np.diag([1.0, 0.0])) == float("inf")
