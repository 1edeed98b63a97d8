import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqtp.field import FeatureField, transform
from eqtp.group import FieldType, GroupElement, elements, irrep, quotient, regular, so2, trivial
from eqtp.kernels import (HarmonicKernelGenerator, KernelError, SteerableKernel, check_steerability,
                          correlate_arrays, cross_correlate, kernel_basis, lemma4_check, load_kernel,
                          project_kernel, save_kernel)
from eqtp.verify import lemma1_residual, lemma3_residual, prop3_residual

REPS = st.sampled_from(["trivial", "regular", "irrep1", "quotient2"])


def make_rep(kind, n):
    return {"trivial": trivial(n), "regular": regular(n), "irrep1": irrep(n, 1), "quotient2": quotient(n, 2)}[kind]


def loop_correlate(x, w, pad):
    B, C, H, W = x.shape
    O, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho, Wo = H + 2 * pad - k + 1, W + 2 * pad - k + 1
    out = np.zeros((B, O, Ho, Wo))
    for i in range(Ho):
        for j in range(Wo):
            out[:, :, i, j] = np.einsum("bcuv,ocuv->bo", xp[:, :, i:i + k, j:j + k], w)
    return out


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 3, 5]), st.sampled_from(["same", "valid"]))
def test_correlate_matches_literal_sum(seed, k, padding):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 9, 8))
    w = rng.normal(size=(4, 3, k, k))
    ref = loop_correlate(x, w, k // 2 if padding == "same" else 0)
    assert np.max(np.abs(correlate_arrays(x, w, padding) - ref)) <= 1e-12


def test_identity_kernel():
    f = FeatureField(np.random.default_rng(0).normal(size=(1, 6, 6)))
    assert np.array_equal(cross_correlate(np.ones((1, 1)), f).data, f.data)


def test_channel_mismatch():
    with pytest.raises(KernelError):
        cross_correlate(np.ones((1, 2, 3, 3)), FeatureField(np.zeros((1, 5, 5))))


def test_corner_one_hot_isotropized():
    raw = np.zeros((1, 1, 3, 3))
    raw[0, 0, 0, 0] = 1.0
    K = project_kernel(raw, trivial(4), trivial(4), 4).weights[0, 0]
    expect = np.zeros((3, 3))
    expect[[0, 0, 2, 2], [0, 2, 0, 2]] = 0.25
    assert np.max(np.abs(K - expect)) <= 1e-15


def test_trivial_to_regular_blocks_are_rotations():
    raw = np.random.default_rng(1).normal(size=(4, 1, 5, 5))
    K = project_kernel(raw, trivial(4), regular(4), 4).weights
    for i in range(4):
        assert np.max(np.abs(K[i] - np.rot90(K[0], i, axes=(1, 2)))) <= 1e-12


@given(st.integers(0, 2 ** 31), REPS, REPS, st.sampled_from([4, 6, 8, 12]), st.sampled_from([1, 3, 5]))
def test_projection_idempotent_and_steerable(seed, a, b, n, k):
    rin, rout = make_rep(a, n), make_rep(b, n)
    raw = np.random.default_rng(seed).normal(size=(rout.dim, rin.dim, k, k))
    K = project_kernel(raw, rin, rout, n)
    assert np.max(np.abs(project_kernel(K.weights, rin, rout, n).weights - K.weights)) <= 1e-12
    for g in elements(n):
        assert check_steerability(K, g) <= 1e-10


def test_projection_is_linear():
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(2, 4, 4, 3, 3))
    P = lambda w: project_kernel(w, regular(4), regular(4), 4).weights
    assert np.max(np.abs(P(2 * a - b) - (2 * P(a) - P(b)))) <= 1e-12


def test_projection_dim_mismatch():
    with pytest.raises(KernelError):
        project_kernel(np.zeros((3, 1, 3, 3)), trivial(4), regular(4), 4)
    with pytest.raises(KernelError):
        project_kernel(np.zeros((4, 1, 4, 4)), trivial(4), regular(4), 4)


def test_isotropic_kernel_is_steerable():
    yy, xx = np.mgrid[-2:3, -2:3]
    w = np.exp(-(xx ** 2 + yy ** 2))[None, None]
    K = SteerableKernel(w, FieldType.of(trivial(4)), FieldType.of(trivial(4)), 4)
    assert all(check_steerability(K, g) == 0 for g in elements(4))
    assert all(lemma4_check(K, g) == 0 for g in elements(4))


def test_unprojected_kernels_fail_the_check():
    rng = np.random.default_rng(3)
    res = [max(check_steerability(SteerableKernel(rng.normal(size=(4, 1, 3, 3)), FieldType.of(trivial(4)),
                                                  FieldType.of(regular(4)), 4), g) for g in elements(4))
           for _ in range(100)]
    assert np.median(res) > 0.1


@given(st.integers(0, 2 ** 31), st.sampled_from(["regular", "irrep1", "quotient2"]), st.integers(0, 3))
def test_lemma4_exact(seed, kind, k):
    rout = make_rep(kind, 4)
    K = project_kernel(np.random.default_rng(seed).normal(size=(rout.dim, 1, 5, 5)), trivial(4), rout, 4)
    assert lemma4_check(K, GroupElement(4, k)) <= 1e-10
    assert lemma4_check(K, GroupElement(4, 0)) == 0


def test_lemma4_rejects_nontrivial_input():
    K = project_kernel(np.zeros((4, 4, 3, 3)), regular(4), regular(4), 4)
    with pytest.raises(KernelError):
        lemma4_check(K, GroupElement(4, 1))


@pytest.mark.parametrize("n", [4, 6, 8])
def test_analytic_basis(n):
    basis = kernel_basis(trivial(n), regular(n), n, 5)
    G = basis.gram()
    assert np.linalg.matrix_rank(G) == len(basis) > 0
    for K in basis.elements:
        for g in elements(n):
            assert lemma4_check(K, g) <= 1e-6
            assert check_steerability(K, g) <= 1e-6
    K = basis.combine(np.random.default_rng(n).normal(size=len(basis)))
    assert max(check_steerability(K, g) for g in elements(n)) <= 1e-6


def test_analytic_so2_basis_steerable_at_any_angle():
    basis = kernel_basis(trivial(0), irrep(0, 2), 0, 7)
    for K in basis.elements:
        for a in (0.3, 1.1, 2.9):
            assert check_steerability(K, so2(a)) <= 1e-6


def test_equivariant_layer_exact():
    rng = np.random.default_rng(4)
    ft = FieldType.of(regular(4), 2)
    K = project_kernel(rng.normal(size=(8, 8, 3, 3)), ft, ft, 4)
    f = FeatureField(rng.normal(size=(8, 12, 12)), ft)
    out = cross_correlate(K, f)
    for g in elements(4):
        assert np.max(np.abs(cross_correlate(K, transform(f, g)).data - transform(out, g).data)) <= 1e-10


def test_bilinearity():
    rng = np.random.default_rng(5)
    K1, K2 = rng.normal(size=(2, 2, 1, 3, 3))
    f1, f2 = rng.normal(size=(2, 1, 7, 7))
    F = lambda K, f: cross_correlate(K, FeatureField(f)).data
    assert np.max(np.abs(F(3 * K1 - K2, f1) - 3 * F(K1, f1) + F(K2, f1))) <= 1e-12
    assert np.max(np.abs(F(K1, 3 * f1 - f2) - 3 * F(K1, f1) + F(K1, f2))) <= 1e-12


def test_lemma1_and_lemma3():
    assert lemma1_residual(pairs=10) <= 1e-10
    assert lemma3_residual(pairs=10) <= 1e-10


def test_harmonic_coefficients_pick_up_a_phase():
    gen = HarmonicKernelGenerator()
    c = np.random.default_rng(6).normal(size=(15, 15))
    z = gen.coefficients(c)
    m = np.array(gen.frequencies)[:, None]
    for k in range(4):
        zr = gen.coefficients(np.rot90(c, k))
        assert np.max(np.abs(zr - z * np.exp(-1j * m * k * np.pi / 2))) <= 1e-10


def test_generated_kernel_is_steerable():
    gen = HarmonicKernelGenerator()
    K = gen(np.random.default_rng(7).normal(size=(15, 15)))
    assert K.rep_out.dim == 9 and K.weights.shape == (9, 1, 15, 15)
    for k in range(4):
        assert check_steerability(K, so2(k * np.pi / 2)) <= 1e-10


def test_proposition3_small():
    assert prop3_residual(angles=2) <= 0.05


def test_kernel_serialization(tmp_path):
    K = project_kernel(np.random.default_rng(8).normal(size=(4, 1, 3, 3)), trivial(4), regular(4), 4)
    save_kernel(tmp_path / "k.eqtf", K)
    L = load_kernel(tmp_path / "k.eqtf")
    assert np.array_equal(L.weights, K.weights.astype(np.float32))
    assert L.rep_in == K.rep_in and L.rep_out == K.rep_out and L.group_order == 4
