import numpy as np
import pytest
from hypothesis import given, strategies as st

from eqtp.field import (CropSpec, FeatureField, crop, gaussian_smooth, lift, load_field, load_png, pad,
                        rotate_array, save_field, save_png, transform)
from eqtp.group import FieldType, GroupElement, compose, identity, inverse, regular, rep_matrix
from eqtp.verify import disk_window, smooth_field

finite = st.floats(-10, 10, allow_nan=False, width=64)


def fields(channels=st.integers(1, 3), size=st.integers(2, 12)):
    return st.builds(lambda c, s, seed: FeatureField(np.random.default_rng(seed).normal(size=(c, s, s))),
                     channels, size, st.integers(0, 2 ** 31))


def test_two_by_two_quarter_turn():
    a, b, c, d = 1.0, 2.0, 3.0, 4.0
    out = transform(FeatureField(np.array([[a, b], [c, d]])), GroupElement(4, 1)).data[0]
    assert np.array_equal(out, [[b, d], [a, c]])


@given(fields())
def test_identity_is_exact(f):
    assert np.array_equal(transform(f, identity(4)).data, f.data)
    assert np.array_equal(transform(f, identity(8)).data, f.data)


@given(fields(), st.integers(0, 3), st.sampled_from(["nearest", "bilinear"]))
def test_quarter_turn_roundtrip(f, k, interp):
    g = GroupElement(4, k)
    back = transform(transform(f, g, interp), inverse(g), interp)
    assert np.max(np.abs(back.data - f.data)) <= 1e-12


@given(fields(), st.integers(0, 3), st.integers(0, 3))
def test_quarter_turn_composition_exact(f, i, j):
    g, h = GroupElement(4, i), GroupElement(4, j)
    assert np.array_equal(transform(f, compose(g, h)).data, transform(transform(f, h), g).data)


def test_regular_field_against_composed_permutation():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(4, 8, 8))
    f = FeatureField(data, FieldType.of(regular(4)))
    P = rep_matrix(regular(4), GroupElement(4, 1))
    oracle = np.einsum("ab,bhw->ahw", P, np.rot90(data, 1, axes=(1, 2)))
    assert np.max(np.abs(transform(f, GroupElement(4, 1)).data - oracle)) <= 1e-12


@pytest.mark.parametrize("n", [8, 12])
def test_interpolated_composition_within_two_percent(n):
    mask = disk_window(48, 15, 2.4)
    errs = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        f = FeatureField(smooth_field(rng, (1, 48, 48), 6.0))
        g, h = GroupElement(n, 1), GroupElement(n, int(rng.integers(1, n)))
        a = transform(f, compose(g, h)).data * mask
        b = transform(transform(f, h), g).data * mask
        errs.append(np.linalg.norm(a - b) / np.linalg.norm(a))
    assert max(errs) <= 0.02


def test_bilinear_half_pixel_sanity():
    # a smooth ramp is reproduced by bilinear rotation away from the border
    yy, xx = np.mgrid[:21, :21].astype(float)
    ramp = xx - 10
    out = rotate_array(ramp, GroupElement(8, 1))
    c, s = np.cos(np.pi / 4), np.sin(np.pi / 4)
    # rotated ramp: value at (x, y) is x' = c x + s y with y = 10 - row
    expect = c * (xx - 10) + s * (10 - yy)
    inner = disk_window(21, 7, 0.01) > 0
    assert np.max(np.abs(out - expect)[inner]) < 1e-9


def test_lift_one_copy_is_input():
    c = FeatureField(np.random.default_rng(1).normal(size=(1, 7, 7)))
    assert np.array_equal(lift(c, 1).data, c.data)


def test_lift_one_hot_axes():
    r = 3
    img = np.zeros((1, 2 * r + 1, 2 * r + 1))
    img[0, r, 2 * r] = 1.0          # east of centre
    out = lift(FeatureField(img), 4, "nearest").data
    hot = [tuple(int(i) for i in np.argwhere(out[k])[0]) for k in range(4)]
    assert hot == [(r, 2 * r), (0, r), (r, 0), (2 * r, r)]
    assert lift(FeatureField(img), 4).fiber == FieldType.of(regular(4))


def test_lift_rejects_bad_order():
    with pytest.raises(ValueError):
        lift(FeatureField(np.zeros((1, 3, 3))), 0)


@given(st.integers(0, 2 ** 31), st.sampled_from([5, 9, 11]), st.integers(0, 3))
def test_lemma2_lift_rotation_interchange(seed, size, k):
    c = FeatureField(np.random.default_rng(seed).normal(size=(2, size, size)))
    g = GroupElement(4, k)
    lhs = lift(transform(c, g, "nearest"), 4, "nearest")
    base = lift(c, 4, "nearest")
    rhs = np.einsum("ab,bhw->ahw", base.fiber.matrix(inverse(g)), base.data)
    assert np.max(np.abs(lhs.data - rhs)) <= 1e-12


def test_crop_examples():
    rng = np.random.default_rng(2)
    f = FeatureField(rng.normal(size=(1, 9, 9)))
    assert np.array_equal(crop(f, CropSpec((4, 4), (9, 9))).data, f.data)
    assert np.all(crop(f, CropSpec((100, 100), (5, 5), pad_value=0.25)).data == 0.25)
    hot = np.zeros((1, 20, 20))
    hot[0, 3, 17] = 1
    patch = crop(FeatureField(hot), CropSpec((3, 17), (7, 7))).data
    assert patch[0, 3, 3] == 1 and patch.sum() == 1


def test_crop_rejects_empty():
    with pytest.raises(ValueError):
        CropSpec((0, 0), (0, 3))


def test_pad_examples():
    f = FeatureField(np.random.default_rng(3).normal(size=(1, 5, 5)))
    assert pad(f, 0) is f
    hot = np.zeros((1, 5, 5))
    hot[0, 2, 2] = 1
    p = pad(FeatureField(hot), 3)
    assert p.shape == (1, 11, 11) and p.data[0, 5, 5] == 1
    assert p.origin == (5.0, 5.0)
    with pytest.raises(ValueError):
        pad(f, -1)


def test_field_invariants():
    with pytest.raises(ValueError):
        FeatureField(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        FeatureField(np.zeros((3, 4, 4)), FieldType.of(regular(4)))


def test_png_and_tensor_roundtrip(tmp_path):
    rng = np.random.default_rng(4)
    img = rng.integers(0, 256, size=(16, 16)) / 255.0
    save_png(tmp_path / "a.png", img)
    assert np.array_equal(load_png(tmp_path / "a.png"), img)
    img16 = rng.integers(0, 65536, size=(8, 8)) / 65535.0
    save_png(tmp_path / "b.png", img16, bits=16)
    assert np.allclose(load_png(tmp_path / "b.png"), img16, atol=1e-12)
    f = FeatureField(rng.normal(size=(2, 5, 6)).astype(np.float32))
    save_field(tmp_path / "f.eqtf", f)
    assert np.array_equal(load_field(tmp_path / "f.eqtf").data, f.data)


def test_gaussian_smooth_preserves_shape():
    a = np.random.default_rng(5).normal(size=(2, 3, 16, 16))
    s = gaussian_smooth(a, 2.0)
    assert s.shape == a.shape and s.std() < a.std()
