import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gahqs import kspace
from gahqs.kspace import ForwardOperator, make_mask


def rand_image(rng, h, w):
    return rng.standard_normal((h, w)) + 1j * rng.standard_normal((h, w))


def dense_centered_dft(h, w):
    """Centered orthonormal 2-D DFT as an explicit HW x HW matrix."""
    def dft1(n):
        k = np.arange(n) - n // 2
        return np.exp(-2j * np.pi * np.outer(k, k) / n) / np.sqrt(n)

    return np.kron(dft1(h), dft1(w))


# ---------------------------------------------------------------- masks


def test_equispaced_keeps_every_fourth_column():
    m = make_mask("equispaced_fraction", 16, 16, 4, seed=0, acs_lines=0)
    cols = np.nonzero(m.pattern.any(axis=0))[0]
    assert cols.tolist() == [0, 4, 8, 12]
    assert m.fraction == 0.25


def test_cartesian_random_256_fraction():
    m = make_mask("cartesian_random", 256, 256, 4, seed=7, acs_lines=16)
    assert 0.225 <= m.fraction <= 0.275
    center = m.pattern[0, 128 - 8:128 + 8]
    assert center.all()


def _oracle_radial_lines(h, w, target):
    """Count spokes by enumerating covered pixels in pure Python."""
    cy, cx = h // 2, w // 2

    def rnd(v):
        return int(np.floor(abs(v) + 0.5)) * (1 if v > 0 else -1 if v < 0 else 0)

    n = 0
    while True:
        n += 1
        covered = set()
        for a in range(n):
            theta = a * np.pi / n
            c, s = np.cos(theta), np.sin(theta)
            for t in range(-max(h, w), max(h, w) + 1):
                if abs(c) >= abs(s):
                    p = (cy + rnd(t * s / c), cx + t)
                else:
                    p = (cy + t, cx + rnd(t * c / s))
                if 0 <= p[0] < h and 0 <= p[1] < w:
                    covered.add(p)
        if len(covered) / (h * w) >= target:
            return n, len(covered)


def test_radial_line_count_matches_enumeration():
    m = make_mask("radial", 64, 64, 8, seed=1, acs_lines=0)
    n, count = _oracle_radial_lines(64, 64, 1 / 8)
    assert m.pattern.sum() == count
    assert np.array_equal(m.pattern, kspace.radial_pattern(n, 64, 64))


def test_radial_lines_pass_through_center_symmetrically():
    m = make_mask("radial", 64, 64, 4)
    p = m.pattern
    assert p[32, 32]
    # point symmetry about the center pixel (excluding the unpaired first row/col)
    inner = p[1:, 1:]
    assert np.array_equal(inner, inner[::-1, ::-1])


@pytest.mark.parametrize("kind", kspace.MASK_KINDS)
@pytest.mark.parametrize("size", [32, 64, 128])
@pytest.mark.parametrize("accel", [2, 4, 8])
def test_mask_invariants(kind, size, accel):
    m = make_mask(kind, size, size, accel, seed=3)
    assert 0.9 / accel <= m.fraction <= 1.1 / accel
    again = make_mask(kind, size, size, accel, seed=3)
    assert again.pattern.tobytes() == m.pattern.tobytes()
    if kind != "radial":
        assert (m.pattern == m.pattern[:1]).all()


def test_mask_errors():
    with pytest.raises(ValueError, match="unsupported"):
        make_mask("spiral", 32, 32, 4)
    with pytest.raises(ValueError, match="acceleration"):
        make_mask("radial", 32, 32, 3)
    with pytest.raises(ValueError, match="acs_lines"):
        make_mask("cartesian_random", 32, 32, 4, acs_lines=8)
    with pytest.raises(ValueError, match="budget"):
        make_mask("cartesian_random", 256, 256, 16, acs_lines=40)


def test_random_masks_depend_on_seed():
    a = make_mask("cartesian_random", 128, 128, 4, seed=0)
    b = make_mask("cartesian_random", 128, 128, 4, seed=1)
    assert not np.array_equal(a.pattern, b.pattern)


# ---------------------------------------------------------------- operators


def test_forward_zero_and_impulse():
    ones = kspace.UndersamplingMask(np.ones((16, 16), bool), "full", 1, 0, 0)
    op = ForwardOperator(ones)
    assert np.all(op.forward(np.zeros((16, 16), complex)) == 0)
    x = np.zeros((16, 16), complex)
    x[0, 0] = 1.0
    np.testing.assert_allclose(np.abs(op.forward(x)), 1 / 16, rtol=1e-12)


def test_forward_matches_dense_dft():
    rng = np.random.default_rng(0)
    mask = make_mask("cartesian_random", 16, 16, 4, seed=2, acs_lines=2)
    x = rand_image(rng, 16, 16)
    dense = (dense_centered_dft(16, 16) @ x.ravel()).reshape(16, 16) * mask.pattern
    np.testing.assert_allclose(kspace.forward(ForwardOperator(mask), x), dense, atol=1e-8)


def test_forward_is_zero_off_support():
    rng = np.random.default_rng(1)
    mask = make_mask("radial", 32, 32, 4)
    y = ForwardOperator(mask).forward(rand_image(rng, 32, 32))
    assert np.all(y[~mask.pattern] == 0)


def test_adjoint_full_mask_inverts_forward():
    rng = np.random.default_rng(2)
    ones = np.ones((16, 16), bool)
    x = rand_image(rng, 16, 16)
    back = kspace.apply_adjoint(kspace.apply_forward(x, ones), ones)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-6
    assert np.all(kspace.apply_adjoint(np.zeros((16, 16), complex), ones) == 0)


def test_adjointness_identity():
    rng = np.random.default_rng(3)
    mask = make_mask("equispaced_fraction", 16, 16, 4)
    op = ForwardOperator(mask)
    for _ in range(20):
        x, y = rand_image(rng, 16, 16), rand_image(rng, 16, 16)
        lhs = np.vdot(y, op.forward(x))
        rhs = np.vdot(op.adjoint(y), x)
        assert abs(lhs - rhs) <= 1e-6 * abs(lhs)


def test_idempotent_on_support():
    rng = np.random.default_rng(4)
    mask = make_mask("radial", 32, 32, 4)
    op = ForwardOperator(mask)
    y = op.forward(rand_image(rng, 32, 32))
    np.testing.assert_allclose(op.forward(op.adjoint(y)), y, atol=1e-12)


def test_dimension_mismatch():
    op = ForwardOperator(make_mask("radial", 32, 32, 4))
    with pytest.raises(ValueError, match="does not match"):
        op.forward(np.zeros((16, 16), complex))
    with pytest.raises(ValueError, match="does not match"):
        op.adjoint(np.zeros((16, 32), complex))


def test_torch_and_numpy_agree():
    rng = np.random.default_rng(5)
    mask = make_mask("cartesian_random", 32, 32, 4, seed=1)
    x = rand_image(rng, 32, 32)
    np.testing.assert_allclose(
        kspace.apply_forward(torch.as_tensor(x), mask).numpy(), kspace.apply_forward(x, mask), atol=1e-12
    )


def test_check_image():
    kspace.check_image(np.zeros((8, 8), complex))
    with pytest.raises(ValueError):
        kspace.check_image(np.zeros((4, 8)))
    bad = np.zeros((8, 8), complex)
    bad[0, 0] = np.nan
    with pytest.raises(ValueError, match="non-finite"):
        kspace.check_image(bad)


# ---------------------------------------------------------------- data consistency


def test_dc_eta_zero_is_identity():
    rng = np.random.default_rng(6)
    mask = make_mask("radial", 16, 16, 4)
    z = rand_image(rng, 16, 16)
    y = kspace.apply_forward(rand_image(rng, 16, 16), mask)
    out = kspace.data_consistency(z, y, 0.0, mask)
    np.testing.assert_allclose(out, z, atol=1e-14)


def test_dc_consistent_input_is_fixed_point():
    rng = np.random.default_rng(7)
    mask = make_mask("radial", 16, 16, 4)
    z = rand_image(rng, 16, 16)
    y = kspace.apply_forward(z, mask)
    for eta in (0.0, 0.3, 1.0):
        np.testing.assert_allclose(kspace.data_consistency(z, y, eta, mask), z, atol=1e-12)


def test_dc_matches_dense_solve_12x12():
    rng = np.random.default_rng(8)
    mask = make_mask("cartesian_random", 12, 12, 4, seed=0, acs_lines=1)
    z = rand_image(rng, 12, 12)
    y = kspace.apply_forward(rand_image(rng, 12, 12), mask)
    mu = 0.5
    dense = kspace.dense_data_consistency(z, y, mu, mask)
    fast = kspace.data_consistency(z, y, 1 / (1 + mu), mask)
    assert np.linalg.norm(fast - dense) / np.linalg.norm(dense) <= 1e-8


def test_dc_per_frequency_closed_form():
    rng = np.random.default_rng(9)
    mask = make_mask("radial", 32, 32, 4)
    z = rand_image(rng, 32, 32)
    y = kspace.apply_forward(rand_image(rng, 32, 32), mask)
    eta = 0.3
    spectrum = kspace.fft2c(kspace.data_consistency(z, y, eta, mask))
    zs = kspace.fft2c(z)
    on = mask.pattern
    np.testing.assert_allclose(spectrum[on], zs[on] + eta * (y[on] - zs[on]), atol=1e-12)
    np.testing.assert_allclose(spectrum[~on], zs[~on], atol=1e-12)


def test_dc_out_of_range_eta_logs(caplog):
    mask = make_mask("radial", 16, 16, 4)
    z = np.zeros((16, 16), complex)
    with caplog.at_level("WARNING"):
        kspace.data_consistency(z, z, 1.5, mask)
    assert "outside [0, 1]" in caplog.text


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), eta=st.floats(0.0, 1.0))
def test_dc_is_convex_combination(seed, eta):
    rng = np.random.default_rng(seed)
    mask = make_mask("radial", 16, 16, 4)
    z = rand_image(rng, 16, 16)
    y = kspace.apply_forward(rand_image(rng, 16, 16), mask)
    spectrum = kspace.fft2c(kspace.data_consistency(z, y, eta, mask))[mask.pattern]
    zs, ys = kspace.fft2c(z)[mask.pattern], y[mask.pattern]
    # spectrum - zs is a non-negative real multiple (eta) of ys - zs
    np.testing.assert_allclose(spectrum - zs, eta * (ys - zs), atol=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), h=st.integers(8, 24), w=st.integers(8, 24))
def test_unitarity(seed, h, w):
    rng = np.random.default_rng(seed)
    x = rand_image(rng, h, w)
    assert abs(np.linalg.norm(kspace.fft2c(x)) - np.linalg.norm(x)) <= 1e-6 * np.linalg.norm(x)
    np.testing.assert_allclose(kspace.ifft2c(kspace.fft2c(x)), x, atol=1e-10)
