import numpy as np
import pytest

from quantize import (
    Basis,
    BitOrder,
    GridSpec,
    bits_to_coordinate,
    bits_to_flat,
    detensorize,
    flat_to_bits,
    from_tensor_order,
    grid_points,
    tensor_order,
    tensorize,
    to_tensor_order,
)


def test_real_space_bits_are_msb_first():
    spec = GridSpec(L=3)
    np.testing.assert_array_equal(flat_to_bits(6, spec), [1, 1, 0])
    assert bits_to_flat([0, 0, 1], spec) == 1


def test_fourier_bits_are_lsb_first():
    spec = GridSpec(L=3, basis=Basis.FOURIER)
    np.testing.assert_array_equal(flat_to_bits(6, spec), [0, 1, 1])
    assert bits_to_flat([1, 0, 0], spec) == 1


@pytest.mark.parametrize("basis", [Basis.REAL_SPACE, Basis.FOURIER])
def test_bits_inverse_over_whole_grid(basis):
    spec = GridSpec(L=4, basis=basis)
    for n in range(spec.n_points):
        assert bits_to_flat(flat_to_bits(n, spec), spec) == n


def test_index_out_of_range_raises():
    spec = GridSpec(L=3)
    with pytest.raises(ValueError):
        flat_to_bits(8, spec)
    with pytest.raises(ValueError):
        bits_to_flat([1, 2, 0], spec)


def test_coordinate_of_bits():
    spec = GridSpec(L=2, domain_lo=(-1.0,), domain_hi=(1.0,))
    assert bits_to_coordinate([1, 0], spec) == pytest.approx(0.0)
    assert bits_to_coordinate([1, 1], spec) == pytest.approx(0.5)
    assert bits_to_coordinate([0, 0], spec) == pytest.approx(-1.0)


def test_invalid_grid_rejected():
    with pytest.raises(ValueError):
        GridSpec(L=0)
    with pytest.raises(ValueError):
        GridSpec(L=2, domain_lo=(1.0,), domain_hi=(0.0,))


def test_real_space_serial_tensor_order_is_natural():
    spec = GridSpec(L=2, n_dims=2, domain_lo=(0.0, 0.0), domain_hi=(1.0, 1.0))
    np.testing.assert_array_equal(tensor_order(spec), np.arange(16))


def test_fourier_tensor_order_reverses_bits():
    spec = GridSpec(L=3, basis=Basis.FOURIER)
    # tensor position p = (s1 s2 s3) in C order holds index s1 + 2 s2 + 4 s3
    np.testing.assert_array_equal(tensor_order(spec), [0, 4, 2, 6, 1, 5, 3, 7])


def test_interleaved_order_alternates_dimensions():
    spec = GridSpec(L=2, n_dims=2, domain_lo=(0.0, 0.0), domain_hi=(1.0, 1.0), bit_order=BitOrder.INTERLEAVED)
    v = np.arange(16)
    t = tensorize(v, spec)
    # sites: x MSB, y MSB, x LSB, y LSB; natural index is 4*ix + iy
    assert t[1, 0, 0, 0] == 8
    assert t[0, 1, 0, 0] == 2
    assert t[0, 0, 1, 0] == 4
    assert t[0, 0, 0, 1] == 1


@pytest.mark.parametrize("basis", [Basis.REAL_SPACE, Basis.FOURIER])
@pytest.mark.parametrize("order", [BitOrder.SERIAL, BitOrder.INTERLEAVED])
def test_tensorize_inverse(basis, order):
    spec = GridSpec(L=2, n_dims=2, domain_lo=(0.0, 0.0), domain_hi=(1.0, 1.0), basis=basis, bit_order=order)
    v = np.random.default_rng(0).standard_normal(spec.size)
    np.testing.assert_array_equal(detensorize(tensorize(v, spec), spec), v)
    np.testing.assert_array_equal(from_tensor_order(to_tensor_order(v, spec), spec), v)


def test_tensorize_length_mismatch():
    with pytest.raises(ValueError):
        tensorize(np.zeros(7), GridSpec(L=3))


def test_fourier_grid_points_in_fft_order():
    spec = GridSpec(L=3, domain_lo=(0.0,), domain_hi=(8.0,), basis=Basis.FOURIER)
    k = grid_points(spec)[0]
    np.testing.assert_allclose(k, 2 * np.pi * np.array([0, 1, 2, 3, -4, -3, -2, -1]) / 8.0)
