"""量子化と Quant-Noise のテスト"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from src.autodiff import Tensor
from src.errors import UsageError
from src.hinerv_features.network import HiNeRVModel
from src.hinerv_features.quantization import (
    QuantNoise,
    apply_quantization,
    dequantize,
    max_quantization_error,
    quant_noise_forward,
    quant_spec,
    quantize_model,
    quantize_tensor,
    round_half_away,
)


def test_six_bit_example():
    q = quantize_tensor(np.array([1.0, 0.5, -0.25]), bits=6)
    assert q.spec.qmax == 31
    assert q.spec.scale == pytest.approx(1 / 31, rel=1e-6)
    assert q.values.tolist() == [31, 16, -8]
    assert q.dequantize()[1] == pytest.approx(0.5161, abs=1e-4)


def test_round_half_away_from_zero():
    np.testing.assert_array_equal(round_half_away(np.array([0.5, -0.5, 1.5, 2.5, -2.4])), [1, -1, 2, 3, -2])


def test_zero_tensor():
    q = quantize_tensor(np.zeros((3, 4)), bits=6)
    assert q.spec.scale == 1.0
    assert not q.values.any()
    np.testing.assert_array_equal(q.dequantize(), np.zeros((3, 4), dtype=np.float32))


def test_bits_out_of_range():
    for bits in (1, 9):
        with pytest.raises(UsageError):
            quantize_tensor(np.ones(3), bits=bits)


@settings(max_examples=200, deadline=None)
@given(
    arrays(np.float64, st.integers(1, 64), elements=st.floats(-100, 100, allow_nan=False, allow_subnormal=False)),
    st.integers(2, 8),
)
def test_error_bound(w, bits):
    q = quantize_tensor(w, bits)
    assert np.all(np.abs(q.values) <= q.spec.qmax)
    bound = q.spec.scale / 2 * (1 + 1e-5) + float(np.max(np.abs(w))) * 1e-6
    assert max_quantization_error(w, q) <= bound


def test_dequantize_is_float32():
    spec = quant_spec(np.array([0.7, -0.1]), 4)
    assert dequantize(np.array([7, -1], dtype=np.int32), spec).dtype == np.float32


class TestQuantNoise:
    def test_zero_ratio_is_identity(self, rng):
        w = Tensor(rng.normal(size=(8, 8)), requires_grad=True)
        spec = quant_spec(w.data, 6)
        out = quant_noise_forward(w, spec, 0.0, rng)
        np.testing.assert_array_equal(out.data, w.data)
        (out * 2.0).sum().backward()
        np.testing.assert_array_equal(w.grad, np.full((8, 8), 2.0))

    def test_full_ratio_is_fully_quantized(self, rng):
        data = rng.normal(size=(8, 8))
        w = Tensor(data, requires_grad=True)
        spec = quant_spec(data, 6)
        out = quant_noise_forward(w, spec, 1.0, rng)
        np.testing.assert_array_equal(out.data, quantize_tensor(data, 6).dequantize().astype(np.float64))
        out.sum().backward()
        assert not w.grad.any()

    def test_replaced_fraction(self, rng):
        w = Tensor(rng.normal(size=(100, 100)), requires_grad=True)
        out = quant_noise_forward(w, quant_spec(w.data, 6), 0.9, rng)
        out.sum().backward()
        replaced = float(np.mean(w.grad == 0))
        assert abs(replaced - 0.9) <= 0.02

    def test_invalid_ratio(self, rng):
        w = Tensor(np.ones(4))
        with pytest.raises(UsageError):
            quant_noise_forward(w, quant_spec(w.data, 6), 1.5, rng)

    def test_fresh_subset_per_call(self):
        noise = QuantNoise(6, 0.5, np.random.default_rng(0))
        w = Tensor(np.random.default_rng(1).normal(size=400))
        first = noise("w", w).data
        second = noise("w", w).data
        assert not np.array_equal(first != w.data, second != w.data)


def test_model_quantization_bound_on_every_tensor(small_config):
    model = HiNeRVModel(small_config, seed=2)
    original = model.state_dict()
    quantized = quantize_model(model, bits=6)
    assert set(quantized) == set(original)
    for name, q in quantized.items():
        assert max_quantization_error(original[name], q) <= q.spec.scale / 2 * (1 + 1e-5), name
    apply_quantization(model, quantized)
    for name, q in quantized.items():
        np.testing.assert_array_equal(model.parameter(name).data, q.dequantize())
