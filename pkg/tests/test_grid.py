import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from comq.grid import (
    CodeSet,
    InvalidConfigError,
    NumericError,
    QuantConfig,
    QuantizedLayer,
    ShapeMismatchError,
    affine_codes,
    default_lambda,
    dequantize,
    project_to_codes,
    symmetric_codes,
)


def test_symmetric_code_sets():
    assert symmetric_codes(4) == CodeSet(-8, 7)
    assert symmetric_codes(2) == CodeSet(-2, 1)
    assert symmetric_codes(1) == CodeSet(-1, 0)
    assert symmetric_codes(8).size == 256


def test_affine_code_sets():
    assert affine_codes(-3, 3) == CodeSet(-3, 4)
    assert affine_codes(0, 2) == CodeSet(0, 3)
    assert affine_codes(5, 1) == CodeSet(5, 6)


def test_bad_code_sets_rejected():
    with pytest.raises(InvalidConfigError):
        symmetric_codes(0)
    with pytest.raises(InvalidConfigError):
        affine_codes(0, 0)
    with pytest.raises(InvalidConfigError):
        CodeSet(3, 2)


def test_project_rounds_half_to_even():
    s = symmetric_codes(3)
    assert project_to_codes(2.5, s) == 2
    assert project_to_codes(3.5, s) == 3  # 4 would round even but clips
    assert project_to_codes(1.5, s) == 2
    assert project_to_codes(-0.5, s) == 0
    assert project_to_codes(-1.5, s) == -2
    assert project_to_codes(-2.5, s) == -2


def test_project_clips_to_interval():
    s = symmetric_codes(4)
    assert project_to_codes(12.3, s) == 7
    assert project_to_codes(-99.0, s) == -8
    a = affine_codes(2, 2)
    assert project_to_codes(0.2, a) == 2
    assert project_to_codes(9.9, a) == 5


def test_project_array_input():
    s = symmetric_codes(2)
    out = project_to_codes(np.array([[1.7, -3.2], [0.49, 2.5]]), s)
    assert out.dtype == np.int32
    np.testing.assert_array_equal(out, [[1, -2], [0, 1]])


def test_project_rejects_non_finite():
    s = symmetric_codes(4)
    with pytest.raises(NumericError):
        project_to_codes(float("nan"), s)
    with pytest.raises(NumericError):
        project_to_codes(float("inf"), s)
    with pytest.raises(NumericError):
        project_to_codes(np.array([1.0, np.nan]), s)


@given(
    p=st.floats(min_value=-1e6, max_value=1e6, allow_nan=False),
    bits=st.integers(min_value=1, max_value=8),
)
def test_project_within_half_of_clamp(p, bits):
    s = symmetric_codes(bits)
    code = project_to_codes(p, s)
    clamped = min(max(p, s.lo), s.hi)
    assert abs(code - clamped) <= 0.5 + 1e-9


@given(
    p=st.floats(min_value=-40.0, max_value=40.0, allow_nan=False),
    bits=st.integers(min_value=1, max_value=5),
    zero=st.integers(min_value=-16, max_value=16),
    affine=st.booleans(),
)
@settings(max_examples=300)
def test_project_is_nearest_code(p, bits, zero, affine):
    # The projection must agree with a literal scan for the nearest code,
    # with half-to-even breaking exact ties.
    s = affine_codes(zero, bits) if affine else symmetric_codes(bits)
    code = project_to_codes(p, s)
    best = None
    for q in s.codes():
        d = abs(float(q) - p)
        if best is None or d < best[0] - 1e-12:
            best = (d, int(q))
        elif abs(d - best[0]) <= 1e-12 and int(q) % 2 == 0:
            best = (d, int(q))
    assert code == best[1]


def test_dequantize_shared_scale():
    w = dequantize(np.array([[1, -2], [3, 4]]), 0.5)
    assert w.dtype == np.float32
    np.testing.assert_array_equal(w, [[0.5, -1.0], [1.5, 2.0]])


def test_dequantize_per_column_scales():
    w = dequantize(np.array([[1, -2], [3, 4]]), np.array([0.5, 0.25]))
    np.testing.assert_array_equal(w, [[0.5, -0.5], [1.5, 1.0]])


def test_dequantize_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        dequantize(np.zeros((2, 3)), np.array([1.0, 2.0]))
    with pytest.raises(ShapeMismatchError):
        dequantize(np.zeros((2, 3)), np.ones((2, 2)))


@given(
    scale=st.floats(min_value=-4.0, max_value=4.0, allow_nan=False),
    factor=st.sampled_from([-4.0, -2.0, -1.0, -0.5, 0.5, 1.0, 2.0, 4.0]),
)
def test_dequantize_is_linear_in_scale(scale, factor):
    # Power-of-two factors scale binary32 exactly, so both orderings agree bitwise.
    codes = np.array([[2, -1, 0], [7, 3, -8]])
    a = dequantize(codes, np.float32(scale) * np.float32(factor))
    b = np.float32(factor) * dequantize(codes, scale)
    np.testing.assert_array_equal(a, b)


def test_quantized_layer_validates_shapes():
    QuantizedLayer(np.zeros((3, 2)), np.array([1.0]), np.zeros(0, np.int32))
    QuantizedLayer(np.zeros((3, 2)), np.array([1.0, 2.0]), np.array([0, 1]))
    with pytest.raises(ShapeMismatchError):
        QuantizedLayer(np.zeros(3), np.array([1.0]))
    with pytest.raises(ShapeMismatchError):
        QuantizedLayer(np.zeros((3, 2)), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(ShapeMismatchError):
        QuantizedLayer(np.zeros((3, 2)), np.array([1.0]), np.array([0]))


def test_quantized_layer_dequantizes_binary32():
    layer = QuantizedLayer(
        np.array([[1, 2], [-3, 4]]), np.array([0.1, 0.3], dtype=np.float32)
    )
    out = layer.dequantize()
    assert out.dtype == np.float32
    expect = np.array([[1, 2], [-3, 4]], np.float32) * np.array([0.1, 0.3], np.float32)
    np.testing.assert_array_equal(out, expect)


def test_default_lambda_by_bit_width():
    assert default_lambda(2) == 0.9
    assert default_lambda(3) == 0.9
    assert default_lambda(4) == 1.0
    assert default_lambda(8) == 1.0


def test_config_defaults_resolve():
    cfg = QuantConfig(bits=3)
    assert cfg.lam == 0.9 and cfg.order == "greedy"
    cfg = QuantConfig(bits=4, granularity="per-layer")
    assert cfg.lam == 1.0 and cfg.order == "cyclic"
    assert cfg.iters == 3
    assert cfg.scale_update == "ls"


def test_config_explicit_fields_kept():
    cfg = QuantConfig(bits=2, lam=0.7, granularity="per-layer", order="greedy")
    assert cfg.lam == 0.7 and cfg.order == "greedy"
    assert cfg.code_bounds() == CodeSet(-2, 1)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(bits=0),
        dict(bits=17),
        dict(bits=2.5),
        dict(bits=4, iters=0),
        dict(bits=4, lam=0.0),
        dict(bits=4, lam=1.5),
        dict(bits=4, lam=float("nan")),
        dict(bits=4, granularity="per-tensor"),
        dict(bits=4, order="random"),
        dict(bits=4, tie_rule="half-up"),
        dict(bits=4, scale_update="never"),
    ],
)
def test_config_rejects_bad_fields(kwargs):
    with pytest.raises(InvalidConfigError):
        QuantConfig(**kwargs)
