import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wsi_pipeline.errors import EmptyOutput, NonPositiveInput
from wsi_pipeline.resampler import (
    PatchSpec,
    lanczos3_kernel,
    resize,
    resize_to_scale,
    scale_factor,
    scaled_size,
)

from conftest import make_image
from oracles import lanczos3_ref, resize_direct_2d


class TestKernel:
    def test_center_is_one(self):
        assert lanczos3_kernel(0.0) == 1.0

    def test_integer_zero_crossings(self):
        assert lanczos3_kernel(1.0) == pytest.approx(0.0, abs=1e-15)
        assert lanczos3_kernel(2.0) == pytest.approx(0.0, abs=1e-15)

    def test_outside_support_is_zero(self):
        assert lanczos3_kernel(3.0) == 0.0
        assert lanczos3_kernel(-4.5) == 0.0

    def test_half_value(self):
        # sin(pi/2)/(pi/2) * sin(pi/6)/(pi/6) = 6/pi^2
        assert lanczos3_kernel(0.5) == pytest.approx(0.6079271018540267, rel=1e-12)

    @given(st.floats(-5, 5, allow_nan=False))
    def test_even_symmetry(self, x):
        assert lanczos3_kernel(x) == lanczos3_kernel(-x)

    @given(st.floats(-4, 4, allow_nan=False))
    def test_matches_reference(self, x):
        assert lanczos3_kernel(x) == pytest.approx(lanczos3_ref(x), abs=1e-14)


class TestScaleFactor:
    def test_identity_scale(self):
        assert scale_factor(0.4415 * 224, 0.4415, 224) == pytest.approx(1.0)

    def test_reference_resolution(self):
        assert scale_factor(600, 0.4415, 224) == pytest.approx(0.16482666666666668, rel=1e-12)

    def test_homogeneity(self):
        assert scale_factor(600, 0.4415, 224) == pytest.approx(
            2 * scale_factor(1200, 0.4415, 224), rel=1e-12
        )

    def test_rejects_nonpositive(self):
        with pytest.raises(NonPositiveInput):
            scale_factor(0, 0.4415, 224)
        with pytest.raises(NonPositiveInput):
            scale_factor(600, -1, 224)


class TestResize:
    def test_identity(self, rng):
        arr = rng.integers(0, 256, size=(13, 17, 3), dtype=np.uint8)
        img = make_image(arr)
        assert np.array_equal(resize(img, 17, 13).data, arr)

    def test_constant_preserved(self):
        img = make_image(np.full((20, 30, 3), 137))
        for w, h in [(7, 5), (30, 20), (61, 43)]:
            out = resize(img, w, h)
            assert np.all(out.data == 137)

    def test_empty_output_rejected(self):
        img = make_image(np.zeros((4, 4, 1)))
        with pytest.raises(EmptyOutput):
            resize(img, 0, 4)

    def test_matches_direct_2d_oracle(self, rng):
        arr = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
        img = make_image(arr)
        for s in (0.164, 0.5, 2.0):
            w, h = scaled_size(64, s), scaled_size(64, s)
            ours = resize(img, w, h).data
            oracle = resize_direct_2d(arr, w, h)
            assert np.max(np.abs(ours.astype(int) - oracle.astype(int))) <= 1

    def test_gray_channel(self, rng):
        arr = rng.integers(0, 256, size=(32, 32, 1), dtype=np.uint8)
        out = resize(make_image(arr), 16, 16)
        assert out.channels == 1
        assert np.max(np.abs(out.data.astype(int) - resize_direct_2d(arr, 16, 16).astype(int))) <= 1

    @settings(max_examples=25, deadline=None)
    @given(
        st.integers(0, 2**32 - 1),
        st.sampled_from([(40, 20), (20, 40), (31, 31), (64, 16)]),
    )
    def test_hflip_commutes(self, seed, out_wh):
        r = np.random.default_rng(seed)
        arr = r.integers(0, 256, size=(24, 36, 3), dtype=np.uint8)
        out_w, out_h = out_wh
        a = resize(make_image(arr[:, ::-1]), out_w, out_h).data
        b = resize(make_image(arr), out_w, out_h).data[:, ::-1]
        assert np.array_equal(a, b)

    def test_resize_to_scale_dims(self):
        img = make_image(np.zeros((100, 200, 3)))
        out = resize_to_scale(img, 0.25)
        assert (out.width, out.height) == (50, 25)


class TestPatchSpec:
    def test_defaults(self):
        spec = PatchSpec()
        assert spec.patch_px == 224
        assert spec.stride_px == 112
        assert spec.coverage_min == 0.75

    def test_invalid_values(self):
        with pytest.raises(NonPositiveInput):
            PatchSpec(phi_um=0)
        with pytest.raises(ValueError):
            PatchSpec(patch_px=16)
        with pytest.raises(ValueError):
            PatchSpec(stride_fraction=0)
        with pytest.raises(ValueError):
            PatchSpec(coverage_min=1.5)
