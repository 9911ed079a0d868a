import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import brute_force_otsu, flood_fill_components, make_volume
from voxserve.volume import (
    DegenerateInputError,
    MhaDecodeError,
    VolumeError,
    VolumeGrid,
    binarize,
    decode_mha,
    decode_volume_payload,
    dice,
    encode_mha,
    encode_volume_payload,
    largest_connected_component,
    otsu_threshold,
    resample_to_shape,
    znormalize,
)


# ---------------------------------------------------------------------------
# hypothesis strategies

@st.composite
def volumes(draw, max_dim=6, kinds=("float32", "uint8")):
    kind = draw(st.sampled_from(kinds))
    nx = draw(st.integers(1, max_dim))
    ny = draw(st.integers(1, max_dim))
    nz = draw(st.integers(1, max_dim))
    n = nx * ny * nz
    if kind == "float32":
        vals = draw(
            st.lists(
                st.floats(-1e6, 1e6, width=32, allow_nan=False),
                min_size=n, max_size=n,
            )
        )
        arr = np.array(vals, dtype=np.float32)
    else:
        vals = draw(st.lists(st.integers(0, 255), min_size=n, max_size=n))
        arr = np.array(vals, dtype=np.uint8)
    spacing = tuple(draw(st.floats(0.1, 10.0)) for _ in range(3))
    origin = tuple(draw(st.floats(-100.0, 100.0)) for _ in range(3))
    return VolumeGrid(arr.reshape(nz, ny, nx), spacing, origin)


# ---------------------------------------------------------------------------
# MHA codec

class TestMhaCodec:
    def test_roundtrip_small_float(self):
        vol = make_volume(np.arange(8).reshape(2, 2, 2), spacing=(0.5, 1.5, 2.0), origin=(1, -2, 3))
        assert decode_mha(encode_mha(vol)) == vol

    def test_roundtrip_uint8(self):
        vol = make_volume([[[0, 255], [7, 9]]], dtype=np.uint8)
        assert decode_mha(encode_mha(vol)) == vol

    @settings(max_examples=200, deadline=None)
    @given(volumes())
    def test_roundtrip_randomized(self, vol):
        assert decode_mha(encode_mha(vol)) == vol

    def test_rejects_ndims_4(self):
        blob = encode_mha(make_volume(np.zeros((2, 2, 2)))).replace(b"NDims = 3", b"NDims = 4")
        with pytest.raises(MhaDecodeError, match="NDims"):
            decode_mha(blob)

    def test_truncated_voxels(self):
        header = (
            b"ObjectType = Image\nNDims = 3\nDimSize = 10 10 10\n"
            b"ElementType = MET_FLOAT\nElementDataFile = LOCAL\n"
        )
        with pytest.raises(MhaDecodeError, match="4000"):
            decode_mha(header + b"\x00" * 999)

    def test_missing_element_type(self):
        blob = b"NDims = 3\nDimSize = 1 1 1\nElementDataFile = LOCAL\n\x00\x00\x00\x00"
        with pytest.raises(MhaDecodeError, match="ElementType"):
            decode_mha(blob)

    def test_unknown_element_type(self):
        blob = (
            b"NDims = 3\nDimSize = 1 1 1\nElementType = MET_DOUBLE\n"
            b"ElementDataFile = LOCAL\n" + b"\x00" * 8
        )
        with pytest.raises(MhaDecodeError, match="ElementType"):
            decode_mha(blob)

    def test_header_without_data_section(self):
        with pytest.raises(MhaDecodeError, match="ElementDataFile"):
            decode_mha(b"NDims = 3\nDimSize = 1 1 1\n")

    def test_x_fastest_ordering(self):
        # DimSize 2 1 1: two voxels along x must be adjacent in the raw bytes
        vol = make_volume(np.array([[[1.0, 2.0]]]))
        blob = encode_mha(vol)
        raw = blob[blob.index(b"LOCAL\n") + 6 :]
        assert np.frombuffer(raw, "<f4").tolist() == [1.0, 2.0]


class TestPayloadCodec:
    @settings(max_examples=200, deadline=None)
    @given(volumes())
    def test_roundtrip(self, vol):
        assert decode_volume_payload(encode_volume_payload(vol)) == vol

    def test_invalid_base64(self):
        with pytest.raises(VolumeError, match="base64"):
            decode_volume_payload("not-base64!!")

    def test_length_expansion(self):
        vol = make_volume(np.zeros((64, 64, 64)))
        payload = encode_volume_payload(vol)
        blob_len = len(encode_mha(vol))
        assert blob_len > 64 ** 3 * 4
        # base64 expands by 4/3, padded to a multiple of 4
        assert len(payload) == 4 * ((blob_len + 2) // 3)


# ---------------------------------------------------------------------------
# transforms

class TestResample:
    def test_identity_target(self):
        vol = make_volume(np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32))
        assert resample_to_shape(vol, vol.dims) == vol

    def test_constant_preserved(self):
        vol = make_volume(np.full((4, 4, 4), 7.5, dtype=np.float32))
        out = resample_to_shape(vol, (3, 5, 2))
        assert out.dims == (3, 5, 2)
        assert np.allclose(out.data, 7.5)

    def test_linear_ramp_downsample_matches_hand_computed_weights(self):
        # f(x) = x on a 4x1x1 grid, halved: target centers land at source
        # coordinates 0.5 and 2.5, so trilinear gives 0.5 and 2.5 exactly
        vol = make_volume(np.array([[[0.0, 1.0, 2.0, 3.0]]]))
        out = resample_to_shape(vol, (2, 1, 1))
        assert out.data.ravel().tolist() == [0.5, 2.5]

    def test_physical_extent_preserved(self):
        vol = make_volume(np.zeros((8, 6, 4), dtype=np.float32), spacing=(1.0, 2.0, 0.5))
        out = resample_to_shape(vol, (10, 3, 17))
        for axis in range(3):
            before = vol.dims[axis] * vol.spacing_mm[axis]
            after = out.dims[axis] * out.spacing_mm[axis]
            assert after == pytest.approx(before, abs=out.spacing_mm[axis])

    def test_no_overshoot_on_monotone_data(self):
        ramp = np.arange(16, dtype=np.float32).reshape(1, 1, 16)
        vol = make_volume(ramp)
        out = resample_to_shape(vol, (7, 1, 1))
        assert out.data.min() >= ramp.min()
        assert out.data.max() <= ramp.max()
        assert np.all(np.diff(out.data.ravel()) >= 0)

    def test_nearest_for_labels(self):
        vol = make_volume([[[0, 0, 1, 1]]], dtype=np.uint8)
        out = resample_to_shape(vol, (2, 1, 1))
        assert out.data.dtype == np.uint8
        assert set(out.data.ravel().tolist()) <= {0, 1}

    def test_bad_target(self):
        vol = make_volume(np.zeros((2, 2, 2)))
        with pytest.raises(VolumeError):
            resample_to_shape(vol, (0, 2, 2))


class TestZnormalize:
    def test_two_values(self):
        # voxels {1, 3}: mean 2, population std 1 -> {-1, +1}
        vol = make_volume(np.array([[[1.0, 3.0]]]))
        out = znormalize(vol)
        assert out.data.ravel().tolist() == [-1.0, 1.0]

    def test_moments(self, rng):
        vol = make_volume(rng.normal(5, 3, size=(6, 6, 6)).astype(np.float32))
        out = znormalize(vol)
        assert abs(out.data.mean()) < 1e-5
        assert abs(out.data.std() - 1.0) < 1e-5

    def test_idempotent_on_normalized(self, rng):
        vol = znormalize(make_volume(rng.normal(size=(5, 5, 5)).astype(np.float32)))
        again = znormalize(vol)
        assert np.allclose(again.data, vol.data, atol=1e-5)

    def test_constant_gives_zeros(self):
        vol = make_volume(np.full((3, 3, 3), 4.2, dtype=np.float32))
        assert np.all(znormalize(vol).data == 0)

    def test_rejects_uint8(self):
        with pytest.raises(VolumeError):
            znormalize(make_volume(np.zeros((2, 2, 2)), dtype=np.uint8))


class TestOtsu:
    def test_two_level_split(self):
        data = np.array([0.0] * 32 + [1.0] * 32, dtype=np.float32).reshape(4, 4, 4)
        t = otsu_threshold(make_volume(data))
        assert 0.0 < t < 1.0
        assert np.array_equal(data > t, data == 1.0)

    def test_matches_brute_force_oracle_randomized(self, rng):
        for _ in range(30):
            n = int(rng.integers(2, 9))
            dims = tuple(int(d) for d in rng.integers(1, 9, size=3))
            levels = rng.uniform(-5, 5, size=n)
            data = rng.choice(levels, size=dims).astype(np.float32)
            if np.unique(data).size < 2:
                continue
            vol = VolumeGrid(data)
            assert otsu_threshold(vol) == pytest.approx(
                brute_force_otsu(data.ravel()), rel=1e-9
            )

    def test_bimodal_mixture_separation(self, rng):
        labels = rng.integers(0, 2, size=(12, 12, 12))
        data = np.where(
            labels == 0,
            rng.normal(0.2, 0.05, size=labels.shape),
            rng.normal(0.8, 0.05, size=labels.shape),
        ).astype(np.float32)
        t = otsu_threshold(VolumeGrid(data))
        predicted = (data > t).astype(int)
        misclassified = (predicted != labels).mean()
        assert misclassified < 0.01

    def test_constant_raises(self):
        with pytest.raises(DegenerateInputError):
            otsu_threshold(make_volume(np.ones((3, 3, 3), dtype=np.float32)))

    def test_returned_value_is_bin_upper_edge(self):
        data = np.array([0.0] * 4 + [1.0] * 4, dtype=np.float32).reshape(2, 2, 2)
        t = otsu_threshold(make_volume(data))
        # edges are k/256 for k in 0..256; upper edge of some bin
        assert (t * 256) == pytest.approx(round(t * 256), abs=1e-9)


class TestBinarize:
    def test_definition(self):
        vol = make_volume(np.array([[[0.2, 0.7]]]))
        assert binarize(vol, 0.5).data.ravel().tolist() == [0, 1]

    def test_threshold_below_min(self):
        vol = make_volume(np.array([[[0.2, 0.7]]]))
        assert np.all(binarize(vol, -1.0).data == 1)

    def test_threshold_above_max(self):
        vol = make_volume(np.array([[[0.2, 0.7]]]))
        assert np.all(binarize(vol, 2.0).data == 0)

    def test_geometry_preserved(self):
        vol = make_volume(np.zeros((2, 3, 4)), spacing=(1, 2, 3), origin=(4, 5, 6))
        out = binarize(vol, 0.5)
        assert out.same_geometry(vol)
        assert out.scalar_kind == "uint8"


class TestLargestComponent:
    def test_single_blob_unchanged(self):
        mask = np.zeros((5, 5, 5), dtype=np.uint8)
        mask[1:4, 1:4, 1:4] = 1
        vol = make_volume(mask, dtype=np.uint8)
        assert largest_connected_component(vol) == vol

    def test_keeps_biggest_of_two(self):
        mask = np.zeros((8, 8, 8), dtype=np.uint8)
        mask[0:3, 0:3, 0:3] = 1  # 27 voxels
        mask[5:7, 5:7, 5:7] = 1  # 8 voxels
        out = largest_connected_component(make_volume(mask, dtype=np.uint8))
        comps = flood_fill_components(out.data)
        assert len(comps) == 1
        assert len(comps[0]) == 27

    def test_corner_touch_is_two_components(self):
        mask = np.zeros((2, 2, 2), dtype=np.uint8)
        mask[0, 0, 0] = 1
        mask[1, 1, 1] = 1  # corner adjacency only
        out = largest_connected_component(make_volume(mask, dtype=np.uint8))
        assert out.data.sum() == 1
        assert out.data[0, 0, 0] == 1  # size tie broken toward smallest flat index

    def test_empty_returned_unchanged(self):
        vol = make_volume(np.zeros((3, 3, 3), dtype=np.uint8), dtype=np.uint8)
        assert largest_connected_component(vol) == vol

    def test_rejects_nonbinary(self):
        with pytest.raises(VolumeError):
            largest_connected_component(
                make_volume(np.full((2, 2, 2), 3, dtype=np.uint8), dtype=np.uint8)
            )

    def test_agrees_with_flood_fill_oracle_randomized(self, rng):
        for _ in range(40):
            dims = tuple(int(d) for d in rng.integers(1, 17, size=3))
            mask = (rng.random(dims) < 0.35).astype(np.uint8)
            out = largest_connected_component(VolumeGrid(mask))
            comps = flood_fill_components(mask)
            if not comps:
                assert np.array_equal(out.data, mask)
                continue
            # output is the largest component; ties by smallest min flat index,
            # which is the order flood_fill_components yields them in
            best = max(comps, key=len)
            expected = np.zeros(mask.shape, dtype=np.uint8)
            for z, y, x in best:
                expected[z, y, x] = 1
            assert np.array_equal(out.data, expected)
            # output foreground is a subset of the input foreground
            assert np.all(mask[out.data == 1] == 1)
            assert len(flood_fill_components(out.data)) == 1


class TestDice:
    def _mask(self, coords, dims=(4, 4, 4)):
        arr = np.zeros(dims, dtype=np.uint8)
        for c in coords:
            arr[c] = 1
        return make_volume(arr, dtype=np.uint8)

    def test_identical(self):
        a = self._mask([(0, 0, 0), (1, 1, 1)])
        assert dice(a, a) == 1.0

    def test_disjoint(self):
        a = self._mask([(0, 0, 0)])
        b = self._mask([(1, 1, 1)])
        assert dice(a, b) == 0.0

    def test_half_overlap(self):
        # |A| = |B| = 8, |A∩B| = 4 -> 2*4 / 16 = 0.5
        a = self._mask([(0, 0, i % 4) if i < 4 else (1, 0, i - 4) for i in range(8)])
        b = self._mask([(0, 0, i % 4) if i < 4 else (2, 0, i - 4) for i in range(8)])
        assert dice(a, b) == 0.5

    def test_both_empty(self):
        a = self._mask([])
        assert dice(a, a) == 1.0

    def test_symmetric_and_bounded(self, rng):
        for _ in range(20):
            dims = (4, 4, 4)
            a = make_volume((rng.random(dims) < 0.5).astype(np.uint8), dtype=np.uint8)
            b = make_volume((rng.random(dims) < 0.5).astype(np.uint8), dtype=np.uint8)
            d = dice(a, b)
            assert d == dice(b, a)
            assert 0.0 <= d <= 1.0

    def test_dim_mismatch(self):
        a = self._mask([], dims=(2, 2, 2))
        b = self._mask([], dims=(3, 3, 3))
        with pytest.raises(VolumeError):
            dice(a, b)
