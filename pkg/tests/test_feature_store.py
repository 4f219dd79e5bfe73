import struct

import numpy as np
import pytest

from promi.errors import DataError, FormatError, IoError, ShapeError
from promi.feature_store import (FeatureMap, NormalizedFeatureMap,
                                 l2_normalize, load_feature_map,
                                 save_feature_map)


def make_map(data, image_h=None, image_w=None):
    data = np.asarray(data, dtype=np.float32)
    gh, gw, _ = data.shape
    return FeatureMap.from_array(data, image_h=image_h or gh * 4,
                                 image_w=image_w or gw * 4)


def test_zero_map_round_trip(tmp_path):
    fmap = make_map(np.zeros((2, 2, 3)))
    save_feature_map(fmap, tmp_path / "z.npy")
    back = load_feature_map(tmp_path / "z.npy")
    assert back.grid_h == 2 and back.grid_w == 2 and back.depth == 3
    assert (back.data == 0).all()
    assert back.image_h == fmap.image_h and back.image_w == fmap.image_w


def test_nan_rejected(tmp_path):
    arr = np.zeros((2, 2, 3), dtype=np.float32)
    arr[1, 0, 2] = np.nan
    np.save(tmp_path / "bad.npy", arr)
    with pytest.raises(DataError):
        load_feature_map(tmp_path / "bad.npy", image_h=8, image_w=8)
    with pytest.raises(DataError):
        FeatureMap.from_array(arr, image_h=8, image_w=8)


def test_round_trip_random_bit_exact(tmp_path, rng):
    arr = rng.normal(size=(7, 5, 16)).astype(np.float32)
    fmap = FeatureMap.from_array(arr, image_h=99, image_w=70)
    save_feature_map(fmap, tmp_path / "m.npy")
    back = load_feature_map(tmp_path / "m.npy")
    assert back.data.tobytes() == fmap.data.tobytes()
    assert (back.grid_h, back.grid_w, back.depth) == (7, 5, 16)
    assert (back.image_h, back.image_w) == (99, 70)


def test_smallest_map_byte_layout(tmp_path):
    # Independent parse of the NPY v1.0 layout, no numpy reader involved.
    save_feature_map(make_map([[[0.5]]], image_h=1, image_w=1),
                     tmp_path / "one.npy")
    blob = (tmp_path / "one.npy").read_bytes()
    assert blob[:6] == b"\x93NUMPY"
    assert blob[6:8] == b"\x01\x00"  # format version 1.0
    (header_len,) = struct.unpack("<H", blob[8:10])
    header = blob[10:10 + header_len].decode("latin1")
    assert "'descr': '<f4'" in header
    assert "'fortran_order': False" in header
    assert "(1, 1, 1)" in header
    payload = blob[10 + header_len:]
    assert payload == struct.pack("<f", 0.5)


@pytest.mark.parametrize("shape,image", [
    ((48, 48, 768), (672, 672)),  # ViT-B/14 at 672x672
    ((53, 53, 512), (417, 417)),  # ResNet-50 PSPNet at 417x417
])
def test_production_shape_round_trips(tmp_path, rng, shape, image):
    arr = rng.normal(size=shape).astype(np.float32)
    fmap = FeatureMap.from_array(arr, image_h=image[0], image_w=image[1])
    save_feature_map(fmap, tmp_path / "big.npy")
    back = load_feature_map(tmp_path / "big.npy")
    assert back.data.tobytes() == fmap.data.tobytes()
    assert (back.grid_h, back.grid_w, back.depth) == shape


def test_rank_mismatch(tmp_path):
    np.save(tmp_path / "r2.npy", np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ShapeError):
        load_feature_map(tmp_path / "r2.npy", image_h=4, image_w=4)


def test_wrong_dtype_rejected(tmp_path):
    np.save(tmp_path / "f8.npy", np.zeros((2, 2, 2), dtype=np.float64))
    with pytest.raises(FormatError):
        load_feature_map(tmp_path / "f8.npy", image_h=8, image_w=8)


def test_malformed_header(tmp_path):
    (tmp_path / "junk.npy").write_bytes(b"\x93NUMPY\x01\x00" + b"\xff" * 40)
    with pytest.raises(FormatError):
        load_feature_map(tmp_path / "junk.npy", image_h=4, image_w=4)


def test_missing_file_and_missing_geometry(tmp_path):
    with pytest.raises(IoError):
        load_feature_map(tmp_path / "absent.npy", image_h=4, image_w=4)
    np.save(tmp_path / "nogeo.npy", np.zeros((1, 1, 1), dtype=np.float32))
    with pytest.raises(FormatError):
        load_feature_map(tmp_path / "nogeo.npy")


def test_l2_normalize_triangle():
    fmap = make_map([[[3.0, 4.0]]])
    out = l2_normalize(fmap)
    assert np.allclose(out.data[0, 0], [0.6, 0.8], atol=1e-7)


def test_l2_normalize_unit_unchanged():
    fmap = make_map([[[1.0, 0.0]]])
    out = l2_normalize(fmap)
    assert (out.data[0, 0] == np.array([1.0, 0.0], np.float32)).all()


def test_l2_normalize_norm_property(rng):
    arr = rng.normal(size=(6, 7, 9)).astype(np.float32) * 13.0
    out = l2_normalize(make_map(arr))
    norms = np.linalg.norm(out.data.astype(np.float64), axis=-1)
    assert np.abs(norms - 1.0).max() < 1e-6


def test_l2_normalize_idempotent_and_direction(rng):
    arr = rng.normal(size=(4, 4, 5)).astype(np.float32)
    once = l2_normalize(make_map(arr))
    twice = l2_normalize(
        FeatureMap.from_array(once.data, once.image_h, once.image_w))
    assert np.abs(twice.data - once.data).max() < 1e-6
    cos = np.sum(once.data.astype(np.float64) * arr.astype(np.float64),
                 axis=-1)
    cos /= np.linalg.norm(arr.astype(np.float64), axis=-1)
    assert np.abs(cos - 1.0).max() < 1e-6


def test_l2_normalize_zero_vectors_flagged():
    arr = np.zeros((2, 2, 3), dtype=np.float32)
    arr[0, 0] = [2.0, 0.0, 0.0]
    out = l2_normalize(make_map(arr))
    assert isinstance(out, NormalizedFeatureMap)
    assert out.zero_vectors == 3
    assert (out.data[0, 0] == np.array([1, 0, 0], np.float32)).all()
    assert (out.data[1, 1] == 0).all()


def test_loaded_map_immutable(tmp_path, rng):
    fmap = make_map(rng.normal(size=(2, 3, 4)))
    save_feature_map(fmap, tmp_path / "m.npy")
    back = load_feature_map(tmp_path / "m.npy")
    with pytest.raises(ValueError):
        back.data[0, 0, 0] = 1.0
