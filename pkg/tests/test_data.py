import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fishfsr.blocks import ConfigError
from fishfsr.data import (
    bicubic_resize,
    cubic_weights,
    ften_bytes,
    generate_dataset,
    load_dataset,
    load_manifest,
    load_sample,
    parse_ften,
    parsing_downsample,
    read_ften,
    read_image,
    read_ppm,
    rgb_to_y,
    rotate_map,
    synth_face,
    to_uint8,
    write_ften,
    write_ppm,
)
from fishfsr.rng import Rng
from fishfsr.tensor import ContractError, Tensor


def catmull_rom(x):
    x = abs(x)
    if x <= 1:
        return 1.5 * x**3 - 2.5 * x**2 + 1
    if x < 2:
        return -0.5 * x**3 + 2.5 * x**2 - 4 * x + 2
    return 0.0


def resize_1d_loop(row, n_out):
    n_in = len(row)
    out = []
    for d in range(n_out):
        src = (d + 0.5) * n_in / n_out - 0.5
        base = math.floor(src)
        acc = 0.0
        for tap in range(base - 1, base + 3):
            acc += catmull_rom(src - tap) * row[min(max(tap, 0), n_in - 1)]
        out.append(acc)
    return np.array(out)


class TestFten:
    @pytest.mark.parametrize("dtype,code", [(np.float32, 0), (np.float64, 1)])
    def test_header_layout(self, dtype, code):
        x = np.arange(24, dtype=dtype).reshape(1, 2, 3, 4)
        raw = ften_bytes(x)
        assert raw[:4] == b"FTEN"
        assert raw[4:7] == bytes([1, code, 4])
        assert struct.unpack("<4I", raw[7:23]) == (1, 2, 3, 4)
        assert raw[23:] == x.astype(np.dtype(dtype).newbyteorder("<")).tobytes()

    @settings(max_examples=30, deadline=None)
    @given(st.sampled_from([np.float32, np.float64]),
           st.tuples(*[st.integers(1, 3)] * 4), st.integers(0, 2**32 - 1))
    def test_round_trip_bitwise(self, dtype, shape, seed):
        x = Rng(seed).normal(size=shape).astype(dtype)
        back = parse_ften(ften_bytes(x)).data
        assert back.dtype == dtype and back.tobytes() == x.tobytes()

    def test_file_round_trip(self, tmp_path):
        x = Tensor(Rng(1).normal(size=(1, 3, 4, 4)))
        np.testing.assert_array_equal(read_ften(write_ften(tmp_path / "x.ften", x)).data, x.data)

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError, match="not an FTEN"):
            parse_ften(b"XXXX" + bytes(19))
        with pytest.raises(ValueError, match="payload"):
            parse_ften(ften_bytes(np.zeros((1, 1, 2, 2), np.float32))[:-1])
        with pytest.raises(ContractError):
            ften_bytes(np.zeros((1, 1, 2, 2), np.int32))

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.ften"):
            read_ften(tmp_path / "nope.ften")


class TestPpm:
    def test_round_half_up(self):
        vals = np.array([0.0, 0.5 / 255, 1.5 / 255, 1.0, 1.2, -0.1]).reshape(1, 1, 1, 6)
        np.testing.assert_array_equal(to_uint8(vals).reshape(-1), [0, 1, 2, 255, 255, 0])

    def test_layout_and_round_trip(self, tmp_path):
        img = np.zeros((1, 3, 2, 3), np.float32)
        img[0, 0, 0, 1] = 1.0
        path = write_ppm(tmp_path / "a.ppm", img)
        raw = path.read_bytes()
        assert raw.startswith(b"P6\n3 2\n255\n")
        assert raw[len(b"P6\n3 2\n255\n"):][3:6] == bytes([255, 0, 0])
        np.testing.assert_array_equal(read_ppm(path).data, img)
        np.testing.assert_array_equal(read_image(path).data, img)

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n# made by hand\n1 1\n255\n" + bytes([10, 20, 30]))
        np.testing.assert_allclose(read_ppm(path).data.reshape(-1), np.array([10, 20, 30]) / 255)


class TestSynthFace:
    def test_deterministic(self):
        a, b = synth_face(5, 64), synth_face(5, 64)
        assert a[0].data.tobytes() == b[0].data.tobytes()
        assert a[1].data.tobytes() == b[1].data.tobytes()

    @pytest.mark.parametrize("size", [32, 64, 128])
    def test_shapes_and_binary_mask(self, size):
        hr, mask = synth_face(3, size)
        assert hr.shape == (1, 3, size, size) and mask.shape == (1, 1, size, size)
        assert set(np.unique(mask.data)) <= {0.0, 1.0}
        assert hr.data.min() >= 0 and hr.data.max() <= 1

    def test_unsupported_size(self):
        with pytest.raises(ConfigError):
            synth_face(0, 100)

    def test_mask_area_fraction(self):
        fractions = np.array([synth_face(seed, 64)[1].data.mean() for seed in range(1000)])
        assert fractions.min() >= 0.15 and fractions.max() <= 0.6

    def test_components_cut_from_skin(self):
        _, mask = synth_face(11, 128)
        m = mask.data[0, 0]
        ys, xs = np.nonzero(m)
        cy = int(np.mean(ys))
        # a row through the eyes holds zeros between skin pixels
        row = m[int(cy - 0.25 * (ys.max() - ys.min()) / 2)]
        on = np.nonzero(row)[0]
        assert (row[on.min():on.max() + 1] == 0).any()


class TestBicubic:
    def test_constant(self):
        img = np.full((1, 3, 8, 8), 0.3)
        np.testing.assert_allclose(bicubic_resize(img, 5, 13), 0.3, atol=1e-12)

    def test_same_size_identity(self):
        img = Rng(2).random((1, 3, 9, 7))
        np.testing.assert_allclose(bicubic_resize(img, 9, 7), img, atol=1e-6)

    def test_ramp_interior_stays_linear(self):
        row = np.arange(16, dtype=np.float64)
        img = np.broadcast_to(row, (1, 1, 4, 16)).copy()
        out = bicubic_resize(img, 4, 8)[0, 0, 0]
        interior = out[1:-1]
        expected = (np.arange(8) + 0.5) * 2 - 0.5
        np.testing.assert_allclose(interior, expected[1:-1], atol=1e-5)

    @pytest.mark.parametrize("n_in,n_out", [(16, 4), (8, 32), (7, 3), (5, 5)])
    def test_matches_loop_oracle(self, n_in, n_out):
        row = Rng(n_in * n_out).random(n_in)
        mat = cubic_weights(n_in, n_out)
        np.testing.assert_allclose(mat @ row, resize_1d_loop(row, n_out), atol=1e-12)

    def test_up_down_round_trip(self):
        yy, xx = np.meshgrid(np.linspace(0, 1, 32), np.linspace(0, 1, 32), indexing="ij")
        img = (0.5 + 0.3 * np.sin(2 * np.pi * xx) * np.cos(np.pi * yy))[None, None]
        back = bicubic_resize(bicubic_resize(img, 64, 64), 32, 32)
        assert np.mean(np.abs(back - img)) < 1e-2

    def test_tensor_in_tensor_out(self):
        out = bicubic_resize(Tensor(np.zeros((1, 3, 8, 8), np.float32)), 2, 2)
        assert isinstance(out, Tensor) and out.dtype == np.float32


class TestParsingDownsample:
    def test_all_ones_and_zeros(self):
        for scale in (2, 4, 8):
            np.testing.assert_array_equal(parsing_downsample(np.ones((1, 1, 16, 16)), scale), 1)
            np.testing.assert_array_equal(parsing_downsample(np.zeros((1, 1, 16, 16)), scale), 0)

    def test_checkerboard_tie_is_one(self):
        board = (np.indices((8, 8)).sum(0) % 2).astype(np.float32)[None, None]
        np.testing.assert_array_equal(parsing_downsample(board, 2), 1)

    @pytest.mark.parametrize("scale", [2, 4, 8])
    def test_counting_oracle(self, scale):
        mask = (Rng(scale).random((1, 1, 16, 16)) > 0.5).astype(np.float32)
        out = parsing_downsample(mask, scale)
        for i in range(16 // scale):
            for j in range(16 // scale):
                count = int(mask[0, 0, i * scale:(i + 1) * scale, j * scale:(j + 1) * scale].sum())
                assert out[0, 0, i, j] == (1.0 if 2 * count >= scale * scale else 0.0)

    def test_indivisible(self):
        with pytest.raises(ContractError):
            parsing_downsample(np.ones((1, 1, 10, 10)), 4)


class TestColourAndRotation:
    def test_y_black_white(self):
        assert rgb_to_y(np.zeros((1, 3, 1, 1))).item() == pytest.approx(16 / 255)
        assert rgb_to_y(np.ones((1, 3, 1, 1))).item() == pytest.approx(235 / 255)

    def test_green_brighter_than_blue(self):
        g = rgb_to_y(np.array([0.0, 1.0, 0.0]).reshape(1, 3, 1, 1)).item()
        b = rgb_to_y(np.array([0.0, 0.0, 1.0]).reshape(1, 3, 1, 1)).item()
        assert g > b

    def test_rotate_zero_is_identity(self):
        m = (Rng(1).random((1, 1, 8, 8)) > 0.5).astype(np.float32)
        np.testing.assert_array_equal(rotate_map(m, 0.0), m)

    def test_rotate_keeps_binary_and_shape(self):
        m = (Rng(2).random((1, 1, 16, 16)) > 0.5).astype(np.float32)
        out = rotate_map(Tensor(m), 30.0)
        assert out.shape == m.shape and set(np.unique(out.data)) <= {0.0, 1.0}

    @pytest.mark.parametrize("size", [5, 6])
    def test_rotate_quarter_turns_match_rot90(self, size):
        m = np.arange(size * size, dtype=np.float32).reshape(1, 1, size, size)
        for k in (1, 2, 3):
            np.testing.assert_array_equal(rotate_map(m, 90.0 * k), np.rot90(m, k, axes=(2, 3)))

    def test_rotate_fills_corners_with_zero(self):
        out = rotate_map(np.ones((1, 1, 16, 16), np.float32), 45.0)
        assert out[0, 0, 0, 0] == 0 and out[0, 0, 8, 8] == 1


class TestDataset:
    def test_generate_and_load(self, tmp_path):
        manifest = generate_dataset(3, 2, 8, tmp_path)
        lines = manifest.path.read_text().splitlines()
        assert lines == ["scale=8", "00000", "00001"]
        loaded = load_manifest(tmp_path)
        assert loaded.ids == manifest.ids and loaded.scale == 8
        s = load_sample(loaded, "00001")
        assert s.hr.shape == (1, 3, 128, 128)
        assert s.lr.shape == (1, 3, 16, 16) and s.parsing_gt.shape == (1, 1, 16, 16)
        for sub in ("hr", "lr"):
            assert (tmp_path / sub / "00001.ppm").exists()

    def test_files_round_trip_bitwise(self, tmp_path):
        from fishfsr.data import make_sample, sample_seeds
        generate_dataset(4, 1, 4, tmp_path, hr_size=32)
        direct = make_sample("00000", sample_seeds(4, 1)[0], 4, 32)
        loaded = load_dataset(load_manifest(tmp_path))[0]
        for a, b in ((direct.hr, loaded.hr), (direct.lr, loaded.lr), (direct.parsing_gt, loaded.parsing_gt)):
            assert a.data.tobytes() == b.data.tobytes()

    def test_generation_is_pure(self, tmp_path):
        generate_dataset(9, 2, 4, tmp_path / "a", hr_size=32)
        generate_dataset(9, 2, 4, tmp_path / "b", hr_size=32)
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file():
                assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()

    def test_invariants(self, tmp_path):
        m = generate_dataset(1, 3, 4, tmp_path, hr_size=64)
        for s in load_dataset(m):
            assert s.hr.shape[2] == 4 * s.lr.shape[2]
            assert s.parsing_gt.shape[2:] == s.lr.shape[2:]
            assert set(np.unique(s.parsing_gt.data)) <= {0.0, 1.0}
            assert 0 <= s.lr.data.min() and s.lr.data.max() <= 1

    def test_bad_scale(self, tmp_path):
        with pytest.raises(ConfigError):
            generate_dataset(0, 1, 5, tmp_path)

    def test_missing_files(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_manifest(tmp_path)
        m = generate_dataset(0, 1, 4, tmp_path, hr_size=32)
        (tmp_path / "lr" / "00000.ften").unlink()
        with pytest.raises(FileNotFoundError, match="00000.ften"):
            load_sample(m, "00000")

    def test_split_subdirectory(self, tmp_path):
        generate_dataset(0, 1, 4, tmp_path / "test", hr_size=32, split="test")
        m = load_manifest(tmp_path, split="test")
        assert m.root == tmp_path / "test" and m.split == "test"
