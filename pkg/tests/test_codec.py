import numpy as np
import pytest

from iterdec.codec import (CodecFormatError, DatasetFile, QuantizerConfig,
                           block_window, blocks_from_image, center_crop,
                           dct_quantize, dequantize_baseline, extract_dataset,
                           import_quantized, load_pgm, partition, save_pgm,
                           stitch)
from iterdec.numerics import SeededRng
from scipy.fft import dctn, idctn


class TestPgm:
    def test_roundtrip(self, tmp_path):
        rng = SeededRng(1)
        img = (rng.uniform(0, 256, (16, 24)) % 256).astype(np.uint8)
        path = tmp_path / "img.pgm"
        save_pgm(path, img)
        np.testing.assert_array_equal(load_pgm(path), img)

    def test_constant_image(self, tmp_path):
        path = tmp_path / "c.pgm"
        save_pgm(path, np.full((16, 16), 128, dtype=np.uint8))
        assert np.all(load_pgm(path) == 128)

    def test_color_magic_rejected(self, tmp_path):
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(12))
        with pytest.raises(CodecFormatError):
            load_pgm(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(CodecFormatError, match="truncated"):
            load_pgm(path)

    def test_bad_maxval(self, tmp_path):
        path = tmp_path / "m.pgm"
        path.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(CodecFormatError, match="maxval"):
            load_pgm(path)

    def test_comment_in_header(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# a comment\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        np.testing.assert_array_equal(load_pgm(path),
                                      np.array([[1, 2], [3, 4]], dtype=np.uint8))


class TestPartition:
    def test_counts(self):
        assert partition(np.zeros((512, 512), dtype=np.uint8), 8).shape[:2] == (64, 64)
        rows, cols = partition(np.zeros((1600, 1600), dtype=np.uint8), 8).shape[:2]
        assert rows * cols == 40000
        rows, cols = partition(np.zeros((512, 512), dtype=np.uint8), 64).shape[:2]
        assert rows * cols == 64

    def test_indivisible(self):
        with pytest.raises(ValueError, match="crop"):
            partition(np.zeros((50, 48), dtype=np.uint8), 8)

    def test_stitch_inverse(self):
        rng = SeededRng(3)
        img = (rng.uniform(0, 256, (40, 32)) % 256).astype(np.uint8)
        np.testing.assert_array_equal(stitch(partition(img, 8)), img)

    def test_center_crop(self):
        img = np.arange(19 * 21, dtype=np.uint8).reshape(19, 21)
        cropped = center_crop(img, 8)
        assert cropped.shape == (16, 16)
        np.testing.assert_array_equal(cropped, img[1:17, 2:18])


class TestBlockWindow:
    def test_interior_target(self):
        assert block_window((1, 1), (8, 8)) == [
            (0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (2, 2)]

    def test_next_target(self):
        assert block_window((1, 2), (8, 8)) == [
            (0, 1), (0, 2), (0, 3), (1, 1), (1, 2), (1, 3), (2, 1), (2, 2), (2, 3)]

    def test_corner_reuses_interior_window(self):
        assert block_window((0, 0), (8, 8)) == block_window((1, 1), (8, 8))

    def test_all_targets_in_bounds(self):
        rows, cols = 5, 7
        for i in range(rows):
            for j in range(cols):
                window = block_window((i, j), (rows, cols))
                assert len(window) == 9
                assert all(0 <= r < rows and 0 <= c < cols for r, c in window)
                # interior targets sit at the window center
                if 1 <= i <= rows - 2 and 1 <= j <= cols - 2:
                    assert window[4] == (i, j)

    def test_small_grid_rejected(self):
        with pytest.raises(ValueError):
            block_window((0, 0), (2, 5))


class TestQuantizer:
    def test_config_validation(self):
        with pytest.raises(ValueError):
            QuantizerConfig(quality_scale=0.0)
        with pytest.raises(ValueError):
            QuantizerConfig(table=np.zeros((8, 8)))

    def test_zero_patch(self):
        q = dct_quantize(np.full((8, 8), 128.0), QuantizerConfig())
        np.testing.assert_array_equal(q, np.zeros(64))

    def test_constant_patch_only_dc(self):
        q = dct_quantize(np.full((8, 8), 200.0), QuantizerConfig())
        assert q[0] != 0.0
        np.testing.assert_array_equal(q[1:], np.zeros(63))

    def test_quantization_error_bound(self):
        cfg = QuantizerConfig(quality_scale=2.0)
        rng = SeededRng(5)
        for _ in range(25):
            patch = rng.uniform(0, 255, (8, 8))
            coeffs = dctn(patch - 128.0, type=2, norm="ortho")
            recon = np.asarray(dct_quantize(patch, cfg)).reshape(8, 8) * 128.0 * cfg.steps
            assert np.all(np.abs(recon - coeffs) <= cfg.steps / 2 + 1e-9)

    def test_dequantize_zero_is_mid_gray(self):
        p = dequantize_baseline(np.zeros(64), QuantizerConfig())
        np.testing.assert_allclose(p, np.full(64, 128.0 / 255.0), atol=1e-12)

    def test_quantize_dequantize_fixed_point(self):
        cfg = QuantizerConfig()
        rng = SeededRng(6)
        for _ in range(20):
            # smooth patches keep the reconstruction inside [0, 255]
            base = rng.uniform(60, 200)
            patch = np.clip(base + rng.uniform(-20, 20, (8, 8)), 0, 255)
            q1 = dct_quantize(patch, cfg)
            p1 = dequantize_baseline(q1, cfg)
            q2 = dct_quantize(p1.reshape(8, 8) * 255.0, cfg)
            np.testing.assert_array_equal(q1, q2)

    def test_dct_orthonormal_roundtrip(self):
        rng = SeededRng(7)
        patch = rng.uniform(-128, 127, (8, 8))
        np.testing.assert_allclose(
            idctn(dctn(patch, type=2, norm="ortho"), type=2, norm="ortho"),
            patch, atol=1e-9)

    def test_baseline_beats_noise(self):
        cfg = QuantizerConfig()
        rng = SeededRng(8)
        base = rng.uniform(40, 200)
        patch = np.clip(base + rng.uniform(-25, 25, (8, 8)), 0, 255)
        recon = dequantize_baseline(dct_quantize(patch, cfg), cfg)
        noise = rng.uniform(0, 1, 64)
        ref = patch.reshape(-1) / 255.0
        assert np.mean((recon - ref) ** 2) < np.mean((noise - ref) ** 2)


class TestDataset:
    def _images(self, count=2, side=32):
        rng = SeededRng(9)
        return [(rng.uniform(0, 256, (side, side)) % 256).astype(np.uint8)
                for _ in range(count)]

    def test_block_count(self):
        rng = SeededRng(10)
        img = (rng.uniform(0, 256, (512, 512)) % 256).astype(np.uint8)
        ds = extract_dataset([img], 8, QuantizerConfig(), SeededRng(1))
        assert len(ds) == 4096

    def test_same_seed_identical(self, tmp_path):
        images = self._images()
        a = extract_dataset(images, 8, QuantizerConfig(), SeededRng(2))
        b = extract_dataset(images, 8, QuantizerConfig(), SeededRng(2))
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.targets, b.targets)

    def test_shuffle_preserves_multiset(self):
        images = self._images()
        shuffled = extract_dataset(images, 8, QuantizerConfig(), SeededRng(3))
        records = []
        for img in images:
            inputs, targets = blocks_from_image(img, 8, QuantizerConfig())
            records.append(np.concatenate(
                [inputs.reshape(len(inputs), -1), targets], axis=1))
        plain = np.concatenate(records)
        mixed = np.concatenate([shuffled.inputs.reshape(len(shuffled), -1),
                                shuffled.targets], axis=1)
        plain_sorted = plain[np.lexsort(plain.T)]
        mixed_sorted = mixed[np.lexsort(mixed.T)]
        np.testing.assert_array_equal(plain_sorted, mixed_sorted)

    def test_empty_input(self):
        with pytest.raises(ValueError, match="no input images"):
            extract_dataset([], 8, QuantizerConfig(), SeededRng(1))

    def test_file_roundtrip_bit_exact(self, tmp_path):
        ds = extract_dataset(self._images(), 8, QuantizerConfig(), SeededRng(4))
        path = tmp_path / "data.nidc"
        ds.save(path)
        loaded = DatasetFile.load(path)
        assert loaded.d == 8 and loaded.n_inputs == 9
        np.testing.assert_array_equal(loaded.inputs, ds.inputs)
        np.testing.assert_array_equal(loaded.targets, ds.targets)
        path2 = tmp_path / "data2.nidc"
        loaded.save(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_truncated_file(self, tmp_path):
        ds = extract_dataset(self._images(1, 24), 8, QuantizerConfig(), SeededRng(5))
        path = tmp_path / "trunc.nidc"
        ds.save(path)
        data = path.read_bytes()
        path.write_bytes(data[:-3])
        with pytest.raises(CodecFormatError, match="record"):
            DatasetFile.load(path)


class TestImportQuantized:
    def test_import(self, tmp_path):
        rng = SeededRng(11)
        d2 = 64
        records = rng.uniform(-1, 1, (10, 10 * d2)).astype("<f4")
        path = tmp_path / "raw.bin"
        path.write_bytes(records.tobytes())
        ds = import_quantized(path, 8, 9)
        assert len(ds) == 10
        np.testing.assert_array_equal(
            ds.inputs.reshape(10, -1), records[:, :9 * d2])

    def test_truncated_record(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(bytes(10 * 640 * 4 + 12))
        with pytest.raises(CodecFormatError, match="record 10"):
            import_quantized(path, 8, 9)

    def test_export_import_bit_exact(self, tmp_path):
        rng = SeededRng(12)
        inputs = rng.uniform(-1, 1, (5, 9, 64)).astype(np.float32)
        targets = rng.uniform(0, 1, (5, 64)).astype(np.float32)
        raw = tmp_path / "raw.bin"
        raw.write_bytes(np.concatenate(
            [inputs.reshape(5, -1), targets], axis=1).astype("<f4").tobytes())
        ds = import_quantized(raw, 8, 9)
        out = tmp_path / "ds.nidc"
        ds.save(out)
        loaded = DatasetFile.load(out)
        np.testing.assert_array_equal(loaded.inputs, inputs)
        np.testing.assert_array_equal(loaded.targets, targets)
