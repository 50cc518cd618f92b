"""Grayscale codec pipeline: PGM ingest, patch partitioning, a JPEG-style
DCT quantizer, 9-neighbor block assembly, and the on-disk dataset format.

The built-in transform works on 8x8 patches only; externally quantized
symbols (any patch size) enter through `import_quantized`.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dctn, idctn


class CodecFormatError(ValueError):
    """Malformed image or dataset file."""


# ---------------------------------------------------------------------------
# PGM input/output
# ---------------------------------------------------------------------------

def load_pgm(path):
    """Read a binary (P5) PGM file with maxval 255.

    Returns a (height, width) uint8 array.  Anything else (wrong magic,
    non-255 maxval, truncated pixel data) raises CodecFormatError with the
    offending byte offset.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def token():
        nonlocal pos
        while True:
            while pos < len(data) and data[pos:pos + 1].isspace():
                pos += 1
            if pos < len(data) and data[pos:pos + 1] == b"#":
                while pos < len(data) and data[pos] != 0x0A:
                    pos += 1
                continue
            break
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CodecFormatError(f"{path}: truncated header at byte {start}")
        return data[start:pos]

    magic = token()
    if magic != b"P5":
        raise CodecFormatError(f"{path}: unsupported magic {magic!r} at byte 0")
    try:
        width = int(token())
        height = int(token())
        maxval = int(token())
    except ValueError as exc:
        raise CodecFormatError(f"{path}: bad header near byte {pos}") from exc
    if maxval != 255:
        raise CodecFormatError(f"{path}: maxval {maxval} != 255 at byte {pos}")
    pos += 1  # single whitespace after maxval
    expected = width * height
    pixels = data[pos:pos + expected]
    if len(pixels) != expected:
        raise CodecFormatError(
            f"{path}: truncated pixel data at byte {pos + len(pixels)}"
            f" (expected {expected} bytes)")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width).copy()


def save_pgm(path, image):
    """Write a (height, width) uint8 array as binary P5 with maxval 255."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 2:
        raise ValueError("image must be 2-D")
    height, width = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def center_crop(image, d):
    """Largest centered crop whose sides are multiples of d."""
    h, w = image.shape
    nh, nw = (h // d) * d, (w // d) * d
    if nh == 0 or nw == 0:
        raise CodecFormatError(f"image {w}x{h} smaller than patch size {d}")
    top, left = (h - nh) // 2, (w - nw) // 2
    return image[top:top + nh, left:left + nw]


# ---------------------------------------------------------------------------
# patch grid
# ---------------------------------------------------------------------------

def partition(image, d):
    """Split an image into non-overlapping d x d patches, row-major.

    Returns an array of shape (rows, cols, d, d).
    """
    h, w = image.shape
    if h % d or w % d:
        raise ValueError(
            f"image {w}x{h} not divisible by patch size {d}; center-crop first")
    rows, cols = h // d, w // d
    return (image.reshape(rows, d, cols, d).transpose(0, 2, 1, 3)).copy()


def stitch(patches):
    """Inverse of `partition`: (rows, cols, d, d) -> (rows*d, cols*d)."""
    rows, cols, d, d2 = patches.shape
    assert d == d2
    return patches.transpose(0, 2, 1, 3).reshape(rows * d, cols * d)


def block_window(target, grid_shape):
    """The 3x3 patch window used to reconstruct `target`, row-major.

    The window is centered at the target clamped one patch away from every
    border, so edge and corner patches reuse the nearest full interior
    window while keeping their own target index.
    """
    rows, cols = grid_shape
    if rows < 3 or cols < 3:
        raise ValueError("patch grid must be at least 3x3")
    i, j = target
    if not (0 <= i < rows and 0 <= j < cols):
        raise ValueError(f"target {target} outside grid {grid_shape}")
    ci = min(max(i, 1), rows - 2)
    cj = min(max(j, 1), cols - 2)
    return [(ci + di, cj + dj) for di in (-1, 0, 1) for dj in (-1, 0, 1)]


# ---------------------------------------------------------------------------
# DCT quantizer
# ---------------------------------------------------------------------------

# standard JPEG luminance quantization table
JPEG_LUMA_TABLE = np.array([
    [16, 11, 10, 16, 24, 40, 51, 61],
    [12, 12, 14, 19, 26, 58, 60, 55],
    [14, 13, 16, 24, 40, 57, 69, 56],
    [14, 17, 22, 29, 51, 87, 80, 62],
    [18, 22, 37, 56, 68, 109, 103, 77],
    [24, 35, 55, 64, 81, 104, 113, 92],
    [49, 64, 78, 87, 103, 121, 120, 101],
    [72, 92, 95, 98, 112, 100, 103, 99],
], dtype=np.float64)

SYMBOL_SCALE = 128.0  # quantized symbols are divided by this before the model


@dataclass
class QuantizerConfig:
    """Quality-scaled quantization table for the built-in 8x8 transform."""
    quality_scale: float = 1.0
    table: np.ndarray = field(default_factory=lambda: JPEG_LUMA_TABLE.copy())

    def __post_init__(self):
        self.table = np.asarray(self.table, dtype=np.float64)
        if self.quality_scale <= 0:
            raise ValueError("quality_scale must be positive")
        if np.any(self.table < 1):
            raise ValueError("quantization table entries must be >= 1")

    @property
    def steps(self):
        return self.table * self.quality_scale


def dct_quantize(patch, cfg):
    """Quantized symbol vector for one 8x8 patch of 0..255 pixel values.

    Pipeline: center at 0, orthonormal 2-D DCT-II, divide by the
    quality-scaled table, round to nearest integer, then divide by
    SYMBOL_SCALE so symbols land roughly in [-1, 1].
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (8, 8):
        raise ValueError("built-in transform handles 8x8 patches only")
    coeffs = dctn(patch - 128.0, type=2, norm="ortho")
    return (np.round(coeffs / cfg.steps) / SYMBOL_SCALE).reshape(-1)


def dequantize_baseline(symbols, cfg):
    """Non-neural reconstruction of a quantized patch, in [0, 1].

    Undoes the symbol scaling, multiplies the table back, inverse-DCTs,
    re-centers, and clamps.
    """
    coeffs = np.asarray(symbols, dtype=np.float64).reshape(8, 8) * SYMBOL_SCALE
    pixels = idctn(coeffs * cfg.steps, type=2, norm="ortho") + 128.0
    return np.clip(pixels / 255.0, 0.0, 1.0).reshape(-1)


# ---------------------------------------------------------------------------
# dataset file
# ---------------------------------------------------------------------------

DATASET_MAGIC = b"NIDC"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")  # magic, version, d, N, record count


@dataclass
class DatasetFile:
    """In-memory patch-block dataset mirroring the on-disk format.

    inputs:  (count, N, d*d) float32 quantized symbols
    targets: (count, d*d)    float32 pixel values in [0, 1]
    """
    d: int
    n_inputs: int
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs/targets record counts differ")

    def __len__(self):
        return self.inputs.shape[0]

    def save(self, path):
        d2 = self.d * self.d
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(DATASET_MAGIC, DATASET_VERSION,
                                  self.d, self.n_inputs, len(self)))
            records = np.concatenate(
                [self.inputs.reshape(len(self), self.n_inputs * d2),
                 self.targets.reshape(len(self), d2)], axis=1)
            fh.write(np.ascontiguousarray(records, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = fh.read(_HEADER.size)
            if len(header) < _HEADER.size:
                raise CodecFormatError(f"{path}: truncated header")
            magic, version, d, n_inputs, count = _HEADER.unpack(header)
            if magic != DATASET_MAGIC:
                raise CodecFormatError(f"{path}: bad magic {magic!r} at byte 0")
            if version != DATASET_VERSION:
                raise CodecFormatError(f"{path}: unsupported version {version}")
            d2 = d * d
            rec_floats = n_inputs * d2 + d2
            raw = fh.read()
        expected = count * rec_floats * 4
        if len(raw) != expected:
            bad_record = len(raw) // (rec_floats * 4)
            raise CodecFormatError(
                f"{path}: truncated at record {bad_record}"
                f" ({len(raw)} of {expected} payload bytes)")
        records = np.frombuffer(raw, dtype="<f4").reshape(count, rec_floats)
        return cls(d=d, n_inputs=n_inputs,
                   inputs=records[:, :n_inputs * d2].reshape(count, n_inputs, d2).copy(),
                   targets=records[:, n_inputs * d2:].copy())


def blocks_from_image(image, d, cfg):
    """All patch blocks of one image: (inputs (P, 9, d2), targets (P, d2)).

    One block per patch, targets enumerated row-major over the patch grid.
    """
    image = center_crop(np.asarray(image), d)
    patches = partition(image, d)
    rows, cols, _, _ = patches.shape
    symbols = np.empty((rows, cols, d * d), dtype=np.float64)
    for i in range(rows):
        for j in range(cols):
            symbols[i, j] = dct_quantize(patches[i, j], cfg)
    inputs = np.empty((rows * cols, 9, d * d), dtype=np.float32)
    targets = np.empty((rows * cols, d * d), dtype=np.float32)
    for i in range(rows):
        for j in range(cols):
            k = i * cols + j
            window = block_window((i, j), (rows, cols))
            for w, (wi, wj) in enumerate(window):
                inputs[k, w] = symbols[wi, wj]
            targets[k] = patches[i, j].reshape(-1).astype(np.float64) / 255.0
    return inputs, targets


def extract_dataset(images, d, cfg, rng):
    """Build a shuffled DatasetFile from a list of grayscale images.

    Two-pass shuffle: image order is permuted first, then the concatenated
    block stream is permuted globally.  The record multiset is unchanged.
    """
    if len(images) == 0:
        raise ValueError("no input images")
    order = rng.permutation(len(images))
    all_inputs, all_targets = [], []
    for idx in order:
        inputs, targets = blocks_from_image(images[idx], d, cfg)
        all_inputs.append(inputs)
        all_targets.append(targets)
    inputs = np.concatenate(all_inputs, axis=0)
    targets = np.concatenate(all_targets, axis=0)
    perm = rng.permutation(inputs.shape[0])
    return DatasetFile(d=d, n_inputs=9, inputs=inputs[perm], targets=targets[perm])


def import_quantized(path, d, n_inputs=9):
    """Wrap an externally produced raw symbol file as a DatasetFile.

    The raw file is headerless little-endian float32, one record =
    n_inputs*d*d input symbols followed by d*d targets.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    d2 = d * d
    rec_bytes = (n_inputs * d2 + d2) * 4
    if len(raw) % rec_bytes:
        raise CodecFormatError(
            f"{path}: truncated at record {len(raw) // rec_bytes}"
            f" (record size {rec_bytes} bytes)")
    count = len(raw) // rec_bytes
    records = np.frombuffer(raw, dtype="<f4").reshape(count, n_inputs * d2 + d2)
    return DatasetFile(d=d, n_inputs=n_inputs,
                       inputs=records[:, :n_inputs * d2].reshape(count, n_inputs, d2).copy(),
                       targets=records[:, n_inputs * d2:].copy())
