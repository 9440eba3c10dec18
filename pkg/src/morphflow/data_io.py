"""Dataset ingestion, checkpoint persistence, and artifact emission.

File formats owned here:
  - IDX (big-endian magic 0x00000803 for uint8 image tensors, 0x00000801
    for label vectors), read and written;
  - checkpoint: magic "MFLOWCK1", u32-LE header length, UTF-8 header text,
    then repeated records [u32 name length, name, u32 rank, u32 dims...,
    float32-LE payload];
  - PGM (P5) / PPM (P6) sample grids with pixel values mapped affinely
    from [-1, 1] to [0, 255];
  - CSV metrics with a header row.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"MFLOWCK1"
CHECKPOINT_VERSION = 1


class IdxError(ValueError):
    """Malformed IDX input; the message states which check failed."""


@dataclass(frozen=True)
class ImageDataset:
    """Images as (N, C, H, W) float32 in [-1, 1]."""

    images: np.ndarray
    source: str

    def __post_init__(self):
        img = np.asarray(self.images, dtype=np.float32)
        if img.ndim != 4:
            raise ValueError("images must be (N, C, H, W)")
        if img.size and (not np.all(np.isfinite(img))
                         or img.min() < -1.0 or img.max() > 1.0):
            raise ValueError("image values must be finite and in [-1, 1]")
        object.__setattr__(self, "images", img)

    def __len__(self):
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# IDX


def load_idx(path) -> tuple[int, np.ndarray]:
    """Parse an IDX file, returning (magic, uint8 array).

    Validates the magic, the header completeness, the dimension budget,
    and the payload byte count, each with its own diagnostic.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxError(f"{path}: truncated IDX file (missing magic)")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic not in (0x00000803, 0x00000801):
        raise IdxError(f"{path}: bad IDX magic 0x{magic:08x}")
    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise IdxError(f"{path}: truncated IDX header ({len(raw)} bytes)")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    count = 1
    for d in dims:
        count *= int(d)
        if count > (1 << 40):
            raise IdxError(f"{path}: IDX dimension overflow {dims}")
    payload = len(raw) - header_end
    if payload != count:
        raise IdxError(f"{path}: IDX payload is {payload} bytes, dims {dims} "
                       f"require {count} (truncated or trailing garbage)")
    arr = np.frombuffer(raw[header_end:], dtype=np.uint8).reshape(dims)
    return magic, arr


def load_idx_images(path) -> np.ndarray:
    magic, arr = load_idx(path)
    if magic != 0x00000803:
        raise IdxError(f"{path}: label magic 0x{magic:08x} where an image tensor "
                       "(magic 0x00000803, 3 dims) was expected")
    return arr


def load_idx_labels(path) -> np.ndarray:
    magic, arr = load_idx(path)
    if magic != 0x00000801:
        raise IdxError(f"{path}: image magic 0x{magic:08x} where a label vector "
                       "(magic 0x00000801, 1 dim) was expected")
    return arr


def write_idx(path, arr: np.ndarray):
    """Serialize a uint8 tensor (1-D labels or 3-D images) to IDX bytes."""
    arr = np.ascontiguousarray(arr, dtype=np.uint8)
    if arr.ndim == 3:
        magic = 0x00000803
    elif arr.ndim == 1:
        magic = 0x00000801
    else:
        raise IdxError("IDX writer handles 1-D labels or 3-D image tensors")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        f.write(arr.tobytes())


def normalize_images(raw: np.ndarray) -> np.ndarray:
    """uint8 (N, H, W) -> float32 (N, 1, H, W) in [-1, 1] via x/127.5 - 1."""
    x = raw.astype(np.float32) / 127.5 - 1.0
    if x.ndim == 3:
        x = x[:, None]
    return np.clip(x, -1.0, 1.0)


# ---------------------------------------------------------------------------
# synthetic corpora


def _supersampled_axes(side: int, ss: int):
    c = (np.arange(side * ss) + 0.5) / ss
    return np.meshgrid(c, c, indexing="ij")


def make_synthetic_shapes(n: int, side: int, seed: int) -> ImageDataset:
    """Random anti-aliased discs, rectangles, and line segments.

    Coverage is rendered at 4x supersampling and box-filtered down;
    background is -1, shape interiors reach the drawn intensity.
    """
    if side < 8:
        raise ValueError("side must be >= 8")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5348]))
    ss = 4
    yy, xx = _supersampled_axes(side, ss)
    images = np.empty((n, 1, side, side), dtype=np.float32)
    for i in range(n):
        kind = rng.integers(0, 3)
        cy, cx = rng.uniform(0.25 * side, 0.75 * side, size=2)
        intensity = rng.uniform(0.6, 1.0)
        if kind == 0:
            r = rng.uniform(0.12 * side, 0.3 * side)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        elif kind == 1:
            hh = rng.uniform(0.1 * side, 0.3 * side)
            ww = rng.uniform(0.1 * side, 0.3 * side)
            th = rng.uniform(0.0, np.pi)
            ry = (yy - cy) * np.cos(th) + (xx - cx) * np.sin(th)
            rx = -(yy - cy) * np.sin(th) + (xx - cx) * np.cos(th)
            mask = (np.abs(ry) <= hh) & (np.abs(rx) <= ww)
        else:
            th = rng.uniform(0.0, np.pi)
            half = rng.uniform(0.2 * side, 0.45 * side)
            width = rng.uniform(0.03 * side, 0.08 * side)
            ry = (yy - cy) * np.cos(th) + (xx - cx) * np.sin(th)
            rx = -(yy - cy) * np.sin(th) + (xx - cx) * np.cos(th)
            mask = (np.abs(ry) <= half) & (np.abs(rx) <= width)
        cover = mask.reshape(side, ss, side, ss).mean(axis=(1, 3))
        images[i, 0] = -1.0 + (1.0 + intensity) * cover
    return ImageDataset(images=images, source="synthetic_shapes")


def make_gaussian_toy(n: int, side: int, seed: int, sigma: float = 0.3) -> ImageDataset:
    """iid Gaussian pixels, clipped to the image range; a sanity-check corpus."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x4754]))
    img = rng.normal(0.0, sigma, size=(n, 1, side, side))
    return ImageDataset(images=np.clip(img, -1.0, 1.0).astype(np.float32),
                        source="gaussian_toy")


# ---------------------------------------------------------------------------
# rotation augmentation


def bilinear_rotate(img: np.ndarray, angle_deg: float, fill: float = 0.0) -> np.ndarray:
    """Rotate (C, H, W) about the grid center, bilinear, constant fill outside."""
    C, H, W = img.shape
    th = np.deg2rad(angle_deg)
    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    # Inverse map: source = center + R(-theta) (dest - center).
    sy = cy + np.cos(th) * (ii - cy) + np.sin(th) * (jj - cx)
    sx = cx - np.sin(th) * (ii - cy) + np.cos(th) * (jj - cx)
    i0 = np.floor(sy).astype(np.int64)
    j0 = np.floor(sx).astype(np.int64)
    wy = (sy - i0).astype(img.dtype)
    wx = (sx - j0).astype(img.dtype)
    out = np.empty_like(img)
    for c in range(C):
        plane = img[c]

        def corner(iy, jx):
            inside = (iy >= 0) & (iy < H) & (jx >= 0) & (jx < W)
            vals = plane[np.clip(iy, 0, H - 1), np.clip(jx, 0, W - 1)]
            return np.where(inside, vals, img.dtype.type(fill))

        out[c] = ((1 - wy) * (1 - wx) * corner(i0, j0)
                  + (1 - wy) * wx * corner(i0, j0 + 1)
                  + wy * (1 - wx) * corner(i0 + 1, j0)
                  + wy * wx * corner(i0 + 1, j0 + 1))
    return out


@dataclass(frozen=True)
class RotationPolicy:
    """Either a discrete angle set or a continuous degree range."""

    angles_deg: tuple | None = None
    range_deg: tuple | None = None
    fill: float = 0.0

    def __post_init__(self):
        if (self.angles_deg is None) == (self.range_deg is None):
            raise ValueError("specify exactly one of angles_deg or range_deg")


def rotate_dataset(ds: ImageDataset, policy: RotationPolicy, seed: int) -> ImageDataset:
    """Rotate every image once by a policy-drawn angle (fixed per seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x524f]))
    n = len(ds)
    if policy.angles_deg is not None:
        angles = rng.choice(np.asarray(policy.angles_deg, dtype=np.float64), size=n)
    else:
        lo, hi = policy.range_deg
        angles = rng.uniform(lo, hi, size=n)
    out = np.empty_like(ds.images)
    for i in range(n):
        out[i] = bilinear_rotate(ds.images[i], float(angles[i]), policy.fill)
    return ImageDataset(images=np.clip(out, -1.0, 1.0), source=ds.source + "+rot")


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, header_text: str, arrays: dict):
    """Write the checkpoint container; arrays are stored float32 little-endian."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        hb = header_text.encode("utf-8")
        f.write(struct.pack("<I", len(hb)))
        f.write(hb)
        for name, arr in arrays.items():
            a = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
            f.write(a.tobytes())


def load_checkpoint(path) -> tuple[str, dict]:
    """Read a checkpoint, validating magic, version line, and payload sizes."""
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    pos = 12
    if len(raw) < pos + hlen:
        raise ValueError(f"{path}: corrupt checkpoint (truncated header)")
    header = raw[pos:pos + hlen].decode("utf-8")
    pos += hlen
    if f"format_version = {CHECKPOINT_VERSION}" not in header:
        raise ValueError(f"{path}: checkpoint format version mismatch "
                         f"(expected {CHECKPOINT_VERSION})")
    arrays = {}
    while pos < len(raw):
        try:
            (nlen,) = struct.unpack("<I", raw[pos:pos + 4])
            pos += 4
            name = raw[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack("<I", raw[pos:pos + 4])
            pos += 4
            dims = struct.unpack(f"<{rank}I", raw[pos:pos + 4 * rank])
            pos += 4 * rank
        except struct.error as e:
            raise ValueError(f"{path}: corrupt checkpoint (bad record header)") from e
        count = int(np.prod(dims)) if rank else 1
        nbytes = 4 * count
        if pos + nbytes > len(raw):
            raise ValueError(f"{path}: corrupt checkpoint (payload of {name!r} truncated)")
        arrays[name] = np.frombuffer(raw[pos:pos + nbytes], dtype="<f4").reshape(dims).copy()
        pos += nbytes
    return header, arrays


# ---------------------------------------------------------------------------
# artifacts


def _to_bytes(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip((values + 1.0) * 127.5, 0.0, 255.0)).astype(np.uint8)


def emit_grid(images: np.ndarray, cols: int, path):
    """Tile images into a grid and write PGM (1 channel) or PPM (3 channels).

    Values are mapped affinely from [-1, 1]; missing tiles are mid-gray.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[:, None]
    n, C, H, W = images.shape
    if n == 0 or cols < 1:
        raise ValueError("need at least one image and one column")
    rows = (n + cols - 1) // cols
    canvas = np.zeros((rows * H, cols * W, C), dtype=np.float32)
    for idx in range(n):
        r, c = divmod(idx, cols)
        canvas[r * H:(r + 1) * H, c * W:(c + 1) * W] = images[idx].transpose(1, 2, 0)
    data = _to_bytes(canvas)
    with open(path, "wb") as f:
        if C == 1:
            f.write(f"P5\n{cols * W} {rows * H}\n255\n".encode("ascii"))
            f.write(data[:, :, 0].tobytes())
        elif C == 3:
            f.write(f"P6\n{cols * W} {rows * H}\n255\n".encode("ascii"))
            f.write(data.tobytes())
        else:
            raise ValueError("grids support 1 or 3 channels")


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM back to float32 in [-1, 1] (inverse of emit_grid)."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        fields.append(raw[start:pos])
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    pix = np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)
    return pix.astype(np.float32) / (maxval / 2.0) - 1.0


def emit_csv(rows, path, header=None):
    """Write rows of values as CSV with a header row."""
    rows = list(rows)
    if not rows and header is None:
        raise ValueError("refusing to write an empty CSV with no header")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        if header is not None:
            writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# two-sample metric


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    na = np.sum(a * a, axis=1)[:, None]
    nb = np.sum(b * b, axis=1)[None, :]
    return np.maximum(na + nb - 2.0 * (a @ b.T), 0.0)


def mmd_metric(set_a: np.ndarray, set_b: np.ndarray, bandwidth: float) -> float:
    """Unbiased RBF-kernel maximum mean discrepancy on flattened pixels.

    Zero in expectation when both samples share a distribution; the
    unbiased estimator itself may dip slightly below zero.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.shape[1:] != b.shape[1:]:
        raise ValueError("sample sets must share the image shape")
    m, n = a.shape[0], b.shape[0]
    if m < 2 or n < 2:
        raise ValueError("need at least two samples per set")
    A = a.reshape(m, -1)
    B = b.reshape(n, -1)
    s = 2.0 * bandwidth * bandwidth
    kaa = np.exp(-_sq_dists(A, A) / s)
    kbb = np.exp(-_sq_dists(B, B) / s)
    kab = np.exp(-_sq_dists(A, B) / s)
    ta = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    tb = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(ta + tb - 2.0 * kab.mean())


def median_bandwidth(samples: np.ndarray) -> float:
    """Median pairwise distance, the usual RBF bandwidth heuristic."""
    x = np.asarray(samples, dtype=np.float64)
    x = x.reshape(x.shape[0], -1)
    d = np.sqrt(_sq_dists(x, x))
    iu = np.triu_indices(len(x), k=1)
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0
