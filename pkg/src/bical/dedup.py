"""Near-duplicate clip filtering with census descriptors and hyperplane LSH.

Each frame is reduced to a 3x3 census descriptor, projected onto 64 random
Gaussian hyperplanes to get a 64-bit code, and clips are compared by the mean
Hamming distance over all cross-clip frame pairs.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidInput, ParseError

N_BITS = 64
DEFAULT_THRESHOLD = 2.0

# neighbor offsets (dy, dx), clockwise from top-left; neighbor i lands in bit 7 - i
_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))


@dataclass
class Clip:
    clip_id: str
    frames: list

    def __post_init__(self):
        if len(self.frames) == 0:
            raise InvalidInput(f"clip {self.clip_id!r} has no frames")
        frames = [np.asarray(f) for f in self.frames]
        shape = frames[0].shape
        for f in frames:
            if f.ndim != 2:
                raise InvalidInput(f"clip {self.clip_id!r}: frames must be 2D grayscale")
            if f.shape != shape:
                raise InvalidInput(f"clip {self.clip_id!r}: mixed frame sizes {shape} and {f.shape}")
        self.frames = frames

    @property
    def frame_shape(self) -> tuple:
        return self.frames[0].shape


def census_transform(frame) -> np.ndarray:
    """Per-interior-pixel 8-bit masks, row-major, as a uint8 vector.

    Bit set iff the neighbor is strictly less than the center. Reading a mask
    MSB first walks the neighbors clockwise starting at the top-left.
    """
    img = np.asarray(frame)
    if img.ndim != 2 or img.shape[0] < 3 or img.shape[1] < 3:
        raise InvalidInput(f"census transform needs a 2D frame of at least 3x3, got {img.shape}")
    img = img.astype(np.int64)
    h, w = img.shape
    center = img[1:h - 1, 1:w - 1]
    mask = np.zeros(center.shape, dtype=np.uint8)
    for i, (dy, dx) in enumerate(_NEIGHBORS):
        nb = img[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx]
        mask |= (nb < center).astype(np.uint8) << np.uint8(7 - i)
    return mask.ravel()


def descriptor_vector(masks) -> np.ndarray:
    """Unpack census masks into a +-1 vector (set bit -> +1)."""
    bits = np.unpackbits(np.asarray(masks, dtype=np.uint8))
    return bits.astype(np.float64) * 2.0 - 1.0


def make_planes(dim: int, seed: int = 0, n_bits: int = N_BITS) -> np.ndarray:
    """Gaussian hyperplane normals, shape (n_bits, dim)."""
    if dim <= 0 or not 0 < n_bits <= 64:
        raise InvalidInput(f"bad plane shape ({n_bits}, {dim})")
    return np.random.default_rng(seed).standard_normal((n_bits, dim))


def lsh_hash(descriptor, planes) -> np.uint64:
    """Bit b of the code is set iff descriptor . planes[b] >= 0."""
    v = np.asarray(descriptor, dtype=np.float64).ravel()
    planes = np.asarray(planes, dtype=np.float64)
    if planes.ndim != 2 or planes.shape[1] != v.size:
        raise InvalidInput(f"descriptor length {v.size} does not match planes {planes.shape}")
    bits = (planes @ v >= 0).astype(np.uint64)
    return np.uint64(np.sum(bits << np.arange(planes.shape[0], dtype=np.uint64)))


def frame_hash(frame, planes) -> np.uint64:
    return lsh_hash(descriptor_vector(census_transform(frame)), planes)


def descriptor_dim(frame_shape) -> int:
    h, w = frame_shape
    return 8 * (h - 2) * (w - 2)


def clip_codes(clip: Clip, planes) -> np.ndarray:
    return np.array([frame_hash(f, planes) for f in clip.frames], dtype=np.uint64)


def hamming(a, b) -> np.ndarray:
    return np.bitwise_count(np.bitwise_xor(np.asarray(a, dtype=np.uint64),
                                           np.asarray(b, dtype=np.uint64))).astype(np.int64)


def code_distance(codes_a, codes_b) -> float:
    """Mean Hamming distance over every (frame of a, frame of b) pair."""
    a = np.atleast_1d(np.asarray(codes_a, dtype=np.uint64))
    b = np.atleast_1d(np.asarray(codes_b, dtype=np.uint64))
    if a.size == 0 or b.size == 0:
        raise InvalidInput("clip distance needs non-empty code lists")
    return float(hamming(a[:, None], b[None, :]).mean())


def clip_distance(a: Clip, b: Clip, planes) -> float:
    return code_distance(clip_codes(a, planes), clip_codes(b, planes))


@dataclass
class DedupResult:
    retained: list
    dropped: list  # (clip_id, min distance) pairs
    threshold: float
    min_distances: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "retained": list(self.retained),
            "dropped": [{"clip_id": cid, "min_distance": d} for cid, d in self.dropped],
        }


def _check_shapes(clips) -> tuple | None:
    shapes = {c.frame_shape for c in clips}
    if len(shapes) > 1:
        raise InvalidInput(f"all clips must share one frame size, found {sorted(shapes)}")
    return shapes.pop() if shapes else None


def dedup_filter(corpus, downstream, threshold: float = DEFAULT_THRESHOLD, planes=None,
                 seed: int = 0, n_jobs: int = 1) -> DedupResult:
    """Drop corpus clips whose closest downstream clip is nearer than ``threshold``.

    ``planes`` defaults to a fresh set drawn from ``seed``. Output does not
    depend on ``n_jobs``.
    """
    if threshold < 0:
        raise InvalidInput(f"threshold must be >= 0, got {threshold}")
    corpus, downstream = list(corpus), list(downstream)
    shape = _check_shapes(corpus + downstream)
    if not downstream:
        return DedupResult([c.clip_id for c in corpus], [], float(threshold))
    if planes is None:
        planes = make_planes(descriptor_dim(shape), seed)
    down_codes = [clip_codes(c, planes) for c in downstream]

    def min_dist(clip):
        codes = clip_codes(clip, planes)
        return min(code_distance(codes, d) for d in down_codes)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            dists = list(pool.map(min_dist, corpus))
    else:
        dists = [min_dist(c) for c in corpus]
    retained, dropped = [], []
    for clip, d in zip(corpus, dists):
        if d < threshold:
            dropped.append((clip.clip_id, d))
        else:
            retained.append(clip.clip_id)
    return DedupResult(retained, dropped, float(threshold),
                       {c.clip_id: d for c, d in zip(corpus, dists)})


# PGM I/O: a clip is a directory of frame files, read in sorted name order

def read_frame(path) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "I", "I;16", "I;16B"):
                raise ParseError(f"expected a grayscale PGM, got mode {im.mode}", path=str(path))
            return np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ParseError(f"unreadable frame: {exc}", path=str(path)) from exc


def write_frame(path, frame) -> None:
    from PIL import Image
    arr = np.asarray(frame)
    if arr.dtype != np.uint8:
        raise InvalidInput("frames are written as 8-bit grayscale")
    Image.fromarray(arr).save(str(path), format="PPM")


def load_clip(directory) -> Clip:
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() == ".pgm")
    if not files:
        raise ParseError("clip directory holds no .pgm frames", path=str(directory))
    return Clip(directory.name, [read_frame(p) for p in files])


def save_clip(directory, clip: Clip) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(clip.frames):
        write_frame(directory / f"frame_{i:04d}.pgm", frame)


def load_clips(root) -> list:
    """Every subdirectory of ``root`` is one clip."""
    root = Path(root)
    if not root.is_dir():
        raise ParseError("clip root is not a directory", path=str(root))
    return [load_clip(d) for d in sorted(p for p in root.iterdir() if p.is_dir())]
