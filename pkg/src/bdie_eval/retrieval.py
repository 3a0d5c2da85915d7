"""Wavelet hashing of page images and nearest-neighbour lookup by Manhattan
distance between hashes.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyImage, EmptyIndex, LengthMismatch, MalformedInput

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm", ".pnm")


@dataclass(frozen=True, eq=False)
class WaveletHash:
    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits, dtype=np.uint8).ravel()
        side = int(round(len(bits) ** 0.5))
        if side * side != len(bits) or not len(bits):
            raise ValueError(f"hash length {len(bits)} is not a non-zero perfect square")
        if np.any(bits > 1):
            raise ValueError("hash bits must be 0 or 1")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WaveletHash) and np.array_equal(self.bits, other.bits)

    def __hash__(self) -> int:
        return hash(self.bits.tobytes())

    def to_hex(self) -> str:
        return f"{len(self.bits)}:" + np.packbits(self.bits).tobytes().hex()

    @classmethod
    def from_hex(cls, s: str) -> WaveletHash:
        try:
            n, payload = s.split(":", 1)
            bits = np.unpackbits(np.frombuffer(bytes.fromhex(payload), dtype=np.uint8))[: int(n)]
        except ValueError as exc:
            raise MalformedInput(f"bad hash string {s!r}") from exc
        return cls(bits)


def _box_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic matrix averaging input samples over each output interval."""
    weights = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for o in range(n_out):
        start, stop = o * scale, (o + 1) * scale
        first, last = int(np.floor(start)), int(np.ceil(stop))
        for i in range(first, min(last, n_in)):
            weights[o, i] = min(stop, i + 1) - max(start, i)
    return weights / weights.sum(axis=1, keepdims=True)


def box_resize(image: np.ndarray, height: int, width: int) -> np.ndarray:
    """Area-averaging resize of a 2-D array."""
    return _box_weights(image.shape[0], height) @ image @ _box_weights(image.shape[1], width).T


def haar_approximation(pixels: np.ndarray, levels: int) -> np.ndarray:
    """Approximation band after ``levels`` orthonormal 2-D Haar steps."""
    approx = pixels
    for _ in range(levels):
        h, w = approx.shape
        if h % 2 or w % 2:
            raise ValueError(f"cannot halve a {h}x{w} band")
        approx = (
            approx[0::2, 0::2] + approx[0::2, 1::2] + approx[1::2, 0::2] + approx[1::2, 1::2]
        ) / 2.0
    return approx


def to_grayscale(image: np.ndarray | Image.Image) -> np.ndarray:
    if isinstance(image, Image.Image):
        return np.asarray(image.convert("L"), dtype=np.float64)
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        # ITU-R 601 luma, the same weights PIL uses for mode "L".
        arr = arr[..., 0] * 0.299 + arr[..., 1] * 0.587 + arr[..., 2] * 0.114
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D grayscale raster, got shape {arr.shape}")
    return arr


def wavelet_hash(
    image: np.ndarray | Image.Image,
    image_scale: int = 64,
    levels: int = 3,
) -> WaveletHash:
    """Hash an image: resize to ``image_scale`` squared, take the Haar
    approximation band after ``levels`` steps and set a bit where a
    coefficient is strictly above the band median."""
    pixels = to_grayscale(image)
    if pixels.size == 0:
        raise EmptyImage("cannot hash an empty image")
    if image_scale % (2**levels):
        raise ValueError(f"image_scale {image_scale} is not divisible by 2**{levels}")
    band = haar_approximation(box_resize(pixels, image_scale, image_scale), levels)
    return WaveletHash((band > np.median(band)).astype(np.uint8))


def load_image(path: str | Path) -> Image.Image:
    try:
        with Image.open(path) as img:
            img.load()
            return img.convert("L")
    except OSError as exc:
        raise MalformedInput(f"cannot decode image {path}: {exc}") from exc


def manhattan_distance(a: WaveletHash, b: WaveletHash) -> int:
    if len(a) != len(b):
        raise LengthMismatch(f"hash lengths differ: {len(a)} vs {len(b)}")
    return int(np.abs(a.bits.astype(np.int64) - b.bits.astype(np.int64)).sum())


@dataclass
class RetrievalIndex:
    entries: dict[str, WaveletHash] = field(default_factory=dict)

    def add(self, identifier: str, h: WaveletHash) -> None:
        if identifier in self.entries:
            raise ValueError(f"duplicate identifier {identifier!r}")
        self.entries[identifier] = h

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> str:
        return json.dumps({k: self.entries[k].to_hex() for k in sorted(self.entries)}, indent=1) + "\n"

    @classmethod
    def from_json(cls, data: str | bytes) -> RetrievalIndex:
        try:
            raw = json.loads(data)
        except json.JSONDecodeError as exc:
            raise MalformedInput(f"invalid index file: {exc}") from exc
        if not isinstance(raw, dict):
            raise MalformedInput("index file must hold an object of id -> hash")
        return cls({k: WaveletHash.from_hex(v) for k, v in raw.items()})

    @classmethod
    def from_hashes(cls, items: Mapping[str, WaveletHash] | Iterable[tuple[str, WaveletHash]]) -> RetrievalIndex:
        index = cls()
        pairs = items.items() if isinstance(items, Mapping) else items
        for k, h in pairs:
            index.add(k, h)
        return index


def build_index(image_dir: str | Path, **hash_kwargs) -> RetrievalIndex:
    """Hash every supported image under ``image_dir``; ids are relative paths."""
    root = Path(image_dir)
    index = RetrievalIndex()
    for path in sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES):
        index.add(path.relative_to(root).as_posix(), wavelet_hash(load_image(path), **hash_kwargs))
    return index


def retrieve_nearest(index: RetrievalIndex, query: WaveletHash, k: int = 1) -> list[tuple[str, int]]:
    if not index.entries:
        raise EmptyIndex("the retrieval index is empty")
    if k < 1:
        raise ValueError(f"k must be positive, got {k}")
    ranked = sorted((manhattan_distance(h, query), ident) for ident, h in index.entries.items())
    return [(ident, d) for d, ident in ranked[:k]]
