"""Class-wise image compression and per-epoch sampling from the archive.

Each class is compressed into its own container with the clustering
phase disabled (``m = 0``); one image is one record with one int column
per sample position. Colour images can first be moved to YCbCr and then
to the frequency domain with an orthonormal 2-D DCT over each whole
channel, which concentrates energy into few coefficients and gives the
base search more low-entropy bit positions to work with.

Integer coefficients cannot reproduce the pixels exactly. The decoder
for the YCbCr+DCT chain is fixed: inverse DCT and inverse colour
transform in floating point, then one rounding to 8 bits. The encoder
uses error feedback when choosing the integer coefficients, so every
pixel of every decoded image is within :data:`MAX_ABS_ERROR` of the
original.
"""

from __future__ import annotations

import gzip
import math
import re
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.fft

from . import container
from .bitcodec import decode_int_matrix, encode_int_matrix, int_matrix_schema
from .exceptions import CorruptContainer, ShapeMismatch, WrongDomain
from .gede import CompressedDataset, SearchConfig, compress

DOMAINS = ("spatial_rgb", "spatial_gray", "ycbcr", "dct_coeff")
MAX_ABS_ERROR = 2
MANIFEST_FORMAT = "egd-archive-1"

# full-range BT.601 (the JFIF convention)
_RGB2YCC = np.array([[0.299, 0.587, 0.114],
                     [-0.168736, -0.331264, 0.5],
                     [0.5, -0.418688, -0.081312]])
_YCC2RGB = np.array([[1.0, 0.0, 1.402],
                     [1.0, -0.344136, -0.714136],
                     [1.0, 1.772, 0.0]])
_CHROMA = np.array([0.0, 128.0, 128.0])


@dataclass(frozen=True)
class ImageTensor:
    """Integer samples of shape ``(H, W, C)`` or a batch ``(N, H, W, C)``.

    ``source`` records the domain a ``dct_coeff`` tensor was computed from
    so the inverse transform knows where to go back to.
    """

    data: np.ndarray
    domain: str
    source: str | None = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise WrongDomain(f"unknown domain {self.domain!r}")
        data = np.asarray(self.data)
        if data.ndim not in (3, 4):
            raise ShapeMismatch("image data must be (H, W, C) or (N, H, W, C)")
        if data.dtype.kind not in "iu":
            raise WrongDomain("image samples must be integers")
        c = data.shape[-1]
        if self.domain == "spatial_gray" and c != 1:
            raise WrongDomain("spatial_gray needs exactly one channel")
        if self.domain in ("spatial_rgb", "ycbcr") and c != 3:
            raise WrongDomain(f"{self.domain} needs three channels")
        if self.domain != "dct_coeff" and data.size and (data.min() < 0 or data.max() > 255):
            raise WrongDomain("spatial samples must lie in [0, 255]")
        if self.domain == "dct_coeff" and self.source not in ("spatial_gray", "ycbcr", "spatial_rgb"):
            raise WrongDomain("dct_coeff needs the source domain")

    @property
    def height(self) -> int:
        return self.data.shape[-3]

    @property
    def width(self) -> int:
        return self.data.shape[-2]

    @property
    def channels(self) -> int:
        return self.data.shape[-1]


def _require(img: ImageTensor, *domains: str) -> None:
    if img.domain not in domains:
        raise WrongDomain(f"expected {' or '.join(domains)}, got {img.domain}")


def _to_byte(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _ycc_float(rgb: np.ndarray) -> np.ndarray:
    return rgb.astype(np.float64) @ _RGB2YCC.T + _CHROMA


def _rgb_float(ycc: np.ndarray) -> np.ndarray:
    return (ycc - _CHROMA) @ _YCC2RGB.T


def rgb_to_ycbcr(img: ImageTensor) -> ImageTensor:
    _require(img, "spatial_rgb")
    return ImageTensor(_to_byte(_ycc_float(img.data)), "ycbcr")


def ycbcr_to_rgb(img: ImageTensor) -> ImageTensor:
    _require(img, "ycbcr")
    return ImageTensor(_to_byte(_rgb_float(img.data.astype(np.float64))), "spatial_rgb")


def _dct(x: np.ndarray) -> np.ndarray:
    return scipy.fft.dctn(x, axes=(-3, -2), norm="ortho")


def _idct(c: np.ndarray) -> np.ndarray:
    return scipy.fft.idctn(c, axes=(-3, -2), norm="ortho")


def dct_forward(img: ImageTensor) -> ImageTensor:
    """Orthonormal DCT-II over each whole channel, rounded to integers."""
    _require(img, "spatial_gray", "ycbcr", "spatial_rgb")
    coeffs = np.rint(_dct(img.data.astype(np.float64))).astype(np.int64)
    return ImageTensor(coeffs, "dct_coeff", source=img.domain)


def dct_inverse(img: ImageTensor) -> ImageTensor:
    _require(img, "dct_coeff")
    return ImageTensor(_to_byte(_idct(img.data.astype(np.float64))), img.source)


# -- the transform chain -------------------------------------------------


def _chain_for(channels: int, use_dct: bool) -> tuple[str, ...]:
    if not use_dct:
        return ()
    return ("ycbcr", "dct") if channels == 3 else ("dct",)


def _decode_float(coeffs: np.ndarray, chain: Sequence[str]) -> np.ndarray:
    x = np.asarray(coeffs, dtype=np.float64)
    if "dct" in chain:
        x = _idct(x)
    if "ycbcr" in chain:
        x = _rgb_float(x)
    return x


def decode_chain(stored: np.ndarray, chain: Sequence[str]) -> np.ndarray:
    """Stored integer samples ``(..., H, W, C)`` -> 8-bit pixels."""
    if not chain:
        return np.asarray(stored).astype(np.uint8)
    return _to_byte(_decode_float(stored, chain))


def encode_chain(images: np.ndarray, chain: Sequence[str], max_iter: int = 500) -> np.ndarray:
    """Integer samples whose :func:`decode_chain` is within ``MAX_ABS_ERROR``.

    Plain rounding of the coefficients drops many small high-frequency
    terms at once, and near edges their sum can exceed the bound. Each
    failing image gets its pre-rounding target nudged by the decoded
    residual until it decodes within the bound.
    """
    images = np.asarray(images)
    if not chain:
        return images.astype(np.int64)
    x = images.astype(np.float64)
    color = "ycbcr" in chain
    target = _ycc_float(x) if color else x.copy()
    coeffs = np.rint(_dct(target))
    todo = np.arange(len(x))
    for _ in range(max_iter):
        dec = _decode_float(coeffs[todo], chain)
        err = np.abs(x[todo] - _to_byte(dec)).reshape(len(todo), -1).max(axis=1)
        bad = err > MAX_ABS_ERROR
        todo, dec = todo[bad], dec[bad]
        if not len(todo):
            break
        resid = x[todo] - dec
        target[todo] += resid @ _RGB2YCC.T if color else resid
        coeffs[todo] = np.rint(_dct(target[todo]))
    return coeffs.astype(np.int64)


# -- archive ---------------------------------------------------------------


@dataclass(frozen=True)
class Manifest:
    shape: tuple[int, int, int]
    counts: dict[int, int]
    transform_chain: tuple[str, ...]
    tau: int = 16
    seed: int = 0
    extra: dict[str, str] = field(default_factory=dict)

    @property
    def classes(self) -> list[int]:
        return sorted(self.counts)

    @property
    def source_domain(self) -> str:
        return "spatial_rgb" if self.shape[2] == 3 else "spatial_gray"

    def to_text(self) -> str:
        lines = [
            f"format={MANIFEST_FORMAT}",
            "shape=" + ",".join(map(str, self.shape)),
            f"domain={self.source_domain}",
            "transform_chain=" + ",".join(self.transform_chain),
            "classes=" + ",".join(map(str, self.classes)),
        ]
        lines += [f"count.{c}={self.counts[c]}" for c in self.classes]
        lines += [f"tau={self.tau}", f"seed={self.seed}"]
        if "dct" in self.transform_chain:
            lines += ["dct=whole_channel_orthonormal_ii", "coefficients=int_nearest_error_feedback",
                      f"max_abs_error={MAX_ABS_ERROR}"]
        lines += [f"{k}={v}" for k, v in sorted(self.extra.items())]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Manifest":
        kv = {}
        for line in text.splitlines():
            if line.strip():
                key, sep, value = line.partition("=")
                if not sep:
                    raise CorruptContainer(f"bad manifest line {line!r}")
                kv[key.strip()] = value.strip()
        if kv.get("format") != MANIFEST_FORMAT:
            raise CorruptContainer("not an image archive manifest")
        try:
            shape = tuple(int(v) for v in kv.pop("shape").split(","))
            classes = [int(v) for v in kv.pop("classes").split(",") if v]
            counts = {c: int(kv.pop(f"count.{c}")) for c in classes}
            chain = tuple(t for t in kv.pop("transform_chain").split(",") if t)
            tau, seed = int(kv.pop("tau")), int(kv.pop("seed"))
        except (KeyError, ValueError) as exc:
            raise CorruptContainer(f"incomplete manifest: {exc}") from exc
        for known in ("format", "domain", "dct", "coefficients", "max_abs_error"):
            kv.pop(known, None)
        return cls(shape, counts, chain, tau, seed, kv)


@dataclass
class ClasswiseArchive:
    containers: dict[int, CompressedDataset]
    manifest: Manifest

    def size_bits(self) -> int:
        """Sum of the per-class size-model values."""
        return sum(cd.best_size for cd in self.containers.values())

    def serialized_bytes(self) -> int:
        return len(self.manifest.to_text().encode()) + sum(
            len(container.to_bytes(cd)) for cd in self.containers.values())

    def decode_class(self, label: int) -> np.ndarray:
        cd = self.containers[label]
        stored = decode_int_matrix(cd.decompress().bits, cd.schema)
        return decode_chain(stored.reshape((-1,) + self.manifest.shape), self.manifest.transform_chain)

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for label, cd in self.containers.items():
            container.save(cd, directory / f"class_{label}.egd")
        (directory / "manifest").write_text(self.manifest.to_text())
        return directory

    @classmethod
    def load(cls, directory) -> "ClasswiseArchive":
        directory = Path(directory)
        manifest = read_manifest(directory)
        return cls({c: container.load(directory / f"class_{c}.egd") for c in manifest.classes}, manifest)


def read_manifest(directory) -> Manifest:
    return Manifest.from_text((Path(directory) / "manifest").read_text())


def _compress_class(images: np.ndarray, chain, cfg: SearchConfig) -> CompressedDataset:
    flat = encode_chain(images, chain).reshape(len(images), -1)
    schema = int_matrix_schema(flat)
    return compress(encode_int_matrix(flat, schema), cfg)


def compress_classwise(images: np.ndarray, labels: Sequence[int], cfg: SearchConfig | None = None,
                       use_dct: bool = False, jobs: int = 1, seed: int = 0) -> ClasswiseArchive:
    """Compress ``images[N, H, W, C]`` (or ``[N, H, W]``) one class at a time."""
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[..., None]
    if images.ndim != 4 or images.shape[-1] not in (1, 3):
        raise ShapeMismatch("images must be (N, H, W) or (N, H, W, C) with C in {1, 3}")
    if images.dtype != np.uint8:
        if images.size and (images.min() < 0 or images.max() > 255):
            raise WrongDomain("pixels must lie in [0, 255]")
        images = images.astype(np.uint8)
    labels = np.asarray(labels).astype(np.int64)
    if len(labels) != len(images):
        raise ShapeMismatch("one label per image")
    cfg = cfg or SearchConfig(beta=0, condensed_mode="none")
    if cfg.condensed_mode != "none":
        raise ValueError("the image path compresses without condensed samples (condensed_mode='none')")
    chain = _chain_for(images.shape[-1], use_dct)
    classes = sorted(int(c) for c in np.unique(labels))

    def work(c):
        return _compress_class(images[labels == c], chain, cfg)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            built = list(pool.map(work, classes))
    else:
        built = [work(c) for c in classes]
    counts = {c: int(np.sum(labels == c)) for c in classes}
    manifest = Manifest(tuple(int(s) for s in images.shape[1:]), counts, chain, cfg.tau, seed)
    return ClasswiseArchive(dict(zip(classes, built)), manifest)


# -- sampling --------------------------------------------------------------


@dataclass(frozen=True)
class SampleSpec:
    fraction: float
    seed: int = 0
    epoch: int = 0

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValueError("fraction must be in (0, 1]")


def epoch_indices(n_c: int, spec: SampleSpec, label: int) -> np.ndarray:
    """Sorted draw of ``ceil(fraction * n_c)`` distinct indices.

    The stream is a Philox generator keyed by ``(seed, epoch, label)``, so
    each class and epoch is reproducible independently of the others.
    """
    k = math.ceil(spec.fraction * n_c)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([spec.seed, spec.epoch, label])))
    return np.sort(rng.choice(n_c, size=k, replace=False))


@dataclass
class EpochSample:
    images: np.ndarray
    labels: np.ndarray
    indices: dict[int, np.ndarray]
    bytes_read: int = 0


def sample_epoch(archive, spec: SampleSpec) -> EpochSample:
    """Decode a fresh random subset of every class.

    ``archive`` is either an in-memory :class:`ClasswiseArchive` or an
    archive directory; from a directory only the sampled records and
    their bases are read from disk.
    """
    if isinstance(archive, ClasswiseArchive):
        manifest = archive.manifest
    else:
        manifest = read_manifest(archive)
    chain = manifest.transform_chain
    out_images, out_labels, picked = [], [], {}
    bytes_read = 0
    for label in manifest.classes:
        idx = epoch_indices(manifest.counts[label], spec, label)
        picked[label] = idx
        if isinstance(archive, ClasswiseArchive):
            cd = archive.containers[label]
            bits = cd._rows_bits(idx)
            schema = cd.schema
        else:
            with container.ContainerReader(Path(archive) / f"class_{label}.egd") as reader:
                bits = np.stack([reader.record_bits(int(i)) for i in idx])
                schema = reader.header.schema
                bytes_read += reader.bytes_read
        stored = decode_int_matrix(bits, schema).reshape((-1,) + manifest.shape)
        out_images.append(decode_chain(stored, chain))
        out_labels.append(np.full(len(idx), label, dtype=np.int64))
    return EpochSample(np.concatenate(out_images), np.concatenate(out_labels), picked, bytes_read)


def archive_bytes(directory) -> int:
    return sum(p.stat().st_size for p in Path(directory).iterdir() if p.is_file())


# -- ingestion: IDX and PPM/PGM -------------------------------------------

_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def read_idx(path) -> np.ndarray:
    """Read an IDX file (the MNIST distribution format), gzip allowed."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[0] != 0 or data[1] != 0 or data[2] not in _IDX_TYPES:
        raise CorruptContainer(f"{path}: not an IDX file")
    ndim = data[3]
    dims = struct.unpack(f">{ndim}I", data[4:4 + 4 * ndim])
    dtype = np.dtype(_IDX_TYPES[data[2]])
    body = np.frombuffer(data, dtype=dtype, offset=4 + 4 * ndim)
    if body.size != math.prod(dims):
        raise CorruptContainer(f"{path}: size does not match the IDX header")
    return body.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    big = array.dtype.newbyteorder(">")
    codes = {np.dtype(v): k for k, v in _IDX_TYPES.items()}
    if big not in codes:
        raise WrongDomain(f"IDX cannot store dtype {array.dtype}")
    code = codes[big]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(big).tobytes())


_PNM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n?)*(\S+)")


def read_pnm(path) -> np.ndarray:
    """Binary PGM (P5) -> ``(H, W, 1)``, binary PPM (P6) -> ``(H, W, 3)``; 8-bit only."""
    data = Path(path).read_bytes()
    pos, tokens = 0, []
    for _ in range(4):
        m = _PNM_TOKEN.match(data, pos)
        if m is None:
            raise CorruptContainer(f"{path}: truncated PNM header")
        tokens.append(m.group(1))
        pos = m.end()
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if magic not in (b"P5", b"P6") or maxval > 255:
        raise CorruptContainer(f"{path}: only 8-bit binary P5/P6 images are supported")
    c = 3 if magic == b"P6" else 1
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * c, offset=pos + 1)
    return pixels.reshape(h, w, c).copy()


def write_pnm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim == 2:
        image = image[..., None]
    magic = b"P6" if image.shape[2] == 3 else b"P5"
    h, w = image.shape[:2]
    Path(path).write_bytes(magic + f"\n{w} {h}\n255\n".encode() + image.tobytes())


def load_image_dir(directory) -> tuple[np.ndarray, np.ndarray]:
    """``<dir>/<label>/*.ppm|*.pgm`` -> ``(images, labels)`` in sorted file order."""
    directory = Path(directory)
    images, labels = [], []
    for sub in sorted((p for p in directory.iterdir() if p.is_dir()), key=lambda p: p.name):
        try:
            label = int(sub.name)
        except ValueError as exc:
            raise ShapeMismatch(f"class directory names must be integers: {sub.name}") from exc
        for f in sorted(sub.iterdir()):
            if f.suffix.lower() in (".ppm", ".pgm", ".pnm"):
                images.append(read_pnm(f))
                labels.append(label)
    if not images:
        raise FileNotFoundError(f"no PPM/PGM images under {directory}")
    if len({im.shape for im in images}) != 1:
        raise ShapeMismatch("all images must share one shape")
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def load_images(path, labels_path=None) -> tuple[np.ndarray, np.ndarray]:
    """Images from an image directory, or an IDX image file plus IDX labels."""
    path = Path(path)
    if path.is_dir():
        return load_image_dir(path)
    if labels_path is None:
        raise ValueError("an IDX image file needs an IDX labels file")
    images, labels = read_idx(path), read_idx(labels_path)
    if images.dtype != np.uint8:
        raise WrongDomain("IDX images must be unsigned bytes")
    if len(images) != len(labels):
        raise ShapeMismatch("image and label counts differ")
    return images, labels.astype(np.int64)


def save_decoded(directory, images: np.ndarray, labels: np.ndarray) -> Path:
    """Write decoded images as ``<dir>/<label>/<k>.ppm|pgm`` plus ``labels.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ext = "ppm" if images.shape[-1] == 3 else "pgm"
    lines = []
    for k, (img, lab) in enumerate(zip(images, labels)):
        (directory / str(int(lab))).mkdir(exist_ok=True)
        name = f"{int(lab)}/{k:06d}.{ext}"
        write_pnm(directory / name, img)
        lines.append(f"{name} {int(lab)}")
    (directory / "labels.txt").write_text("\n".join(lines) + "\n")
    return directory
