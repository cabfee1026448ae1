"""EGD1 container: binary serialization of a :class:`CompressedDataset`.

Layout (all integers little-endian)::

    "EGD1"  u8 version
    u64 n, m, n_b
    u32 l_t, l_b, l_d, beta, tau
    u8  condensed mode (0 stored, 1 on_demand, 2 none)
    schema block     u32 ncols, then per column:
                     u16 len + utf-8 name, u8 kind, u8 bit_width, i64 offset,
                     u8 scale, u32 ncategories, (u16 len + utf-8) per category
    u32 target column index (0xFFFFFFFF when absent)
    u64 best_size
    u32 * l_b        sorted base positions
    u32 count, u32 * count   cluster positions
    bases block      n_b * l_b bits
    records block    (n + m) * (ceil(log2 n_b) + l_d) bits, base id first
    weights block    m * ceil(log2 n) bits, each stored as weight - 1
    u64 checksum     blake2b-64 of everything above

Each block starts on a byte boundary and is packed MSB-first without
per-record padding, so record ``i`` starts at a computable bit offset.
"""

from __future__ import annotations

import hashlib
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bitcodec import KINDS, ColumnSchema, ceil_log2, decode_bits
from .exceptions import CorruptContainer, IndexOutOfRange, NoCondensedData
from .gede import CONDENSED_MODES, CompressedDataset, CondensedSet

MAGIC = b"EGD1"
VERSION = 1
_NO_TARGET = 0xFFFFFFFF
_FIXED = struct.Struct("<4sBQQQIIIIIB")


def checksum(data: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def _pack_bits(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, dtype=np.uint8).reshape(-1)).tobytes()


def _uint_bits(values: np.ndarray, width: int) -> np.ndarray:
    if width == 0:
        return np.zeros((len(values), 0), dtype=np.uint8)
    raw = np.ascontiguousarray(np.asarray(values, dtype=np.uint64).astype(">u8")).view(np.uint8)
    return np.unpackbits(raw.reshape(-1, 8), axis=1)[:, 64 - width:]


def _bits_uint(bits: np.ndarray) -> np.ndarray:
    n, width = bits.shape
    if width == 0:
        return np.zeros(n, dtype=np.int64)
    padded = np.zeros((n, 64), dtype=np.uint8)
    padded[:, 64 - width:] = bits
    return np.packbits(padded, axis=1).view(">u8").reshape(n).astype(np.int64)


def _nbytes(nbits: int) -> int:
    return (nbits + 7) // 8


def _encode_header(cd: CompressedDataset) -> bytes:
    buf = io.BytesIO()
    buf.write(_FIXED.pack(MAGIC, VERSION, cd.n, cd.m, cd.n_b, cd.l_t, cd.l_b, cd.l_d, cd.beta, cd.tau,
                          CONDENSED_MODES.index(cd.condensed_mode)))
    buf.write(struct.pack("<I", len(cd.schema)))
    for col in cd.schema:
        name = col.name.encode("utf-8")
        buf.write(struct.pack("<H", len(name)) + name)
        cats = col.categories or ()
        buf.write(struct.pack("<BBqBI", KINDS.index(col.kind), col.bit_width, col.offset, col.scale, len(cats)))
        for cat in cats:
            raw = cat.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)) + raw)
    names = [c.name for c in cd.schema]
    buf.write(struct.pack("<I", names.index(cd.target) if cd.target is not None else _NO_TARGET))
    buf.write(struct.pack("<Q", cd.best_size))
    buf.write(np.asarray(cd.base_positions, dtype="<u4").tobytes())
    buf.write(struct.pack("<I", len(cd.cluster_positions)))
    buf.write(np.asarray(cd.cluster_positions, dtype="<u4").tobytes())
    return buf.getvalue()


def to_bytes(cd: CompressedDataset) -> bytes:
    header = _encode_header(cd)
    rec = np.hstack([_uint_bits(cd.base_ids, cd.id_bits), cd.deviations])
    wbits = _uint_bits(cd.weights - 1, ceil_log2(cd.n)) if cd.m else np.zeros((0, 0), np.uint8)
    body = header + _pack_bits(cd.bases) + _pack_bits(rec) + _pack_bits(wbits)
    return body + struct.pack("<Q", checksum(body))


@dataclass(frozen=True)
class Header:
    n: int
    m: int
    n_b: int
    l_t: int
    l_b: int
    l_d: int
    beta: int
    tau: int
    condensed_mode: str
    schema: tuple[ColumnSchema, ...]
    target: str | None
    best_size: int
    base_positions: np.ndarray
    cluster_positions: tuple[int, ...]
    size: int

    @property
    def id_bits(self) -> int:
        return ceil_log2(self.n_b)

    @property
    def record_bits(self) -> int:
        return self.id_bits + self.l_d

    @property
    def bases_offset(self) -> int:
        return self.size

    @property
    def records_offset(self) -> int:
        return self.bases_offset + _nbytes(self.n_b * self.l_b)

    @property
    def weights_offset(self) -> int:
        return self.records_offset + _nbytes((self.n + self.m) * self.record_bits)

    @property
    def checksum_offset(self) -> int:
        return self.weights_offset + _nbytes(self.m * ceil_log2(self.n))

    def record_bit_offset(self, index: int) -> int:
        """Absolute bit offset of record ``index`` inside the container."""
        return self.records_offset * 8 + index * self.record_bits

    @property
    def params_bits(self) -> int:
        """Header plus checksum, in bits: the parameter overhead of the size model."""
        return 8 * (self.size + 8)


class _Cursor:
    def __init__(self, read):
        self._read = read
        self.pos = 0

    def take(self, k: int) -> bytes:
        data = self._read(k)
        if len(data) != k:
            raise CorruptContainer("truncated container header")
        self.pos += k
        return data

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))


def _read_header(read) -> Header:
    cur = _Cursor(read)
    magic, version, n, m, n_b, l_t, l_b, l_d, beta, tau, mode = cur.unpack(_FIXED.format)
    if magic != MAGIC:
        raise CorruptContainer(f"bad magic {magic!r}")
    if version != VERSION:
        raise CorruptContainer(f"unsupported container version {version}")
    if mode >= len(CONDENSED_MODES):
        raise CorruptContainer("bad condensed mode")
    (ncols,) = cur.unpack("<I")
    schema = []
    try:
        for _ in range(ncols):
            (ln,) = cur.unpack("<H")
            name = cur.take(ln).decode("utf-8")
            kind, width, offset, scale, ncats = cur.unpack("<BBqBI")
            cats = []
            for _ in range(ncats):
                (cl,) = cur.unpack("<H")
                cats.append(cur.take(cl).decode("utf-8"))
            schema.append(ColumnSchema(name, KINDS[kind], width, offset=offset, scale=scale,
                                       categories=tuple(cats) if ncats else None))
    except (IndexError, UnicodeDecodeError, ValueError) as exc:
        raise CorruptContainer(f"bad schema block: {exc}") from None
    (tidx,) = cur.unpack("<I")
    if tidx != _NO_TARGET and tidx >= len(schema):
        raise CorruptContainer("target index out of range")
    (best_size,) = cur.unpack("<Q")
    base_positions = np.frombuffer(cur.take(4 * l_b), dtype="<u4").astype(np.int64)
    (ncp,) = cur.unpack("<I")
    cluster_positions = tuple(np.frombuffer(cur.take(4 * ncp), dtype="<u4").astype(int).tolist())
    if sum(c.bit_width for c in schema) != l_t or l_b + l_d != l_t:
        raise CorruptContainer("bit widths disagree with the schema")
    return Header(n=n, m=m, n_b=n_b, l_t=l_t, l_b=l_b, l_d=l_d, beta=beta, tau=tau,
                  condensed_mode=CONDENSED_MODES[mode], schema=tuple(schema),
                  target=schema[tidx].name if tidx != _NO_TARGET else None, best_size=best_size,
                  base_positions=base_positions, cluster_positions=cluster_positions, size=cur.pos)


def _unpack_range(data: bytes, bit_start: int, nbits: int) -> np.ndarray:
    """``nbits`` bits starting ``bit_start`` bits into ``data``."""
    if nbits == 0:
        return np.zeros(0, dtype=np.uint8)
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8))[bit_start:bit_start + nbits]


def from_bytes(data: bytes, verify: bool = True) -> CompressedDataset:
    if len(data) < _FIXED.size + 8:
        raise CorruptContainer("container too short")
    body, tail = data[:-8], data[-8:]
    if verify and checksum(body) != struct.unpack("<Q", tail)[0]:
        raise CorruptContainer("checksum mismatch")
    stream = io.BytesIO(body)
    h = _read_header(stream.read)
    if h.checksum_offset != len(body):
        raise CorruptContainer("block sizes disagree with the counters")
    N = h.n + h.m
    bases = _unpack_range(body[h.bases_offset:h.records_offset], 0, h.n_b * h.l_b).reshape(h.n_b, h.l_b)
    rec = _unpack_range(body[h.records_offset:h.weights_offset], 0, N * h.record_bits).reshape(N, h.record_bits)
    wbits_w = ceil_log2(h.n)
    wbits = _unpack_range(body[h.weights_offset:], 0, h.m * wbits_w).reshape(h.m, wbits_w)
    cd = CompressedDataset(
        base_positions=h.base_positions,
        bases=bases,
        base_ids=_bits_uint(rec[:, :h.id_bits]),
        deviations=np.ascontiguousarray(rec[:, h.id_bits:]),
        weights=_bits_uint(wbits) + 1 if h.m else np.zeros(0, dtype=np.int64),
        schema=h.schema,
        n=h.n,
        m=h.m,
        best_size=h.best_size,
        beta=h.beta,
        tau=h.tau,
        condensed_mode=h.condensed_mode,
        cluster_positions=h.cluster_positions,
        target=h.target,
    )
    cd.validate()
    return cd


def save(cd: CompressedDataset, path) -> int:
    data = to_bytes(cd)
    Path(path).write_bytes(data)
    return len(data)


def load(path, verify: bool = True) -> CompressedDataset:
    return from_bytes(Path(path).read_bytes(), verify=verify)


def params_bits(cd: CompressedDataset) -> int:
    """Serialized header + checksum size in bits."""
    return 8 * (len(_encode_header(cd)) + 8)


class ContainerReader:
    """Random access into an EGD1 file without loading it.

    Only the header is parsed on open. ``bytes_read`` counts every byte
    fetched from disk, so callers can check access cost. With
    ``cache_bases`` the base block is read once on first use.
    """

    def __init__(self, path, cache_bases: bool = False):
        self.path = Path(path)
        self._fh = open(self.path, "rb")
        self.bytes_read = 0
        self.header = _read_header(self._read)
        self.file_size = os.fstat(self._fh.fileno()).st_size
        self._cache_bases = cache_bases
        self._bases: np.ndarray | None = None

    def _read(self, k: int) -> bytes:
        data = self._fh.read(k)
        self.bytes_read += len(data)
        return data

    def _read_at(self, offset: int, k: int) -> bytes:
        self._fh.seek(offset)
        return self._read(k)

    def _read_bits(self, bit_offset: int, nbits: int) -> np.ndarray:
        if nbits == 0:
            return np.zeros(0, dtype=np.uint8)
        start = bit_offset // 8
        end = _nbytes(bit_offset + nbits)
        data = self._read_at(start, end - start)
        if len(data) != end - start:
            raise CorruptContainer("truncated container")
        return _unpack_range(data, bit_offset - 8 * start, nbits)

    def _base(self, base_id: int) -> np.ndarray:
        h = self.header
        if self._cache_bases:
            if self._bases is None:
                raw = self._read_at(h.bases_offset, h.records_offset - h.bases_offset)
                self._bases = _unpack_range(raw, 0, h.n_b * h.l_b).reshape(h.n_b, h.l_b)
            return self._bases[base_id]
        return self._read_bits(h.bases_offset * 8 + base_id * h.l_b, h.l_b)

    def __len__(self) -> int:
        return self.header.n

    def record_bits(self, index: int) -> np.ndarray:
        h = self.header
        if not 0 <= index < h.n + h.m:
            raise IndexOutOfRange(f"record index {index} outside [0, {h.n + h.m})")
        rec = self._read_bits(h.record_bit_offset(index), h.record_bits)
        base_id = int(_bits_uint(rec[None, :h.id_bits])[0])
        if base_id >= h.n_b:
            raise CorruptContainer("base id out of range")
        row = np.empty(h.l_t, dtype=np.uint8)
        row[h.base_positions] = self._base(base_id)
        dev_mask = np.ones(h.l_t, dtype=bool)
        dev_mask[h.base_positions] = False
        row[dev_mask] = rec[h.id_bits:]
        return row

    def random_access(self, index: int) -> np.void:
        if not 0 <= index < self.header.n:
            raise IndexOutOfRange(f"record index {index} outside [0, {self.header.n})")
        return decode_bits(self.record_bits(index)[None, :], self.header.schema)[0]

    def read_many(self, indices) -> np.ndarray:
        """Decode several records; returns a structured array in the given order."""
        for i in indices:
            if not 0 <= int(i) < self.header.n:
                raise IndexOutOfRange(f"record index {i} outside [0, {self.header.n})")
        rows = np.stack([self.record_bits(int(i)) for i in indices]) if len(indices) else \
            np.zeros((0, self.header.l_t), dtype=np.uint8)
        return decode_bits(rows, self.header.schema)

    def condensed(self) -> CondensedSet:
        """Stored condensed samples and weights, read without touching the other records."""
        h = self.header
        if h.condensed_mode != "stored":
            raise NoCondensedData(f"container holds no stored condensed samples (mode {h.condensed_mode})")
        rows = np.stack([self.record_bits(h.n + j) for j in range(h.m)]) if h.m else \
            np.zeros((0, h.l_t), dtype=np.uint8)
        wbits_w = ceil_log2(h.n)
        raw = self._read_at(h.weights_offset, h.checksum_offset - h.weights_offset)
        weights = _bits_uint(_unpack_range(raw, 0, h.m * wbits_w).reshape(h.m, wbits_w)) + 1 if h.m \
            else np.zeros(0, dtype=np.int64)
        return CondensedSet(samples=decode_bits(rows, h.schema), weights=weights.astype(np.int64),
                            source_beta=h.beta, positions=h.cluster_positions)

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
