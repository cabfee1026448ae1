"""Typed tabular records <-> fixed-width bit matrix, plus per-bit entropy.

Records are held column-wise: a mapping of column name to a 1-D numpy
array (or a numpy structured array, which is what decoding returns).
Every column becomes a contiguous run of ``bit_width`` bits, most
significant bit first, so a record is one row of an ``(n, l_t)`` uint8
matrix of zeros and ones.

Column kinds
------------
float32, float64
    Raw IEEE-754 bit pattern. Always lossless, NaN payloads included.
int
    ``value - offset`` as an unsigned integer of ``bit_width`` bits.
categorical
    Integer codes like ``int``; when ``categories`` is set the values are
    labels and the code is the label's index in ``categories``.
decimal
    Fixed-point float64: ``value * 10**scale`` is an integer, stored like
    ``int``. Only inferred when every value survives the round trip
    bit-exactly, so it is lossless too.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .exceptions import EmptyDataset, IndexOutOfRange, RangeOverflow, SchemaMismatch

KINDS = ("float32", "float64", "int", "categorical", "decimal")
_FLOAT_WIDTH = {"float32": 32, "float64": 64}
MAX_DECIMAL_SCALE = 8


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str
    bit_width: int
    offset: int = 0
    scale: int = 0
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaMismatch(f"unknown column kind {self.kind!r}")
        if self.bit_width < 1 or self.bit_width > 64:
            raise SchemaMismatch(f"{self.name}: bit_width must be in [1, 64], got {self.bit_width}")
        if self.kind in _FLOAT_WIDTH and self.bit_width != _FLOAT_WIDTH[self.kind]:
            raise SchemaMismatch(f"{self.name}: {self.kind} needs bit_width {_FLOAT_WIDTH[self.kind]}")
        if self.kind == "decimal" and not 0 <= self.scale <= MAX_DECIMAL_SCALE:
            raise SchemaMismatch(f"{self.name}: decimal scale out of range")

    @property
    def is_float(self) -> bool:
        return self.kind in _FLOAT_WIDTH

    @property
    def dtype(self) -> np.dtype:
        if self.kind == "float32":
            return np.dtype(np.float32)
        if self.kind in ("float64", "decimal"):
            return np.dtype(np.float64)
        if self.kind == "categorical" and self.categories is not None:
            return np.dtype(object)
        return np.dtype(np.int64)


@dataclass(frozen=True)
class BitMatrix:
    """``n x l_t`` matrix of bits (uint8 0/1) with the schema that produced it."""

    bits: np.ndarray
    schema: tuple[ColumnSchema, ...]

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2:
            raise SchemaMismatch("bit matrix must be 2-D")
        if bits.shape[1] != sum(c.bit_width for c in self.schema):
            raise SchemaMismatch("row width does not match the schema's total bit width")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "schema", tuple(self.schema))

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    @property
    def l_t(self) -> int:
        return self.bits.shape[1]

    @property
    def column_starts(self) -> np.ndarray:
        widths = [c.bit_width for c in self.schema]
        return np.concatenate([[0], np.cumsum(widths)[:-1]]).astype(np.int64)

    def column_of(self, position: int) -> int:
        return int(np.searchsorted(self.column_starts, position, side="right") - 1)

    def __eq__(self, other):
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.schema == other.schema and np.array_equal(self.bits, other.bits)

    __hash__ = None


@dataclass(frozen=True)
class EntropyProfile:
    h: np.ndarray
    ones_count: np.ndarray
    n: int
    constant_mask: np.ndarray = field(init=False)

    def __post_init__(self):
        mask = (self.ones_count == 0) | (self.ones_count == self.n)
        object.__setattr__(self, "constant_mask", mask)


def binary_entropy(p):
    """H(p) = -p log2 p - (1-p) log2 (1-p), with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    return _plogp(p) + _plogp(1.0 - p)


def _plogp(p):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -p * np.log2(p)
    return np.where(p > 0, out, 0.0)


def bit_entropy(bm: BitMatrix) -> EntropyProfile:
    if bm.n == 0:
        raise EmptyDataset("cannot compute entropy of an empty dataset")
    ones = bm.bits.sum(axis=0, dtype=np.int64)
    n = bm.n
    # summing the two terms from counts keeps h exactly symmetric under complement
    h = _plogp(ones / n) + _plogp((n - ones) / n)
    return EntropyProfile(h=np.clip(h, 0.0, 1.0), ones_count=ones, n=n)


# -- schema inference ----------------------------------------------------


def _decimal_scale(values: np.ndarray) -> int | None:
    """Smallest k such that every value is exactly q / 10**k for an integer q."""
    if values.size == 0 or not np.all(np.isfinite(values)):
        return None
    if np.any(np.signbit(values) & (values == 0)):
        return None  # -0.0 would decode as +0.0
    for k in range(MAX_DECIMAL_SCALE + 1):
        scale = 10.0**k
        q = np.rint(values * scale)
        if np.max(np.abs(q)) >= 2**53:
            return None
        if np.array_equal(q / scale, values):
            return k
    return None


def _range_width(lo: int, hi: int) -> int:
    return max(1, int(hi - lo).bit_length())


def infer_column(name: str, values, kind: str, decimals: bool = False) -> ColumnSchema:
    """Schema for one column; int-like kinds get the minimal covering width."""
    if kind in _FLOAT_WIDTH:
        arr = np.asarray(values, dtype=kind)
        if decimals and kind == "float64":
            k = _decimal_scale(arr)
            if k is not None:
                q = np.rint(arr * 10.0**k).astype(np.int64)
                lo, hi = int(q.min()), int(q.max())
                return ColumnSchema(name, "decimal", _range_width(lo, hi), offset=lo, scale=k)
        return ColumnSchema(name, kind, _FLOAT_WIDTH[kind])
    if kind == "decimal":
        arr = np.asarray(values, dtype=np.float64)
        k = _decimal_scale(arr)
        if k is None:
            raise SchemaMismatch(f"{name}: values are not exact decimals")
        q = np.rint(arr * 10.0**k).astype(np.int64)
        lo, hi = int(q.min()), int(q.max())
        return ColumnSchema(name, "decimal", _range_width(lo, hi), offset=lo, scale=k)
    if kind == "categorical":
        arr = np.asarray(values)
        if arr.dtype.kind in "iu":
            lo, hi = (int(arr.min()), int(arr.max())) if arr.size else (0, 0)
            return ColumnSchema(name, "categorical", _range_width(lo, hi), offset=lo)
        cats = tuple(sorted({str(v) for v in arr.tolist()}))
        return ColumnSchema(name, "categorical", _range_width(0, max(len(cats) - 1, 0)), categories=cats)
    if kind == "int":
        arr = np.asarray(values)
        if arr.size and arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or not np.array_equal(arr, np.rint(arr)):
                raise SchemaMismatch(f"{name}: non-integer value in int column")
        arr = arr.astype(np.int64)
        lo, hi = (int(arr.min()), int(arr.max())) if arr.size else (0, 0)
        return ColumnSchema(name, "int", _range_width(lo, hi), offset=lo)
    raise SchemaMismatch(f"unknown column kind {kind!r}")


def infer_schema(columns: Mapping[str, Iterable], kinds: Mapping[str, str] | None = None,
                 decimals: bool = False) -> tuple[ColumnSchema, ...]:
    """Infer a schema from column data.

    ``kinds`` defaults from the array dtypes: floating -> float64/float32,
    integer -> int, anything else -> categorical. With ``decimals=True``
    float64 columns that are exact decimals become fixed-point columns.
    """
    kinds = dict(kinds or {})
    out = []
    for name, values in columns.items():
        arr = np.asarray(values)
        kind = kinds.get(name)
        if kind is None:
            if arr.dtype == np.float32:
                kind = "float32"
            elif arr.dtype.kind == "f":
                kind = "float64"
            elif arr.dtype.kind in "iub":
                kind = "int"
            else:
                kind = "categorical"
        out.append(infer_column(name, arr, kind, decimals=decimals))
    return tuple(out)


# -- encode / decode ----------------------------------------------------


def _as_columns(rows, schema: Sequence[ColumnSchema]) -> list[np.ndarray]:
    if isinstance(rows, np.ndarray) and rows.dtype.names is not None:
        names = rows.dtype.names
        if len(names) != len(schema):
            raise SchemaMismatch(f"record has {len(names)} fields, schema has {len(schema)}")
        return [rows[nm] for nm in names]
    if isinstance(rows, Mapping):
        try:
            return [np.asarray(rows[c.name]) for c in schema]
        except KeyError as exc:
            raise SchemaMismatch(f"missing column {exc.args[0]!r}") from None
    # sequence of tuples
    rows = list(rows)
    for r in rows:
        if len(r) != len(schema):
            raise SchemaMismatch(f"record has {len(r)} fields, schema has {len(schema)}")
    return [np.asarray([r[j] for r in rows]) for j in range(len(schema))]


def _column_codes(col: ColumnSchema, values: np.ndarray) -> np.ndarray:
    """Unsigned integer codes (uint64) for one column."""
    if col.is_float:
        if values.size and values.dtype.kind not in "fiu":
            raise SchemaMismatch(f"{col.name}: expected numbers, got {values.dtype}")
        if col.kind == "float32":
            return np.asarray(values, dtype=np.float32).view(np.uint32).astype(np.uint64)
        return np.asarray(values, dtype=np.float64).view(np.uint64)

    if col.kind == "decimal":
        arr = np.asarray(values, dtype=np.float64)
        scale = 10.0**col.scale
        if not np.all(np.isfinite(arr)):
            raise RangeOverflow(f"{col.name}: non-finite value in decimal column")
        q = np.rint(arr * scale)
        bad = (q / scale != arr) | (np.signbit(arr) & (arr == 0))
        if np.any(bad):
            raise RangeOverflow(f"{col.name}: value {arr[bad][0]!r} is not a {col.scale}-digit decimal")
        ints = q.astype(np.int64)
    elif col.kind == "categorical" and col.categories is not None:
        index = {c: i for i, c in enumerate(col.categories)}
        try:
            ints = np.fromiter((index[str(v)] for v in values.tolist()), dtype=np.int64, count=len(values))
        except KeyError as exc:
            raise RangeOverflow(f"{col.name}: unknown category {exc.args[0]!r}") from None
    else:
        if values.size and values.dtype.kind not in "iub":
            if values.dtype.kind == "f" and np.all(np.isfinite(values)) and np.array_equal(values, np.rint(values)):
                values = values.astype(np.int64)
            else:
                raise SchemaMismatch(f"{col.name}: expected integers, got {values.dtype}")
        ints = np.asarray(values, dtype=np.int64)

    u = ints - col.offset
    if u.size and (u.min() < 0 or int(u.max()) >> col.bit_width):
        raise RangeOverflow(
            f"{col.name}: value outside [{col.offset}, {col.offset + 2**col.bit_width - 1}]")
    return u.astype(np.uint64)


def _codes_to_bits(codes: np.ndarray, width: int) -> np.ndarray:
    raw = np.ascontiguousarray(codes.astype(">u8")).view(np.uint8).reshape(-1, 8)
    return np.unpackbits(raw, axis=1)[:, 64 - width:]


def _bits_to_codes(bits: np.ndarray) -> np.ndarray:
    n, width = bits.shape
    padded = np.zeros((n, 64), dtype=np.uint8)
    padded[:, 64 - width:] = bits
    return np.packbits(padded, axis=1).view(">u8").reshape(n).astype(np.uint64)


def encode_tabular(rows, schema: Sequence[ColumnSchema]) -> BitMatrix:
    schema = tuple(schema)
    if not schema:
        raise SchemaMismatch("schema has no columns")
    cols = _as_columns(rows, schema)
    lengths = {len(c) for c in cols}
    if len(lengths) > 1:
        raise SchemaMismatch("columns have different lengths")
    n = lengths.pop()
    blocks = []
    for col, values in zip(schema, cols):
        values = np.asarray(values)
        if values.ndim != 1:
            raise SchemaMismatch(f"{col.name}: column must be 1-D")
        blocks.append(_codes_to_bits(_column_codes(col, values), col.bit_width))
    bits = np.concatenate(blocks, axis=1) if n else np.zeros((0, sum(c.bit_width for c in schema)), np.uint8)
    return BitMatrix(bits, schema)


def record_dtype(schema: Sequence[ColumnSchema]) -> np.dtype:
    return np.dtype([(c.name, c.dtype) for c in schema])


def decode_codes(col: ColumnSchema, codes: np.ndarray) -> np.ndarray:
    """Inverse of the per-column code mapping."""
    codes = np.asarray(codes, dtype=np.uint64)
    if col.kind == "float32":
        return codes.astype(np.uint32).view(np.float32)
    if col.kind == "float64":
        return codes.view(np.float64)
    ints = codes.astype(np.int64) + col.offset
    if col.kind == "decimal":
        return ints.astype(np.float64) / 10.0**col.scale
    if col.kind == "categorical" and col.categories is not None:
        cats = np.asarray(col.categories, dtype=object)
        return cats[ints]
    return ints


def decode_bits(bits: np.ndarray, schema: Sequence[ColumnSchema]) -> np.ndarray:
    """Decode a raw ``(k, l_t)`` bit array into a structured record array."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    out = np.empty(bits.shape[0], dtype=record_dtype(schema))
    start = 0
    for col in schema:
        codes = _bits_to_codes(bits[:, start:start + col.bit_width])
        out[col.name] = decode_codes(col, codes)
        start += col.bit_width
    return out


def decode_tabular(bm: BitMatrix, indices: Sequence[int] | None = None) -> np.ndarray:
    if indices is None:
        return decode_bits(bm.bits, bm.schema)
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= bm.n):
        raise IndexOutOfRange(f"record index out of range [0, {bm.n})")
    return decode_bits(bm.bits[idx], bm.schema)


def records_equal(a: np.ndarray, b: np.ndarray) -> bool:
    """Bit-exact equality of two record arrays (NaN payloads included)."""
    if a.dtype.names != b.dtype.names or len(a) != len(b):
        return False
    for name in a.dtype.names:
        x, y = a[name], b[name]
        if x.dtype.kind == "f":
            if x.dtype != y.dtype or x.tobytes() != y.tobytes():
                return False
        elif not np.array_equal(x, y):
            return False
    return True


def numeric_matrix(records: np.ndarray, columns: Sequence[str] | None = None) -> np.ndarray:
    """Float64 design matrix from a record array (categorical labels -> codes)."""
    names = list(columns) if columns is not None else list(records.dtype.names)
    cols = []
    for nm in names:
        v = records[nm]
        if v.dtype == object:
            cats = sorted({str(x) for x in v.tolist()})
            v = np.asarray([cats.index(str(x)) for x in v.tolist()], dtype=np.float64)
        cols.append(np.asarray(v, dtype=np.float64))
    return np.column_stack(cols) if cols else np.zeros((len(records), 0))


def raw_size_bits(n: int, schema: Sequence[ColumnSchema]) -> int:
    """Size of the uncompressed data as 64-bit numbers per cell."""
    return n * 64 * len(schema)


# -- CSV / sidecar schema ------------------------------------------------


def _parse_header(header: Sequence[str]) -> list[tuple[str, str]]:
    out = []
    for cell in header:
        name, sep, kind = cell.strip().rpartition(":")
        if not sep or not name:
            raise SchemaMismatch(f"header cell {cell!r} is not name:kind")
        kind = kind.strip()
        if kind not in KINDS:
            raise SchemaMismatch(f"unknown kind {kind!r} in header cell {cell!r}")
        out.append((name.strip(), kind))
    return out


def _parse_cell(text: str, kind: str, name: str, lineno: int):
    text = text.strip()
    if text == "":
        raise SchemaMismatch(f"line {lineno}: missing value in column {name!r}")
    try:
        if kind in ("float64", "decimal"):
            return float(text)
        if kind == "float32":
            return np.float32(text)
        if kind == "int":
            return int(text)
    except ValueError:
        raise SchemaMismatch(f"line {lineno}: {text!r} is not a valid {kind} for column {name!r}") from None
    return text


def read_csv(path, schema: Sequence[ColumnSchema] | None = None, decimals: bool = False):
    """Read a typed CSV. Returns ``(columns, schema)``.

    The header is ``name:kind`` per column. A given ``schema`` overrides
    inference (widths, offsets) but must agree on names.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = _parse_header(next(reader))
        except StopIteration:
            raise SchemaMismatch(f"{path}: empty file") from None
        data: list[list] = [[] for _ in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaMismatch(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            for j, ((name, kind), cell) in enumerate(zip(header, row)):
                data[j].append(_parse_cell(cell, kind, name, lineno))

    columns = {}
    for (name, kind), values in zip(header, data):
        if kind == "float32":
            columns[name] = np.asarray(values, dtype=np.float32)
        elif kind in ("float64", "decimal"):
            columns[name] = np.asarray(values, dtype=np.float64)
        elif kind == "int":
            columns[name] = np.asarray(values, dtype=np.int64)
        else:
            vals = np.asarray(values, dtype=object)
            columns[name] = vals
    if schema is not None:
        schema = tuple(schema)
        if [c.name for c in schema] != [nm for nm, _ in header]:
            raise SchemaMismatch("sidecar schema column names do not match the CSV header")
        for c in schema:
            if c.kind in ("int", "categorical") and c.categories is None:
                columns[c.name] = np.asarray([int(v) for v in columns[c.name]], dtype=np.int64)
        return columns, schema
    kinds = dict(header)
    for name, kind in header:
        if kind == "categorical":
            vals = columns[name]
            try:
                columns[name] = np.asarray([int(v) for v in vals], dtype=np.int64)
            except ValueError:
                pass
    return columns, infer_schema(columns, kinds, decimals=decimals)


def _format_value(v, col: ColumnSchema) -> str:
    if col.kind == "float32":
        return repr(float(v)) if np.float32(float(v)).tobytes() == np.float32(v).tobytes() else str(np.float32(v))
    if col.kind in ("float64", "decimal"):
        return repr(float(v))
    return str(v)


def write_csv(path_or_buf, records: np.ndarray, schema: Sequence[ColumnSchema]) -> None:
    own = isinstance(path_or_buf, (str, Path))
    fh = open(path_or_buf, "w", newline="", encoding="utf-8") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"{c.name}:{'float64' if c.kind == 'decimal' else c.kind}" for c in schema])
        for rec in records:
            w.writerow([_format_value(rec[c.name], c) for c in schema])
    finally:
        if own:
            fh.close()


def dump_schema(schema: Sequence[ColumnSchema]) -> str:
    """Sidecar schema text: one ``key=value`` line per column."""
    lines = []
    for c in schema:
        parts = [f"name={c.name}", f"kind={c.kind}", f"bit_width={c.bit_width}", f"offset={c.offset}"]
        if c.kind == "decimal":
            parts.append(f"scale={c.scale}")
        if c.categories is not None:
            parts.append("categories=" + "|".join(c.categories))
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def load_schema(text: str) -> tuple[ColumnSchema, ...]:
    out = []
    for lineno, line in enumerate(io.StringIO(text), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        fields = {}
        for tok in line.split():
            key, sep, value = tok.partition("=")
            if not sep:
                raise SchemaMismatch(f"schema line {lineno}: token {tok!r} is not key=value")
            fields[key] = value
        try:
            cats = tuple(fields["categories"].split("|")) if "categories" in fields else None
            out.append(ColumnSchema(
                name=fields["name"], kind=fields["kind"], bit_width=int(fields["bit_width"]),
                offset=int(fields.get("offset", 0)), scale=int(fields.get("scale", 0)), categories=cats,
            ))
        except KeyError as exc:
            raise SchemaMismatch(f"schema line {lineno}: missing {exc.args[0]!r}") from None
    return tuple(out)


def float64_schema(names: Sequence[str]) -> tuple[ColumnSchema, ...]:
    return tuple(ColumnSchema(nm, "float64", 64) for nm in names)


def ceil_log2(x: int) -> int:
    """Ceiling of log2(x) for integers, with ceil_log2(1) = ceil_log2(0) = 0."""
    return 0 if x <= 1 else int(x - 1).bit_length()


__all__ = [
    "BitMatrix", "ColumnSchema", "EntropyProfile", "binary_entropy", "bit_entropy", "ceil_log2",
    "decode_bits", "decode_tabular", "dump_schema", "encode_tabular", "infer_schema", "load_schema",
    "numeric_matrix", "raw_size_bits", "read_csv", "record_dtype", "records_equal", "write_csv",
]


def int_matrix_schema(values: np.ndarray, prefix: str = "p") -> tuple[ColumnSchema, ...]:
    """One offset-encoded int column per column of a 2-D integer array."""
    values = np.asarray(values)
    if values.ndim != 2 or values.shape[0] == 0:
        raise SchemaMismatch("expected a non-empty 2-D integer array")
    lo, hi = values.min(axis=0).astype(np.int64), values.max(axis=0).astype(np.int64)
    return tuple(ColumnSchema(f"{prefix}{j}", "int", _range_width(int(a), int(b)), offset=int(a))
                 for j, (a, b) in enumerate(zip(lo, hi)))


def encode_int_matrix(values: np.ndarray, schema: Sequence[ColumnSchema]) -> BitMatrix:
    """Fast path of :func:`encode_tabular` for all-int schemas."""
    values = np.asarray(values, dtype=np.int64)
    if values.ndim != 2 or values.shape[1] != len(schema):
        raise SchemaMismatch("array shape does not match the schema")
    blocks = [_codes_to_bits(_column_codes(col, values[:, j]), col.bit_width) for j, col in enumerate(schema)]
    return BitMatrix(np.concatenate(blocks, axis=1), schema)


def decode_int_matrix(bits: np.ndarray, schema: Sequence[ColumnSchema]) -> np.ndarray:
    """``(k, l_t)`` bits of an all-int schema -> ``(k, ncols)`` int64 array."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.uint8))
    out = np.empty((bits.shape[0], len(schema)), dtype=np.int64)
    start = 0
    for j, col in enumerate(schema):
        if col.kind != "int":
            raise SchemaMismatch(f"{col.name}: not an int column")
        out[:, j] = _bits_to_codes(bits[:, start:start + col.bit_width]).astype(np.int64) + col.offset
        start += col.bit_width
    return out
