"""Entropy-guided generalized deduplication.

Two passes over the bit matrix of a dataset:

* clustering: records that agree on ``beta`` high-entropy bits (taken
  round by round from the most significant non-constant bits of every
  column) form a cluster; its centroid becomes a weighted condensed sample.
* compression: starting from the constant bit positions, low-entropy
  positions are moved into the base one at a time while the size model
  improves; the search gives up after ``tau`` consecutive non-improving
  steps.

Every record is then stored as ``(base_id, deviation)`` where the base is a
deduplicated pattern over the chosen positions and the deviation holds the
remaining bits verbatim, so decompression is exact and any record can be
decoded on its own.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .bitcodec import (
    BitMatrix,
    ColumnSchema,
    EntropyProfile,
    bit_entropy,
    ceil_log2,
    decode_bits,
    encode_tabular,
    numeric_matrix,
)
from .exceptions import CorruptContainer, EmptyDataset, IndexOutOfRange, NoCondensedData

log = logging.getLogger(__name__)

CondensedMode = Literal["stored", "on_demand", "none"]
CONDENSED_MODES = ("stored", "on_demand", "none")


@dataclass(frozen=True)
class SearchConfig:
    beta: int = 8
    tau: int = 16
    condensed_mode: CondensedMode = "stored"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.condensed_mode not in CONDENSED_MODES:
            raise ValueError(f"condensed_mode must be one of {CONDENSED_MODES}")


@dataclass(frozen=True)
class ClusterBits:
    positions: tuple[int, ...]
    beta: int


@dataclass(frozen=True)
class CondensedSet:
    """Weighted centroids; ``samples`` is a structured record array."""

    samples: np.ndarray
    weights: np.ndarray
    source_beta: int
    positions: tuple[int, ...] = ()

    @property
    def m(self) -> int:
        return len(self.weights)

    @property
    def n(self) -> int:
        return int(self.weights.sum())

    def xy(self, target: str, features: Sequence[str] | None = None):
        """Split into ``(X, y, w)`` float arrays for training."""
        names = [nm for nm in self.samples.dtype.names if nm != target] if features is None else list(features)
        X = numeric_matrix(self.samples, names)
        y = numeric_matrix(self.samples, [target])[:, 0]
        return X, y, self.weights.astype(np.float64)


# -- clustering phase ----------------------------------------------------


def _column_nonconstant(profile: EntropyProfile, schema: Sequence[ColumnSchema],
                        exclude: Sequence[str] = ()) -> list[list[int]]:
    """Non-constant positions of each key column, most significant first."""
    out, start = [], 0
    for col in schema:
        pos = np.arange(start, start + col.bit_width)
        if col.name not in exclude:
            out.append(pos[~profile.constant_mask[pos]].tolist())
        start += col.bit_width
    return out


def cluster_bit_order(profile: EntropyProfile, schema: Sequence[ColumnSchema],
                      order: Literal["high", "low"] = "high", rounds: bool = True,
                      exclude: Sequence[str] = ()) -> list[int]:
    """Every non-constant key position in cluster-selection order.

    With ``rounds`` the k-th round holds the k-th most significant
    non-constant bit of each column; inside a round positions are ranked by
    entropy (``high`` = decreasing) with ties going to the lower position.
    Without ``rounds`` all positions are ranked globally. Columns named in
    ``exclude`` (normally the regression target) never contribute key bits.
    """
    h = profile.h
    sign = -1.0 if order == "high" else 1.0
    per_col = _column_nonconstant(profile, schema, exclude)
    if not rounds:
        pos = np.asarray(sorted(p for col in per_col for p in col), dtype=np.int64)
        return pos[np.lexsort((pos, sign * h[pos]))].tolist()
    seq: list[int] = []
    depth = max((len(p) for p in per_col), default=0)
    for k in range(depth):
        rnd = np.asarray([p[k] for p in per_col if len(p) > k], dtype=np.int64)
        seq.extend(rnd[np.lexsort((rnd, sign * h[rnd]))].tolist())
    return seq


def select_cluster_bits(profile: EntropyProfile, schema: Sequence[ColumnSchema], beta: int,
                        order: Literal["high", "low"] = "high", rounds: bool = True,
                        exclude: Sequence[str] = ()) -> ClusterBits:
    if beta < 0:
        raise ValueError("beta must be >= 0")
    seq = cluster_bit_order(profile, schema, order=order, rounds=rounds, exclude=exclude)
    return ClusterBits(positions=tuple(seq[:beta]), beta=beta)


def _refine(ids: np.ndarray, n_groups: int, bit: np.ndarray) -> tuple[np.ndarray, int]:
    """Split every group by one more bit; labels stay dense."""
    key = ids * 2 + bit
    present = np.bincount(key, minlength=2 * n_groups) > 0
    remap = np.cumsum(present) - 1
    return remap[key], int(remap[-1]) + 1


def _group_ids(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Group rows by identical bit pattern, labelled in first-occurrence order.

    Returns ``(ids, first_row_of_each_group)``.
    """
    n, width = bits.shape
    if width == 0 or n == 0:
        return np.zeros(n, dtype=np.int64), np.zeros(min(n, 1), dtype=np.int64)
    packed = np.ascontiguousarray(np.packbits(bits, axis=1))
    keys = packed.view(np.dtype((np.void, packed.shape[1]))).reshape(n)
    _, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    order = np.argsort(first, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank[inverse.reshape(n)].astype(np.int64), first[order].astype(np.int64)


def _exact_int_mean(codes: np.ndarray, ids: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Per-cluster mean of non-negative integer codes, rounded half to even, without float error."""
    codes = np.asarray(codes, dtype=np.uint64)
    m = len(counts)
    if len(codes) < 2**21:  # 32-bit halves sum exactly in float64
        hi = np.bincount(ids, weights=(codes >> np.uint64(32)).astype(np.float64), minlength=m)
        lo = np.bincount(ids, weights=(codes & np.uint64(0xFFFFFFFF)).astype(np.float64), minlength=m)
        total = hi.astype(np.int64).astype(object) * 2**32 + lo.astype(np.int64).astype(object)
    else:
        total = np.zeros(m, dtype=object)
        np.add.at(total, ids, codes.astype(object))
    c = counts.astype(object)
    q = total // c
    twice_r = 2 * (total - q * c)
    up = (twice_r > c) | ((twice_r == c) & (q % 2 == 1))
    return q + up.astype(np.int64)


def _centroid_column(col: ColumnSchema, values: np.ndarray, ids: np.ndarray, counts: np.ndarray):
    m = len(counts)
    if col.is_float:
        # NaN/inf members make the centroid NaN/inf, which is still a valid value
        with np.errstate(invalid="ignore", over="ignore"):
            sums = np.bincount(ids, weights=values.astype(np.float64), minlength=m)
            return (sums / counts).astype(col.dtype)
    if col.kind == "decimal":
        q = np.rint(values * 10.0**col.scale).astype(np.int64) - col.offset
        mean_q = _exact_int_mean(q, ids, counts)
        return np.asarray([(int(v) + col.offset) / 10.0**col.scale for v in mean_q], dtype=np.float64)
    if col.categories is not None:
        index = {c: i for i, c in enumerate(col.categories)}
        codes = np.asarray([index[str(v)] for v in values.tolist()], dtype=np.int64)
        return np.asarray(col.categories, dtype=object)[_exact_int_mean(codes, ids, counts).astype(np.int64)]
    # int-like: means of the offset codes, nearest representable value
    shifted = np.asarray([int(v) - col.offset for v in values.tolist()], dtype=np.uint64) \
        if col.bit_width > 62 else (values.astype(np.int64) - col.offset).astype(np.uint64)
    return np.asarray([int(v) + col.offset for v in _exact_int_mean(shifted, ids, counts)], dtype=np.int64)


def cluster_condense(bm: BitMatrix, cb: ClusterBits) -> CondensedSet:
    """Average the records sharing each distinct key over ``cb.positions``."""
    if bm.n == 0:
        raise EmptyDataset("cannot condense an empty dataset")
    positions = np.asarray(cb.positions, dtype=np.int64)
    if positions.size and (positions.min() < 0 or positions.max() >= bm.l_t):
        raise IndexOutOfRange("cluster bit position outside the record")
    ids, first = _group_ids(bm.bits[:, positions])
    counts = np.bincount(ids, minlength=len(first)).astype(np.int64)
    records = decode_bits(bm.bits, bm.schema)
    samples = np.empty(len(first), dtype=records.dtype)
    singleton = counts == 1
    for col in bm.schema:
        values = records[col.name]
        cent = _centroid_column(col, values, ids, counts)
        # singleton clusters keep the exact source value (signed zeros, NaN payloads)
        cent[singleton] = values[first[singleton]]
        samples[col.name] = cent
    return CondensedSet(samples=samples, weights=counts, source_beta=cb.beta, positions=tuple(cb.positions))


def cluster_count_curve(bm: BitMatrix, profile: EntropyProfile | None = None,
                        order: Literal["high", "low"] = "high", exclude: Sequence[str] = ()) -> np.ndarray:
    """``m`` for every beta in ``0..#non-constant key bits`` (index = beta)."""
    profile = profile or bit_entropy(bm)
    seq = cluster_bit_order(profile, bm.schema, order=order, exclude=exclude)
    ids = np.zeros(bm.n, dtype=np.int64)
    m, curve = 1, [1]
    for p in seq:
        ids, m = _refine(ids, m, bm.bits[:, p].astype(np.int64))
        curve.append(m)
    return np.asarray(curve, dtype=np.int64)


def find_beta_for_fraction(bm: BitMatrix, target_fraction: float, exclude: Sequence[str] = ()) -> int:
    """Smallest beta whose cluster count reaches ``target_fraction * n``."""
    if not 0 < target_fraction <= 1:
        raise ValueError("target_fraction must be in (0, 1]")
    curve = cluster_count_curve(bm, exclude=exclude)
    hits = np.flatnonzero(curve / bm.n >= target_fraction)
    return int(hits[0]) if hits.size else len(curve) - 1


def find_beta_for_count(bm: BitMatrix, target_m: int, exclude: Sequence[str] = ()) -> int:
    """Beta whose cluster count is closest to ``target_m`` (smaller beta on ties)."""
    curve = cluster_count_curve(bm, exclude=exclude)
    return int(np.argmin(np.abs(curve - target_m)))


# -- compression phase ---------------------------------------------------


def compressed_size(n_b: int, l_b: int, l_d: int, n: int, m: int, s_params: int = 0) -> int:
    """Size in bits of bases + (base id, deviation) records + weights + parameters."""
    for v in (n_b, l_b, l_d, n, m, s_params):
        if v < 0:
            raise ValueError("size counters must be non-negative")
    return n_b * l_b + (n + m) * (ceil_log2(n_b) + l_d) + m * ceil_log2(n) + s_params


@dataclass(frozen=True)
class SearchTrace:
    """What the greedy base search visited; ``sizes[0]`` is the initial size."""

    order: tuple[int, ...]
    sizes: tuple[int, ...]
    n_bases: tuple[int, ...]
    best_prefix: int


@dataclass(frozen=True, eq=False)
class CompressedDataset:
    base_positions: np.ndarray
    bases: np.ndarray
    base_ids: np.ndarray
    deviations: np.ndarray
    weights: np.ndarray
    schema: tuple[ColumnSchema, ...]
    n: int
    m: int
    best_size: int
    beta: int = 0
    tau: int = 1
    condensed_mode: CondensedMode = "stored"
    cluster_positions: tuple[int, ...] = ()
    target: str | None = None
    trace: SearchTrace | None = field(default=None, repr=False)

    @property
    def n_b(self) -> int:
        return self.bases.shape[0]

    @property
    def l_b(self) -> int:
        return len(self.base_positions)

    @property
    def l_t(self) -> int:
        return sum(c.bit_width for c in self.schema)

    @property
    def l_d(self) -> int:
        return self.l_t - self.l_b

    @property
    def id_bits(self) -> int:
        return ceil_log2(self.n_b)

    @property
    def record_bits(self) -> int:
        return self.id_bits + self.l_d

    @property
    def deviation_positions(self) -> np.ndarray:
        mask = np.ones(self.l_t, dtype=bool)
        mask[self.base_positions] = False
        return np.flatnonzero(mask)

    def size_from_counters(self) -> int:
        return compressed_size(self.n_b, self.l_b, self.l_d, self.n, self.m)

    def validate(self) -> None:
        """Raise ``CorruptContainer`` if any structural invariant fails."""
        N = self.n + self.m
        if self.bases.shape[1] != self.l_b or self.deviations.shape != (N, self.l_d):
            raise CorruptContainer("block shapes disagree with the counters")
        if len(self.base_ids) != N:
            raise CorruptContainer("record count mismatch")
        bp = np.asarray(self.base_positions)
        if bp.size and (np.any(np.diff(bp) <= 0) or bp[0] < 0 or bp[-1] >= self.l_t):
            raise CorruptContainer("base positions must be sorted, distinct and inside the record")
        if N and (self.base_ids.min() < 0 or self.base_ids.max() >= self.n_b):
            raise CorruptContainer("base id out of range")
        if N and len(np.unique(self.base_ids)) != self.n_b:
            raise CorruptContainer("unreferenced base")
        if self.n_b > 1 and self.l_b:
            ids, _ = _group_ids(self.bases)
            if ids.max() + 1 != self.n_b:
                raise CorruptContainer("duplicate bases")
        if len(self.weights) != self.m:
            raise CorruptContainer("weight count mismatch")
        if self.m and int(self.weights.sum()) != self.n:
            raise CorruptContainer("weights do not sum to n")
        if self.best_size != self.size_from_counters():
            raise CorruptContainer("stored size disagrees with the size model")

    def _rows_bits(self, idx: np.ndarray) -> np.ndarray:
        out = np.empty((len(idx), self.l_t), dtype=np.uint8)
        out[:, self.base_positions] = self.bases[self.base_ids[idx]]
        out[:, self.deviation_positions] = self.deviations[idx]
        return out

    def decompress(self, include_condensed: bool = False) -> BitMatrix:
        self.validate()
        count = self.n + (self.m if include_condensed else 0)
        return BitMatrix(self._rows_bits(np.arange(count)), self.schema)

    def random_access(self, index: int) -> np.void:
        """Decode record ``index`` alone: one base lookup plus one deviation row."""
        if not 0 <= index < self.n:
            raise IndexOutOfRange(f"record index {index} outside [0, {self.n})")
        return decode_bits(self._rows_bits(np.asarray([index])), self.schema)[0]

    def get_condensed(self) -> CondensedSet:
        if self.condensed_mode == "stored":
            idx = np.arange(self.n, self.n + self.m)
            samples = decode_bits(self._rows_bits(idx), self.schema) if self.m else None
            return CondensedSet(samples=samples, weights=self.weights.copy(), source_beta=self.beta,
                                positions=self.cluster_positions)
        if self.condensed_mode == "on_demand":
            cb = ClusterBits(positions=self.cluster_positions, beta=self.beta)
            return cluster_condense(self.decompress(), cb)
        raise NoCondensedData("container was built without condensed samples")


def _base_order(profile: EntropyProfile, order: str) -> np.ndarray:
    pos = np.flatnonzero(~profile.constant_mask)
    h = profile.h[pos]
    if order == "increasing":
        return pos[np.lexsort((pos, h))]
    if order == "decreasing":
        return pos[np.lexsort((pos, -h))]
    raise ValueError("order must be 'increasing' or 'decreasing'")


def compress(bm: BitMatrix, cfg: SearchConfig | None = None, *, target: str | None = None,
             base_order: Literal["increasing", "decreasing"] = "increasing",
             cluster_order: Literal["high", "low"] = "high", cluster_rounds: bool = True) -> CompressedDataset:
    """Compress ``bm``; the default orders are the entropy-guided ones.

    The ``target`` column is stored and averaged like any other column but
    contributes no cluster-key bits. ``base_order``/``cluster_order`` exist
    for ablations only.
    """
    cfg = cfg or SearchConfig()
    if bm.n == 0:
        raise EmptyDataset("cannot compress an empty dataset")
    if target is not None and target not in [c.name for c in bm.schema]:
        raise ValueError(f"unknown target column {target!r}")
    profile = bit_entropy(bm)
    n = bm.n

    cluster_positions: tuple[int, ...] = ()
    weights = np.zeros(0, dtype=np.int64)
    rows = bm.bits
    if cfg.condensed_mode != "none":
        cb = select_cluster_bits(profile, bm.schema, cfg.beta, order=cluster_order, rounds=cluster_rounds,
                                 exclude=(target,) if target is not None else ())
        cluster_positions = cb.positions
        if cfg.condensed_mode == "stored":
            cond = cluster_condense(bm, cb)
            weights = cond.weights
            rows = np.vstack([bm.bits, encode_tabular(cond.samples, bm.schema).bits])
    m = len(weights)
    N = n + m
    l_t = bm.l_t

    constant = np.flatnonzero(profile.constant_mask)
    ids = np.zeros(N, dtype=np.int64)
    n_b = 1
    # condensed rows can disagree with the originals on a constant position
    for p in constant:
        col = rows[:, p]
        if col.min() != col.max():
            ids, n_b = _refine(ids, n_b, col.astype(np.int64))
    l_b = len(constant)
    best = compressed_size(n_b, l_b, l_t - l_b, n, m)
    sizes, n_bases = [best], [n_b]
    order = _base_order(profile, base_order)
    best_k, c = 0, 0
    for k, p in enumerate(order, start=1):
        ids, n_b = _refine(ids, n_b, rows[:, p].astype(np.int64))
        l_b += 1
        size = compressed_size(n_b, l_b, l_t - l_b, n, m)
        sizes.append(size)
        n_bases.append(n_b)
        if size < best:
            best, best_k, c = size, k, 0
        else:
            c += 1
            if c >= cfg.tau or n_b >= n:
                break

    base_positions = np.sort(np.concatenate([constant, order[:best_k]])).astype(np.int64)
    base_ids, first = _group_ids(rows[:, base_positions])
    bases = rows[first][:, base_positions]
    dev_mask = np.ones(l_t, dtype=bool)
    dev_mask[base_positions] = False
    cd = CompressedDataset(
        base_positions=base_positions,
        bases=np.ascontiguousarray(bases),
        base_ids=base_ids,
        deviations=np.ascontiguousarray(rows[:, dev_mask]),
        weights=np.asarray(weights, dtype=np.int64),
        schema=bm.schema,
        n=n,
        m=m,
        best_size=best,
        beta=cfg.beta,
        tau=cfg.tau,
        condensed_mode=cfg.condensed_mode,
        cluster_positions=tuple(int(p) for p in cluster_positions),
        target=target,
        trace=SearchTrace(order=tuple(int(p) for p in order[:len(sizes) - 1]), sizes=tuple(sizes),
                          n_bases=tuple(n_bases), best_prefix=best_k),
    )
    log.debug("compressed n=%d m=%d n_b=%d l_b=%d l_d=%d size=%d", n, m, cd.n_b, cd.l_b, cd.l_d, best)
    return cd


def decompress(cd: CompressedDataset) -> BitMatrix:
    return cd.decompress()


def random_access(cd: CompressedDataset, index: int) -> np.void:
    return cd.random_access(index)


def get_condensed(cd: CompressedDataset) -> CondensedSet:
    return cd.get_condensed()
