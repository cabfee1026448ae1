import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from egd.bitcodec import (
    BitMatrix,
    ColumnSchema,
    EntropyProfile,
    bit_entropy,
    decode_tabular,
    encode_tabular,
    infer_schema,
    records_equal,
)
from egd.exceptions import CorruptContainer, EmptyDataset, IndexOutOfRange, NoCondensedData
from egd.gede import (
    ClusterBits,
    CompressedDataset,
    SearchConfig,
    cluster_condense,
    cluster_count_curve,
    compress,
    compressed_size,
    find_beta_for_count,
    find_beta_for_fraction,
    select_cluster_bits,
)


def _bits(rows):
    arr = np.array([[int(c) for c in r] for r in rows], dtype=np.uint8)
    return BitMatrix(arr, (ColumnSchema("b", "int", arr.shape[1]),))


def _float_table(*cols):
    data = {f"x{j}": np.asarray(c, dtype=np.float64) for j, c in enumerate(cols)}
    return encode_tabular(data, infer_schema(data))


def _size_oracle(n_b, l_b, l_d, n, m, s=0):
    lg = lambda x: 0 if x <= 1 else math.ceil(math.log2(x))  # noqa: E731
    return n_b * l_b + (n + m) * (lg(n_b) + l_d) + m * lg(n) + s


# -- size model ------------------------------------------------------------


def test_size_examples():
    assert compressed_size(1, 17, 0, 4, 0) == 17
    assert compressed_size(4, 10, 6, 100, 0) == 840
    assert compressed_size(2, 1, 0, 2, 2) == 8


@given(st.integers(0, 5000), st.integers(0, 500), st.integers(0, 500), st.integers(1, 10**6),
       st.integers(0, 5000), st.integers(0, 1000))
def test_size_matches_oracle(n_b, l_b, l_d, n, m, s):
    assert compressed_size(n_b, l_b, l_d, n, m, s) == _size_oracle(n_b, l_b, l_d, n, m, s)


def test_size_rejects_negative():
    with pytest.raises(ValueError):
        compressed_size(1, -1, 0, 1, 0)


# -- cluster bit selection -----------------------------------------------------


def test_beta_zero_selects_nothing():
    bm = _bits(["01", "10"])
    assert select_cluster_bits(bit_entropy(bm), bm.schema, 0).positions == ()


def test_round_one_hand_trace():
    # three 2-bit columns; round 1 = bits 0, 2, 4 with entropies 0.9, 0.2, 0.5
    schema = tuple(ColumnSchema(f"c{j}", "int", 2) for j in range(3))
    h = np.array([0.9, 0.95, 0.2, 0.99, 0.5, 0.97])
    prof = EntropyProfile(h=h, ones_count=np.array([1, 1, 1, 1, 1, 1]), n=4)
    assert sorted(select_cluster_bits(prof, schema, 2).positions) == [0, 4]
    assert select_cluster_bits(prof, schema, 2).positions == (0, 4)
    # the second round only starts once the first is exhausted
    assert select_cluster_bits(prof, schema, 4).positions == (0, 4, 2, 3)


def test_round_skips_constant_msbs():
    schema = (ColumnSchema("a", "int", 3), ColumnSchema("b", "int", 3))
    bm = encode_tabular({"a": np.array([0, 1, 2, 3]), "b": np.array([4, 5, 6, 7])}, schema)
    cb = select_cluster_bits(bit_entropy(bm), schema, 2)
    # column a: bit 0 is constant so its first candidate is bit 1; column b: bit 3 constant, candidate bit 4
    assert sorted(cb.positions) == [1, 4]


def test_beta_d_takes_one_bit_per_column():
    rng = np.random.default_rng(1)
    data = {f"c{j}": rng.integers(0, 256, 200) for j in range(5)}
    schema = tuple(ColumnSchema(k, "int", 8) for k in data)
    bm = encode_tabular(data, schema)
    cb = select_cluster_bits(bit_entropy(bm), schema, 5)
    assert sorted(p // 8 for p in cb.positions) == [0, 1, 2, 3, 4]


def test_large_beta_returns_all_nonconstant():
    bm = _bits(["0011", "0101"])
    prof = bit_entropy(bm)
    cb = select_cluster_bits(prof, bm.schema, 99)
    assert sorted(cb.positions) == [1, 2]


def test_target_column_excluded_from_key():
    data = {"x": np.array([0, 1, 0, 1]), "y": np.array([0, 0, 1, 1])}
    schema = infer_schema(data)
    prof = bit_entropy(encode_tabular(data, schema))
    assert select_cluster_bits(prof, schema, 5, exclude=("y",)).positions == (0,)


# -- condensation ------------------------------------------------------------


def test_mean_of_two_rows():
    bm = _float_table([1.0, 3.0])
    cond = cluster_condense(bm, ClusterBits((), 0))
    assert cond.samples["x0"].tolist() == [2.0] and cond.weights.tolist() == [2]


def test_beta_zero_is_global_mean():
    x = np.random.default_rng(0).normal(size=50)
    cond = cluster_condense(_float_table(x), ClusterBits((), 0))
    assert cond.m == 1 and cond.weights[0] == 50
    assert cond.samples["x0"][0] == pytest.approx(x.mean(), rel=1e-14)


def test_singletons_reproduce_rows():
    x = np.random.default_rng(0).normal(size=(30, 2))
    bm = _float_table(x[:, 0], x[:, 1])
    cond = cluster_condense(bm, ClusterBits(tuple(range(bm.l_t)), bm.l_t))
    assert cond.m == 30 and np.all(cond.weights == 1)
    ids = np.argsort(cond.samples["x0"])
    assert np.array_equal(cond.samples["x0"][ids], np.sort(x[:, 0]))


def test_int_and_categorical_centroids_round():
    data = {"k": np.array([1, 2, 2, 10]), "c": np.array(["a", "b", "b", "b"], dtype=object)}
    schema = infer_schema(data)
    cond = cluster_condense(encode_tabular(data, schema), ClusterBits((), 0))
    assert cond.samples["k"][0] == 4  # 15/4 = 3.75
    assert cond.samples["c"][0] == "b"  # mean code 0.75 rounds to index 1


def test_wide_int_centroid_is_exact():
    vals = np.array([2**62 + 1, 2**62 + 2, 2**62 + 4])
    data = {"k": vals}
    cond = cluster_condense(encode_tabular(data, infer_schema(data)), ClusterBits((), 0))
    assert int(cond.samples["k"][0]) == 2**62 + 2


def test_condense_errors():
    bm = _bits(["01"])
    with pytest.raises(IndexOutOfRange):
        cluster_condense(bm, ClusterBits((5,), 1))
    with pytest.raises(EmptyDataset):
        cluster_condense(BitMatrix(np.zeros((0, 2), np.uint8), bm.schema), ClusterBits((), 0))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 40))
def test_cluster_count_equals_distinct_keys(seed, beta):
    rng = np.random.default_rng(seed)
    bits = (rng.random((int(rng.integers(1, 300)), 24)) < rng.random(24)).astype(np.uint8)
    bm = BitMatrix(bits, (ColumnSchema("a", "int", 12), ColumnSchema("b", "int", 12)))
    cb = select_cluster_bits(bit_entropy(bm), bm.schema, beta)
    cond = cluster_condense(bm, cb)
    keys = {tuple(r) for r in bits[:, list(cb.positions)]} if cb.positions else {()}
    assert cond.m == len(keys)
    assert cond.weights.sum() == bm.n and np.all(cond.weights >= 1)
    assert cluster_count_curve(bm)[min(beta, len(cluster_count_curve(bm)) - 1)] == cond.m


def test_find_beta():
    x = np.arange(64, dtype=np.int64)
    bm = encode_tabular({"k": x}, infer_schema({"k": x}))
    assert cluster_condense(bm, select_cluster_bits(bit_entropy(bm), bm.schema,
                                                    find_beta_for_fraction(bm, 1.0))).m == 64
    beta = find_beta_for_fraction(bm, 1 / 64 + 1e-9)
    assert beta == 1
    assert find_beta_for_count(bm, 16) == 4
    with pytest.raises(ValueError):
        find_beta_for_fraction(bm, 0.0)


# -- compression ---------------------------------------------------------------


def test_identical_rows():
    bm = _bits(["1011"] * 5)
    cd = compress(bm, SearchConfig(beta=2, condensed_mode="stored"))
    assert cd.n_b == 1 and cd.l_b == 4 and cd.m == 1
    assert cd.best_size == 4 + 0 + 1 * math.ceil(math.log2(5))


def test_uniform_random_rows_tau_one():
    rng = np.random.default_rng(0)
    bm = BitMatrix(rng.integers(0, 2, (256, 32)).astype(np.uint8), (ColumnSchema("b", "int", 32),))
    cd = compress(bm, SearchConfig(beta=0, tau=1, condensed_mode="none"))
    assert len(cd.trace.sizes) <= 1 + len(cd.trace.order)
    non_improving = [i for i in range(1, len(cd.trace.sizes)) if cd.trace.sizes[i] >= min(cd.trace.sizes[:i])]
    assert len(non_improving) <= 1
    assert np.array_equal(cd.decompress().bits, bm.bits)


def test_one_base_no_deviation():
    bm = _bits(["10"] * 3)
    cd = compress(bm, SearchConfig(condensed_mode="none"))
    assert cd.l_d == 0 and cd.n_b == 1
    assert [''.join(map(str, r)) for r in cd.decompress().bits] == ["10"] * 3


def test_single_record_random_access():
    data = {"a": np.array([7]), "b": np.array([0.25])}
    bm = encode_tabular(data, infer_schema(data))
    cd = compress(bm)
    rec = cd.random_access(0)
    assert rec["a"] == 7 and rec["b"] == 0.25
    with pytest.raises(IndexOutOfRange):
        cd.random_access(1)


def test_empty_dataset():
    with pytest.raises(EmptyDataset):
        compress(BitMatrix(np.zeros((0, 3), np.uint8), (ColumnSchema("b", "int", 3),)))


def test_modes_and_condensed_access():
    rng = np.random.default_rng(5)
    data = {"x": np.round(rng.normal(size=300), 2), "y": np.round(rng.normal(size=300), 1)}
    bm = encode_tabular(data, infer_schema(data, decimals=True))
    stored = compress(bm, SearchConfig(beta=4, condensed_mode="stored"), target="y")
    lazy = compress(bm, SearchConfig(beta=4, condensed_mode="on_demand"), target="y")
    none = compress(bm, SearchConfig(beta=4, condensed_mode="none"))
    a, b = stored.get_condensed(), lazy.get_condensed()
    assert records_equal(a.samples, b.samples) and np.array_equal(a.weights, b.weights)
    assert lazy.m == 0 and none.m == 0
    with pytest.raises(NoCondensedData):
        none.get_condensed()
    # stored samples decode from records n..n+m-1
    extra = decode_tabular(stored.decompress(include_condensed=True), range(stored.n, stored.n + stored.m))
    assert records_equal(extra, a.samples)


def test_increasing_order_beats_decreasing_on_skewed_bits():
    rng = np.random.default_rng(2)
    p = np.linspace(0.01, 0.5, 40)
    bm = BitMatrix((rng.random((2000, 40)) < p).astype(np.uint8), (ColumnSchema("b", "int", 40),))
    inc = compress(bm, SearchConfig(condensed_mode="none", tau=40))
    dec = compress(bm, SearchConfig(condensed_mode="none", tau=40), base_order="decreasing")
    assert inc.best_size < dec.best_size


def test_validate_detects_tampering():
    cd = compress(_bits(["0011", "0101", "0011", "1111"]), SearchConfig(beta=1))
    cd.validate()
    bad = CompressedDataset(**{**cd.__dict__, "best_size": cd.best_size + 1})
    with pytest.raises(CorruptContainer):
        bad.validate()
    bad = CompressedDataset(**{**cd.__dict__, "weights": cd.weights + 1})
    with pytest.raises(CorruptContainer):
        bad.validate()


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_round_trip_and_invariants(seed):
    from _gen import random_dataset

    cols, schema, cfg, target = random_dataset(np.random.default_rng(seed), max_n=300, max_d=10)
    bm = encode_tabular(cols, schema)
    cd = compress(bm, cfg, target=target)
    cd.validate()
    assert np.array_equal(cd.decompress().bits, bm.bits)
    assert cd.best_size == _size_oracle(cd.n_b, cd.l_b, cd.l_d, cd.n, cd.m)
    assert cd.l_b + cd.l_d == bm.l_t
    # the chosen prefix is the best size seen during the search
    assert cd.best_size == min(cd.trace.sizes)
    if cfg.condensed_mode != "none":
        assert cd.get_condensed().weights.sum() == cd.n
    i = int(np.random.default_rng(seed).integers(0, bm.n))
    assert records_equal(np.array([cd.random_access(i)]), decode_tabular(bm, [i]))


def test_duplicating_rows_never_grows_bases():
    rng = np.random.default_rng(4)
    bm = BitMatrix(rng.integers(0, 2, (100, 16)).astype(np.uint8), (ColumnSchema("b", "int", 16),))
    doubled = BitMatrix(np.vstack([bm.bits, bm.bits]), bm.schema)
    a = compress(bm, SearchConfig(condensed_mode="none", tau=16))
    b = compress(doubled, SearchConfig(condensed_mode="none", tau=16))
    assert np.array_equal(bit_entropy(bm).h, bit_entropy(doubled).h)
    assert b.best_size <= 2 * a.best_size
