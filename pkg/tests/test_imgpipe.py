import gzip
import math
import shutil
import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from egd.exceptions import CorruptContainer, ShapeMismatch, WrongDomain
from egd.gede import SearchConfig
from egd.imgpipe import (
    MAX_ABS_ERROR,
    ClasswiseArchive,
    ImageTensor,
    Manifest,
    SampleSpec,
    archive_bytes,
    compress_classwise,
    dct_forward,
    dct_inverse,
    decode_chain,
    encode_chain,
    epoch_indices,
    load_image_dir,
    load_images,
    read_idx,
    read_pnm,
    rgb_to_ycbcr,
    sample_epoch,
    save_decoded,
    write_idx,
    write_pnm,
)


def _smooth_images(n, size=16, channels=3, seed=0):
    """Blurry colour blobs plus a little noise: realistic spectra, cheap to make."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((n, size, size, channels), dtype=np.uint8)
    for i in range(n):
        base = np.zeros((size, size, channels))
        for _ in range(3):
            cx, cy, r = rng.random(3) * [1, 1, 0.5] + [0, 0, 0.1]
            blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / r**2)
            base += blob[..., None] * rng.uniform(0, 255, channels)
        out[i] = np.clip(base / 2 + rng.normal(0, 4, base.shape), 0, 255).astype(np.uint8)
    return out


# -- colour transform ----------------------------------------------------------


def test_black_and_gray():
    ycc = rgb_to_ycbcr(ImageTensor(np.zeros((1, 1, 3), np.uint8), "spatial_rgb")).data[0, 0]
    assert ycc.tolist() == [0, 128, 128]
    for v in (0, 17, 128, 255):
        ycc = rgb_to_ycbcr(ImageTensor(np.full((1, 1, 3), v, np.uint8), "spatial_rgb")).data[0, 0]
        assert ycc[0] == v and abs(int(ycc[1]) - 128) <= 1 and abs(int(ycc[2]) - 128) <= 1


def test_colour_round_trip_all_colours_sampled():
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (1 << 18, 1, 3)).astype(np.uint8)
    from egd.imgpipe import ycbcr_to_rgb

    back = ycbcr_to_rgb(rgb_to_ycbcr(ImageTensor(rgb, "spatial_rgb"))).data
    assert np.abs(back.astype(int) - rgb).max() <= 1


def test_wrong_domain():
    gray = ImageTensor(np.zeros((2, 2, 1), np.uint8), "spatial_gray")
    with pytest.raises(WrongDomain):
        rgb_to_ycbcr(gray)
    with pytest.raises(WrongDomain):
        dct_inverse(gray)
    with pytest.raises(WrongDomain):
        ImageTensor(np.full((2, 2, 3), 300), "spatial_rgb")
    with pytest.raises(WrongDomain):
        ImageTensor(np.zeros((2, 2, 1), np.int64), "dct_coeff")


# -- DCT -------------------------------------------------------------------------


@pytest.mark.parametrize("c, h, w", [(7, 4, 4), (200, 32, 32), (3, 5, 7)])
def test_constant_channel_dc_only(c, h, w):
    coeffs = dct_forward(ImageTensor(np.full((h, w, 1), c, np.uint8), "spatial_gray")).data
    assert coeffs[0, 0, 0] == round(c * math.sqrt(h * w))
    coeffs[0, 0, 0] = 0
    assert not coeffs.any()


def test_zero_channel():
    assert not dct_forward(ImageTensor(np.zeros((8, 8, 1), np.uint8), "spatial_gray")).data.any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_dct_round_trip_and_parseval(seed):
    img = np.random.default_rng(seed).integers(0, 256, (32, 32, 1)).astype(np.uint8)
    t = ImageTensor(img, "spatial_gray")
    coeffs = dct_forward(t)
    back = dct_inverse(coeffs).data
    assert np.abs(back.astype(int) - img).max() <= 2
    # energy is preserved up to the rounding of 1024 coefficients (each off by <= 0.5)
    e_pix = np.sqrt(np.sum(img.astype(float) ** 2))
    e_coef = np.sqrt(np.sum(coeffs.data.astype(float) ** 2))
    assert abs(e_pix - e_coef) <= 0.5 * math.sqrt(img.size)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([1, 3]))
def test_chain_error_bound_on_noise(seed, channels):
    rng = np.random.default_rng(seed)
    imgs = rng.integers(0, 256, (4, 12, 12, channels)).astype(np.uint8)
    chain = ("ycbcr", "dct") if channels == 3 else ("dct",)
    dec = decode_chain(encode_chain(imgs, chain), chain)
    assert np.abs(dec.astype(int) - imgs).max() <= MAX_ABS_ERROR


def test_isolated_impulse_needs_error_feedback():
    # a lone dark pixel spreads into ~0.09-sized coefficients that all round to 0
    img = np.full((1, 32, 32, 1), 3, np.uint8)
    img[0, 0, 0, 0] = 0
    plain = dct_inverse(dct_forward(ImageTensor(img[0], "spatial_gray"))).data
    assert np.abs(plain.astype(int) - img[0]).max() == 3
    dec = decode_chain(encode_chain(img, ("dct",)), ("dct",))
    assert np.abs(dec.astype(int) - img).max() <= MAX_ABS_ERROR


@settings(max_examples=25, deadline=None)
@given(hnp.arrays(np.uint8, (2, 16, 16, 1)))
def test_chain_error_bound_adversarial(imgs):
    dec = decode_chain(encode_chain(imgs, ("dct",)), ("dct",))
    assert np.abs(dec.astype(int) - imgs).max() <= MAX_ABS_ERROR


def test_no_chain_is_identity():
    imgs = _smooth_images(3)
    assert np.array_equal(decode_chain(encode_chain(imgs, ()), ()), imgs)


# -- class-wise archive ---------------------------------------------------------------


def test_identical_images_one_base():
    imgs = np.repeat(_smooth_images(1, size=8), 20, axis=0)
    arch = compress_classwise(imgs, [0] * 20)
    cd = arch.containers[0]
    assert cd.n_b == 1 and cd.m == 0 and cd.l_d == 0


def test_archive_round_trip_lossless_and_dct(tmp_path):
    imgs = _smooth_images(40)
    labels = np.arange(40) % 3
    spatial = compress_classwise(imgs, labels)
    dct = compress_classwise(imgs, labels, use_dct=True)
    for c in range(3):
        assert np.array_equal(spatial.decode_class(c), imgs[labels == c])
        assert np.abs(dct.decode_class(c).astype(int) - imgs[labels == c]).max() <= MAX_ABS_ERROR
    assert dct.manifest.transform_chain == ("ycbcr", "dct")
    dct.save(tmp_path / "a")
    back = ClasswiseArchive.load(tmp_path / "a")
    assert back.manifest == dct.manifest
    assert np.array_equal(back.decode_class(1), dct.decode_class(1))
    assert archive_bytes(tmp_path / "a") == dct.serialized_bytes()


def test_gray_chain_skips_colour():
    imgs = _smooth_images(6, channels=1)
    arch = compress_classwise(imgs[..., 0], [5] * 6, use_dct=True)
    assert arch.manifest.transform_chain == ("dct",) and arch.manifest.shape == (16, 16, 1)


def test_jobs_do_not_change_output():
    imgs = _smooth_images(30)
    labels = np.arange(30) % 4
    a = compress_classwise(imgs, labels, use_dct=True, jobs=1)
    b = compress_classwise(imgs, labels, use_dct=True, jobs=4)
    from egd import container

    for c in a.containers:
        assert container.to_bytes(a.containers[c]) == container.to_bytes(b.containers[c])


def test_compress_classwise_errors():
    imgs = _smooth_images(4)
    with pytest.raises(ValueError):
        compress_classwise(imgs, [0] * 4, cfg=SearchConfig(condensed_mode="stored"))
    with pytest.raises(ShapeMismatch):
        compress_classwise(imgs, [0] * 3)
    with pytest.raises(ShapeMismatch):
        compress_classwise(imgs[..., :2], [0] * 4)


def test_manifest_text():
    m = Manifest((28, 28, 1), {0: 3, 7: 2}, ("dct",), 16, 9, {"note": "x"})
    text = m.to_text()
    assert "transform_chain=dct" in text and "count.7=2" in text
    assert Manifest.from_text(text) == m
    with pytest.raises(CorruptContainer):
        Manifest.from_text("format=other\n")


def test_deleting_a_class_leaves_others(tmp_path):
    imgs = _smooth_images(30)
    labels = np.arange(30) % 3
    compress_classwise(imgs, labels).save(tmp_path / "a")
    (tmp_path / "a" / "class_1.egd").unlink()
    from egd.container import ContainerReader

    for c in (0, 2):
        with ContainerReader(tmp_path / "a" / f"class_{c}.egd") as r:
            rows = r.read_many(range(len(r)))
        assert len(rows) == 10


# -- sampling ----------------------------------------------------------------------


def test_epoch_indices_determinism_and_distinctness():
    spec = SampleSpec(0.1, seed=3, epoch=2)
    a, b = epoch_indices(1000, spec, 4), epoch_indices(1000, spec, 4)
    assert np.array_equal(a, b) and len(a) == 100 and len(np.unique(a)) == 100
    assert not np.array_equal(a, epoch_indices(1000, SampleSpec(0.1, seed=3, epoch=3), 4))
    assert not np.array_equal(a, epoch_indices(1000, spec, 5))
    with pytest.raises(ValueError):
        SampleSpec(0.0)


def _coverage_oracle(n, k, epochs, trials, seed):
    """Independent simulation: fraction of n items seen in ``epochs`` draws of k without replacement."""
    rng = np.random.default_rng(seed)
    seen = [len(set(np.concatenate([rng.permutation(n)[:k] for _ in range(epochs)]))) / n for _ in range(trials)]
    return float(np.mean(seen))


def test_ten_epoch_coverage():
    n = 1000
    covered = [len(set(np.concatenate([epoch_indices(n, SampleSpec(0.1, seed=s, epoch=e), 0)
                                       for e in range(10)]))) / n for s in range(20)]
    oracle = _coverage_oracle(n, 100, 10, 200, seed=99)
    assert oracle == pytest.approx(1 - 0.9**10, abs=0.01)
    assert np.mean(covered) > 0.6
    assert np.mean(covered) == pytest.approx(oracle, abs=0.02)


def test_uniform_per_class_draws():
    counts = np.zeros(50)
    for e in range(2000):
        counts[epoch_indices(50, SampleSpec(0.2, seed=1, epoch=e), 0)] += 1
    expected = 2000 * 10 / 50
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    assert chi2 < 100  # 49 degrees of freedom; p < 1e-4 beyond this


def test_full_fraction_decodes_everything(tmp_path):
    imgs = _smooth_images(20)
    labels = np.arange(20) % 2
    arch = compress_classwise(imgs, labels)
    arch.save(tmp_path / "a")
    for source in (arch, tmp_path / "a"):
        s = sample_epoch(source, SampleSpec(1.0))
        for c in (0, 1):
            assert np.array_equal(s.images[s.labels == c], imgs[labels == c])


def test_small_fraction_reads_little(tmp_path):
    # each class header holds one schema entry per pixel position, so the
    # bound needs enough images per class to amortize it
    imgs = _smooth_images(1000, size=12)
    compress_classwise(imgs, np.arange(1000) % 2, use_dct=True).save(tmp_path / "a")
    s = sample_epoch(tmp_path / "a", SampleSpec(0.1, seed=4))
    assert len(s.images) == 100
    assert s.bytes_read < 0.3 * archive_bytes(tmp_path / "a")


def test_peak_memory_tracks_subset_not_archive(tmp_path):
    def peak(n):
        imgs = _smooth_images(n, size=12, seed=n)
        d = tmp_path / f"a{n}"
        compress_classwise(imgs, np.zeros(n, int)).save(d)
        k = 10
        spec = SampleSpec(k / n, seed=0)
        tracemalloc.start()
        sample_epoch(d, spec)
        _, top = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        return top, archive_bytes(d)

    small_peak, small_size = peak(100)
    big_peak, big_size = peak(800)
    assert big_size > 5 * small_size
    assert big_peak < 2 * small_peak + 64 * 1024


# -- ingestion ---------------------------------------------------------------------


def test_idx_round_trip(tmp_path):
    arr = np.random.default_rng(0).integers(0, 256, (5, 4, 3)).astype(np.uint8)
    write_idx(tmp_path / "x.idx", arr)
    assert np.array_equal(read_idx(tmp_path / "x.idx"), arr)
    with open(tmp_path / "x.idx", "rb") as src, gzip.open(tmp_path / "x.idx.gz", "wb") as dst:
        shutil.copyfileobj(src, dst)
    assert np.array_equal(read_idx(tmp_path / "x.idx.gz"), arr)
    wide = np.arange(6, dtype=np.int32).reshape(2, 3) - 3
    write_idx(tmp_path / "w.idx", wide)
    assert np.array_equal(read_idx(tmp_path / "w.idx"), wide)
    (tmp_path / "bad.idx").write_bytes(b"\x01\x02")
    with pytest.raises(CorruptContainer):
        read_idx(tmp_path / "bad.idx")


def test_idx_images_with_labels(tmp_path):
    imgs = np.random.default_rng(1).integers(0, 256, (6, 5, 5)).astype(np.uint8)
    write_idx(tmp_path / "i.idx", imgs)
    write_idx(tmp_path / "l.idx", np.array([0, 1, 0, 1, 2, 2], np.uint8))
    x, y = load_images(tmp_path / "i.idx", tmp_path / "l.idx")
    assert x.shape == (6, 5, 5) and y.tolist() == [0, 1, 0, 1, 2, 2]


def test_pnm_round_trip_and_dirs(tmp_path):
    rgb = np.random.default_rng(0).integers(0, 256, (3, 5, 3)).astype(np.uint8)
    write_pnm(tmp_path / "a.ppm", rgb)
    assert np.array_equal(read_pnm(tmp_path / "a.ppm"), rgb)
    (tmp_path / "c.pgm").write_bytes(b"P5\n# comment\n2 1\n255\n\x07\x09")
    assert read_pnm(tmp_path / "c.pgm")[..., 0].tolist() == [[7, 9]]
    imgs = _smooth_images(6, size=4)
    out = save_decoded(tmp_path / "d", imgs, np.array([0, 0, 1, 1, 2, 2]))
    x, y = load_image_dir(out)
    assert np.array_equal(x, imgs) and y.tolist() == [0, 0, 1, 1, 2, 2]
    assert (out / "labels.txt").read_text().count("\n") == 6
