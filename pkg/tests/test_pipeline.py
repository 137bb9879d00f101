import struct

import numpy as np
import pytest

from potflow import pipeline as pl
from helpers import synthetic_digits


@pytest.fixture()
def idx_pair(tmp_path):
    images, labels = synthetic_digits(n_per_class=5, seed=0)
    ip, lp = tmp_path / "imgs.idx", tmp_path / "labs.idx"
    pl.write_idx(images, labels, ip, lp)
    return ip, lp, images, labels


def test_idx_round_trip(idx_pair):
    ip, lp, images, labels = idx_pair
    data = pl.load_idx(ip, lp)
    assert len(data) == len(labels)
    assert np.array_equal(data.labels, labels)
    assert np.abs(data.images - images).max() <= 0.5 / 255 + 1e-12


def test_idx_empty_file_valid(tmp_path):
    ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
    pl.write_idx(np.zeros((0, 28, 28)), np.zeros(0, dtype=np.uint8), ip, lp)
    data = pl.load_idx(ip, lp)
    assert len(data) == 0


def test_idx_single_saturated_image(tmp_path):
    ip, lp = tmp_path / "i.idx", tmp_path / "l.idx"
    pl.write_idx(np.ones((1, 28, 28)), np.array([3], dtype=np.uint8), ip, lp)
    data = pl.load_idx(ip, lp)
    assert np.all(data.images == 1.0)


def test_idx_rejects_five_malformed_files(tmp_path):
    images, labels = synthetic_digits(n_per_class=2, seed=1)
    good_i, good_l = tmp_path / "good_i", tmp_path / "good_l"
    pl.write_idx(images, labels, good_i, good_l)

    bad_magic_i = tmp_path / "bad_magic_i"
    bad_magic_i.write_bytes(b"\x00\x00\x08\x99" + good_i.read_bytes()[4:])
    with pytest.raises(pl.IdxError, match="image magic"):
        pl.load_idx(bad_magic_i, good_l)

    bad_magic_l = tmp_path / "bad_magic_l"
    bad_magic_l.write_bytes(b"\xff\xff\xff\xff" + good_l.read_bytes()[4:])
    with pytest.raises(pl.IdxError, match="label magic"):
        pl.load_idx(good_i, bad_magic_l)

    trunc_payload = tmp_path / "trunc_payload"
    trunc_payload.write_bytes(good_i.read_bytes()[:-100])
    with pytest.raises(pl.IdxError, match="truncated"):
        pl.load_idx(trunc_payload, good_l)

    trunc_header = tmp_path / "trunc_header"
    trunc_header.write_bytes(good_i.read_bytes()[:9])
    with pytest.raises(pl.IdxError, match="truncated"):
        pl.load_idx(trunc_header, good_l)

    mismatch_l = tmp_path / "mismatch_l"
    mismatch_l.write_bytes(struct.pack(">II", pl.IDX_LABELS_MAGIC, 3)
                           + bytes([0, 1, 2]))
    with pytest.raises(pl.IdxError, match=f"{len(images)} images vs 3 labels"):
        pl.load_idx(good_i, mismatch_l)


def test_image_label_count_invariant():
    with pytest.raises(pl.IdxError, match="images but"):
        pl.ImageSet(np.zeros((3, 28, 28)), np.zeros(2, dtype=np.uint8))


# -- PCA ------------------------------------------------------------------------


def test_pca_identical_images_zero_codes():
    img = np.random.default_rng(0).uniform(size=(1, 28, 28))
    data = pl.ImageSet(np.repeat(img, 20, axis=0),
                       np.zeros(20, dtype=np.uint8))
    model = pl.fit_pca(data, 3)
    assert np.allclose(model.mean, img.reshape(-1))
    codes = pl.embed(model, data.flat())
    assert np.abs(codes).max() <= 1e-10


def test_pca_two_point_dataset_first_component():
    a = np.random.default_rng(1).normal(size=64)
    X = np.stack([-a, a])
    model = pl.fit_pca(X, 1)
    direction = a / np.linalg.norm(a)
    dot = abs(float(model.components[0] @ direction))
    assert dot == pytest.approx(1.0, abs=1e-10)


def test_pca_recovers_known_factor_variances():
    rng = np.random.default_rng(2)
    D, n = 30, 10 ** 4
    basis, _ = np.linalg.qr(rng.normal(size=(D, 3)))
    factor_std = np.array([3.0, 2.0, 1.0])
    X = (rng.normal(size=(n, 3)) * factor_std) @ basis.T
    X += 0.01 * rng.normal(size=(n, D))
    model = pl.fit_pca(X, 3)
    assert np.allclose(model.eigenvalues, factor_std ** 2,
                       rtol=0.05)


def test_pca_orthonormal_rows_and_descending_eigenvalues():
    images, labels = synthetic_digits(n_per_class=20, seed=3)
    model = pl.fit_pca(pl.ImageSet(images, labels), 40)
    gram = model.components @ model.components.T
    assert np.abs(gram - np.eye(40)).max() <= 1e-8
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert np.all(model.eigenvalues >= 0.0)


def test_pca_sign_convention_deterministic():
    images, labels = synthetic_digits(n_per_class=10, seed=4)
    m1 = pl.fit_pca(pl.ImageSet(images, labels), 5)
    m2 = pl.fit_pca(pl.ImageSet(images.copy(), labels.copy()), 5)
    assert np.array_equal(m1.components, m2.components)
    for row in m1.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_embed_mean_is_zero_vector():
    images, labels = synthetic_digits(n_per_class=8, seed=5)
    model = pl.fit_pca(pl.ImageSet(images, labels), 10)
    assert np.abs(pl.embed(model, model.mean)).max() <= 1e-10


def test_pca_full_rank_round_trip_exact():
    rng = np.random.default_rng(6)
    X = rng.uniform(size=(40, 16))
    model = pl.fit_pca(X, 16)
    back = pl.reconstruct(model, pl.embed(model, X))
    assert np.abs(back - X).max() <= 1e-10


def test_pca_code_space_round_trip_identity():
    images, labels = synthetic_digits(n_per_class=10, seed=7)
    model = pl.fit_pca(pl.ImageSet(images, labels), 12)
    codes = np.random.default_rng(0).normal(size=(30, 12))
    again = pl.embed(model, pl.reconstruct(model, codes))
    assert np.abs(again - codes).max() <= 1e-10


def test_pca_truncation_error_matches_tail_eigenvalues():
    rng = np.random.default_rng(8)
    n, D, k = 4000, 40, 10
    scales = np.exp(-np.arange(D) / 6.0)
    X = rng.normal(size=(n, D)) * scales
    model = pl.fit_pca(X, D)
    k_model = pl.fit_pca(X, k)
    recon = pl.reconstruct(k_model, pl.embed(k_model, X))
    err = np.mean(np.sum((recon - X) ** 2, axis=1))
    tail = model.eigenvalues[k:].sum()
    assert err == pytest.approx(tail, rel=0.05)


def test_pca_k_too_large_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        pl.fit_pca(np.zeros((5, 20)), 6)


def test_pca_model_container_round_trip(tmp_path):
    images, labels = synthetic_digits(n_per_class=6, seed=9)
    model = pl.fit_pca(pl.ImageSet(images, labels), 7)
    path = tmp_path / "pca.bin"
    pl.save_pca(model, path)
    back = pl.load_pca(path)
    assert np.array_equal(back.mean, model.mean)
    assert np.array_equal(back.components, model.components)
    assert np.array_equal(back.eigenvalues, model.eigenvalues)


# -- PGM -------------------------------------------------------------------------


def test_pgm_round_trip_quantization_bound(tmp_path):
    img = np.random.default_rng(0).uniform(size=(28, 28))
    path = tmp_path / "img.pgm"
    pl.export_pgm(img, path)
    back = pl.load_pgm(path)
    assert back.shape == (28, 28)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_pgm_all_zero_payload(tmp_path):
    path = tmp_path / "zero.pgm"
    pl.export_pgm(np.zeros((28, 28)), path)
    data = path.read_bytes()
    assert data.startswith(b"P5\n28 28\n255\n")
    assert data[len(b"P5\n28 28\n255\n"):] == b"\x00" * 784


def test_pgm_clips_out_of_range(tmp_path):
    img = np.full((4, 4), 1.2)
    img[0, 0] = -0.5
    path = tmp_path / "clip.pgm"
    pl.export_pgm(img, path)
    back = pl.load_pgm(path)
    assert back[0, 0] == 0.0
    assert back[1, 1] == 1.0


def test_pgm_grid_layout(tmp_path):
    imgs = [np.full((8, 8), v) for v in (0.0, 0.5, 1.0)]
    path = tmp_path / "grid.pgm"
    pl.export_pgm_grid(imgs, path, cols=3, pad=2)
    grid = pl.load_pgm(path)
    assert grid.shape == (8, 3 * 8 + 2 * 2)
    assert grid[0, 0] == 0.0 and grid[0, -1] == 1.0


def test_split_clusters_partition(idx_pair):
    ip, lp, _, labels = idx_pair
    data = pl.load_idx(ip, lp)
    mu_set, nu_set = pl.split_clusters(data)
    assert len(mu_set) + len(nu_set) == len(data)
    assert np.all(mu_set.labels <= 4)
    assert np.all(nu_set.labels >= 5)
