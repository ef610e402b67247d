import numpy as np
import pytest

from riskfusion.errors import DimensionMismatchError
from riskfusion.visual_features import (FractalDictionary, assemble_xv, bow_histogram,
                                        build_dictionary, patch_origins, quantize_bow,
                                        tile_spectra)


def two_texture_tile():
    """Left half: dense lattice; right half: sparse diagonals."""
    tile = np.zeros((256, 1024))
    tile[::8, :512] = 1
    tile[:, :512:8] = 1
    idx = np.arange(256)
    for k in range(0, 512, 64):
        tile[idx, 512 + (idx + k) % 512] = 1
    return tile


def test_k_points_are_their_own_centroids():
    pts = np.random.default_rng(0).normal(size=(8, 8))
    d = build_dictionary(pts, k=8, seed=1)
    assert sorted(map(tuple, d.centroids)) == sorted(map(tuple, pts))


def test_two_tight_clusters():
    rng = np.random.default_rng(1)
    a = rng.normal(0, 0.01, (20, 8)) + 1
    b = rng.normal(0, 0.01, (30, 8)) + 3
    d = build_dictionary(np.vstack([a, b]), k=2, seed=0)
    got = d.centroids[np.argsort(d.centroids[:, 0])]
    np.testing.assert_allclose(got, [a.mean(axis=0), b.mean(axis=0)], atol=1e-12)


def test_dictionary_deterministic_and_round_trips(tmp_path):
    pts = np.random.default_rng(2).normal(size=(60, 8))
    d1, d2 = build_dictionary(pts, seed=5), build_dictionary(pts, seed=5)
    np.testing.assert_array_equal(d1.centroids, d2.centroids)
    d1.save(tmp_path / "d.txt")
    back = FractalDictionary.load(tmp_path / "d.txt")
    np.testing.assert_array_equal(back.centroids, d1.centroids)
    assert (back.seed, back.blank_slot) == (5, False)
    lines = (tmp_path / "d.txt").read_text().splitlines()
    (tmp_path / "e.txt").write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DimensionMismatchError):
        FractalDictionary.load(tmp_path / "e.txt")


def test_blank_spectra_get_reserved_slot():
    rng = np.random.default_rng(3)
    pts = np.vstack([np.zeros((5, 8)), rng.normal(size=(30, 8)) + 1])
    d = build_dictionary(pts, k=4, seed=0)
    assert d.blank_slot and d.k == 4
    np.testing.assert_array_equal(d.centroids[0], 0.0)
    np.testing.assert_array_equal(d.assign(np.zeros((3, 8))), 0)


def test_identical_patches_give_one_hot():
    tile = np.zeros((256, 256))
    tile[::16] = 1.0
    spectra = tile_spectra(tile, 16, seed=0)
    d = FractalDictionary(np.vstack([spectra[0], spectra[0] + 5]), seed=0)
    np.testing.assert_array_equal(quantize_bow(tile, d, 16, seed=0), [1.0, 0.0])


def test_two_halves_histogram_matches_direct_count():
    tile = two_texture_tile()
    n, seed = 64, 0
    spectra = tile_spectra(tile, n, seed)
    origins = patch_origins(tile.shape, n, seed)
    pure = spectra[(origins[:, 1] <= 256) | (origins[:, 1] >= 512)]
    d = build_dictionary(pure, k=2, seed=0)
    hist = quantize_bow(tile, d, n, seed)
    assert hist.sum() == pytest.approx(1.0)
    direct = np.zeros(2)
    for s in spectra:
        direct[np.argmin(((d.centroids - s) ** 2).sum(axis=1))] += 1
    np.testing.assert_allclose(hist, direct / n)
    np.testing.assert_allclose(hist, [0.5, 0.5], atol=0.15)


def test_patch_origins():
    o = patch_origins((300, 512), 100, seed=1)
    assert o[:, 0].max() <= 44 and o[:, 1].max() <= 256 and o.min() >= 0
    np.testing.assert_array_equal(o, patch_origins((300, 512), 100, seed=1))
    with pytest.raises(ValueError):
        patch_origins((255, 512), 4, seed=0)


def test_bow_histogram_normalised():
    d = FractalDictionary(np.eye(3), seed=0)
    h = bow_histogram(np.array([[1, 0, 0], [0.9, 0, 0], [0, 0, 1.0], [0, 1, 0]]), d)
    np.testing.assert_allclose(h, [0.5, 0.25, 0.25])


def test_assemble_xv():
    z = assemble_xv(np.zeros(8), np.zeros(45))
    assert z.shape == (1, 53) and not z.any()
    fra, cnn = np.arange(16.0).reshape(2, 8), np.ones((2, 45))
    xv = assemble_xv(fra, cnn)
    np.testing.assert_array_equal(xv[:, :8], fra)
    np.testing.assert_array_equal(xv[:, 8:], cnn)
    with pytest.raises(DimensionMismatchError):
        assemble_xv(np.zeros(7), np.zeros(45))
