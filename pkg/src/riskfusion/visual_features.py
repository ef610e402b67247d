"""Fractal bag-of-words from satellite tiles and visual-block assembly."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .edges import canny
from .errors import DimensionMismatchError
from .fractal import BOX_SIZES, Q_GRID, spectrum
from .ingest import ImageTile
from .kmeans import kmeans

D_FRA = 8
D_CNN = 45
PATCH = 256
PATCHES_PER_TILE = 16


@dataclass
class FractalDictionary:
    """``k`` centroid spectra.  With ``blank_slot`` set, centroid 0 is the
    reserved all-zero spectrum of edge-free patches."""

    centroids: np.ndarray
    seed: int
    blank_slot: bool = False

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assign(self, spectra: np.ndarray) -> np.ndarray:
        spectra = np.atleast_2d(spectra)
        d2 = ((spectra[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(d2, axis=1)
        if self.blank_slot:
            labels = np.where(~spectra.any(axis=1), 0, labels)
        return labels

    def save(self, path) -> None:
        k, length = self.centroids.shape
        lines = [f"# fractal dictionary k={k} length={length} seed={self.seed} "
                 f"blank_slot={int(self.blank_slot)}"]
        lines += [" ".join(f"{v:.17g}" for v in row) for row in self.centroids]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "FractalDictionary":
        text = Path(path).read_text().splitlines()
        header = dict(tok.split("=") for tok in text[0].lstrip("# ").split()[2:])
        rows = [[float(v) for v in line.split()] for line in text[1:] if line.strip()]
        centroids = np.array(rows)
        if centroids.shape != (int(header["k"]), int(header["length"])):
            raise DimensionMismatchError(f"{path}: header does not match matrix {centroids.shape}")
        return cls(centroids, int(header["seed"]), bool(int(header["blank_slot"])))


def build_dictionary(spectra, k: int = D_FRA, seed: int = 0) -> FractalDictionary:
    """K-means (k-means++ init, Lloyd to shift < 1e-6 or 300 iterations) over spectra.

    All-zero spectra (edge-free patches) do not enter the clustering; if any
    are present they own a reserved slot 0 and the rest get ``k - 1`` clusters.
    """
    spectra = np.asarray(spectra, dtype=np.float64)
    blank = ~spectra.any(axis=1)
    if blank.any():
        rest = spectra[~blank]
        res = kmeans(rest, k - 1, seed=seed, tol=1e-6, max_iter=300)
        centroids = np.vstack([np.zeros((1, spectra.shape[1])), res.centroids])
        return FractalDictionary(centroids, seed, blank_slot=True)
    res = kmeans(spectra, k, seed=seed, tol=1e-6, max_iter=300)
    return FractalDictionary(res.centroids, seed)


def patch_origins(shape: tuple[int, int], n: int, seed: int,
                  patch: int = PATCH) -> np.ndarray:
    h, w = shape
    if h < patch or w < patch:
        raise ValueError(f"tile {h}x{w} smaller than the {patch}x{patch} patch size")
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, h - patch + 1, size=n)
    cols = rng.integers(0, w - patch + 1, size=n)
    return np.stack([rows, cols], axis=1)


def tile_spectra(pixels: np.ndarray, n_patches: int = PATCHES_PER_TILE, seed: int = 0,
                 patch: int = PATCH) -> np.ndarray:
    """Spectra of ``n_patches`` random patches (seeded uniform positions)."""
    cache: dict[tuple[int, int], np.ndarray] = {}
    out = np.empty((n_patches, len(Q_GRID)))
    for i, (r, c) in enumerate(patch_origins(pixels.shape, n_patches, seed, patch)):
        key = (int(r), int(c))
        if key not in cache:
            cache[key] = spectrum(canny(pixels[r:r + patch, c:c + patch]), BOX_SIZES, Q_GRID)
        out[i] = cache[key]
    return out


def bow_histogram(spectra: np.ndarray, dictionary: FractalDictionary) -> np.ndarray:
    counts = np.bincount(dictionary.assign(spectra), minlength=dictionary.k).astype(np.float64)
    return counts / counts.sum()


def quantize_bow(tile: ImageTile | np.ndarray, dictionary: FractalDictionary,
                 patches_per_tile: int = PATCHES_PER_TILE, seed: int = 0) -> np.ndarray:
    """L1-normalised histogram of nearest-centroid assignments of a tile's patches."""
    pixels = tile.pixels if isinstance(tile, ImageTile) else np.asarray(tile)
    return bow_histogram(tile_spectra(pixels, patches_per_tile, seed), dictionary)


def assemble_xv(x_fra: np.ndarray, x_cnn: np.ndarray, d_fra: int = D_FRA,
                d_cnn: int = D_CNN) -> np.ndarray:
    """``[x_fra, x_cnn]`` per row."""
    x_fra, x_cnn = np.atleast_2d(x_fra), np.atleast_2d(x_cnn)
    if x_fra.shape[1] != d_fra or x_cnn.shape[1] != d_cnn or x_fra.shape[0] != x_cnn.shape[0]:
        raise DimensionMismatchError(
            f"assemble_xv: got fractal {x_fra.shape} and cnn {x_cnn.shape}, "
            f"expected widths {d_fra} and {d_cnn}")
    return np.concatenate([x_fra, x_cnn], axis=1)
