"""Raw sources to per-cell feature matrices."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geogrid import RegionGrid
from .ingest import (D_CNN, ParseStats, load_cnn_vectors, load_tiles, parse_accidents,
                     parse_gps, parse_osm, parse_poi)
from .labeling import aggregate_severity
from .st_features import (assemble_xu, node_connectivity, poi_bow, road_width,
                          traffic_patterns)
from .visual_features import (D_FRA, PATCHES_PER_TILE, FractalDictionary, assemble_xv,
                              bow_histogram, build_dictionary, tile_spectra)

log = logging.getLogger(__name__)


@dataclass
class FeatureSet:
    xu: np.ndarray
    xv: np.ndarray
    visual_missing: np.ndarray  # bool per cell
    dictionary: FractalDictionary | None


def tile_seed(seed: int, cell: int) -> int:
    return int(np.random.SeedSequence([seed, cell]).generate_state(1)[0])


def spatiotemporal_features(gps, poi, osm, grid: RegionGrid,
                            stats: dict[str, ParseStats] | None = None) -> np.ndarray:
    stats = {} if stats is None else stats
    tra = traffic_patterns(parse_gps(gps, stats.setdefault("gps", ParseStats())), grid)
    pois = poi_bow(parse_poi(poi, stats.setdefault("poi", ParseStats())), grid)
    graph = parse_osm(osm)
    return assemble_xu(tra, pois, node_connectivity(graph, grid), road_width(graph, grid))


def fractal_features(tiles_dir, grid: RegionGrid, seed: int, k: int = D_FRA,
                     patches_per_tile: int = PATCHES_PER_TILE,
                     dictionary: FractalDictionary | None = None):
    """Fractal bag-of-words per cell, plus the missing-tile mask and the dictionary.

    Without a given ``dictionary`` one is fitted on the spectra of all
    sampled patches.
    """
    tiles = load_tiles(tiles_dir, grid)
    missing = np.ones(grid.n_cells, dtype=bool)
    spectra: dict[int, np.ndarray] = {}
    for cell in sorted(tiles):
        i = grid.linear(cell)
        spectra[i] = tile_spectra(tiles[cell].pixels, patches_per_tile, tile_seed(seed, i))
        missing[i] = False
    out = np.zeros((grid.n_cells, k))
    if not spectra:
        log.warning("no usable tiles: fractal features are all zero")
        return out, missing, dictionary
    if dictionary is None:
        dictionary = build_dictionary(np.vstack(list(spectra.values())), k, seed)
    for i, s in spectra.items():
        out[i] = bow_histogram(s, dictionary)
    return out, missing, dictionary


def cnn_features(path, grid: RegionGrid, dim: int = D_CNN, enabled: bool = True):
    vecs = load_cnn_vectors(path, grid, dim, enabled)
    return (np.array([vecs[c].values for c in grid.cells()]).reshape(grid.n_cells, dim),
            np.array([vecs[c].missing for c in grid.cells()]))


def featurize(paths: dict[str, Path], grid: RegionGrid, seed: int, cnn: bool = True,
              d_fra: int = D_FRA, d_cnn: int = D_CNN,
              patches_per_tile: int = PATCHES_PER_TILE) -> FeatureSet:
    xu = spatiotemporal_features(paths["gps"], paths["poi"], paths["osm"], grid)
    fra, missing, dictionary = fractal_features(paths["tiles"], grid, seed, d_fra,
                                                patches_per_tile)
    cnn_x, _ = cnn_features(paths.get("cnn"), grid, d_cnn, cnn)
    return FeatureSet(xu, assemble_xv(fra, cnn_x, d_fra, d_cnn), missing, dictionary)


def severity_sums(path, grid: RegionGrid) -> np.ndarray:
    return aggregate_severity(parse_accidents(path), grid)
