import numpy as np
import pytest
from scipy import ndimage

from riskfusion.edges import canny, gaussian_kernel
from riskfusion.fractal import (BOX_SIZES, Q_GRID, EmptyMeasureError, box_counts,
                                generalized_dimensions, spectrum)

from oracles import random_edge_map


def test_gaussian_kernel_normalised():
    k = gaussian_kernel()
    assert k.shape == (5, 5) and k.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(k, k.T)


def test_canny_constant_patch():
    np.testing.assert_array_equal(canny(np.full((64, 64), 0.3)), 0)


def test_canny_vertical_step_is_thin_line():
    patch = np.zeros((64, 64))
    patch[:, 32:] = 1.0
    e = canny(patch)
    cols = np.flatnonzero(e.any(axis=0))
    assert cols.min() >= 31 and cols.max() <= 32
    # one pixel wide on each interior row
    inner = e[8:-8]
    np.testing.assert_array_equal(inner.sum(axis=1), 1)


def test_canny_is_invariant_to_inversion():
    # smooth content: exact gradient ties (flat blocks) could flip under rounding
    rng = np.random.default_rng(0)
    for _ in range(5):
        patch = ndimage.gaussian_filter(rng.random((64, 64)), 3)
        patch = (patch - patch.min()) / (patch.max() - patch.min())
        e = canny(patch)
        assert e.sum() > 0
        np.testing.assert_array_equal(e, canny(1.0 - patch))


def test_canny_rejects_tiny_patch():
    with pytest.raises(ValueError):
        canny(np.zeros((3, 3)))


def test_box_counts_examples():
    full = box_counts(np.ones((256, 256)))
    np.testing.assert_allclose(full[128], [0.25] * 4)
    point = np.zeros((256, 256))
    point[100, 7] = 1
    for s, m in box_counts(point).items():
        np.testing.assert_array_equal(m, [1.0])
    rng = np.random.default_rng(1)
    for s, m in box_counts(random_edge_map(rng)).items():
        assert m.sum() == pytest.approx(1.0)
    with pytest.raises(EmptyMeasureError):
        box_counts(np.zeros((256, 256)))
    with pytest.raises(ValueError):
        box_counts(np.ones((64, 64)))


def test_dimensions_of_reference_sets():
    np.testing.assert_allclose(spectrum(np.ones((256, 256))), 2.0, atol=0.05)
    point = np.zeros((256, 256))
    point[3, 200] = 1
    np.testing.assert_allclose(spectrum(point), 0.0, atol=0.01)
    line = np.zeros((256, 256))
    line[100, :] = 1
    assert spectrum(line)[Q_GRID.index(0.0)] == pytest.approx(1.0, abs=0.1)


def test_empty_map_has_zero_spectrum():
    np.testing.assert_array_equal(spectrum(np.zeros((256, 256))), np.zeros(len(Q_GRID)))


def test_spectrum_non_increasing_in_q():
    rng = np.random.default_rng(2)
    for _ in range(100):
        d = spectrum(random_edge_map(rng))
        assert np.all(np.diff(d) <= 1e-12)


def test_generalized_dimensions_errors():
    t = {2: np.array([1.0])}
    with pytest.raises(ValueError):
        generalized_dimensions(t, extent=4)
    t = {2: np.array([0.5, 0.5]), 4: np.array([1.0])}
    with pytest.raises(ValueError):
        generalized_dimensions(t, qs=(1.0,), extent=8)
    with pytest.raises(ValueError):
        generalized_dimensions(t, extent=4)
