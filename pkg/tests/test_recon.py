import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from conftest import rel
from lossytat import Phantom, Pulse, TimeGrid
from lossytat.errors import DomainError
from lossytat.forward import detector_data
from lossytat.inverse import VolterraInverter
from lossytat.kernels import n_planar
from lossytat.projections import DetectorSet, planar_projection, sphere_quadrature, spherical_projection
from lossytat.recon import VolumeGrid, planar_projection_recovery, spherical_backprojection
from lossytat.forward import ProjectionSignal

GRID = TimeGrid.covering(3.0, 2048)


def projections(ph, degree):
    d, w = sphere_quadrature(degree)
    return np.array([spherical_projection(ph, x, GRID.t) for x in d]), d, w


def centroid(vol):
    v = np.clip(vol.values, 0, None)
    return np.tensordot(v, vol.points(), axes=([0, 1, 2], [0, 1, 2])) / v.sum()


def test_zero_in_zero_out():
    d, w = sphere_quadrature(11)
    v = spherical_backprojection(np.zeros((len(w), GRID.n)), d, w, GRID, 0.4, 16)
    assert not v.values.any()


def test_linearity():
    a, d, w = projections(Phantom.single((0.1, 0, 0), 0.2), 17)
    b, _, _ = projections(Phantom.single((-0.1, 0.1, 0), 0.15), 17)
    r = lambda P: spherical_backprojection(P, d, w, GRID, 0.4, 16).values
    assert np.allclose(r(2 * a - 3 * b), 2 * r(a) - 3 * r(b), atol=1e-12 * np.abs(r(a)).max())


def test_translation_equivariance():
    shift = np.array([0.1, -0.05, 0.08])
    a, d, w = projections(Phantom.single((0, 0, 0), 0.2), 35)
    b, _, _ = projections(Phantom.single(shift, 0.2), 35)
    va = spherical_backprojection(a, d, w, GRID, 0.45, 32)
    vb = spherical_backprojection(b, d, w, GRID, 0.45, 32)
    assert np.abs(centroid(vb) - centroid(va) - shift).max() < va.spacing


def test_support_localisation():
    ph = Phantom.single((0.2, -0.1, 0.15), 0.25)
    P, d, w = projections(ph, 41)
    v = spherical_backprojection(P, d, w, GRID, 0.45, 64)
    sup = binary_dilation(ph.value(v.points()) > 0, iterations=3)
    assert np.sum(v.values[~sup] ** 2) <= 0.05 * np.sum(v.values**2)


def test_joint_refinement_reduces_error():
    # halve the voxel size while roughly doubling the directions
    ph = Phantom.single((0.2, -0.1, 0.15), 0.25)
    errs = []
    for degree, m in ((25, 16), (35, 32), (47, 64)):
        P, d, w = projections(ph, degree)
        v = spherical_backprojection(P, d, w, GRID, 0.45, m)
        errs.append(rel(v.values, ph.cell_average(v.axis)))
    assert errs[0] > errs[1] > errs[2]


def test_guards():
    d, w = sphere_quadrature(11)
    P = np.zeros((len(w), 64))
    with pytest.raises(DomainError):
        spherical_backprojection(P, d, w, TimeGrid(64, 0.01), 0.4, 16)
    with pytest.raises(DomainError):
        spherical_backprojection(np.zeros((len(w), GRID.n)), d, w, GRID, 1.2, 16)
    with pytest.raises(DomainError):
        spherical_backprojection(np.zeros((len(w), GRID.n)), d, w, GRID, 0.4, 16, R0=2.0)
    with pytest.warns(RuntimeWarning):
        spherical_backprojection(np.zeros((len(w), GRID.n)), d, 2 * w, GRID, 0.4, 16)
    with pytest.raises(DomainError):
        VolumeGrid(0.4, 4)


def test_volume_io(tmp_path):
    v = VolumeGrid(0.3, 8, np.arange(512.0))
    v.to_binary(tmp_path / "v.bin")
    r = VolumeGrid.from_binary(tmp_path / "v.bin")
    assert r.extent == 0.3 and r.m == 8 and np.array_equal(r.values, v.values)
    v.slice_csv(tmp_path / "s.csv", axis=1)
    rows = np.loadtxt(tmp_path / "s.csv", delimiter=",", skiprows=2)
    assert rows.shape == (64, 3) and np.array_equal(rows[:, 2], v.values[:, 4, :].ravel())


def test_radon_record(law15):
    assert len(planar_projection_recovery([], 1.0)) == 0
    g = TimeGrid.covering(3.0, 512)
    ph = Phantom.single((0.1, -0.05, 0.1), 0.25)
    normals = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 0.6, 0.8]])
    ds = DetectorSet.planes(1.0, normals)
    K = n_planar(law15, Pulse.delta(), g, 1.0)
    Q = VolterraInverter(kernel=K).fit().transform(detector_data(ph, ds, K, g))
    sols = [ProjectionSignal(q, g, "projection_planar", ds.describe(i), times=K.source_times)
            for i, q in enumerate(Q)]
    rec = planar_projection_recovery(sols, 1.0)
    for n, row in zip(normals, rec.values):
        assert rel(row, planar_projection(ph, n, rec.offsets)) < 0.02
    s = np.linspace(-0.4, 0.4, 9)
    assert np.allclose(rec.lookup(normals[0], s), rec.lookup(-normals[0], -s),
                       atol=0.02 * np.abs(rec.values).max())
    assert np.allclose(rec.lookup(-normals[2], -s), rec.lookup(normals[2], s))
    with pytest.raises(DomainError):
        rec.lookup([0, 1.0, 0], 0.0)
