import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import rel
from lossytat import AttenuationLaw, Phantom, Pulse, TimeGrid
from lossytat.forward import (
    PressureSignal,
    Signal,
    add_noise,
    attenuated_line_data,
    attenuated_planar_data,
    attenuated_point_data,
    default_duration,
    detector_data,
    green_forward,
    ideal_point_pressure,
)
from lossytat.errors import DomainError
from lossytat.kernels import n_line, n_planar, n_point
from lossytat.projections import DetectorSet, planar_projection, spherical_projection

NONE = AttenuationLaw.none()
UNIT = Phantom.single((0, 0, 0), 1.0)


def test_ideal_pressure_examples():
    g = TimeGrid(400, 0.01)
    x = np.array([2.0, 0, 0])
    p = ideal_point_pressure(UNIT, x, g).values
    assert p[200] == 0  # t = d
    assert p[150] == pytest.approx(0.125)
    assert p[50] == 0 and p[350] == 0
    # finite-difference oracle on R_sp/(4 pi t)
    h = 1e-6
    F = lambda t: spherical_projection(UNIT, x, t) / (4 * np.pi * t)
    assert (F(1.5 + h) - F(1.5 - h)) / (2 * h) == pytest.approx(0.125, rel=1e-6)


def test_point_lossless_matches_ideal(grid512, ball):
    x = np.array([0.0, 0.6, 0.8])
    p = attenuated_point_data(ball, NONE, Pulse.delta(), x, grid512).values
    assert rel(p, ideal_point_pressure(ball, x, grid512, "cell").values) < 1e-10
    # pointwise samples differ only next to the two jumps
    t = grid512.t
    away = (np.abs(t - 0.75) > 2 * grid512.dt) & (np.abs(t - 1.25) > 2 * grid512.dt)
    pt = ideal_point_pressure(ball, x, grid512, "point").values
    # the pressure is linear between jumps, so its cell average is the mean of the end values
    avg = 0.5 * (pt[1:] + pt[:-1])
    assert np.abs(p[1:] - avg)[away[1:]].max() < 1e-10


def test_empty_phantom_gives_zero(law15, grid512):
    empty = Phantom()
    d = Pulse.delta()
    assert not attenuated_point_data(empty, law15, d, [0, 0, 1], grid512).values.any()
    assert not attenuated_planar_data(empty, law15, d, [0, 0, 1], 1.0, grid512).values.any()
    assert not attenuated_line_data(empty, law15, d, [0, 0, 1], [1, 0, 0], grid512).values.any()


def test_planar_lossless_half_projection(grid512, ball):
    n = np.array([0.0, 0.0, 1.0])
    p = attenuated_planar_data(ball, NONE, Pulse.delta(), n, 1.0, grid512).values
    t = grid512.t
    mid = 0.5 * (planar_projection(ball, n, 1.0 - t) + planar_projection(ball, n, 1.0 - t + grid512.dt))
    assert rel(p[1:], 0.5 * mid[1:]) < 1e-12


def test_planar_mass_and_delay(law15, grid512, ball):
    n = np.array([0.0, 0.0, 1.0])
    p0 = attenuated_planar_data(ball, NONE, Pulse.delta(), n, 1.0, grid512).values
    pg = attenuated_planar_data(ball, law15, Pulse.delta(), n, 1.0, grid512).values
    assert pg.sum() == pytest.approx(p0.sum() / (1 + law15.alpha0), rel=0.02)
    t = grid512.t
    first = lambda p: t[np.argmax(np.abs(p) > 1e-3 * np.abs(p).max())]
    assert first(pg) >= first(p0)
    assert np.abs(pg).max() < np.abs(p0).max()


def test_causal_data_support(law15, grid512, ball):
    t = grid512.t
    d = Pulse.delta()
    cases = [
        (attenuated_point_data(ball, law15, d, [0, 0, 1], grid512).values, 1.0 - 0.25),
        (attenuated_planar_data(ball, law15, d, [0, 0, 1], 1.0, grid512).values, 1.0 - 0.25),
        (attenuated_line_data(ball, law15, d, [0, 0, 1], [1, 0, 0], grid512).values, 1.0 - 0.25),
    ]
    for p, arrival in cases:
        pre = t < arrival - grid512.dt
        assert np.sum(p[pre] ** 2) <= 1e-4 * np.sum(p**2)
        assert np.abs(p[pre]).max() == 0.0


def test_detector_data_matches_single_calls(law15, grid512, ball):
    ds = DetectorSet.sphere(1.0, 3)
    K = n_point(law15, Pulse.delta(), grid512)
    D = detector_data(ball, ds, K, grid512)
    for i, x in enumerate(ds.positions):
        assert np.allclose(D[i], attenuated_point_data(ball, law15, Pulse.delta(), x, grid512, K).values)
    with pytest.raises(DomainError):
        detector_data(ball, ds, n_line(law15, Pulse.delta(), grid512), grid512)
    with pytest.raises(DomainError):
        attenuated_planar_data(ball, law15, Pulse.delta(), [0, 0, 1], 0.9, grid512,
                               n_planar(law15, Pulse.delta(), grid512, 1.0))


@settings(max_examples=10, deadline=None)
@given(k=st.floats(-5, 5))
def test_linearity(k):
    g = TimeGrid.covering(3.0, 128)
    law = AttenuationLaw.reference(1.5, 0.02)
    ph = Phantom.single((0.1, 0, 0), 0.2)
    K = n_point(law, Pulse.delta(), g)
    a = attenuated_point_data(ph.scaled(k), law, Pulse.delta(), [0, 0, 1], g, K).values
    b = attenuated_point_data(ph, law, Pulse.delta(), [0, 0, 1], g, K).values
    assert np.allclose(a, k * b, atol=1e-13)


def test_green_point_mass_is_retarded_wave():
    g = TimeGrid.covering(2.0, 1024)
    ph = Phantom.single((0, 0, 0), 0.01)
    # a spacing wider than the ball leaves one node at the centre
    out = green_forward(ph, NONE, [0, 0, 1.0], g, spacing=0.02)
    assert out.meta["nodes"] == 1
    G = np.cumsum(out.values) * g.dt
    mass = 4 / 3 * np.pi * 0.01**3
    assert G.sum() * g.dt == pytest.approx(mass / (4 * np.pi), rel=1e-6)
    assert (g.t * G).sum() / G.sum() == pytest.approx(1.0, abs=g.dt)


def test_green_matches_kernel_and_is_causal(law15):
    g = TimeGrid.covering(2.0, 1024)
    ph = Phantom.single((0, 0, 0), 0.05)
    x = [0, 0, 1.0]
    q = green_forward(ph, law15, x, g).values
    p = attenuated_point_data(ph, law15, Pulse.delta(), x, g).values
    assert rel(q, p) < 0.02
    pre = g.t < 0.95 - 0.05
    assert np.abs(q[pre]).max() <= 1e-6 * np.abs(q).max()


def test_green_budget(law15):
    with pytest.raises(DomainError):
        green_forward(Phantom.single((0, 0, 0), 0.3), law15, [0, 0, 1.0], TimeGrid(64, 0.05),
                      spacing=0.01)


def test_noise():
    v = np.sin(np.linspace(0, 20, 4000))[None].repeat(3, 0)
    a, b = add_noise(v, 0.01, 5), add_noise(v, 0.01, 5)
    assert np.array_equal(a, b)
    rms = np.sqrt(np.mean(v**2))
    assert np.std(a - v) == pytest.approx(0.01 * rms, rel=0.05)
    assert np.array_equal(add_noise(v, 0.0, 1), v)


def test_signal_csv_roundtrip(tmp_path, grid512, ball):
    s = ideal_point_pressure(ball, [0, 0, 1.0], grid512, "cell")
    s.to_csv(tmp_path / "s.csv")
    r = PressureSignal.from_csv(tmp_path / "s.csv")
    assert np.array_equal(r.values, s.values) and r.grid == s.grid and r.detector == s.detector
    with pytest.raises(DomainError):
        Signal(np.full(grid512.n, np.nan), grid512)


def test_default_duration(law15, ball):
    assert default_duration(1.0, ball, NONE) == pytest.approx(2.5)
    assert default_duration(1.0, ball, law15) > 2.5
