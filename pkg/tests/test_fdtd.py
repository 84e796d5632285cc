import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddfabc.errors import ConfigError, InstabilityError
from ddfabc.fdtd import (C0, EPS0, ETA0, MU0, BoundaryHandler, FieldGrid, GridSpec, PecSheet,
                         SourceSpec, courant_limit, em_energy, inject_source, read_probe_csv, run,
                         step_e, step_h, write_probe_csv)

DT = 1.17935e-12


def test_courant_limit_values():
    assert courant_limit(1e-3, 1e-3) == pytest.approx(1e-3 / (C0 * math.sqrt(2)), rel=1e-15)
    assert courant_limit(1e-3, 1e-3) == pytest.approx(2.3587e-12, rel=1e-4)
    assert 0.5 * courant_limit(1e-3, 1e-3) == pytest.approx(1.1785e-12, rel=1e-3)
    assert courant_limit(1e-3, 1e6) == pytest.approx(3.3356e-12, rel=1e-4)


@pytest.mark.parametrize("dx,dy", [(0, 1e-3), (1e-3, -1.0)])
def test_courant_limit_rejects_bad_cells(dx, dy):
    with pytest.raises(ValueError):
        courant_limit(dx, dy)


def test_gridspec_defaults_and_validation():
    g = GridSpec(10, 10)
    assert g.dt == pytest.approx(DT, rel=1e-5)
    with pytest.raises(ConfigError):
        GridSpec(10, 10, dt=1.01 * courant_limit(1e-3, 1e-3))
    with pytest.raises(ConfigError):
        GridSpec(2, 10)
    with pytest.raises(ConfigError):
        GridSpec(10, 10, dx=0.0)


def test_constants():
    assert ETA0 == pytest.approx(376.7303, rel=1e-6)
    assert EPS0 * MU0 * C0**2 == pytest.approx(1.0, rel=1e-15)


def test_source_identities():
    s = SourceSpec((5, 5))
    assert s.t0 == 4 * s.t_w
    assert s.current(s.t0) == 0.0
    assert s.current(s.t0 + s.t_w) == pytest.approx(-2 * math.exp(-1), abs=1e-12)
    assert s.current(s.t0 - s.t_w / math.sqrt(2)) == pytest.approx(math.sqrt(2) * math.exp(-0.5), abs=1e-12)
    # at the default t0 = 4 t_w the pulse starts at 8 e^-16 ~ 1.05e-6 of its peak
    assert abs(s.current(0.0)) / (math.sqrt(2) * math.exp(-0.5)) == pytest.approx(1.0495e-6, rel=1e-3)
    assert abs(SourceSpec((5, 5), t0=5 * s.t_w).current(0.0)) < 1e-9
    with pytest.raises(ConfigError):
        SourceSpec((5, 5), t0=2 * s.t_w)
    with pytest.raises(ConfigError):
        SourceSpec((5, 5), t_w=0.0)


@given(st.floats(-10, 10))
def test_source_bounded_by_extremum(tau):
    s = SourceSpec((5, 5))
    assert abs(s.current(s.t0 + tau * s.t_w)) <= math.sqrt(2) * math.exp(-0.5) + 1e-15


def test_step_h_single_term():
    spec = GridSpec(10, 10, dt=DT)
    g = FieldGrid.zeros(spec)
    g.ey[5, 4] = 1.0
    step_h(g, spec)
    assert g.hz[4, 4] == pytest.approx(-DT / (MU0 * 1e-3), rel=1e-14)
    assert g.hz[4, 4] == pytest.approx(-9.3850e-4, rel=1e-4)
    assert g.hz[5, 4] == pytest.approx(DT / (MU0 * 1e-3), rel=1e-14)
    assert np.count_nonzero(g.hz) == 2


def test_step_h_uniform_ey_has_no_curl():
    spec = GridSpec(10, 10)
    g = FieldGrid.zeros(spec)
    g.ey[:] = 3.7
    step_h(g, spec)
    assert not g.hz.any()


def test_step_e_single_term():
    spec = GridSpec(10, 10, dt=DT)
    g = FieldGrid.zeros(spec)
    g.hz[4, 4] = 1.0
    step_e(g, spec)
    k = DT / (EPS0 * 1e-3)
    assert g.ey[4, 4] == pytest.approx(-k, rel=1e-14)
    assert g.ey[5, 4] == pytest.approx(k, rel=1e-14)
    assert g.ex[4, 5] == pytest.approx(-k, rel=1e-14)
    assert g.ex[4, 4] == pytest.approx(k, rel=1e-14)


def test_step_e_leaves_outer_ring_alone():
    spec = GridSpec(8, 8)
    g = FieldGrid.zeros(spec)
    g.hz[:] = np.random.default_rng(0).normal(size=g.hz.shape)
    step_e(g, spec)
    assert not g.ey[0].any() and not g.ey[-1].any()
    assert not g.ex[:, 0].any() and not g.ex[:, -1].any()


def test_pec_sheet_forces_zero():
    spec = GridSpec(12, 9)
    sheet = PecSheet(4, 3, 9)
    g = FieldGrid.zeros(spec)
    g.ey[:] = 1.0
    g.ex[:] = 1.0
    step_e(g, spec, sheet)
    assert not g.ey[3:10, 4].any()
    assert not g.ex[3:9, 4:6].any()
    assert g.ey[2, 4] == 1.0


def test_zero_stays_zero():
    spec = GridSpec(10, 10, n_steps=50)
    g = FieldGrid.zeros(spec)
    for n in range(50):
        step_h(g, spec, n)
        step_e(g, spec, None, n)
    assert g.max_abs() == 0.0


def test_run_zero_steps_and_zero_amplitude():
    rec = run(GridSpec(10, 10, n_steps=0), SourceSpec((5, 5)), probes=[(3, 3)])
    assert rec.trace().size == 0
    rec = run(GridSpec(10, 10, n_steps=100), SourceSpec((5, 5), amplitude=0.0), probes=[(3, 3)])
    assert not rec.trace().any()


def test_run_rejects_bad_geometry():
    with pytest.raises(ConfigError):
        run(GridSpec(10, 10, n_steps=1), SourceSpec((0, 5)))
    with pytest.raises(ConfigError):
        run(GridSpec(10, 10, n_steps=1), SourceSpec((5, 5)), probes=[(11, 0)])
    with pytest.raises(ConfigError):
        run(GridSpec(20, 10, n_steps=1), SourceSpec((5, 4)), PecSheet(4, 3, 9))


def test_travel_time():
    """Onset delay between probes 5 and 55 cells from the source is 50 dx / (c dt)."""
    spec = GridSpec(200, 200, n_steps=330)
    rec = run(spec, SourceSpec((60, 100)), probes=[(65, 100), (115, 100)])
    onset = [int(np.argmax(np.abs(rec.trace(k)) > 0.1 * np.abs(rec.trace(k)).max())) for k in (0, 1)]
    expected = 50 * spec.dx / (C0 * spec.dt)
    assert expected == pytest.approx(141.4, abs=0.1)
    assert abs((onset[1] - onset[0]) - expected) <= 5


def test_long_run_stays_bounded():
    spec = GridSpec(40, 40, n_steps=5000)
    peaks = {}

    def watch(grid, n):
        if n + 1 in (500, 5000):
            peaks[n + 1] = grid.max_abs()

    run(spec, SourceSpec((20, 20)), on_step=watch)
    assert np.isfinite(peaks[5000])
    assert peaks[5000] <= 10 * peaks[500]


def test_pec_sheet_zero_at_every_step():
    spec = GridSpec(30, 12, n_steps=400)
    sheet = PecSheet(5, 5, 25)
    seen = []
    run(spec, SourceSpec((15, 8)), sheet, on_step=lambda g, n: seen.append(np.abs(g.ey[5:26, 5]).max()))
    assert max(seen) == 0.0


def test_energy_conserved_in_closed_cavity():
    spec = GridSpec(40, 30, n_steps=1)
    src = SourceSpec((20, 15))
    off = int(math.ceil((src.t0 + 8 * src.t_w) / spec.dt))
    total = off + 1000
    spec = GridSpec(40, 30, n_steps=total)
    energies, prev = [], [None]

    def watch(grid, n):
        if n >= off and prev[0] is not None:
            energies.append(em_energy(grid, spec, prev[0]))
        prev[0] = grid.copy()

    run(spec, src, on_step=watch)
    e = np.array(energies)
    assert e.max() > 0
    assert (e.max() - e.min()) / e.mean() < 0.01


def _plane_wave_error(dx: float, t_end: float, x_probe: float):
    """Quasi-1D standing-start Gaussian; returns Ey at x_probe sampled at fixed physical times."""
    L = 0.4
    nx = int(round(L / dx))
    dt = 0.5 * dx / C0
    spec = GridSpec(nx, 3, dx, 1e-3, dt, int(round(t_end / dt)))
    w = 0.02
    g0 = lambda x: np.exp(-((x - L / 2) / w) ** 2)
    grid = FieldGrid.zeros(spec)
    xe = np.arange(nx + 1) * dx
    xh = (np.arange(nx) + 0.5) * dx
    grid.ey[:] = g0(xe)[:, None]
    t = -dt / 2
    grid.hz[:] = ((g0(xh - C0 * t) - g0(xh + C0 * t)) / (2 * ETA0))[:, None]
    ip = int(round(x_probe / dx))
    out = []
    for n in range(spec.n_steps):
        step_h(grid, spec)
        step_e(grid, spec)
        out.append(grid.ey[ip, 1])
    return np.array(out), dt


def test_second_order_convergence():
    t_end, xp = 0.12 / C0, 0.26
    fine, dtf = _plane_wave_error(0.25e-3, t_end, xp)
    errs = []
    for dx in (1e-3, 0.5e-3):
        series, dt = _plane_wave_error(dx, t_end, xp)
        ratio = int(round(dt / dtf))
        errs.append(np.abs(series - fine[ratio - 1::ratio][: series.size]).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.3)


def test_instability_reports_step_and_partial():
    class Blowup(BoundaryHandler):
        def apply(self, grid, step):
            if step == 7:
                grid.ey[0, 1] = np.inf

    spec = GridSpec(10, 10, n_steps=20)
    with pytest.raises(InstabilityError) as info:
        run(spec, SourceSpec((5, 5)), boundary=Blowup(), probes=[(3, 3)])
    assert info.value.step == 8
    assert info.value.partial.steps_done == 8


def test_probe_csv_round_trip(tmp_path):
    ey = np.random.default_rng(1).normal(size=25) * 1e-3
    path = tmp_path / "p.csv"
    write_probe_csv(path, ey, DT)
    lines = path.read_text().splitlines()
    assert lines[0] == "step,t_seconds,ey"
    assert lines[1].startswith("1,")
    t, back = read_probe_csv(path)
    assert np.array_equal(back, ey)
    assert t[0] == pytest.approx(DT, rel=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 9), st.integers(0, 7), st.floats(-1e3, 1e3, allow_subnormal=False))
def test_step_h_is_linear(i, j, value):
    spec = GridSpec(9, 8)
    a = FieldGrid.zeros(spec)
    a.ey[i, j] = value
    b = FieldGrid.zeros(spec)
    b.ey[i, j] = 2 * value
    step_h(a, spec)
    step_h(b, spec)
    assert np.allclose(2 * a.hz, b.hz, rtol=1e-14, atol=0)


def test_inject_source_soft():
    spec = GridSpec(10, 10)
    s = SourceSpec((5, 5), amplitude=2.0)
    g = FieldGrid.zeros(spec)
    g.ey[5, 5] = 1.0
    t = s.t0 + s.t_w
    inject_source(g, s, t, spec)
    assert g.ey[5, 5] == pytest.approx(1.0 - spec.dt / EPS0 * s.current(t) / spec.dx * 2.0, rel=1e-14)
