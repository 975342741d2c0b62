import numpy as np
import pytest

from occusim.errors import InvalidArgument, SimulationDiverged
from occusim.measure import build_uniform_partition, family_for_partition
from occusim.models import ConstantModel, LovParams, OsdeModel, cranston_le_jan, lov, raimond
from occusim.scheme import (TimeGrid, brownian_increments, chunk_ranges, euler_maruyama, generate_brownian,
                            map_chunks, run_batch, simulate)


def test_grid():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.nodes[-1] == 2.0 and len(g.nodes) == 9
    with pytest.raises(InvalidArgument):
        TimeGrid(0.0, 4)
    with pytest.raises(InvalidArgument):
        TimeGrid(1.0, 0)


class TestBrownian:
    def test_reproducible_and_indexed(self):
        g = TimeGrid(1.0, 16)
        a = generate_brownian(5, 3, g)
        b = generate_brownian(5, 3, g)
        assert np.array_equal(a.increments, b.increments)
        assert not np.array_equal(a.increments, generate_brownian(5, 4, g).increments)
        assert not np.array_equal(a.increments, generate_brownian(6, 3, g).increments)
        stacked = brownian_increments(5, [7, 3], g)
        assert np.array_equal(stacked[1], a.increments)

    def test_moments_clt_bands(self):
        g = TimeGrid(1.0, 32)
        dw = brownian_increments(1, range(4000), g, d=2)
        n = dw.size
        mean = dw.mean() / np.sqrt(g.dt)
        var = dw.var() / g.dt
        assert abs(mean) < 4 / np.sqrt(n)
        assert abs(var - 1) < 4 * np.sqrt(2 / n)
        W1 = dw.sum(axis=1)[:, 0]
        assert abs(W1.var() - 1.0) < 4 * np.sqrt(2 / len(W1))
        # independent coordinates
        assert abs(np.corrcoef(dw[..., 0].ravel(), dw[..., 1].ravel())[0, 1]) < 4 / np.sqrt(n / 2)


def test_cranston_two_steps_by_hand():
    p = build_uniform_partition(1, 2.0, 4)
    proj = cranston_le_jan(5.0).projected(p)
    g = TimeGrid(1.0, 2)
    dw = np.array([[[0.1], [-0.2]]])
    b = simulate(proj, g, dw)
    # step 0: occupy cell 3 (center 0.5) for 0.5, drift 5 * 0.5 * 0.5
    x1 = 0.0 + 1.25 * 0.5 + 0.1
    # step 1: x1 = 0.725 still in cell 3, mass 1.0
    x2 = x1 + 5 * (1.0 * 0.5 - 1.0 * x1) * 0.5 - 0.2
    np.testing.assert_allclose(b.states[0, :, 0], [0.0, x1, x2], rtol=1e-15)
    np.testing.assert_array_equal(b.bins[0], [3, 3])
    np.testing.assert_array_equal(b.z_final[0], [0, 0, 0, 1.0, 0])


def test_degenerate_coupling_is_brownian():
    g = TimeGrid(1.0, 128)
    dw = brownian_increments(2, range(20), g)
    for K in (4, 16, 64):
        b = simulate(cranston_le_jan(0.0).projected(build_uniform_partition(1, 2.0, K)), g, dw)
        ref = np.concatenate([np.zeros((20, 1)), np.cumsum(dw[:, :, 0], axis=1)], axis=1)
        assert np.max(np.abs(b.states[:, :, 0] - ref)) < 1e-10


def test_mass_ledger_unit_rate():
    g = TimeGrid(1.0, 64)
    p = build_uniform_partition(2, 2.0, 5)
    b = simulate(raimond(5.0).projected(p), g, brownian_increments(0, range(8), g, 2))
    for i in range(8):
        path = b.path(i)
        for n in range(0, 65, 8):
            assert abs(path.occupation_at(n).sum() - g.nodes[n]) < g.N * 2.0 ** -50


def test_lov_mass_follows_clock():
    prm = LovParams(kappa=0.5)
    p = build_uniform_partition(1, 50.0, 10, origin=100.0)
    expect = (np.exp(0.5) - 1) / 0.5
    errs = []
    for N in (64, 128):
        g = TimeGrid(1.0, N)
        b = simulate(lov(prm).projected(p), g, brownian_increments(0, range(2), g))
        errs.append(abs(b.z_final.sum(axis=1)[0] - expect))
    assert errs[1] < errs[0] < 0.02


def test_constant_model_zero_vol_is_deterministic():
    g = TimeGrid(1.0, 10)
    p = build_uniform_partition(1, 5.0, 4)
    b = simulate(ConstantModel(1, 0.0, 0.0, x0=1.5).projected(p), g, brownian_increments(0, range(3), g))
    assert np.all(b.states == 1.5)


def test_markov_restart_bit_exact():
    g = TimeGrid(1.0, 64)
    p = build_uniform_partition(2, 2.0, 8)
    proj = raimond(5.0).projected(p)
    dw = brownian_increments(9, range(6), g, 2)
    full = simulate(proj, g, dw)
    for i in range(6):
        x, z = full.path(i).snapshot(32)
        tail = simulate(proj, g, dw[i:i + 1], x0=x, z0=z, start=32)
        assert np.array_equal(tail.states[0], full.states[i, 32:])
        assert np.array_equal(tail.z_final[0], full.z_final[i])


def test_batch_independence():
    g = TimeGrid(1.0, 32)
    p = build_uniform_partition(1, 2.0, 16)
    proj = cranston_le_jan(5.0).projected(p)
    dw = brownian_increments(4, range(10), g)
    full = simulate(proj, g, dw)
    part = simulate(proj, g, dw[3:7])
    assert np.array_equal(full.states[3:7], part.states)


def test_single_path_wrapper():
    g = TimeGrid(1.0, 16)
    p = build_uniform_partition(1, 2.0, 4)
    w = generate_brownian(1, 2, g)
    path = euler_maruyama(cranston_le_jan(5.0).projected(p), g, w)
    assert path.path_index == 2 and path.states.shape == (17, 1)
    assert not path.truncated
    assert 0.0 <= path.exterior_fraction <= 1.0


def test_divergence_raise_and_mark():
    g = TimeGrid(1.0, 16)
    p = build_uniform_partition(1, 2.0, 4)
    m = OsdeModel(1, drift=lambda o, x: np.array([np.inf]))
    dw = brownian_increments(0, range(2), g)
    with pytest.raises(SimulationDiverged) as e:
        simulate(m.projected(p), g, dw)
    assert e.value.path_index == 0
    b = simulate(m.projected(p), g, dw, on_diverge="mark")
    assert b.diverged.all()
    assert np.all(np.isfinite(b.states))


def test_negative_rate_rejected():
    g = TimeGrid(1.0, 4)
    p = build_uniform_partition(1, 2.0, 4)
    m = OsdeModel(1, rate=lambda o, x: -1.0)
    with pytest.raises(InvalidArgument):
        simulate(m.projected(p), g, brownian_increments(0, [0], g))


def test_exit_freeze():
    g = TimeGrid(1.0, 64)
    p = build_uniform_partition(1, 2.0, 8)
    fam = family_for_partition(p, 16)
    dw = brownian_increments(0, range(50), g)
    proj = ConstantModel(1, 0.0, 3.0).projected(p)
    b = simulate(proj, g, dw, r_stop=1.5, fam=fam)
    hit = b.exit_step >= 0
    assert hit.any()
    for i in np.flatnonzero(hit):
        e = b.exit_step[i]
        assert np.all(b.states[i, e:] == b.states[i, e])
        assert np.all(b.dz[i, e:] == 0.0)
    with pytest.raises(InvalidArgument):
        simulate(proj, g, dw, r_stop=1.5)


def test_chunks_and_workers():
    assert chunk_ranges(10, 4) == [(0, 4), (4, 8), (8, 10)]
    out1 = map_chunks(lambda a, b: (a, b), 10, workers=1, chunk=4)
    out3 = map_chunks(lambda a, b: (a, b), 10, workers=3, chunk=4)
    assert out1 == out3


def test_run_batch_matches_simulate():
    g = TimeGrid(1.0, 16)
    p = build_uniform_partition(1, 2.0, 4)
    paths = list(run_batch(cranston_le_jan(5.0), g, 3, 5, p, chunk=2))
    b = simulate(cranston_le_jan(5.0).projected(p), g, brownian_increments(3, range(5), g))
    for i, path in enumerate(paths):
        assert path.path_index == i
        assert np.array_equal(path.states, b.states[i])
