import numpy as np
import pytest

from occusim.errors import InvalidArgument
from occusim.measure import DiscreteMeasure, build_uniform_partition, lift
from occusim.models import (ConstantModel, CranstonLeJan, LovParams, OsdeModel, Raimond, cranston_le_jan, lov,
                            project_coefficients, raimond, regularized_direction)


def random_state(p, B, rng, scale=1.0, shift=0.0):
    z = rng.uniform(0, 1, size=(B, p.n_cells)) * (rng.uniform(size=(B, p.n_cells)) < 0.6)
    x = shift + scale * rng.normal(size=(B, p.dim))
    return z, x


def assert_close_rel(a, b, rtol=1e-12):
    a, b = np.asarray(a), np.asarray(b)
    np.testing.assert_allclose(a, b, rtol=rtol, atol=rtol * max(1.0, np.abs(b).max()))


MODELS = [
    (lambda: cranston_le_jan(5.0), dict(d=1, R=2.0, M=8)),
    (lambda: cranston_le_jan(-1.3, x0=0.4), dict(d=1, R=3.0, M=5)),
    (lambda: raimond(5.0, 1e-2, 2), dict(d=2, R=2.0, M=6)),
    (lambda: raimond(-2.0, 0.5, 3), dict(d=3, R=1.0, M=3)),
    (lambda: lov(LovParams()), dict(d=1, R=50.0, M=10, origin=100.0, scale=15.0, shift=100.0)),
    (lambda: lov(LovParams(kappa=0.5, eps=0.05)), dict(d=1, R=50.0, M=7, origin=100.0, scale=15.0, shift=100.0)),
    (lambda: ConstantModel(2, [0.1, -0.2], 0.3), dict(d=2, R=1.0, M=3)),
]


@pytest.mark.parametrize("make,cfg", MODELS)
def test_specialized_matches_generic(make, cfg):
    model = make()
    p = build_uniform_partition(cfg["d"], cfg["R"], cfg["M"], cfg.get("origin"))
    fast = project_coefficients(model, p)
    slow = project_coefficients(model, p, specialized=False)
    rng = np.random.default_rng(0)
    z, x = random_state(p, 30, rng, cfg.get("scale", 1.0), cfg.get("shift", 0.0))
    assert_close_rel(fast.rate(z, x), slow.rate(z, x))
    assert_close_rel(fast.drift(z, x), slow.drift(z, x))
    assert_close_rel(fast.diffusion(z, x), slow.diffusion(z, x))
    dw = rng.normal(size=x.shape)
    assert_close_rel(fast.noise(z, x, dw), slow.noise(z, x, dw))


def test_cranston_drift_by_hand():
    m = CranstonLeJan(2.0)
    o = DiscreteMeasure([[1.0], [-0.5]], [0.25, 0.5])
    # 2 * (0.25 * (1 - 0.2) + 0.5 * (-0.5 - 0.2))
    assert m.drift(o, [0.2])[0] == pytest.approx(2 * (0.25 * 0.8 + 0.5 * -0.7))
    assert m.lipschitz == 2.0
    assert m.params() == {"beta": 2.0, "x0": 0.0}


def test_cranston_zero_beta_has_zero_drift():
    p = build_uniform_partition(1, 2.0, 4)
    proj = cranston_le_jan(0.0).projected(p)
    z = np.ones((3, p.n_cells))
    assert np.all(proj.drift(z, np.zeros((3, 1))) == 0.0)


def test_regularized_direction():
    v = np.array([[3.0, 4.0]])
    np.testing.assert_allclose(regularized_direction(v, 0.0), [[0.6, 0.8]])
    assert np.linalg.norm(regularized_direction(v, 1.0)) < 1.0


def test_raimond_metadata_and_bound():
    m = Raimond(5.0, 0.04, 2)
    assert m.lipschitz == pytest.approx(5.0 / 0.2)
    assert m.growth == 5.0
    o = DiscreteMeasure(np.random.default_rng(1).normal(size=(40, 2)), np.full(40, 0.025))
    assert np.linalg.norm(m.drift(o, [0.3, 0.1])) <= 5.0 * o.mass
    with pytest.raises(InvalidArgument):
        Raimond(1.0, 0.0)


def test_raimond_drift_independent_of_batch():
    p = build_uniform_partition(2, 2.0, 10)
    proj = raimond(5.0).projected(p)
    rng = np.random.default_rng(2)
    z, x = random_state(p, 17, rng)
    full = proj.drift(z, x)
    for i in (0, 5, 16):
        assert np.array_equal(proj.drift(z[i:i + 1], x[i:i + 1])[0], full[i])


class TestLov:
    def test_defaults(self):
        prm = LovParams()
        assert prm.v_min == pytest.approx(0.01 - 0.01 / 4)
        assert prm.delta == pytest.approx(prm.v_min / 2)
        assert prm.v_loc(100.0) == pytest.approx(0.01)

    @pytest.mark.parametrize("kw", [dict(alpha=0.0), dict(eps=0.0), dict(x0=-1.0), dict(gamma=0.0),
                                    dict(delta=0.01)])
    def test_invalid(self, kw):
        with pytest.raises(InvalidArgument):
            LovParams(**kw)

    def test_variance_by_hand(self):
        prm = LovParams()
        m = lov(prm)
        o = DiscreteMeasure([[90.0], [110.0]], [0.5, 0.5])
        x = 105.0
        expect = prm.v_loc(x) + 0.5 * (prm.sensitivity(90 / 105) + prm.sensitivity(110 / 105))
        assert m.variance(o, x) == pytest.approx(expect, rel=1e-14)
        assert m.diffusion(o, [x])[0, 0] == pytest.approx(x * np.sqrt(expect), rel=1e-14)

    def test_empty_occupation(self):
        m = lov(LovParams())
        assert m.variance(DiscreteMeasure.empty(1), 100.0) == pytest.approx(0.01)

    def test_rate(self):
        m = lov(LovParams(kappa=0.5))
        assert m.rate(DiscreteMeasure.dirac([1.0], 2.0), [1.0]) == 2.0


def test_custom_model_defaults():
    m = OsdeModel(2)
    o = DiscreteMeasure.empty(2)
    assert m.rate(o, [0, 0]) == 1.0
    np.testing.assert_array_equal(m.drift(o, [0, 0]), [0, 0])
    np.testing.assert_array_equal(m.diffusion(o, [0, 0]), np.eye(2))


def test_custom_model_callables_projected_via_lift():
    m = OsdeModel(1, drift=lambda o, x: o.mass - x[0], lipschitz=1.0)
    p = build_uniform_partition(1, 1.0, 2)
    proj = m.projected(p)
    z = np.array([[0.0, 0.3, 0.2]])
    assert proj.drift(z, np.array([[0.1]]))[0, 0] == pytest.approx(lift(z[0], p).mass - 0.1)


def test_dimension_mismatch():
    with pytest.raises(InvalidArgument):
        raimond(1.0).projected(build_uniform_partition(1, 1.0, 2))
