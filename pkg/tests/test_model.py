import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lshawkes.model import (
    PRESETS, ConvergenceError, ModelError, ModelSpec, builtin_family, gamma_plus,
    load_model, model_from_config, preset, save_model, spectral_radius, validate_model,
)


def test_spectral_radius_small_matrix():
    # eigenvalues of [[.2,.3],[.4,.1]] are 0.5 and -0.2
    assert spectral_radius([[0.2, 0.3], [0.4, 0.1]]) == pytest.approx(0.5, abs=1e-9)


def test_spectral_radius_zero_and_periodic():
    assert spectral_radius(np.zeros((3, 3))) == 0.0
    # a permutation is periodic; the +I shift still converges
    assert spectral_radius([[0.0, 0.7], [0.7, 0.0]]) == pytest.approx(0.7, abs=1e-9)


def test_spectral_radius_rejects_bad_input():
    with pytest.raises(ValueError):
        spectral_radius([[1.0, -0.1], [0.0, 1.0]])
    with pytest.raises(ValueError):
        spectral_radius(np.ones((2, 3)))


def test_spectral_radius_reports_nonconvergence():
    with pytest.raises(ConvergenceError) as info:
        spectral_radius([[0.1, 0.9], [0.5, 0.2]], max_iter=1)
    assert info.value.last_iterate.shape == (2,)


nonneg = arrays(np.float64, st.tuples(st.integers(1, 5)).map(lambda t: (t[0], t[0])),
                elements=st.floats(0.0, 1.0))


@given(nonneg, st.floats(0.1, 10.0))
def test_spectral_radius_scales_and_matches_eig(m, c):
    m = m + 1e-3  # irreducible, so the Perron root is simple
    r = spectral_radius(m)
    assert r == pytest.approx(np.max(np.abs(np.linalg.eigvals(m))), rel=1e-8)
    assert spectral_radius(c * m) == pytest.approx(c * r, rel=1e-8)


def test_poisson_family():
    m = builtin_family("constant", {"nu": 1.0})
    assert np.allclose(m.baseline([0.0, 0.3, 1.0]), 1.0)
    assert np.all(m.kernel(np.linspace(0, 1, 11), 0.5) == 0)
    assert validate_model(m).radius == 0.0


def test_piecewise_gamma():
    m = builtin_family("piecewise_const_kernel", {"nu": 1.0, "heights": [0.3, 0.1]}, A=1.0)
    assert np.allclose(gamma_plus(m), [[0.2]], atol=1e-12)
    rep = validate_model(m)
    assert rep.passed and rep.radius == pytest.approx(0.2, abs=1e-12)
    # pieces are [0, 0.5) and [0.5, 1)
    assert m.kernel(np.array([0.49, 0.5, 0.99]), 0.5)[:, 0, 0] == pytest.approx([0.3, 0.1, 0.1])


def test_tv_exponential_radius():
    m = builtin_family("exp_kernel_tv_amplitude",
                       {"alpha0": 0.4, "alpha1": 0.2, "beta": 2.0}, A=3.0)
    assert validate_model(m).radius == pytest.approx(0.6 * (1 - np.exp(-6)), rel=1e-7)


def test_constant_family_gamma_is_branching_mean():
    m = builtin_family("constant", {"gamma": 0.45, "beta": 0.7}, A=2.0)
    assert gamma_plus(m)[0, 0] == pytest.approx(0.45, rel=1e-8)


def test_constant_extension():
    m = preset("tvexp")
    s = np.linspace(0, 2.9, 7)
    for x in (-3.0, -0.1):
        assert np.array_equal(m.baseline(x), m.baseline(0.0))
        assert np.array_equal(m.kernel(s, x), m.kernel(s, 0.0))
    assert np.array_equal(m.baseline(1.7), m.baseline(1.0))


def test_kernel_vanishes_outside_support():
    m = preset("mutual2")
    assert np.all(m.kernel(np.array([-0.1, 3.0, 4.0]), 0.5) == 0)
    assert np.all(m.kernel(np.array([2.999]), 0.5) > 0)


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_validate(name):
    assert validate_model(preset(name)).passed


def test_anti_presets_rejected():
    with pytest.raises(ModelError) as info:
        builtin_family("constant", {"gamma": 1.2})
    assert info.value.radius == pytest.approx(1.2, rel=1e-6)
    with pytest.raises(ModelError):
        builtin_family("constant", {"gamma": [[0.6, 0.5], [0.5, 0.6]]}, d=2)
    with pytest.raises(ModelError):
        builtin_family("linear_baseline", {"nu": 0.2, "nu_slope": -0.5})
    with pytest.raises(ModelError):
        builtin_family("no_such_family", {})
    with pytest.raises(ModelError):
        builtin_family("constant", {"alpha0": 0.1})


def test_validate_reports_violations_without_raising():
    good = preset("poisson")
    bad = ModelSpec(d=1, A=1.0, T=10.0, family="custom", params={}, nu0=[-0.1], nu1=[0.0],
                    nu2=[0.0], nu_freq=[1.0], a0=[[1.2]], a1=[[0.0]], b=[[0.0]], H=[[[1.0]]])
    rep = validate_model(bad)
    assert not rep.passed and good is not bad
    assert any("baseline" in v for v in rep.violations)
    assert any("radius" in v for v in rep.violations)
    assert rep.as_dict()["radius"] == pytest.approx(1.2)


def test_config_round_trip(tmp_path):
    m = preset("mutual2_tv")
    path = tmp_path / "m.json"
    save_model(m, path)
    again = load_model(path)
    assert again.to_config() == m.to_config()
    for name in ("nu0", "nu1", "a0", "b", "H"):
        assert np.array_equal(getattr(again, name), getattr(m, name))
    assert json.loads(path.read_text())["family"] == "linear_baseline"
    assert model_from_config(m.to_config()).d == 2
