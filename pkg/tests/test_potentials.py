import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rhscatter.potentials import (Disk, PotentialFamily, PotentialGrid, Rectangle, SupportError,
                                  build_potential, bump_profile, compute_L, make_bump,
                                  make_disk_indicator, make_gaussian, make_two_bump, zero_potential)

D = Disk((0.0, 0.0), 1.0)


def test_bump_vanishes_outside_its_ball():
    v = make_bump(D, (0.2, 0.1), 0.5, 2.0, 33)
    r = np.hypot(v.points[..., 0] - 0.2, v.points[..., 1] - 0.1)
    assert np.all(v.values[r >= 0.5] == 0)
    assert np.isclose(v.sup, 2.0, rtol=0.05)
    assert v.q == 2.0


@given(st.floats(0.0, 0.999))
def test_bump_profile_between_zero_and_one(t):
    val = bump_profile(np.array([t]), 1.0)[0]
    assert 0 <= val <= 1
    assert val == pytest.approx(np.exp(1 - 1 / (1 - t * t)))


def test_bump_outside_domain_rejected():
    with pytest.raises(SupportError):
        make_bump(D, (0.5, 0.0), 0.6, 1.0, 16)
    with pytest.raises(SupportError):
        make_disk_indicator(D, (0.0, 0.0), 1.5, 1.0, 16)


def test_all_factories_respect_the_domain():
    for v in (make_gaussian(D, (0, 0), 0.3, 1.0, 32), make_two_bump(D, 1.0, 32),
              make_disk_indicator(D, (0, 0), 0.5, 1.0, 32)):
        assert np.all(v.values[~D.contains(v.points)] == 0)
    sq = Rectangle((-1.0, -1.0), (1.0, 1.0))
    g = make_gaussian(sq, (0, 0), 0.3, 1.0, 32)
    assert g.values[0, 0] > 0


def test_two_bump_has_both_signs():
    v = make_two_bump(D, 1.0, 48)
    assert v.values.max() > 0.5 and v.values.min() < -0.3


def test_compute_L():
    assert compute_L(Disk((3.0, 4.0), 1.0)) == 6.0
    assert np.isclose(compute_L(Rectangle((-1.0, 0.0), (2.0, 2.0))), np.hypot(2, 2))


def test_integral_of_disk_indicator():
    v = make_disk_indicator(D, (0, 0), 0.7, 1.0, 201)
    assert v.integral() == pytest.approx(np.pi * 0.49, rel=0.02)


def test_scaling_and_family():
    v = make_bump(D, (0, 0), 0.8, 0.5, 16)
    fam = PotentialFamily(v, q=1.0)
    assert np.isclose(fam.s1, 1.0 / v.sup)
    assert np.allclose(fam.scale(0.5).values, 0.5 * v.values)
    with pytest.raises(ValueError):
        fam.scale(fam.s1)
    assert PotentialFamily(zero_potential(D, 8), 1.0).s1 == np.inf
    assert np.allclose((v + v).values, v.scaled(2).values)


def test_save_load_round_trip(tmp_path):
    v = make_two_bump(D, 0.3, 24)
    v.save(tmp_path / "pot")
    w = PotentialGrid.load(tmp_path / "pot")
    assert np.array_equal(v.values, w.values)
    assert w.domain == v.domain and w.q == v.q
    v.to_csv(tmp_path / "pot.csv")
    rows = np.loadtxt(tmp_path / "pot.csv", delimiter=",", skiprows=1)
    assert rows.shape == (24 * 24, 3)


def test_build_potential_specs():
    dom = {"shape": "disk", "center": [0, 0], "radius": 1.0}
    assert not np.any(build_potential({"kind": "zero", "domain": dom, "n": 8}).values)
    v = build_potential({"kind": "bump", "domain": dom, "n": 16, "radius": 0.5, "amplitude": 0.2})
    assert v.sup > 0.15
    with pytest.raises(ValueError):
        build_potential({"kind": "spiral", "domain": dom, "amplitude": 1.0})
    with pytest.raises(ValueError):
        build_potential({"kind": "bump", "domain": {"shape": "torus"}, "radius": 1})
