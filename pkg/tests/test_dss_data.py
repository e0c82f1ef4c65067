import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dssboussinesq import dss_data as dd
from dssboussinesq.errors import DomainError, LookupFieldError, ParameterError


def test_azimuthal_extension_value(fields):
    np.testing.assert_allclose(fields["azimuthal"]([2.0, 0.0, 0.0]), [0.0, 0.5, 0.0], atol=1e-15)


def test_azimuthal_catalog_value(fields):
    np.testing.assert_allclose(fields["azimuthal"]([1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-15)


def test_inverse_radius_value(fields):
    assert fields["inverse-radius"]([4.0, 0.0, 0.0]) == pytest.approx(0.25, rel=1e-15)


def test_origin_is_rejected(fields):
    with pytest.raises(DomainError):
        fields["inverse-radius"]([0.0, 0.0, 0.0])


def test_scale_factor_must_exceed_one():
    with pytest.raises(ParameterError):
        dd.ScaleFactor(1.0)
    assert dd.ScaleFactor(2.0).period_T == pytest.approx(2 * np.log(2.0))


def test_unknown_field_name():
    with pytest.raises(LookupFieldError):
        dd.get_field("no-such-field")


def test_azimuthal_divergence_free(fields):
    rng = np.random.default_rng(0)
    x = rng.uniform(-3, 3, (200, 3))
    x = x[np.linalg.norm(x, axis=1) > 0.3]
    div = dd.divergence_fd(fields["azimuthal"], x, h=1e-3)
    # fourth-order FD error at h = 1e-3 on a field of size ~1/|x|
    assert np.max(np.abs(div)) <= 1e-10


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 40.0), st.floats(0, np.pi), st.floats(0, 2 * np.pi), st.integers(-3, 3))
def test_annulus_bump_dss_identity(r, th, ph, j):
    f = dd.get_field("annulus-bump", 2.0)
    x = r * np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    lhs = f(x)
    rhs = 2.0**j * f(2.0**j * x)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@settings(max_examples=30, deadline=None)
@given(st.floats(0.1, 20.0), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_homogeneous_fields_are_minus_one_homogeneous(r, th, ph):
    f = dd.get_field("azimuthal", 2.0)
    x = np.array([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    np.testing.assert_allclose(f(r * x) * r, f(x), rtol=1e-12, atol=1e-14)


def test_gridded_field_matches_analytic_and_extends(tmp_path, fields):
    src = fields["annulus-bump"]
    path = dd.save_annulus_file(str(tmp_path / "bump.bin"), src, 48, 48, 96)
    g = dd.load_annulus_file(path)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(300, 3))
    x *= (1.0 + rng.uniform(0, 0.99, 300))[:, None] / np.linalg.norm(x, axis=1)[:, None]
    ref = src(x)
    err = np.max(np.abs(g(x) - ref)) / np.max(np.abs(ref))
    assert err < 2e-2
    # the extension of the lookup at |x| = lam**-3 * 1.5 is lam**3 times the lookup at 1.5
    u = np.array([0.3, -0.4, 0.866])
    u /= np.linalg.norm(u)
    np.testing.assert_allclose(g(2.0**-3 * 1.5 * u), 8.0 * g(1.5 * u), rtol=1e-12)


def test_lorentz_inverse_radius(fields):
    est = dd.lorentz_3inf_estimate(fields["inverse-radius"], n=64)
    assert est == pytest.approx((4 * np.pi / 3) ** (1 / 3), rel=0.02)


def test_lorentz_zero_and_homogeneity(fields):
    assert dd.lorentz_3inf_estimate(dd.zero_field("scalar")) == 0.0
    base = dd.lorentz_3inf_estimate(fields["inverse-radius"], n=32)
    assert dd.lorentz_3inf_estimate(fields["inverse-radius"].scaled(3.0), n=32) == pytest.approx(3 * base, rel=1e-12)


def test_zero_force_profile():
    f = dd.zero_force(2.0)
    assert f.is_zero
    assert np.all(f.profile(np.ones((4, 3)), 0.3) == 0.0)
