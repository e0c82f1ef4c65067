import numpy as np
import pytest
from scipy import integrate

from dssboussinesq import heat_profiles as hp
from dssboussinesq import profile_revision as pr
from dssboussinesq import spectral_core as sc
from dssboussinesq.errors import ConvergenceError, GeometryError, ParameterError


def test_cutoff_support():
    cut = pr.Cutoff(8.0)
    assert np.all(cut.radial(np.array([0.0, 1.0, 3.99, 4.0]))[0] == 0.0)
    assert np.all(cut.radial(np.array([8.0, 9.0, 20.0]))[0] == 1.0)
    r = np.linspace(4.0, 8.0, 50)
    assert np.all(np.diff(cut.radial(r)[0]) >= 0)


def test_cutoff_derivatives_match_differences():
    cut = pr.Cutoff(8.0)
    r = np.linspace(4.1, 7.9, 40)
    h = 1e-5
    xi = lambda x: cut.radial(x)[0]
    np.testing.assert_allclose(cut.radial(r)[1], (xi(r + h) - xi(r - h)) / (2 * h), atol=1e-7)
    np.testing.assert_allclose(cut.radial(r)[2], (xi(r + h) - 2 * xi(r) + xi(r - h)) / h**2,
                               atol=1e-3)


def test_newton_correction_zero_source(box16):
    w = pr.newton_correction(np.zeros((16,) * 3), box16, 4.0)
    assert np.all(w == 0)


def test_newton_correction_of_a_ball():
    # resolved stand-in for the unit-ball indicator, normalized to the ball volume;
    # outside its support the potential is that of a point mass 4 pi / 3
    box = sc.BoxSpec(4.0, 64)
    prof = lambda r: np.where(r < 1.0, (1.0 - np.minimum(r, 1.0) ** 2) ** 6, 0.0)
    mass, _ = integrate.quad(lambda r: 4 * np.pi * r**2 * prof(r), 0, 1.0, epsabs=1e-14)
    src = prof(box.radius) * (4 * np.pi / 3) / mass
    w = pr.newton_correction(src, box, 1.0)
    ref = -box.coords / 3.0 / np.maximum(box.radius, box.h) ** 3
    sel = np.abs(box.radius - 2.0) < 0.5 * box.h
    assert sel.sum() > 10
    err = np.max(np.abs(w[:, sel] - ref[:, sel])) / np.max(np.abs(ref[:, sel]))
    assert err <= 1e-4


def test_newton_correction_rejects_wide_sources(box16):
    src = np.ones((16,) * 3)
    with pytest.raises(GeometryError):
        pr.newton_correction(src, box16, 2.0)
    with pytest.raises(GeometryError):
        pr.newton_correction(np.zeros((16,) * 3), box16, 7.9)


def test_revision_certificates(pair32, profiles32, box32):
    c = pair32.certificates
    assert c["div_residual"] <= 1e-8
    assert c["laplace_identity_residual"] <= 1e-8
    assert c["LTheta_shell_fraction"] >= 0.99
    assert np.isfinite(c["Vstar_minus_V0_L2"]) and c["Vstar_minus_V0_L2"] > 0
    # Theta* vanishes identically inside R0/2
    inner = box32.radius < pair32.R0 / 2
    assert np.all(pair32.Theta_star.values[0][inner] == 0.0)


def test_vstar_minus_v0_is_local(pair32, profiles32, box32):
    V0, _ = profiles32
    d = np.sqrt(np.sum((pair32.V_star.values[0] - V0.values[0]) ** 2, axis=0))
    far = (box32.radius > 1.5 * pair32.R0) & (box32.radius <= box32.L)
    near = box32.radius <= pair32.R0 / 2
    # outside R0 only the w tail (decaying at least like |y|**-2) remains
    assert np.max(d[far]) < 0.1 * np.max(d[near])
    assert pair32.certificates["w_decay_exponent"] >= 2.0 - 0.2


def test_L_of_revised_temperature_matches_spectral_L(pair32, box32):
    # LTheta* from the commutator formula against L applied spectrally to Theta*
    T = pair32.Theta_star
    Ls = hp.apply_L(box32, T.values, stationary=True)[0]
    inner = box32.radius <= 0.75 * box32.L
    rel = sc.l2_norm(box32, (Ls - pair32.LTheta_star[0]) * inner) / sc.l2_norm(box32, pair32.LTheta_star[0])
    # the cutoff shell is about four cells wide at N = 32
    assert rel < 0.2


def test_revise_parameter_checks(profiles32):
    V0, T0 = profiles32
    with pytest.raises(ParameterError):
        pr.revise(V0, T0, 0.5)
    with pytest.raises(GeometryError):
        pr.revise(V0, T0, 15.5)


def test_choose_R0_infinite_alpha(profiles32):
    R0, hist = pr.choose_R0(*profiles32, np.inf)
    assert R0 == 2.0 and hist == []


def test_choose_R0_history_nonincreasing(profiles32):
    with pytest.raises(ConvergenceError) as exc:
        pr.choose_R0(*profiles32, 1e-3)
    vals = [v for _, v in exc.value.history]
    assert len(vals) == 3
    assert all(b <= a * (1 + 1e-3) for a, b in zip(vals, vals[1:]))
    assert "enlarge" in str(exc.value)


def test_choose_R0_reaches_benchmark_target(profiles32):
    R0, hist = pr.choose_R0(*profiles32, 4.9)
    assert R0 == 8.0 and hist[-1][1] <= 4.9


def test_choose_R0_erf_majorant(profiles32):
    # Theta* <= 1/|y| on |y| >= R0/2, so its L^{10/3} norm is below the tail majorant
    _, T0 = profiles32
    V0z = hp.zero_profile("vector3", T0.box, T0.period)
    V0z.grads = np.zeros((1, 3, 3) + (32,) * 3)
    for R0 in (4.0, 8.0):
        p = pr.revise(V0z, T0, R0)
        lq = p.certificates["Lq_norm"]
        assert lq <= (12 * np.pi * (R0 / 2) ** (-1 / 3)) ** 0.3 * 1.01


def test_pair_roundtrip(tmp_path, pair32):
    paths = pr.save_pair(str(tmp_path / "pair"), pair32)
    assert len(paths) == 8
    q = pr.load_pair(str(tmp_path / "pair"))
    np.testing.assert_array_equal(q.LTheta_star, pair32.LTheta_star)
    np.testing.assert_array_equal(q.V_star.grads, pair32.V_star.grads)
    assert q.R0 == pair32.R0 and q.box == pair32.box


def test_default_alpha_positive(profiles32):
    assert pr.default_alpha(profiles32[0]) > 0.05
