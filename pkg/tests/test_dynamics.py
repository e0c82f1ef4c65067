import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dssboussinesq import dynamics as dy
from dssboussinesq import solvers as sv
from dssboussinesq import spectral_core as sc
from dssboussinesq.errors import BoxMismatchError, ParameterError, UsageError


@pytest.fixture(scope="module")
def zero16(box16):
    return dy.zero_system(box16)


def test_zero_data_zero_state(zero16, box16):
    dU, dP = dy.rhs(dy.GalerkinState.zeros(box16), zero16)
    assert np.all(dU == 0) and np.all(dP == 0)


def test_zero_state_tendency_is_projected_source(data32, box32):
    dU, dP = dy.rhs(dy.GalerkinState.zeros(box32), data32)
    oU, oP = dy.source_oracle(data32)
    assert sc.l2_norm(box32, dU - oU) <= 1e-12 * sc.l2_norm(box32, oU)
    assert sc.l2_norm(box32, dP - oP) <= 1e-12 * sc.l2_norm(box32, oP)


def test_momentum_source_matches_profile_terms(pair32, data32, box32):
    # Rb = -(V*.grad)V* + Theta* grad G + F - LV*, built from the un-tapered profiles
    W = box32.background_window
    V, T = pair32.V_star, pair32.Theta_star
    Rb = (-np.einsum("j...,ij...->i...", V.values[0], V.grads[0])
          + T.values[0] * data32.gravity - pair32.LV_star[0])
    ref = sc.leray_project(box32, sc.band_limit(box32, W * Rb))
    oU, _ = dy.source_oracle(data32)
    assert sc.l2_norm(box32, oU - ref) <= 1e-12 * sc.l2_norm(box32, ref)


def test_source_oracle_matches_profile_terms(pair32, data32, box32):
    # Rq from the un-tapered revised profiles, tapered afterwards
    W = box32.background_window
    T, V = pair32.Theta_star, pair32.V_star
    Rq = W * (-np.einsum("j...,j...->...", V.values[0], T.grads[0]) - pair32.LTheta_star[0])
    _, oP = dy.source_oracle(data32)
    ref = sc.band_limit(box32, Rq)
    assert sc.l2_norm(box32, oP - ref) <= 1e-12 * sc.l2_norm(box32, ref)


def test_energy_pairing(data32, box32, rng):
    st = dy.random_state(box32, rng, 2.0)
    rm, rt, A, B = dy.energy_residuals(st, data32)
    assert abs(rm) <= 1e-8 * max(abs(A[0]), abs(B[0]), 1.0)
    assert abs(rt) <= 1e-8 * max(abs(A[1]), abs(B[1]), 1.0)


def test_cancellations_random_trials(box16):
    data = dy.zero_system(box16)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(100):
        st = dy.random_state(box16, rng, float(rng.uniform(0.1, 10)))
        worst = max(worst, max(dy.cancellation_residuals(st, data).values()))
    assert worst <= 1e-12


def test_differenced_identity_is_second_order(data32, box32, rng):
    st = dy.random_state(box32, rng, 1.0)
    ds = 0.02
    r1 = dy.differenced_identity(st, data32, ds)
    r2 = dy.differenced_identity(st, data32, ds / 2)
    for a, b in zip(r1, r2):
        assert abs(b) < abs(a) / 3.0


def test_dense_basis_consistency(data32, box32):
    rng = np.random.default_rng(1)
    phi, beta = dy.orthonormal_basis(box32, 8, rng)
    coef = dy.dense_coefficients(phi, beta, data32)
    C, Cs = coef["C"], coef["C*"]
    scale = np.max(np.abs(C))
    assert np.max(np.abs(C + C.transpose(0, 2, 1))) <= 1e-10 * max(scale, 1.0)
    assert np.max(np.abs(Cs + Cs.transpose(0, 2, 1))) <= 1e-10 * max(np.max(np.abs(Cs)), 1.0)
    assert np.max(np.abs(np.einsum("iii->i", C))) <= 1e-12 * max(scale, 1.0)
    b = rng.standard_normal(8)
    q = rng.standard_normal(8)
    d1 = dy.dense_tendency(coef, b, q)
    d2 = dy.projected_tendency(phi, beta, b, q, data32)
    for x, y in zip(d1, d2):
        assert np.linalg.norm(x - y) <= 1e-8 * np.linalg.norm(y)


def test_dense_rejects_bad_basis(data32, box32):
    rng = np.random.default_rng(1)
    phi, beta = dy.orthonormal_basis(box32, 3, rng)
    with pytest.raises(UsageError):
        dy.dense_coefficients([2 * p for p in phi], beta, data32)


def test_pure_heat_decay(monkeypatch, box16):
    data = dy.zero_system(box16)
    monkeypatch.setattr(dy, "explicit_hat",
                        lambda d, Uh, Ph, s, parts=None: (np.zeros_like(Uh), np.zeros_like(Ph)))
    ds = 0.05
    k = np.pi / box16.L
    psi = np.cos(3 * k * box16.coords[0]) * np.sin(2 * k * box16.coords[1])
    st = dy.GalerkinState(np.zeros((3,) + (16,) * 3), psi)
    out = dy.step(st, data, ds)
    np.testing.assert_allclose(out.Psi, psi * math.exp(-13 * k * k * ds), atol=1e-14)


def test_step_order(data32, box32, rng):
    st = dy.random_state(box32, rng, 1.0)
    T = 0.5
    ref = dy.integrate(st, data32, T / 128, 128)
    errs = []
    for n in (8, 16, 32):
        r = dy.integrate(st, data32, T / n, n)
        errs.append(sc.l2_norm(box32, r.U - ref.U) + sc.l2_norm(box32, r.Psi - ref.Psi))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.9)


def test_zero_state_stays_zero(zero16, box16):
    out = dy.integrate(dy.GalerkinState.zeros(box16), zero16, 0.05, 10)
    assert np.all(out.U == 0) and np.all(out.Psi == 0)


def test_stationary_fixed_point_stays_fixed(stationary32, data32):
    smap, sol = stationary32
    pm = sv.PoincareMap(data32)
    st = pm.unpack(sol.x)
    out = dy.integrate(st, data32, pm.ds, 4, integrator=pm.integrator)
    assert np.linalg.norm(pm.pack(out) - sol.x) <= 1e-6 * np.linalg.norm(sol.x)


def test_stability_limit_enforced(data32):
    with pytest.raises(ParameterError):
        dy.Integrator(data32, 10 * dy.stability_limit(data32))
    with pytest.raises(ParameterError):
        dy.Integrator(data32, -0.1)


def test_box_mismatch(data32, box16):
    with pytest.raises(BoxMismatchError):
        dy.rhs(dy.GalerkinState.zeros(box16), data32)


def test_ledger_zero(zero16, box16):
    led = dy.EnergyLedger(zero16)
    dy.integrate(dy.GalerkinState.zeros(box16), zero16, 0.05, 5, led)
    assert len(led.rows) == 6
    for col in ("f", "res_mom", "res_temp"):
        assert np.all(led.as_array(col) == 0)


def test_linear_only_decay(data32, box32, rng):
    d = data32.variant(nonlinear=False, sources=False, background=False)
    st = dy.random_state(box32, rng, 3.0)
    led = dy.EnergyLedger(d)
    n = sv.default_steps(d)
    dy.integrate(st, d, d.period / n, n, led)
    f, s = led.as_array("f"), led.as_array("s")
    assert np.all(np.diff(f) < 0)
    assert np.all(f <= f[0] * np.exp(-s / 2) * (1 + 1e-12))


def test_benchmark_ledger_residuals(pmap32, periodic32, data32):
    led = dy.EnergyLedger(data32)
    pmap32.flow(periodic32.x, 1, led)
    A = led.as_array("A")
    B = led.as_array("B")
    assert np.all(np.abs(led.as_array("res_mom")) <= 1e-6 * np.maximum(A, 1.0))
    assert np.all(np.abs(led.as_array("res_temp")) <= 1e-6 * np.maximum(B, 1.0))


def test_ledger_csv_roundtrip(tmp_path, zero16, box16, rng):
    st = dy.random_state(box16, rng)
    led = dy.EnergyLedger(zero16)
    dy.integrate(st, zero16, 0.05, 3, led)
    rows = dy.EnergyLedger.read_csv(led.write_csv(str(tmp_path / "l.csv")))
    assert [r["f"] for r in rows] == list(led.as_array("f"))


def test_constants_zero_data(zero16):
    c = zero16.constants
    assert c["C0"] == 0 and c["C2"] == 0 and c["C3"] == 0 and c["rho"] == 0
    # the Hardy constant does not depend on the data
    assert c["C1"] == dy.HARDY_C1 and c["m"] == pytest.approx(math.sqrt(32.0))


def test_constants_homogeneity_and_monotonicity(pair32, data32):
    big = dy.build_system(pair32.scaled(2.0))
    small = dy.build_system(pair32.scaled(0.5))
    n1, n2 = data32.constants["norms"], big.constants["norms"]
    assert n2["V_L4"] ** 4 == pytest.approx(16 * n1["V_L4"] ** 4, rel=1e-12)
    for k in ("C0", "C2", "C3", "rho"):
        assert small.constants[k] <= data32.constants[k] <= big.constants[k]


def test_constants_multipliers(data32):
    c = dy.estimate_constants(data32, {"C2": 2.0})
    assert c["C2"] == pytest.approx(2 * data32.constants["C2"])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 5.0))
def test_pack_unpack_roundtrip(seed, m):
    box = sc.BoxSpec(8.0, 16)
    s = dy.random_state(box, np.random.default_rng(seed))
    x = s.pack(box, m)
    t = dy.GalerkinState.unpack(box, x, m)
    np.testing.assert_allclose(t.U, s.U, atol=1e-12)
    np.testing.assert_allclose(t.Psi, s.Psi, atol=1e-12)
    f = sc.l2_norm(box, s.U) ** 2 + m * m * sc.l2_norm(box, s.Psi) ** 2
    assert np.dot(x, x) == pytest.approx(f, rel=1e-12)


def test_random_state_is_admissible(box32, rng):
    s = dy.random_state(box32, rng, 2.0)
    assert sc.spectral_divergence_norm(box32, s.U) <= 1e-12 * sc.l2_norm(box32, s.U)
    assert sc.l2_norm(box32, s.U) == pytest.approx(2.0)
