"""Mollified deviation dynamics in similarity variables.

Unknowns ``U`` (solenoidal) and ``Psi`` are the deviations from the revised
background.  The tendency is

    dU/ds   = Delta U + P[-U/4 + D(U) - (a.grad)U - (eta*U.grad)Vb + Psi grad G + Rb]
    dPsi/ds = Delta Psi - Psi/4 + D(Psi) - a.grad Psi - eta*U.grad Thb + Rq

with ``a = Vb + eta*U``, ``D`` the windowed drift in skew form plus the
sponge, and ``Vb, Thb, Rb, Rq`` the background fields multiplied by the box
taper.  Convection uses the skew form, so every trilinear pairing vanishes
on the grid exactly.
"""

from dataclasses import dataclass, field as dc_field, replace
import csv
import math

import numpy as np

from .errors import BoxMismatchError, DivergenceError, ParameterError, UsageError
from . import spectral_core as sc


# ---------------------------------------------------------------------------
# background data

@dataclass
class Background:
    """Tapered background fields at one s-sample (all on the box grid)."""

    V: np.ndarray
    gradV: np.ndarray
    Th: np.ndarray
    gradTh: np.ndarray
    Rb: np.ndarray
    Rq: np.ndarray
    F: np.ndarray


@dataclass
class SystemData:
    """Everything the tendency needs besides the state.

    ``samples`` holds one :class:`Background` per s-node (a single entry for
    s-independent data).  ``constants`` is filled by :func:`estimate_constants`.
    Switches allow the linear-only and source-free variants used in checks.
    """

    box: sc.BoxSpec
    period: float
    s_nodes: np.ndarray
    samples: list
    mollifier: sc.Mollifier
    delta: float = 0.0
    stationary: bool = True
    constants: dict = dc_field(default_factory=dict)
    nonlinear: bool = True
    sources: bool = True
    background: bool = True
    buoyancy: bool = True
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.gravity = sc.grav_field(self.box, self.delta)
        self._cache = {}

    def variant(self, **switches):
        new = replace(self, **switches)
        new.constants = dict(self.constants)
        return new

    @property
    def m(self):
        return float(self.constants.get("m", 1.0))

    def at(self, s):
        """Background at log-time ``s`` (trigonometric interpolation between samples)."""
        if self.stationary or len(self.samples) == 1:
            return self.samples[0]
        key = round(float(np.mod(s, self.period)), 13)
        if key in self._cache:
            return self._cache[key]
        n = len(self.samples)
        ph = 2.0 * np.pi * (s - self.s_nodes[0]) / self.period
        freqs = np.fft.fftfreq(n, d=1.0 / n)
        # weights of the trigonometric interpolant, applied per node
        wts = np.zeros(n)
        for j in range(n):
            e = np.exp(1j * freqs * (ph - 2.0 * np.pi * j / n))
            if n % 2 == 0:
                e[n // 2] = np.cos(n // 2 * (ph - 2.0 * np.pi * j / n))
            wts[j] = np.real(np.sum(e)) / n
        fields = {}
        for name in ("V", "gradV", "Th", "gradTh", "Rb", "Rq", "F"):
            fields[name] = sum(w * getattr(b, name) for w, b in zip(wts, self.samples))
        bg = Background(**fields)
        if len(self._cache) > 64:
            self._cache.clear()
        self._cache[key] = bg
        return bg


def build_system(pair, force_profile=None, epsilon=0.05, delta=0.0, constants=None):
    """Assemble :class:`SystemData` from a revised profile pair.

    ``force_profile`` is an optional callable ``F(s) -> (3, N, N, N)`` on the box.
    """
    box = pair.box
    W = box.background_window
    gW = box.background_window_grad
    grav = sc.grav_field(box, delta)
    samples = []
    for i, s in enumerate(pair.V_star.s):
        V = pair.V_star.values[i]
        gV = pair.V_star.grads[i]
        Th = pair.Theta_star.values[i]
        gTh = pair.Theta_star.grads[i]
        F = np.zeros_like(V) if force_profile is None else np.asarray(force_profile(s))
        adv = np.einsum("j...,ij...->i...", V, gV)
        Rb = -adv + Th * grav + F - pair.LV_star[i]
        Rq = -np.einsum("j...,j...->...", V, gTh) - pair.LTheta_star[i]
        samples.append(Background(
            V=W * V, gradV=W * gV + V[:, None] * gW[None, :], Th=W * Th,
            gradTh=W * gTh + Th * gW, Rb=W * Rb, Rq=W * Rq, F=W * F))
    data = SystemData(box, pair.V_star.period, np.array(pair.V_star.s), samples,
                      sc.Mollifier(epsilon), delta, pair.stationary,
                      meta={"R0": pair.R0})
    data.constants = constants if constants is not None else estimate_constants(data)
    return data


def zero_system(box, period=2.0 * np.log(2.0), epsilon=0.05, delta=0.0):
    z3 = np.zeros((3,) + (box.N,) * 3)
    z1 = np.zeros((box.N,) * 3)
    bg = Background(z3, np.zeros((3, 3) + (box.N,) * 3), z1, z3.copy(), z3.copy(), z1.copy(),
                    z3.copy())
    data = SystemData(box, period, np.array([0.0]), [bg], sc.Mollifier(epsilon), delta, True)
    data.constants = estimate_constants(data)
    return data


# ---------------------------------------------------------------------------
# constants

HARDY_C1 = 16.0


def estimate_constants(data, multipliers=None):
    """Empirical stand-ins for the generic constants of the energy bounds.

    Norms are sup over the s-samples, on the tapered background:
      C0 = (|V*|_4**2 + |Th*|_4**2 + |grad Th*| + |F|_-1 + |LV*|_-1 + |LTh*|_-1)**2
      C1 = 16 (Hardy: 2|<Psi grad G, U>| <= |U|**2/4 + 16 |grad Psi|**2)
      C2 = 8 max(|Rb|_-1, |Rq|_-1)**2 (Young: 2|<R, U>| <= 8|R|_-1**2 + |U|_1**2/8)
      C3 = C2 (1 + 2 C1)
    Multipliers (default 1) rescale each constant.  ``m = sqrt(2 C1)`` falls
    back to 1 when C1 vanishes.
    """
    mult = {"C0": 1.0, "C1": 1.0, "C2": 1.0}
    if multipliers:
        mult.update(multipliers)
    box = data.box
    norms = {k: 0.0 for k in ("V_L4", "Th_L4", "gradTh_L2", "F_Hm1", "LV_Hm1", "LTh_Hm1",
                              "Rb_Hm1", "Rq_Hm1")}
    for bg in data.samples:
        V, Th = bg.V, bg.Th
        # recover L-terms from the sources: Rb = -(V.grad)V + Th grad G + F - LV
        adv = np.einsum("j...,ij...->i...", V, bg.gradV)
        LV = -bg.Rb - adv + Th * data.gravity + bg.F
        LTh = -bg.Rq - np.einsum("j...,j...->...", V, bg.gradTh)
        vals = {
            "V_L4": sc.lq_norm(box, V, 4.0), "Th_L4": sc.lq_norm(box, Th, 4.0),
            "gradTh_L2": sc.l2_norm(box, bg.gradTh), "F_Hm1": sc.hminus1_norm(box, bg.F),
            "LV_Hm1": sc.hminus1_norm(box, LV), "LTh_Hm1": sc.hminus1_norm(box, LTh),
            "Rb_Hm1": sc.hminus1_norm(box, bg.Rb), "Rq_Hm1": sc.hminus1_norm(box, bg.Rq),
        }
        for k, v in vals.items():
            norms[k] = max(norms[k], v)
    C0 = mult["C0"] * (norms["V_L4"] ** 2 + norms["Th_L4"] ** 2 + norms["gradTh_L2"]
                       + norms["F_Hm1"] + norms["LV_Hm1"] + norms["LTh_Hm1"]) ** 2
    C1 = mult["C1"] * HARDY_C1
    C2 = mult["C2"] * 8.0 * max(norms["Rb_Hm1"], norms["Rq_Hm1"]) ** 2
    C3 = C2 * (1.0 + 2.0 * C1)
    m = math.sqrt(2.0 * C1) if C1 > 0 else 1.0
    rho = math.sqrt(8.0 * C2 * (1.0 + m * m))
    return {"C0": C0, "C1": C1, "C2": C2, "C3": C3, "m": m, "rho": rho, "norms": norms,
            "multipliers": mult}


# ---------------------------------------------------------------------------
# state

@dataclass
class GalerkinState:
    """Deviation fields on the grid at log-time ``s``."""

    U: np.ndarray
    Psi: np.ndarray
    s: float = 0.0

    def pack(self, box, m):
        """Packed vector ``x = (b, m q)`` in Parseval-normalized grid coordinates.

        ``|x|**2 = ||U||**2 + m**2 ||Psi||**2``.
        """
        c = math.sqrt(box.cell_volume)
        return np.concatenate([c * self.U.ravel(), m * c * self.Psi.ravel()])

    @classmethod
    def unpack(cls, box, x, m, s=0.0, admissible=True):
        c = math.sqrt(box.cell_volume)
        n = box.N**3
        U = x[:3 * n].reshape((3,) + (box.N,) * 3) / c
        Psi = x[3 * n:].reshape((box.N,) * 3) / (m * c)
        st = cls(U, Psi, s)
        return st.admissible(box) if admissible else st

    def admissible(self, box):
        """Project onto band-limited solenoidal ``U`` and band-limited ``Psi``."""
        Uh = sc.leray_hat(box, sc.truncate(box, sc.fft(box, self.U)))
        Ph = sc.truncate(box, sc.fft(box, self.Psi))
        return GalerkinState(sc.ifft(box, Uh), sc.ifft(box, Ph), self.s)

    @classmethod
    def zeros(cls, box, s=0.0):
        return cls(np.zeros((3,) + (box.N,) * 3), np.zeros((box.N,) * 3), s)


def random_state(box, rng, amplitude=1.0, kscale=None, envelope=None):
    """Smooth random admissible state, Gaussian-enveloped to sit inside the box interior."""
    kscale = 0.5 * box.kmax if kscale is None else kscale
    env = envelope if envelope is not None else 0.3 * box.L
    shape = (box.N,) * 3
    g = np.exp(-(box.radius / env) ** 2)
    filt = np.exp(-box.k2 / kscale**2) * box.dealias_mask
    U = np.stack([sc.ifft(box, filt * sc.fft(box, rng.standard_normal(shape))) for _ in range(3)])
    Psi = sc.ifft(box, filt * sc.fft(box, rng.standard_normal(shape)))
    st = GalerkinState(U * g, Psi * g).admissible(box)
    nu = sc.l2_norm(box, st.U)
    npsi = sc.l2_norm(box, st.Psi)
    return GalerkinState(amplitude * st.U / nu, amplitude * st.Psi / npsi)


# ---------------------------------------------------------------------------
# tendency

def _check_box(state, data):
    if state.U.shape[-1] != data.box.N or state.Psi.shape != (data.box.N,) * 3:
        raise BoxMismatchError("state and data live on different boxes")


def explicit_hat(data, Uh, Ph, s, parts=None):
    """Explicit (non-Laplacian) tendency in spectral form, projected and dealiased.

    Returns ``(NU_hat, NPsi_hat)``.  If ``parts`` is a dict, the physical
    fields used are stored in it for diagnostics.
    """
    box = data.box
    bg = data.at(s)
    U = sc.ifft(box, Uh)
    Psi = sc.ifft(box, Ph)
    gU = np.stack([sc.ifft(box, sc.grad_hat(box, Uh[i])) for i in range(3)])
    gP = sc.ifft(box, sc.grad_hat(box, Ph))
    yt = box.drift_coord
    if data.nonlinear:
        eU = sc.ifft(box, data.mollifier.apply_hat(box, Uh))
    else:
        eU = np.zeros_like(U)
    a = eU + bg.V if data.background else eU
    # b combines the drift (1/4 y~) and the skew convection (-1/2 a)
    b = 0.25 * yt - 0.5 * a
    ptU = np.einsum("j...,ij...->i...", b, gU) - 0.25 * U
    ptP = np.einsum("j...,j...->...", b, gP) - 0.25 * Psi
    if data.background:
        eUfull = sc.ifft(box, data.mollifier.apply_hat(box, Uh))
        ptU -= np.einsum("j...,ij...->i...", eUfull, bg.gradV)
        ptP -= np.einsum("j...,j...->...", eUfull, bg.gradTh)
    if data.buoyancy:
        ptU += Psi * data.gravity
    if data.sources:
        ptU += bg.Rb
        ptP += bg.Rq
    fluxU = sc.fft(box, b[None, :] * U[:, None])
    fluxP = sc.fft(box, b * Psi)
    NU = sc.fft(box, ptU) + np.stack([sc.div_hat(box, fluxU[i]) for i in range(3)])
    NP = sc.fft(box, ptP) + sc.div_hat(box, fluxP)
    NU = sc.leray_hat(box, sc.truncate(box, NU))
    NP = sc.truncate(box, NP)
    if parts is not None:
        parts.update(U=U, Psi=Psi, gradU=gU, gradPsi=gP, etaU=a - (bg.V if data.background else 0),
                     a=a, bg=bg)
    return NU, NP


def rhs(state, data):
    """Full tendency ``(dU/ds, dPsi/ds)`` on the grid."""
    _check_box(state, data)
    box = data.box
    Uh = sc.fft(box, state.U)
    Ph = sc.fft(box, state.Psi)
    NU, NP = explicit_hat(data, Uh, Ph, state.s)
    dU = sc.ifft(box, NU - box.k2 * sc.truncate(box, Uh))
    dP = sc.ifft(box, NP - box.k2 * sc.truncate(box, Ph))
    return dU, dP


def source_oracle(data, s=0.0):
    """Tendency at the zero state assembled term by term from the profile fields."""
    box = data.box
    bg = data.at(s)
    if not data.sources:
        return np.zeros_like(bg.V), np.zeros_like(bg.Th)
    momh = sc.leray_hat(box, sc.truncate(box, sc.fft(box, bg.Rb)))
    return sc.ifft(box, momh), sc.ifft(box, sc.truncate(box, sc.fft(box, bg.Rq)))


# ---------------------------------------------------------------------------
# energy identities

def energy_terms(state, data):
    """Right-hand sides of the two energy identities, assembled term by term.

    momentum:    -|U|**2/4 - |grad U|**2 - <(eta*U.grad)Vb, U> + <Psi grad G, U> + <Rb, U>
    temperature: -|Psi|**2/4 - |grad Psi|**2 - <(eta*U.grad)Thb, Psi> + <Rq, Psi>
    The drift window contributes nothing here because the sponge restores the
    interior rate -1/4 exactly.
    """
    box = data.box
    bg = data.at(state.s)
    U, Psi = state.U, state.Psi
    eU = data.mollifier(box, U)
    mom = -0.25 * sc.l2_norm(box, U) ** 2 - sc.h1_seminorm(box, U) ** 2
    tmp = -0.25 * sc.l2_norm(box, Psi) ** 2 - sc.h1_seminorm(box, Psi) ** 2
    if data.background:
        mom -= sc.inner(box, np.einsum("j...,ij...->i...", eU, bg.gradV), U)
        tmp -= sc.inner(box, np.einsum("j...,j...->...", eU, bg.gradTh), Psi)
    if data.buoyancy:
        mom += sc.inner(box, Psi * data.gravity, U)
    if data.sources:
        mom += sc.inner(box, bg.Rb, U)
        tmp += sc.inner(box, bg.Rq, Psi)
    return mom, tmp


def energy_residuals(state, data, tendency=None):
    """Two-route residuals: ``<rhs, U>`` against the assembled identity, per equation."""
    dU, dP = rhs(state, data) if tendency is None else tendency
    box = data.box
    A_route = (sc.inner(box, dU, state.U), sc.inner(box, dP, state.Psi))
    B_route = energy_terms(state, data)
    return A_route[0] - B_route[0], A_route[1] - B_route[1], A_route, B_route


# ---------------------------------------------------------------------------
# dense Galerkin coefficients

def orthonormal_basis(box, k, rng, kscale=None):
    """``k`` orthonormal band-limited solenoidal fields and ``k`` orthonormal scalars."""
    vecs, scal = [], []
    for _ in range(k):
        st = random_state(box, rng, 1.0, kscale)
        vecs.append(st.U.ravel())
        scal.append(st.Psi.ravel())
    c = math.sqrt(box.cell_volume)
    Qv, _ = np.linalg.qr(np.array(vecs).T * c)
    Qs, _ = np.linalg.qr(np.array(scal).T * c)
    phi = [(Qv[:, i] / c).reshape((3,) + (box.N,) * 3) for i in range(k)]
    beta = [(Qs[:, i] / c).reshape((box.N,) * 3) for i in range(k)]
    return phi, beta


def _gram_check(box, fields, name):
    k = len(fields)
    G = np.array([[sc.inner(box, fields[i], fields[j]) for j in range(k)] for i in range(k)])
    dev = float(np.max(np.abs(G - np.eye(k))))
    if dev > 1e-8:
        raise UsageError(f"{name} basis is not orthonormal (Gram deviation {dev:.2e})")
    return dev


def dense_coefficients(phi, beta, data, s=0.0):
    """Coefficient tensors of the Galerkin ODE for an explicit small basis.

    ``db_j/ds = sum_i A_ij b_i + B_ij q_i + sum_il C_ilj b_i b_l + D_j`` and the
    starred analogues for ``q``.  Each entry is a grid quadrature of the discrete
    operators used by :func:`rhs`.
    """
    box = data.box
    k = len(phi)
    if k > 32:
        raise UsageError("dense mode is limited to k <= 32")
    _gram_check(box, phi, "vector")
    _gram_check(box, beta, "scalar")
    bg = data.at(s)
    moll = data.mollifier
    Vb = bg.V if data.background else np.zeros_like(bg.V)

    def lin0(u):
        # -u/4 from (1/2)u + drift + sponge, as the discrete zeroth-order rate
        return sc.ifft(box, sc.drift_hat(box, u)) + 0.5 * u - box.sponge * u

    ephi = [moll(box, p) for p in phi]
    lap_phi = [sc.laplacian(box, sc.band_limit(box, p)) for p in phi]
    lap_beta = [sc.laplacian(box, sc.band_limit(box, b)) for b in beta]
    A = np.zeros((k, k))
    B = np.zeros((k, k))
    C = np.zeros((k, k, k))
    D = np.zeros(k)
    As = np.zeros((k, k))
    Bs = np.zeros((k, k))
    Cs = np.zeros((k, k, k))
    Ds = np.zeros(k)
    for i in range(k):
        t = lap_phi[i] + lin0(phi[i])
        if data.background:
            t = t - sc.convect(box, Vb, phi[i])
            t = t - np.einsum("j...,ij...->i...", ephi[i], bg.gradV)
        tb = lap_beta[i] + lin0(beta[i])
        if data.background:
            tb = tb - sc.convect(box, Vb, beta[i])
        gb = beta[i] * data.gravity if data.buoyancy else np.zeros_like(phi[0])
        ast = (-np.einsum("j...,j...->...", ephi[i], bg.gradTh)
               if data.background else np.zeros_like(beta[0]))
        for j in range(k):
            A[i, j] = sc.inner(box, t, phi[j])
            B[i, j] = sc.inner(box, gb, phi[j])
            As[i, j] = sc.inner(box, ast, beta[j])
            Bs[i, j] = sc.inner(box, tb, beta[j])
        if data.nonlinear:
            for l in range(k):
                cv = sc.convect(box, ephi[i], phi[l])
                cs = sc.convect(box, ephi[i], beta[l])
                for j in range(k):
                    C[i, l, j] = -sc.inner(box, cv, phi[j])
                    Cs[i, l, j] = -sc.inner(box, cs, beta[j])
    if data.sources:
        for j in range(k):
            D[j] = sc.inner(box, bg.Rb, phi[j])
            Ds[j] = sc.inner(box, bg.Rq, beta[j])
    return {"A": A, "B": B, "C": C, "D": D, "A*": As, "B*": Bs, "C*": Cs, "D*": Ds}


def dense_tendency(coef, b, q):
    db = coef["A"].T @ b + coef["B"].T @ q + np.einsum("ilj,i,l->j", coef["C"], b, b) + coef["D"]
    dq = (coef["A*"].T @ b + coef["B*"].T @ q + np.einsum("ilj,i,l->j", coef["C*"], b, q)
          + coef["D*"])
    return db, dq


def projected_tendency(phi, beta, b, q, data, s=0.0):
    """Matrix-free tendency at ``U = sum b_i phi_i``, ``Psi = sum q_i beta_i``, projected on the basis."""
    box = data.box
    U = sum(bi * p for bi, p in zip(b, phi))
    Psi = sum(qi * p for qi, p in zip(q, beta))
    dU, dP = rhs(GalerkinState(U, Psi, s), data)
    return (np.array([sc.inner(box, dU, p) for p in phi]),
            np.array([sc.inner(box, dP, p) for p in beta]))


# ---------------------------------------------------------------------------
# time stepping

def _phi_functions(z):
    """``phi1(z) = (e^z - 1)/z`` and ``phi2(z) = (e^z - 1 - z)/z**2`` for ``z <= 0``."""
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 0.1
    zs = np.where(small, 1.0, z)
    p1 = np.where(small, 0.0, np.expm1(zs) / zs)
    p2 = np.where(small, 0.0, (np.expm1(zs) - zs) / zs**2)
    # Taylor series near zero
    zz = np.where(small, z, 0.0)
    s1 = np.zeros_like(zz)
    s2 = np.zeros_like(zz)
    for n in range(12):
        s1 += zz**n / math.factorial(n + 1)
        s2 += zz**n / math.factorial(n + 2)
    p1 = np.where(small, s1, p1)
    p2 = np.where(small, s2, p2)
    return p1, p2


class Integrator:
    """Exponential two-stage scheme: the Laplacian is integrated exactly per mode.

    One step of size ``h`` (Cox-Matthews second-order exponential Runge-Kutta):
        a       = E u + h phi1 N(u, s)
        u_next  = a + h phi2 (N(a, s + h) - N(u, s))
    with ``E = exp(-|k|**2 h)``.  Steady states of s-independent data are
    fixed points of the discrete step.
    """

    def __init__(self, data, ds):
        if not ds > 0:
            raise ParameterError("step size must be positive")
        self.data = data
        self.ds = float(ds)
        limit = stability_limit(data)
        if ds > limit:
            raise ParameterError(f"ds={ds:.4g} exceeds the advisory stability limit {limit:.4g}")
        z = -data.box.k2 * ds
        self.E = np.exp(z)
        self.p1, self.p2 = _phi_functions(z)

    def step_hat(self, Uh, Ph, s):
        h = self.ds
        NU, NP = explicit_hat(self.data, Uh, Ph, s)
        aU = self.E * Uh + h * self.p1 * NU
        aP = self.E * Ph + h * self.p1 * NP
        NU2, NP2 = explicit_hat(self.data, aU, aP, s + h)
        Un = aU + h * self.p2 * (NU2 - NU)
        Pn = aP + h * self.p2 * (NP2 - NP)
        return sc.leray_hat(self.data.box, Un), Pn


def stability_limit(data):
    """Advisory step bound ``2 / (kmax (max|Vb| + max|y~|/2 + 1))`` for the explicit terms."""
    box = data.box
    vmax = max(float(np.max(np.sqrt(np.sum(bg.V**2, axis=0)))) for bg in data.samples)
    ymax = float(np.max(np.sqrt(np.sum(box.drift_coord**2, axis=0))))
    return 2.0 / (math.sqrt(3.0) * box.kmax * (vmax + 0.5 * ymax) + 1.0)


def step(state, data, ds, integrator=None):
    """Advance one step; raises :class:`DivergenceError` on non-finite output."""
    it = integrator if integrator is not None and integrator.ds == ds else Integrator(data, ds)
    box = data.box
    Uh = sc.leray_hat(box, sc.truncate(box, sc.fft(box, state.U)))
    Ph = sc.truncate(box, sc.fft(box, state.Psi))
    Un, Pn = it.step_hat(Uh, Ph, state.s)
    U, P = sc.ifft(box, Un), sc.ifft(box, Pn)
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(P))):
        raise DivergenceError(f"non-finite state at s={state.s + ds:.6g}")
    return GalerkinState(U, P, state.s + ds)


# ---------------------------------------------------------------------------
# ledger

LEDGER_COLUMNS = ("s", "a", "A", "b", "B", "f", "res_mom", "res_temp", "shell_frac")


class EnergyLedger:
    """Per-step norms, energy-identity residuals and the Gronwall monitor."""

    def __init__(self, data, slack=0.1):
        self.data = data
        self.rows = []
        self.warnings = []
        self.slack = slack
        self.s0 = None
        self.f0 = None

    def as_array(self, col):
        return np.array([r[col] for r in self.rows])

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(LEDGER_COLUMNS)
            for r in self.rows:
                wr.writerow([repr(float(r[c])) for c in LEDGER_COLUMNS])
        return path

    @staticmethod
    def read_csv(path):
        with open(path) as fh:
            rd = csv.DictReader(fh)
            return [{k: float(v) for k, v in row.items()} for row in rd]


def ledger_update(state, data, ledger, tendency=None):
    """Append one row for ``state`` and run the Gronwall monitor (warnings only)."""
    box = data.box
    a = sc.l2_norm(box, state.U) ** 2
    b = sc.l2_norm(box, state.Psi) ** 2
    A = a + sc.h1_seminorm(box, state.U) ** 2
    B = b + sc.h1_seminorm(box, state.Psi) ** 2
    m2 = data.m**2
    f = a + m2 * b
    rm, rt, _, _ = energy_residuals(state, data, tendency)
    shell = box.shell_mask()
    tot = a + b
    sh = (np.sum(state.U[:, shell] ** 2) + np.sum(state.Psi[shell] ** 2)) * box.cell_volume
    shell_frac = float(sh / tot) if tot > 0 else 0.0
    row = {"s": state.s, "a": a, "A": A, "b": b, "B": B, "f": f, "res_mom": rm,
           "res_temp": rt, "shell_frac": shell_frac}
    if not all(np.isfinite(v) for v in row.values()):
        ledger.warnings.append(f"non-finite ledger entry at s={state.s:.6g}")
    if ledger.s0 is None:
        ledger.s0, ledger.f0 = state.s, f
    else:
        C3 = data.constants.get("C3", 0.0)
        env = math.exp(-(state.s - ledger.s0) / 8.0) * ledger.f0 + 8.0 * C3 * (1.0 + ledger.slack)
        if f > env * (1.0 + 1e-12) + 1e-300:
            ledger.warnings.append(f"Gronwall envelope exceeded at s={state.s:.6g}: f={f:.4g} > {env:.4g}")
    if shell_frac > 1e-4:
        msg = "boundary shell holds more than 1e-4 of the deviation energy"
        if msg not in ledger.warnings:
            ledger.warnings.append(msg)
    ledger.rows.append(row)
    return ledger


def integrate(state, data, ds, n_steps, ledger=None, integrator=None, record_every=0):
    """Integrate ``n_steps`` steps; optionally record every ``record_every`` steps."""
    it = integrator if integrator is not None else Integrator(data, ds)
    box = data.box
    Uh = sc.leray_hat(box, sc.truncate(box, sc.fft(box, state.U)))
    Ph = sc.truncate(box, sc.fft(box, state.Psi))
    s = state.s
    snaps = []
    cur = GalerkinState(sc.ifft(box, Uh), sc.ifft(box, Ph), s)
    if ledger is not None:
        ledger_update(cur, data, ledger)
    if record_every:
        snaps.append(cur)
    for n in range(n_steps):
        Uh, Ph = it.step_hat(Uh, Ph, s)
        s = state.s + (n + 1) * ds
        if ledger is not None or (record_every and (n + 1) % record_every == 0):
            cur = GalerkinState(sc.ifft(box, Uh), sc.ifft(box, Ph), s)
            if not (np.all(np.isfinite(cur.U)) and np.all(np.isfinite(cur.Psi))):
                raise DivergenceError(f"non-finite state at s={s:.6g}", ledger)
            if ledger is not None:
                ledger_update(cur, data, ledger)
            if record_every and (n + 1) % record_every == 0:
                snaps.append(cur)
    out = GalerkinState(sc.ifft(box, Uh), sc.ifft(box, Ph), s)
    if not (np.all(np.isfinite(out.U)) and np.all(np.isfinite(out.Psi))):
        raise DivergenceError(f"non-finite state at s={s:.6g}", ledger)
    return (out, snaps) if record_every else out


def differenced_identity(state, data, ds):
    """Compare a one-sided second-order difference of ``|U|**2/2`` with ``<rhs, U>``.

    Returns ``(res_mom, res_temp)``; both are ``O(ds**2)``.
    """
    box = data.box
    it = Integrator(data, ds)
    st = state.admissible(box)
    one = step(st, data, ds, it)
    two = step(one, data, ds, it)
    out = []
    dU, dP = rhs(st, data)
    for get, d in ((lambda z: z.U, dU), (lambda z: z.Psi, dP)):
        n0, n1, n2 = (sc.l2_norm(box, get(z)) ** 2 for z in (st, one, two))
        out.append(0.5 * (-3 * n0 + 4 * n1 - n2) / (2 * ds) - sc.inner(box, d, get(st)))
    return tuple(out)


# ---------------------------------------------------------------------------
# trilinear cancellations

def trilinear(box, a, b):
    """``(<(a.grad) b, b>, scale)`` with the discrete skew convection.

    ``scale = max|a| ||grad b|| ||b||`` bounds the pairing in size.
    """
    val = sc.inner(box, sc.convect(box, a, b), b)
    amax = float(np.max(np.sqrt(np.sum(a * a, axis=0))))
    scale = amax * sc.h1_seminorm(box, b) * sc.l2_norm(box, b)
    return val, scale


def cancellation_residuals(state, data):
    """Relative sizes of the three trilinear pairings that must vanish."""
    box = data.box
    eU = data.mollifier(box, state.U)
    out = {}
    for name, a, b in (("etaU_U_U", eU, state.U), ("etaU_Psi_Psi", eU, state.Psi),
                       ("Vstar_U_U", data.at(state.s).V, state.U)):
        val, scale = trilinear(box, a, b)
        out[name] = abs(val) / scale if scale > 0 else abs(val)
    return out
