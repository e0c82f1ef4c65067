"""Revised background profiles: cut off the heat profile inside a ball and restore
solenoidality with a Newtonian-potential correction.

``V* = xi V0 + w`` with ``w = grad (Gamma * (grad xi . V0))`` and
``Gamma = 1/(4 pi |y|)``; ``Theta* = xi Theta0``.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .errors import ConvergenceError, GeometryError, ParameterError
from . import fileio
from . import heat_profiles as hp
from . import spectral_core as sc


class Cutoff:
    """``xi(y) = Z(|y|/R0)`` with ``Z`` the exp(-1/t) smooth step from 1/2 to 1."""

    def __init__(self, R0):
        if not R0 > 0:
            raise ParameterError("cutoff radius must be positive")
        self.R0 = float(R0)

    def _t(self, r):
        return 2.0 * np.asarray(r) / self.R0 - 1.0

    def radial(self, r):
        """``(xi, dxi/dr, d2xi/dr2)`` as functions of ``r = |y|``."""
        t = self._t(r)
        a = 2.0 / self.R0
        return sc.smooth_step(t), a * sc.smooth_step_deriv(t), a * a * sc.smooth_step_deriv2(t)

    def __call__(self, y):
        return self.radial(np.linalg.norm(y, axis=-1))[0]

    def on_box(self, box):
        """``xi``, ``grad xi`` (3,...), Hessian (3,3,...) and Laplacian on the grid."""
        r = box.radius
        xi, d1, d2 = self.radial(r)
        rs = np.where(r > 0, r, 1.0)
        yhat = box.coords / rs
        grad = yhat * d1
        eye = np.eye(3).reshape(3, 3, 1, 1, 1)
        yy = yhat[:, None] * yhat[None, :]
        hess = d2 * yy + (d1 / rs) * (eye - yy)
        lap = d2 + 2.0 * d1 / rs
        return xi, grad, hess, lap


# ---------------------------------------------------------------------------
# free-space Newtonian potential

def newton_correction(source, box, support_radius, return_all=False):
    """``w = grad (Gamma * source)`` for a source supported in ``|y| <= support_radius``.

    The convolution runs on a zero-padded grid of twice the box width.  The
    kernel is ``1/(4 pi |y|)`` truncated at ``D = L + support_radius`` with the
    exact transform ``(1 - cos(|k| D)) / |k|**2``.  For target points in the
    ball ``|y| <= L`` the truncation is invisible, and periodic images of the
    padded grid stay outside that ball; values in the box corners beyond
    ``|y| = L`` are not reliable (background fields are tapered to zero there).

    Returns ``w`` or, with ``return_all``, ``(w, grad_w, div_w, lap_w)`` where
    ``grad_w[i, j] = d_j w_i``.
    """
    src = np.asarray(source, dtype=float)
    if support_radius + 2.0 * box.h > box.L:
        raise GeometryError(
            f"source support radius {support_radius} leaves no margin inside box L={box.L}")
    outside = box.radius > support_radius
    if np.any(np.abs(src[outside]) > 1e-14 * max(np.max(np.abs(src)), 1e-300)):
        raise GeometryError("source is not supported inside the stated radius")
    N, h = box.N, box.h
    M = 2 * N
    pad = np.zeros((M, M, M))
    off = N // 2
    pad[off:off + N, off:off + N, off:off + N] = src
    k1 = 2.0 * np.pi * np.fft.fftfreq(M, d=h)
    kr = 2.0 * np.pi * np.fft.rfftfreq(M, d=h)
    ka, kb, kc = np.meshgrid(k1, k1, kr, indexing="ij", sparse=True)
    kmag = np.sqrt(ka**2 + kb**2 + kc**2)
    D = box.L + support_radius
    ks = np.where(kmag > 0, kmag, 1.0)
    ghat_kernel = np.where(kmag > 0, (1.0 - np.cos(kmag * D)) / ks**2, 0.5 * D * D)
    # derivative wavenumbers without Nyquist, matching the box operators
    kd = [k1.copy(), k1.copy(), kr.copy()]
    kd[0][M // 2] = kd[1][M // 2] = 0.0
    kd[2][-1] = 0.0
    kda, kdb, kdc = np.meshgrid(kd[0], kd[1], kd[2], indexing="ij", sparse=True)
    kds = (kda, kdb, kdc)
    # the padded grid is shifted so that the origin sits at index N (as on the box)
    src_hat = sfft.rfftn(np.roll(pad, 0, axis=(0, 1, 2)), workers=box.threads)
    phi_hat = ghat_kernel * src_hat
    sl = slice(off, off + N)

    def back(fh):
        return sfft.irfftn(fh, s=(M, M, M), workers=box.threads)[sl, sl, sl]

    w = np.stack([back(1j * k * phi_hat) for k in kds])
    if not return_all:
        return w
    grad_w = np.stack([np.stack([back(-ki * kj * phi_hat) for kj in kds]) for ki in kds])
    div_w = grad_w[0, 0] + grad_w[1, 1] + grad_w[2, 2]
    k2 = ka**2 + kb**2 + kc**2
    lap_w = np.stack([back(-1j * k * k2 * phi_hat) for k in kds])
    return w, grad_w, div_w, lap_w


# ---------------------------------------------------------------------------
# revision

@dataclass
class RevisedProfilePair:
    """Revised background with its certificates.

    ``V_star``/``Theta_star`` carry values and gradients; ``LV_star`` and
    ``LTheta_star`` hold ``L`` of the revised fields at the same s-samples.
    """

    V_star: hp.SimilarityProfile
    Theta_star: hp.SimilarityProfile
    LV_star: np.ndarray
    LTheta_star: np.ndarray
    w: np.ndarray
    R0: float
    certificates: dict = dc_field(default_factory=dict)

    @property
    def box(self):
        return self.V_star.box

    @property
    def stationary(self):
        return self.V_star.stationary and self.Theta_star.stationary

    def scaled(self, c):
        return RevisedProfilePair(self.V_star.scaled(c), self.Theta_star.scaled(c),
                                  c * self.LV_star, c * self.LTheta_star, c * self.w, self.R0,
                                  dict(self.certificates))


def _commutator_L(box, xi, gxi, lapxi, u, gu):
    """``L(xi u) - xi L u`` = -(lap xi) u - 2 (grad xi . grad) u - (1/2)(y . grad xi) u."""
    ydgx = np.einsum("j...,j...->...", box.coords, gxi)
    if u.ndim == 3:
        cross = np.einsum("j...,j...->...", gxi, gu)
    else:
        cross = np.einsum("j...,ij...->i...", gxi, gu)
    return -lapxi * u - 2.0 * cross - 0.5 * ydgx * u


def revise(V0, Theta0, R0, alpha=None, q=10.0 / 3.0):
    """Build ``(V*, Theta*)`` from profiles sampled on the box, with certificates."""
    box = V0.box
    if R0 < 1.0:
        raise ParameterError("R0 must be at least 1")
    if R0 + 2.0 * box.h > box.L:
        raise GeometryError(f"cutoff radius R0={R0} does not fit in box L={box.L}; enlarge L")
    if V0.grads is None or Theta0.grads is None:
        raise ParameterError("revision needs profile gradients")
    cut = Cutoff(R0)
    xi, gxi, hxi, lapxi = cut.on_box(box)
    y = box.coords
    stationary = V0.stationary and Theta0.stationary
    s_nodes = V0.s if not V0.stationary else Theta0.s
    if V0.stationary and not Theta0.stationary:
        s_nodes = Theta0.s
    n_s = len(s_nodes)
    Vs, gVs, Ts, gTs, ws, divres, lapres, gsrc = [], [], [], [], [], [], [], []
    for s in s_nodes:
        v0 = V0.at(s)
        gv0 = V0.grad_at(s)
        th0 = Theta0.at(s)
        gth0 = Theta0.grad_at(s)
        g = np.einsum("j...,j...->...", gxi, v0)
        # the source lives on the shell R0/2 <= |y| <= R0
        g = np.where(box.radius <= R0, g, 0.0)
        w, gw, divw, lapw = newton_correction(g, box, R0, return_all=True)
        gg1 = np.einsum("ji...,j...->i...", hxi, v0)
        gg2 = np.einsum("ji...,j...->i...", gv0, gxi)
        grad_g = gg1 + gg2
        vstar = xi * v0 + w
        gvstar = xi * gv0 + v0[:, None] * gxi[None, :] + gw
        tstar = xi * th0
        gtstar = xi * gth0 + th0 * gxi
        ball = box.radius <= box.L
        div = g + xi * np.einsum("ii...->...", gv0) + divw
        vmax = max(np.max(np.sqrt(np.sum(v0**2, axis=0))[ball]), 1e-300)
        divres.append(float(np.max(np.abs(div[ball])) / vmax))
        # scale by the two pieces of grad g so cancellation to zero is not divided by noise
        gnorm = np.sqrt(np.sum(gg1[:, ball] ** 2)) + np.sqrt(np.sum(gg2[:, ball] ** 2))
        lres = np.sqrt(np.sum((lapw + grad_g)[:, ball] ** 2))
        lapres.append(float(lres / gnorm) if gnorm > 0 else 0.0)
        Vs.append(vstar)
        gVs.append(gvstar)
        Ts.append(tstar)
        gTs.append(gtstar)
        ws.append(w)
        gsrc.append(grad_g)
    Vs, gVs, Ts, gTs, ws = map(np.array, (Vs, gVs, Ts, gTs, ws))
    # s-derivative of w for s-dependent data
    if stationary:
        dws = np.zeros_like(ws)
    else:
        freqs = np.fft.fftfreq(n_s, d=1.0 / n_s) * 2.0 * np.pi / V0.period
        if n_s % 2 == 0:
            freqs[n_s // 2] = 0.0
        shp = (n_s,) + (1,) * (ws.ndim - 1)
        dws = np.real(np.fft.ifft(1j * freqs.reshape(shp) * np.fft.fft(ws, axis=0), axis=0))
    LV, LT = [], []
    for i, s in enumerate(s_nodes):
        v0, gv0 = V0.at(s), V0.grad_at(s)
        th0, gth0 = Theta0.at(s), Theta0.grad_at(s)
        gw = gVs[i] - xi * gv0 - v0[:, None] * gxi[None, :]
        # L w = d_s w - lap w - w/2 - (1/2) y.grad w, with lap w = -grad g
        Lw = dws[i] + gsrc[i] - 0.5 * ws[i] - 0.5 * np.einsum("j...,ij...->i...", y, gw)
        LV.append(_commutator_L(box, xi, gxi, lapxi, v0, gv0) + Lw)
        LT.append(_commutator_L(box, xi, gxi, lapxi, th0, gth0))
    LV, LT = np.array(LV), np.array(LT)
    meta = {"R0": R0}
    Vp = hp.SimilarityProfile("vector3", box, s_nodes, Vs, V0.period, stationary, gVs,
                              V0.tolerance, dict(V0.meta, **meta))
    Tp = hp.SimilarityProfile("scalar", box, s_nodes, Ts, V0.period, stationary, gTs,
                              Theta0.tolerance, dict(Theta0.meta, **meta))
    pair = RevisedProfilePair(Vp, Tp, LV, LT, ws, float(R0))
    pair.certificates = certify(pair, V0, Theta0, divres, lapres, alpha, q)
    return pair


def combined_lq(pair, q):
    """``sup_s || |V*| + |Theta*| ||_{L^q}`` over the box ball plus a ``C/|y|`` tail beyond it."""
    box = pair.box
    best = 0.0
    ball = box.radius <= box.L
    shell = (box.radius >= 0.5 * box.L) & ball
    for i in range(len(pair.V_star.s)):
        mag = np.sqrt(np.sum(pair.V_star.values[i] ** 2, axis=0)) + np.abs(pair.Theta_star.values[i])
        C = float(np.max(box.radius[shell] * mag[shell]))
        val = np.sum(mag[ball] ** q) * box.cell_volume
        val += 4.0 * np.pi * C**q * box.L ** (3.0 - q) / (q - 3.0)
        best = max(best, val ** (1.0 / q))
    return best


def certify(pair, V0, Theta0, divres, lapres, alpha, q):
    box = pair.box
    ball = box.radius <= box.L
    lq = combined_lq(pair, q)
    l4 = 0.0
    lv = lt = dv = 0.0
    shell_frac = 1.0
    cut = Cutoff(pair.R0)
    _, gxi, _, _ = cut.on_box(box)
    on_shell = np.sum(gxi**2, axis=0) > 0
    for i, s in enumerate(pair.V_star.s):
        mag = (np.sqrt(np.sum(pair.V_star.values[i] ** 2, axis=0))
               + np.abs(pair.Theta_star.values[i]))
        l4 = max(l4, float((np.sum(mag[ball] ** 4) * box.cell_volume) ** 0.25))
        lv = max(lv, sc.l2_norm(box, pair.LV_star[i] * ball))
        lt = max(lt, sc.l2_norm(box, pair.LTheta_star[i] * ball))
        dv = max(dv, sc.l2_norm(box, (pair.V_star.values[i] - V0.at(s)) * ball))
        tot = np.sum(pair.LTheta_star[i][ball] ** 2)
        if tot > 0:
            shell_frac = min(shell_frac, float(np.sum(pair.LTheta_star[i][ball & on_shell] ** 2) / tot))
    return {
        "R0": pair.R0,
        "q": q,
        "div_residual": float(max(divres)),
        "laplace_identity_residual": float(max(lapres)),
        "Lq_norm": lq,
        "L4_norm": l4,
        "L_Vstar_norm": lv,
        "L_Thetastar_norm": lt,
        "Vstar_minus_V0_L2": dv,
        "LTheta_shell_fraction": shell_frac,
        "w_decay_exponent": w_decay_exponent(box, pair.w[0], pair.R0),
        "alpha_target": None if alpha is None else float(alpha),
    }


def w_decay_exponent(box, w, R0):
    """Decay exponent of ``max |w|`` across successive dyadic shells beyond ``R0``."""
    mag = np.sqrt(np.sum(w**2, axis=0))
    r = box.radius
    exps = []
    rad = R0
    while 2 * rad <= box.L:
        a = mag[(r >= rad) & (r < 2 * rad)]
        b = mag[(r >= 2 * rad) & (r < min(4 * rad, box.L))]
        if a.size and b.size and np.max(a) > 1e-300 and np.max(b) > 1e-300:
            exps.append(np.log2(np.max(a) / np.max(b)))
        rad *= 2
    return float(min(exps)) if exps else float("inf")


def default_alpha(V0):
    """Heuristic ``0.05 (1 + ||V0||_{L^4})`` over the box ball."""
    box = V0.box
    ball = box.radius <= box.L
    mag = np.sqrt(np.sum(V0.values[0] ** 2, axis=0))
    return 0.05 * (1.0 + float((np.sum(mag[ball] ** 4) * box.cell_volume) ** 0.25))


def choose_R0(V0, Theta0, alpha, q=10.0 / 3.0, R_max=None):
    """Smallest ``R0`` in ``2, 4, 8, ...`` with ``|| |V*| + |Theta*| ||_{L^q} <= alpha``.

    Returns ``(R0, history)`` where history lists ``(R0, norm)`` pairs.
    """
    if not 3.0 < q < 4.0:
        raise ParameterError("q must lie strictly between 3 and 4")
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    box = V0.box
    if R_max is None:
        R_max = box.L / 2.0
    history = []
    R0 = 2.0
    while R0 <= R_max:
        if np.isinf(alpha):
            return R0, history
        pair = revise(V0, Theta0, R0, alpha, q)
        val = pair.certificates["Lq_norm"]
        history.append((R0, val))
        if val <= alpha:
            return R0, history
        R0 *= 2.0
    best = min(v for _, v in history) if history else float("nan")
    raise ConvergenceError(
        f"L^{q:.4g} target alpha={alpha:.4g} not reached for R0 <= {R_max:g} "
        f"(achieved {best:.4g}); enlarge the box half-width L",
        achieved=best, history=history)


def save_pair(prefix, pair):
    """Write the revised pair as ``prefix.*`` array files; returns the paths."""
    hp.save_profile(prefix + ".Vstar", pair.V_star)
    hp.save_profile(prefix + ".Thetastar", pair.Theta_star)
    head = {"R0": pair.R0, "L": pair.box.L, "N": pair.box.N}
    fileio.write_array(prefix + ".LVstar", head, pair.LV_star)
    fileio.write_array(prefix + ".LThetastar", head, pair.LTheta_star)
    fileio.write_array(prefix + ".w", head, pair.w)
    fileio.write_json(prefix + ".certificates.json", pair.certificates)
    return [prefix + ext for ext in (".Vstar", ".Vstar.grad", ".Thetastar", ".Thetastar.grad",
                                     ".LVstar", ".LThetastar", ".w", ".certificates.json")]


def load_pair(prefix):
    import json
    V = hp.load_profile(prefix + ".Vstar")
    T = hp.load_profile(prefix + ".Thetastar")
    head, LV = fileio.read_array(prefix + ".LVstar")
    _, LT = fileio.read_array(prefix + ".LThetastar")
    _, w = fileio.read_array(prefix + ".w")
    with open(prefix + ".certificates.json") as fh:
        cert = json.load(fh)
    T.box = V.box
    return RevisedProfilePair(V, T, LV, LT, w, float(head["R0"]), cert)
