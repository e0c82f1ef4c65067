"""Heat-flow profiles of scaling-critical data in similarity variables.

The heat solution is evaluated by expanding the data in spherical harmonics
on each radius and integrating the angular part of the Gaussian kernel in
closed form (modified spherical Bessel functions).  Radii are grouped into
the dyadic annuli ``lam**k * {1 <= |z| < lam}``; annuli are added from the
origin outward until both the inner ball and the Gaussian tail are below
the requested tolerance.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import ive, roots_legendre, sph_harm_y

from .errors import ConvergenceError, ParameterError, UsageError
from . import fileio
from . import spectral_core as sc

GL_NODES = 12


def _reduced_sph_in(l, z):
    """``i_l(z) * exp(-z)``, stable for large ``z``; ``delta_{l0}`` at ``z = 0``."""
    z = np.asarray(z, dtype=float)
    pos = z > 0
    zs = np.where(pos, z, 1.0)
    val = np.sqrt(np.pi / (2.0 * zs)) * ive(l + 0.5, zs)
    return np.where(pos, val, 1.0 if l == 0 else 0.0)


def _sphere_rule(lmax):
    """Gauss-Legendre in cos(theta) times trapezoid in phi, exact to degree ``2 lmax``."""
    nt = lmax + 2
    nphi = 2 * lmax + 3
    mu, wmu = roots_legendre(nt)
    theta = np.arccos(mu)
    phi = 2.0 * np.pi * np.arange(nphi) / nphi
    TH, PH = np.meshgrid(theta, phi, indexing="ij")
    W = np.outer(wmu, np.full(nphi, 2.0 * np.pi / nphi))
    dirs = np.stack([np.sin(TH) * np.cos(PH), np.sin(TH) * np.sin(PH), np.cos(TH)], axis=-1)
    return dirs.reshape(-1, 3), TH.reshape(-1), PH.reshape(-1), W.reshape(-1)


def _lm_list(lmax):
    return [(l, m) for l in range(lmax + 1) for m in range(-l, l + 1)]


def _radial_nodes(R_max, t, lam, amp, tol, max_annuli):
    """Composite Gauss-Legendre nodes on dyadic annuli covering the kernel support."""
    sig = np.sqrt(t)
    r_hi = R_max + 2.0 * sig * (np.sqrt(max(-np.log(tol), 1.0)) + 3.0)
    scale = amp / max(R_max, sig)
    # inner ball: |data| <= amp/|z| gives at most (4 pi t)**-1.5 * 2 pi amp r**2
    r_lo = np.sqrt(tol * scale * (4.0 * np.pi * t) ** 1.5 / (2.0 * np.pi * amp))
    r_lo = min(r_lo, 0.5 * sig)
    k_lo = int(np.floor(np.log(r_lo) / np.log(lam)))
    k_hi = int(np.ceil(np.log(r_hi) / np.log(lam)))
    if k_hi - k_lo > max_annuli:
        gauss = np.exp(-((lam ** (k_lo + max_annuli) - R_max) ** 2) / (4 * t))
        raise ConvergenceError(
            f"heat quadrature needs {k_hi - k_lo} annuli (budget {max_annuli})",
            achieved=float(gauss))
    x, w = roots_legendre(GL_NODES)
    nodes, weights = [], []
    for k in range(k_lo, k_hi):
        a, b = lam**k, min(lam ** (k + 1), r_hi)
        if b <= a:
            break
        if b <= sig:
            # log-radial panel resolves the |z|^-1 singularity region
            la, lb = np.log(a), np.log(b)
            lr = 0.5 * (lb - la) * x + 0.5 * (lb + la)
            r = np.exp(lr)
            nodes.append(r)
            weights.append(0.5 * (lb - la) * w * r)
        else:
            npan = int(np.ceil((b - a) / (0.5 * sig)))
            edges = np.linspace(a, b, npan + 1)
            for p in range(npan):
                lo, hi = edges[p], edges[p + 1]
                nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
                weights.append(0.5 * (hi - lo) * w)
    return np.concatenate(nodes), np.concatenate(weights), (k_lo, k_hi)


def _heat_core(funcs_eval, ncomp, lmax, amp, lam, points, t, tol, max_annuli):
    """Heat semigroup applied to ``ncomp`` scalar functions at ``points``.

    ``funcs_eval(z)`` returns ``(M, ncomp)`` values at points ``z`` of shape ``(M, 3)``.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    R = np.linalg.norm(pts, axis=-1)
    R_max = float(np.max(R)) if R.size else 0.0
    rn, rw, _ = _radial_nodes(R_max, t, lam, amp, tol, max_annuli)
    dirs, TH, PH, W = _sphere_rule(lmax)
    lms = _lm_list(lmax)
    Yq = np.stack([sph_harm_y(l, m, TH, PH) for (l, m) in lms], axis=-1)  # (nq, nlm)
    # data on all radial shells
    z = rn[:, None, None] * dirs[None, :, :]
    vals = np.asarray(funcs_eval(z.reshape(-1, 3)), dtype=float).reshape(len(rn), len(W), ncomp)
    alm = np.einsum("rqc,q,ql->rlc", vals, W, np.conj(Yq))  # (nr, nlm, ncomp)

    Ru, inv = np.unique(R, return_inverse=True)
    pref = (4.0 * np.pi * t) ** -1.5 * 4.0 * np.pi
    gauss = np.exp(-((Ru[:, None] - rn[None, :]) ** 2) / (4.0 * t)) * (rn**2 * rw)[None, :]
    zarg = Ru[:, None] * rn[None, :] / (2.0 * t)
    clm = np.zeros((len(Ru), len(lms), ncomp), dtype=complex)
    for l in range(lmax + 1):
        K = pref * gauss * _reduced_sph_in(l, zarg)
        idx = slice(l * l, (l + 1) ** 2)
        clm[:, idx, :] = np.einsum("ur,rlc->ulc", K, alm[:, idx, :])
    # directions of targets (arbitrary at the origin, where only l = 0 survives)
    Rs = np.where(R > 0, R, 1.0)
    ct = np.clip(np.where(R > 0, pts[:, 2] / Rs, 1.0), -1.0, 1.0)
    th = np.arccos(ct)
    ph = np.mod(np.arctan2(pts[:, 1], pts[:, 0]), 2.0 * np.pi)
    out = np.zeros((len(pts), ncomp))
    chunk = 8192
    for i0 in range(0, len(pts), chunk):
        sl = slice(i0, i0 + chunk)
        Yt = np.stack([sph_harm_y(l, m, th[sl], ph[sl]) for (l, m) in lms], axis=-1)
        out[sl] = np.real(np.einsum("pl,plc->pc", Yt, clm[inv[sl]]))
    return out


def _field_evaluator(data, with_moments):
    nc = data.ncomp

    def ev(z):
        v = np.asarray(data(z), dtype=float).reshape(len(z), nc)
        if not with_moments:
            return v
        mom = (z[:, :, None] * v[:, None, :]).reshape(len(z), 3 * nc)
        return np.concatenate([v, mom], axis=1)

    return ev


def heat_evaluate(data, x, t, tol=1e-12, with_grad=False, max_annuli=400, lmax=None):
    """``(4 pi t)**-1.5 int exp(-|x-z|**2/(4t)) data(z) dz`` at points ``x``.

    ``x`` may be a single point or an array ``(M, 3)``.  With ``with_grad`` the
    spatial gradient is also returned, obtained from the first moments via
    ``grad u = (e^{t Delta}[z data] - x u) / (2 t)``; vector gradients are
    indexed ``[..., i, j] = d_j u_i``.
    """
    if not t > 0:
        raise ParameterError("heat evaluation needs t > 0")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    nc = data.ncomp
    deg = data.angular_degree if lmax is None else lmax
    deg = deg + (1 if with_grad else 0)
    amp = data.amplitude_bound()
    ev = _field_evaluator(data, with_grad)
    ncols = nc * (4 if with_grad else 1)
    res = _heat_core(ev, ncols, deg, amp, data.lam, pts, t, tol, max_annuli)
    u = res[:, :nc]
    out_u = u[:, 0] if data.kind == "scalar" else u
    if single:
        out_u = out_u[0]
    if not with_grad:
        return out_u
    mom = res[:, nc:].reshape(len(pts), 3, nc)  # [p, j, c] = heat(z_j d_c)
    grad = (mom - pts[:, :, None] * u[:, None, :]) / (2.0 * t)  # [p, j, c]
    grad = np.transpose(grad, (0, 2, 1))  # [p, c, j]
    if data.kind == "scalar":
        grad = grad[:, 0, :]
    if single:
        grad = grad[0]
    return out_u, grad


def profile(data, y, s, tol=1e-12, with_grad=False):
    """Similarity profile ``sqrt(t) * (e^{t Delta} data)(sqrt(t) y)`` with ``t = e**s``."""
    t = float(np.exp(s))
    st = np.sqrt(t)
    y = np.asarray(y, dtype=float)
    res = heat_evaluate(data, st * y, t, tol=tol, with_grad=with_grad)
    if not with_grad:
        return st * res
    u, g = res
    return st * u, t * g


# ---------------------------------------------------------------------------
# profiles sampled on the solver box

@dataclass
class SimilarityProfile:
    """Profile samples on the box at log-times ``s``.

    ``values`` has shape ``(n_s, N, N, N)`` or ``(n_s, 3, N, N, N)``; ``grads``
    (optional) adds a trailing derivative axis before the grid axes.
    ``stationary`` marks s-independent profiles stored with a single sample.
    """

    kind: str
    box: sc.BoxSpec
    s: np.ndarray
    values: np.ndarray
    period: float
    stationary: bool = False
    grads: np.ndarray = None
    tolerance: float = 0.0
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_s(self):
        return len(self.s)

    def at(self, s):
        """Trigonometric interpolation in s (exact at the stored samples)."""
        return _trig_eval(self.values, self.s, self.period, s, self.stationary)

    def grad_at(self, s):
        if self.grads is None:
            raise UsageError("profile was computed without gradients")
        return _trig_eval(self.grads, self.s, self.period, s, self.stationary)

    def ds_at(self, s):
        """Exact s-derivative of the trigonometric interpolant."""
        if self.stationary:
            return np.zeros_like(self.values[0])
        return _trig_eval(self.values, self.s, self.period, s, False, deriv=1)

    def scaled(self, c):
        g = None if self.grads is None else c * self.grads
        return SimilarityProfile(self.kind, self.box, self.s, c * self.values, self.period,
                                 self.stationary, g, self.tolerance, dict(self.meta))


def _trig_eval(samples, s_nodes, period, s, stationary, deriv=0):
    if stationary or len(s_nodes) == 1:
        return samples[0] if deriv == 0 else np.zeros_like(samples[0])
    n = len(s_nodes)
    # equispaced nodes starting at s_nodes[0]
    coef = np.fft.fft(samples, axis=0) / n
    freqs = np.fft.fftfreq(n, d=1.0 / n)
    omega = 2.0 * np.pi / period
    ph = (s - s_nodes[0]) * omega
    w = np.exp(1j * freqs * ph)
    if n % 2 == 0:
        w[n // 2] = np.cos(n // 2 * ph)
    if deriv:
        w = w * (1j * freqs * omega) ** deriv
        if n % 2 == 0:
            w[n // 2] = -(n // 2 * omega) * np.sin(n // 2 * ph) if deriv == 1 else 0.0
    return np.real(np.tensordot(w, coef, axes=(0, 0)))


def s_samples(period, n_s):
    return period * np.arange(n_s) / n_s


def compute_profile(data, box, n_s=16, tol=1e-12, with_grad=True):
    """Sample the profile of ``data`` on the box grid.

    Homogeneous data give an s-independent profile stored once.
    """
    T = data.scale.period_T
    stationary = bool(data.homogeneous)
    s_nodes = np.array([0.0]) if stationary else s_samples(T, n_s)
    pts = box.coords.reshape(3, -1).T
    vals, grads = [], []
    shape = box.coords.shape[1:]
    for s in s_nodes:
        res = profile(data, pts, s, tol=tol, with_grad=with_grad)
        u, g = res if with_grad else (res, None)
        if data.kind == "scalar":
            vals.append(u.reshape(shape))
            if with_grad:
                grads.append(np.moveaxis(g, -1, 0).reshape((3,) + shape))
        else:
            vals.append(np.moveaxis(u, -1, 0).reshape((3,) + shape))
            if with_grad:
                grads.append(np.moveaxis(g, (1, 2), (0, 1)).reshape((3, 3) + shape))
    return SimilarityProfile(data.kind, box, s_nodes, np.array(vals), T, stationary,
                             np.array(grads) if with_grad else None, tol,
                             {"data": data.name, "hash": data.content_hash(), "lambda": data.lam})


def zero_profile(kind, box, period):
    shape = ((3,) if kind == "vector3" else ()) + (box.N,) * 3
    gshape = shape[:-3] + (3,) + shape[-3:]
    return SimilarityProfile(kind, box, np.array([0.0]), np.zeros((1,) + shape), period,
                             True, np.zeros((1,) + gshape), 0.0, {"data": "zero"})


# ---------------------------------------------------------------------------
# the operator L

def apply_L(box, samples, s_nodes=None, period=None, stationary=False, method="spectral"):
    """``L u = d_s u - Delta u - u/2 - (1/2) y.grad u`` on sampled fields.

    ``samples`` has a leading s axis.  Spatial derivatives are spectral on the
    box with the exact coordinate ``y``.  The s derivative is the exact
    derivative of the trigonometric interpolant (``method='spectral'``) or a
    periodic central difference (``method='fd'``); stationary fields drop it.
    """
    samples = np.asarray(samples, dtype=float)
    n_s = samples.shape[0]
    if not stationary:
        if n_s < 3:
            raise UsageError("the s-derivative stencil needs at least 3 samples")
        if period is None:
            raise UsageError("period required for s-dependent fields")
    y = box.coords
    out = np.empty_like(samples)
    for i in range(n_s):
        u = samples[i]
        g = sc.gradient(box, u)
        if u.ndim == 3:
            ydg = np.einsum("j...,j...->...", y, g)
        else:
            ydg = np.einsum("j...,ij...->i...", y, g)
        out[i] = -sc.laplacian(box, u) - 0.5 * u - 0.5 * ydg
    if not stationary:
        if method == "spectral":
            freqs = np.fft.fftfreq(n_s, d=1.0 / n_s) * 2.0 * np.pi / period
            if n_s % 2 == 0:
                freqs[n_s // 2] = 0.0
            shape = (n_s,) + (1,) * (samples.ndim - 1)
            ds = np.real(np.fft.ifft(1j * freqs.reshape(shape) * np.fft.fft(samples, axis=0),
                                     axis=0))
        elif method == "fd":
            dsp = period / n_s
            ds = (np.roll(samples, -1, axis=0) - np.roll(samples, 1, axis=0)) / (2 * dsp)
        else:
            raise ParameterError(f"unknown s-derivative method {method!r}")
        out += ds
    return out


def L_residual_ratio(box, prof, interior=0.25, taper_start=0.5):
    """Interior ``||L u|| / ||u||`` for a profile tapered to be periodic.

    The profile is multiplied by a smooth radial taper equal to 1 for
    ``|y| <= taper_start L`` before differentiation; norms are taken over
    ``|y| <= interior L``.
    """
    chi, _ = sc.window_profile(box.radius / box.L, taper_start)
    vals = prof.values * chi
    Lu = apply_L(box, vals, prof.s, prof.period, prof.stationary)
    mask = box.radius <= interior * box.L
    num = np.sqrt(np.sum(Lu[..., mask] ** 2))
    den = np.sqrt(np.sum(prof.values[..., mask] ** 2))
    return float(num / den)


# ---------------------------------------------------------------------------
# tails

@dataclass
class TailBound:
    radii: np.ndarray
    values: np.ndarray
    q: float


def tail_norms(prof, q, radii):
    """``sup_s ||profile||_{L^q(|y| > R)}`` from the grid plus a ``C/|y|`` majorant beyond the box.

    The grid part covers ``R < |y| <= L``; beyond the inscribed ball the
    profile is bounded by ``C/|y|`` with ``C`` measured on ``L/2 <= |y| <= L``,
    contributing ``4 pi C**q rho**(3-q) / (q-3)`` from radius ``rho``.
    """
    if not q > 3:
        raise ParameterError("tail norms need q > 3 because |y|^-1 is not in L^3")
    box = prof.box
    radii = np.asarray(radii, dtype=float)
    r = box.radius
    vals = np.zeros(len(radii))
    for i in range(prof.n_s):
        v = prof.values[i]
        mag = np.abs(v) if v.ndim == 3 else np.sqrt(np.sum(v * v, axis=0))
        shell = (r >= 0.5 * box.L) & (r <= box.L)
        C = float(np.max(r[shell] * mag[shell])) if np.any(shell) else 0.0
        for j, R in enumerate(radii):
            if R < box.L:
                m = (r > R) & (r <= box.L)
                part = np.sum(mag[m] ** q) * box.cell_volume
                part += 4.0 * np.pi * C**q * box.L ** (3.0 - q) / (q - 3.0)
            else:
                part = 4.0 * np.pi * C**q * R ** (3.0 - q) / (q - 3.0)
            vals[j] = max(vals[j], part ** (1.0 / q))
    # enforce monotonicity against floating-point ties
    vals = np.maximum.accumulate(vals[::-1])[::-1]
    return TailBound(radii, vals, float(q))


# ---------------------------------------------------------------------------
# cache files

def save_profile(path, prof):
    header = {"L": prof.box.L, "N": prof.box.N, "n_s": prof.n_s, "lambda": prof.meta.get("lambda"),
              "kind": prof.kind, "tolerance": prof.tolerance, "stationary": prof.stationary,
              "s": list(map(float, prof.s)), "period": prof.period,
              "hash": prof.meta.get("hash"), "data": prof.meta.get("data")}
    fileio.write_array(path, header, prof.values)
    if prof.grads is not None:
        fileio.write_array(str(path) + ".grad", dict(header, role="gradient"), prof.grads)
    return path


def load_profile(path):
    import os
    header, values = fileio.read_array(path)
    grads = None
    if os.path.exists(str(path) + ".grad"):
        _, grads = fileio.read_array(str(path) + ".grad")
    box = sc.BoxSpec(float(header["L"]), int(header["N"]))
    return SimilarityProfile(header["kind"], box, np.array(header["s"]), values,
                             float(header["period"]), bool(header["stationary"]), grads,
                             float(header["tolerance"]),
                             {"lambda": header.get("lambda"), "hash": header.get("hash"),
                              "data": header.get("data")})
