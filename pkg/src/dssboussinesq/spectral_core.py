"""Truncated periodic box in the similarity variable and its spectral operators.

Fields are plain numpy arrays: scalars have shape ``(N, N, N)``, vectors
``(3, N, N, N)``.  Spectral coefficients come from ``rfftn`` over the last
three axes.  First derivatives use wavenumbers with the Nyquist entry
zeroed so that discrete differentiation is exactly skew-adjoint for the
grid inner product.
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as sfft
from scipy.special import roots_legendre

from .errors import BoxMismatchError, ParameterError, UsageError
from . import fileio

AXES = (-3, -2, -1)


def smooth_step(t):
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    a = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
    b = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return a / (a + b)


def smooth_step_deriv(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    tt = np.where(inside, t, 0.5)
    a = np.exp(-1.0 / tt)
    b = np.exp(-1.0 / (1.0 - tt))
    da = a / tt**2
    db = -b / (1.0 - tt) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


def smooth_step_deriv2(t):
    t = np.asarray(t, dtype=float)
    inside = (t > 0) & (t < 1)
    tt = np.where(inside, t, 0.5)
    a = np.exp(-1.0 / tt)
    b = np.exp(-1.0 / (1.0 - tt))
    da = a / tt**2
    db = -b / (1.0 - tt) ** 2
    dda = a * (1.0 - 2.0 * tt) / tt**4
    ddb = b * (1.0 - 2.0 * (1.0 - tt)) / (1.0 - tt) ** 4
    S = a + b
    dS = da + db
    ddS = dda + ddb
    # Z = a / S
    d2 = dda / S - 2 * da * dS / S**2 - a * ddS / S**2 + 2 * a * dS**2 / S**3
    return np.where(inside, d2, 0.0)


def window_profile(rho, start):
    """Radial taper: 1 for rho <= start, 0 for rho >= 1, smooth in between.

    Returns ``(chi, dchi/drho)``.
    """
    w = 1.0 - start
    t = (np.asarray(rho, dtype=float) - start) / w
    return 1.0 - smooth_step(t), -smooth_step_deriv(t) / w


@dataclass(frozen=True)
class BoxSpec:
    """Periodic box ``[-L, L)**3`` with ``N`` points per axis."""

    L: float
    N: int
    dealias_fraction: float = 2.0 / 3.0
    drift_window_fraction: float = 0.8
    threads: int = 1

    def __post_init__(self):
        if not self.L > 0:
            raise ParameterError("box half-width L must be positive")
        if self.N < 8 or self.N % 2:
            raise ParameterError("N must be an even integer >= 8")
        if not 0 < self.dealias_fraction <= 1:
            raise ParameterError("dealias_fraction must lie in (0, 1]")
        if not 0 < self.drift_window_fraction < 1:
            raise ParameterError("drift_window_fraction must lie in (0, 1)")

    # equality and hashing ignore the thread count
    def key(self):
        return (float(self.L), int(self.N), float(self.dealias_fraction),
                float(self.drift_window_fraction))

    def __eq__(self, other):
        return isinstance(other, BoxSpec) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    @property
    def h(self):
        return 2.0 * self.L / self.N

    @property
    def cell_volume(self):
        return self.h**3

    @cached_property
    def x1d(self):
        return -self.L + self.h * np.arange(self.N)

    @cached_property
    def coords(self):
        """Grid coordinates, shape ``(3, N, N, N)``; the origin is a grid point."""
        return np.stack(np.meshgrid(self.x1d, self.x1d, self.x1d, indexing="ij"))

    @cached_property
    def radius(self):
        return np.sqrt(np.sum(self.coords**2, axis=0))

    @cached_property
    def origin_index(self):
        i = self.N // 2
        return (i, i, i)

    @cached_property
    def _k1d(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.h)

    @cached_property
    def _kr1d(self):
        return 2.0 * np.pi * np.fft.rfftfreq(self.N, d=self.h)

    @cached_property
    def kvec(self):
        """Full wavenumbers on the rfft grid, shape ``(3, N, N, N//2+1)``."""
        ka, kb, kc = np.meshgrid(self._k1d, self._k1d, self._kr1d, indexing="ij", sparse=True)
        return (ka, kb, kc)

    @cached_property
    def kderiv(self):
        """Derivative wavenumbers with the Nyquist entries zeroed."""
        k = self._k1d.copy()
        k[self.N // 2] = 0.0
        kr = self._kr1d.copy()
        kr[-1] = 0.0
        ka, kb, kc = np.meshgrid(k, k, kr, indexing="ij", sparse=True)
        return (ka, kb, kc)

    @cached_property
    def k2(self):
        ka, kb, kc = self.kvec
        return ka**2 + kb**2 + kc**2

    @cached_property
    def kd2(self):
        ka, kb, kc = self.kderiv
        return ka**2 + kb**2 + kc**2

    @cached_property
    def dealias_mask(self):
        n = np.fft.fftfreq(self.N, d=1.0 / self.N)
        nr = np.fft.rfftfreq(self.N, d=1.0 / self.N)
        cut = self.dealias_fraction * self.N / 2.0
        ma = np.abs(n) < cut
        mc = np.abs(nr) < cut
        if self.dealias_fraction >= 1.0:
            ma = np.abs(n) < self.N / 2
            mc = np.abs(nr) < self.N / 2
        A, B, C = np.meshgrid(ma, ma, mc, indexing="ij", sparse=True)
        return A & B & C

    @cached_property
    def kmax(self):
        """Largest retained wavenumber magnitude per axis."""
        n = np.fft.fftfreq(self.N, d=1.0 / self.N)
        kept = np.abs(n)[np.abs(n) < self.dealias_fraction * self.N / 2.0]
        return float(np.max(kept)) * np.pi / self.L

    # -- drift window and sponge -------------------------------------------
    @cached_property
    def drift_chi(self):
        chi, _ = window_profile(self.radius / self.L, self.drift_window_fraction)
        return chi

    @cached_property
    def drift_coord(self):
        """Windowed coordinate ``y chi(|y|/L)``."""
        return self.coords * self.drift_chi

    @cached_property
    def drift_div(self):
        """Analytic divergence of the windowed coordinate: ``3 chi + rho chi'``."""
        rho = self.radius / self.L
        chi, dchi = window_profile(rho, self.drift_window_fraction)
        return 3.0 * chi + rho * dchi

    @cached_property
    def sponge(self):
        """Nonnegative damping that keeps the zeroth-order energy rate at -1/4.

        In the interior the drift contributes ``-3/4 |u|**2`` to the energy;
        in the window that contribution fades, and ``sigma`` restores the
        interior value.  It vanishes where ``chi = 1``.
        """
        return 0.75 - 0.25 * self.drift_div

    @cached_property
    def background_window(self):
        """Taper applied to background fields so they are periodic and smooth."""
        chi, _ = window_profile(self.radius / self.L, self.drift_window_fraction)
        return chi

    @cached_property
    def background_window_grad(self):
        rho = self.radius / self.L
        _, dchi = window_profile(rho, self.drift_window_fraction)
        r = np.where(self.radius > 0, self.radius, 1.0)
        return self.coords / r * dchi / self.L

    def interior_mask(self, fraction=None):
        f = self.drift_window_fraction if fraction is None else fraction
        return self.radius <= f * self.L

    def shell_mask(self, width=0.1):
        """Outer shell ``max_i |y_i| > (1 - width) L``."""
        return np.max(np.abs(self.coords), axis=0) > (1.0 - width) * self.L


# ---------------------------------------------------------------------------
# transforms

def fft(box, u):
    return sfft.rfftn(u, axes=AXES, workers=box.threads)


def ifft(box, uh):
    return sfft.irfftn(uh, s=(box.N,) * 3, axes=AXES, workers=box.threads)


def truncate(box, uh):
    return uh * box.dealias_mask


def band_limit(box, u):
    """Remove modes outside the dealiased set."""
    return ifft(box, truncate(box, fft(box, u)))


def grad_hat(box, uh):
    """Spectral gradient of a scalar, shape ``(3, ...)``."""
    return np.stack([1j * k * uh for k in box.kderiv])


def div_hat(box, vh):
    ka, kb, kc = box.kderiv
    return 1j * (ka * vh[0] + kb * vh[1] + kc * vh[2])


def gradient(box, u):
    """Gradient of a scalar (``(3,N,N,N)``) or vector (``(3,3,N,N,N)``, ``[i, j] = d_j u_i``)."""
    uh = fft(box, u)
    if uh.ndim == 3:
        return ifft(box, grad_hat(box, uh))
    return np.stack([ifft(box, grad_hat(box, uh[i])) for i in range(uh.shape[0])])


def divergence(box, v):
    return ifft(box, div_hat(box, fft(box, v)))


def laplacian(box, u):
    return ifft(box, -box.k2 * fft(box, u))


def spectral_divergence_norm(box, v):
    return l2_norm(box, divergence(box, v))


# ---------------------------------------------------------------------------
# projection, convection, drift

def leray_hat(box, vh):
    ka, kb, kc = box.kderiv
    kd2 = box.kd2
    safe = np.where(kd2 > 0, kd2, 1.0)
    kdotv = (ka * vh[0] + kb * vh[1] + kc * vh[2]) / safe
    kdotv = np.where(kd2 > 0, kdotv, 0.0)
    return np.stack([vh[0] - ka * kdotv, vh[1] - kb * kdotv, vh[2] - kc * kdotv])


def leray_project(box, v):
    """Divergence-free part of ``v``; the mean mode is left unchanged."""
    return ifft(box, leray_hat(box, fft(box, v)))


def convect_hat(box, a, b, grad_b=None):
    """Skew form ``(1/2)[(a.grad) b + div(a (x) b)]`` in dealiased spectral form.

    ``a`` is a physical vector field, ``b`` a physical scalar or vector field.
    ``grad_b`` may be supplied to avoid recomputing it.
    """
    if grad_b is None:
        grad_b = gradient(box, b)
    if b.ndim == 3:
        adv = np.einsum("j...,j...->...", a, grad_b)
        flux = fft(box, a * b)
        out = 0.5 * (fft(box, adv) + div_hat(box, flux))
    else:
        adv = np.einsum("j...,ij...->i...", a, grad_b)
        flux = fft(box, a[None, :] * b[:, None])  # [i, j] = a_j b_i
        divflux = np.stack([div_hat(box, flux[i]) for i in range(3)])
        out = 0.5 * (fft(box, adv) + divflux)
    return truncate(box, out)


def convect(box, a, b):
    """Physical-space skew-symmetric convection ``(a.grad) b``, dealiased."""
    return ifft(box, convect_hat(box, a, b))


def drift_hat(box, u, grad_u=None):
    """Skew form of ``(1/2) y~.grad u`` with the windowed coordinate.

    ``(1/4)(y~.grad u + div(y~ u)) - (1/4)(div y~) u``, using the analytic
    divergence of ``y~``.  Its grid pairing with ``u`` equals
    ``-(1/4) <(div y~) u, u>`` exactly.
    """
    yt = box.drift_coord
    if grad_u is None:
        grad_u = gradient(box, u)
    if u.ndim == 3:
        adv = np.einsum("j...,j...->...", yt, grad_u)
        dflux = div_hat(box, fft(box, yt * u))
        return truncate(box, fft(box, 0.25 * adv - 0.25 * box.drift_div * u) + 0.25 * dflux)
    adv = np.einsum("j...,ij...->i...", yt, grad_u)
    flux = fft(box, yt[None, :] * u[:, None])
    dflux = np.stack([div_hat(box, flux[i]) for i in range(3)])
    return truncate(box, fft(box, 0.25 * adv - 0.25 * box.drift_div * u) + 0.25 * dflux)


def drift_term(box, u):
    """``(1/2) y~ . grad u`` on the grid (see :func:`drift_hat`)."""
    return ifft(box, drift_hat(box, u))


# ---------------------------------------------------------------------------
# gravity and Hardy

def grav_field(box, delta=0.0):
    """Gradient of ``G = (|y|**2 + delta**2)**(-1/2)``; origin sample zero when ``delta = 0``."""
    y = box.coords
    r2 = np.sum(y**2, axis=0) + delta**2
    safe = np.where(r2 > 0, r2, 1.0)
    g = -y * safe ** (-1.5)
    if delta == 0.0:
        g[(slice(None),) + box.origin_index] = 0.0
    return g


def grav_at(y, delta=0.0):
    y = np.asarray(y, dtype=float)
    r2 = np.sum(y**2, axis=-1) + delta**2
    if np.any(r2 == 0):
        out = np.zeros_like(y)
        nz = r2 > 0
        out[nz] = -y[nz] * r2[nz, None] ** -1.5
        return out
    return -y * r2[..., None] ** -1.5


# -(regularized sum of 1/|n|**2 over Z**3 minus the origin)
LATTICE_INV_SQ = 8.91363291758515


def hardy_ratio(box, u):
    """``(int |u|**2/|y|**2) / (4 int |grad u|**2)``.

    The punctured grid sum misses ``h c |u(0)|**2`` of the singular integral,
    with ``c`` the lattice constant above; adding it back makes the quadrature
    second-order for smooth ``u``.  Vector fields are summed over components.
    """
    r2 = box.radius**2
    mask = r2 > 0
    mag2 = u**2 if u.ndim == 3 else np.sum(u**2, axis=0)
    num = np.sum(mag2[mask] / r2[mask]) * box.cell_volume
    num += box.h * LATTICE_INV_SQ * float(mag2[box.origin_index])
    den = 4.0 * h1_seminorm(box, u) ** 2
    if not den > 0:
        raise UsageError("Hardy ratio undefined: gradient vanishes")
    return float(num / den)


# ---------------------------------------------------------------------------
# mollifier

def _bump(r):
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    q = np.where(inside, 1.0 - r**2, 1.0)
    return np.where(inside, np.exp(-1.0 / q), 0.0)


class Mollifier:
    """Radial bump ``eta`` supported in the unit ball with unit mass, scaled by ``epsilon``."""

    _nodes = 200

    def __init__(self, epsilon):
        if not 0.0 < epsilon < 1.0:
            raise ParameterError("mollifier epsilon must lie in (0, 1)")
        self.epsilon = float(epsilon)
        x, w = roots_legendre(self._nodes)
        self._r = 0.5 * (x + 1.0)
        self._w = 0.5 * w
        self._mass = np.sum(self._w * 4.0 * np.pi * self._r**2 * _bump(self._r))
        self._cache = {}

    def profile(self, r):
        """``eta_eps(r)`` as a function of radius."""
        e = self.epsilon
        return _bump(np.asarray(r) / e) / (self._mass * e**3)

    def symbol_of(self, kmag):
        """Fourier transform of ``eta_eps`` at wavenumber magnitudes ``kmag``."""
        kmag = np.asarray(kmag, dtype=float)
        flat = kmag.reshape(-1)
        kr = np.outer(flat * self.epsilon, self._r)
        integrand = 4.0 * np.pi * self._r**2 * _bump(self._r) * np.sinc(kr / np.pi)
        return (integrand @ self._w / self._mass).reshape(kmag.shape)

    def symbol(self, box):
        key = box.key()
        if key not in self._cache:
            # derivative wavenumbers keep the multiplier consistent with the skew operators
            kmag = np.sqrt(box.k2)
            uniq, inv = np.unique(np.round(kmag, 12), return_inverse=True)
            self._cache[key] = self.symbol_of(uniq)[inv].reshape(kmag.shape)
        return self._cache[key]

    def apply_hat(self, box, uh):
        return uh * self.symbol(box)

    def __call__(self, box, u):
        return ifft(box, self.apply_hat(box, fft(box, u)))


def mollify(m, box, u):
    return m(box, u)


# ---------------------------------------------------------------------------
# inner products and norms

def inner(box, a, b, box_b=None):
    """Cell-volume-weighted grid inner product."""
    if box_b is not None and box_b != box:
        raise BoxMismatchError("fields live on different boxes")
    return float(np.sum(a * b) * box.cell_volume)


def l2_norm(box, u):
    return float(np.sqrt(np.sum(u * u) * box.cell_volume))


def h1_seminorm(box, u):
    """``||grad u||`` computed spectrally."""
    uh = fft(box, u)
    w = _rfft_weights(box)
    ncomp = 1 if uh.ndim == 3 else uh.shape[0]
    uh = uh.reshape((ncomp,) + uh.shape[-3:])
    val = 0.0
    for c in range(ncomp):
        val += np.sum(w * box.kd2 * np.abs(uh[c]) ** 2)
    return float(np.sqrt(val * box.cell_volume / box.N**3))


def h1_norm(box, u):
    return float(np.sqrt(l2_norm(box, u) ** 2 + h1_seminorm(box, u) ** 2))


def _rfft_weights(box):
    w = np.full(box.N // 2 + 1, 2.0)
    w[0] = 1.0
    w[-1] = 1.0
    return w[None, None, :]


def spectral_inner(box, a, b):
    """Inner product computed from rfft coefficients (Parseval route)."""
    ah, bh = fft(box, a), fft(box, b)
    w = _rfft_weights(box)
    val = np.sum(w * np.real(ah * np.conj(bh)))
    return float(val * box.cell_volume / box.N**3)


def hminus1_norm(box, u):
    """``||u||_{H^-1}`` with symbol ``(1 + |k|**2)**(-1/2)``."""
    uh = fft(box, u)
    w = _rfft_weights(box)
    ncomp = 1 if uh.ndim == 3 else uh.shape[0]
    uh = uh.reshape((ncomp,) + uh.shape[-3:])
    val = sum(np.sum(w * np.abs(uh[c]) ** 2 / (1.0 + box.k2)) for c in range(ncomp))
    return float(np.sqrt(val * box.cell_volume / box.N**3))


def lq_norm(box, u, q, mask=None):
    mag = np.abs(u) if u.ndim == 3 else np.sqrt(np.sum(u * u, axis=0))
    if mask is not None:
        mag = mag[mask]
    return float((np.sum(mag**q) * box.cell_volume) ** (1.0 / q))


# ---------------------------------------------------------------------------
# evaluation off the grid

def spectral_interpolate(box, u, points):
    """Trigonometric interpolation of grid data at arbitrary points ``(M, 3)``.

    Uses the full complex spectrum; the Nyquist mode is split symmetrically
    so that real data interpolate to real values and grid points are
    reproduced exactly.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    uh = np.fft.fftn(u, axes=AXES) / box.N**3
    n = np.fft.fftfreq(box.N, d=1.0 / box.N)
    kk = np.pi * n / box.L
    ncomp = 1 if u.ndim == 3 else u.shape[0]
    N = box.N
    uh = uh.reshape((ncomp,) + uh.shape[-3:])
    out = np.empty((len(pts), ncomp))
    for lo in range(0, len(pts), 4096):
        p = pts[lo:lo + 4096]
        e = [np.exp(1j * np.outer(p[:, i] + box.L, kk)) for i in range(3)]
        for i in range(3):
            e[i][:, N // 2] = np.cos(np.pi * N / (2 * box.L) * (p[:, i] + box.L))
        for c in range(ncomp):
            # contract the last axis by a matrix product, then the other two pointwise
            t = uh[c].reshape(N * N, N) @ e[2].T
            t = t.reshape(N, N, -1)
            t = np.einsum("abm,mb->am", t, e[1])
            out[lo:lo + len(p), c] = np.real(np.einsum("am,ma->m", t, e[0]))
    return out[:, 0] if ncomp == 1 else out


# ---------------------------------------------------------------------------
# snapshots

def save_snapshot(path, box, u, s=0.0, extra=None):
    comps = 1 if u.ndim == 3 else u.shape[0]
    header = {"L": box.L, "N": box.N, "components": comps, "s": float(s)}
    if extra:
        header.update(extra)
    return fileio.write_array(path, header, u)


def load_snapshot(path):
    header, arr = fileio.read_array(path)
    box = BoxSpec(float(header["L"]), int(header["N"]))
    return box, arr, header
