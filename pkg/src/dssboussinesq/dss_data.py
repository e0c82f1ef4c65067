"""Scaling-critical initial data and forcing.

A field is described by its values on the fundamental annulus
``{1 <= |x| < lambda}``; the discretely self-similar extension
``value(x) = lambda * value(lambda x)`` fills the rest of space.
(-1)-homogeneous fields are the special case where this holds for every
positive factor.
"""

from dataclasses import dataclass, field as dc_field
import hashlib
import json

import numpy as np

from .errors import DomainError, LookupFieldError, ParameterError
from . import fileio


@dataclass(frozen=True)
class ScaleFactor:
    lam: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 1.0):
            raise ParameterError(f"scale factor must exceed 1, got {self.lam}")

    @property
    def period_T(self):
        """Period in log-time ``s = log t``."""
        return 2.0 * np.log(self.lam)


def _as_points(x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != 3:
        raise ParameterError("points must have a trailing axis of length 3")
    return x


@dataclass(frozen=True, eq=False)
class DssField:
    """Data on the fundamental annulus plus its scale factor.

    ``annulus_data`` maps an array of points ``(..., 3)`` lying in the annulus
    to values ``(...)`` (scalar) or ``(..., 3)`` (vector3).  It may also be
    called outside the annulus when ``homogeneous`` is set, since then the
    formula is valid everywhere.
    """

    kind: str
    scale: ScaleFactor
    annulus_data: object
    homogeneous: bool = False
    name: str = "custom"
    angular_degree: int = 16
    key: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("scalar", "vector3"):
            raise ParameterError(f"kind must be 'scalar' or 'vector3', got {self.kind!r}")

    @property
    def lam(self):
        return self.scale.lam

    @property
    def ncomp(self):
        return 1 if self.kind == "scalar" else 3

    def __call__(self, x):
        return extend_dss(self, x)

    def content_hash(self):
        base = self.key or f"{self.name}"
        payload = json.dumps({"kind": self.kind, "lambda": self.lam, "key": base,
                              "homogeneous": self.homogeneous}, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def scaled(self, c):
        """The field multiplied by the constant ``c``."""
        f = self.annulus_data
        return DssField(self.kind, self.scale, lambda x: c * f(x), self.homogeneous,
                        f"{c:g}*{self.name}", self.angular_degree,
                        f"{c!r}*{self.key or self.name}")

    def amplitude_bound(self, n=24):
        """Estimate of sup |x| |value(x)| over the annulus (the |x|^-1 majorant constant)."""
        pts, _ = annulus_samples(self.lam, n, n, 2 * n)
        vals = _magnitude(self.annulus_data(pts))
        return float(np.max(np.linalg.norm(pts, axis=-1) * vals)) * 1.05 + 1e-300


def _magnitude(v):
    v = np.asarray(v)
    if v.ndim >= 1 and v.shape[-1] == 3 and v.dtype != object:
        return np.linalg.norm(v, axis=-1)
    return np.abs(v)


def extend_dss(field, x):
    """Evaluate the self-similar extension of ``field`` at points ``x``.

    The value at ``x`` is ``lam**j * annulus_data(lam**j x)`` with ``j`` the
    integer placing ``lam**j |x|`` in ``[1, lam)``.
    """
    x = _as_points(x)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0.0):
        raise DomainError("DSS data is singular at the origin")
    lam = field.lam
    k = np.floor(np.log(r) / np.log(lam))
    scale = lam ** (-k)
    rs = r * scale
    # guard the half-open interval against rounding in log/floor
    k = np.where(rs >= lam, k + 1, np.where(rs < 1.0, k - 1, k))
    scale = lam ** (-k)
    xs = x * scale[..., None]
    vals = np.asarray(field.annulus_data(xs), dtype=float)
    if field.kind == "scalar":
        return scale * vals
    return scale[..., None] * vals


# ---------------------------------------------------------------------------
# built-in catalog

def _smooth_bump(rho):
    """C-infinity bump on (0, 1), equal to 1 at rho = 1/2."""
    rho = np.asarray(rho, dtype=float)
    inside = (rho > 0.0) & (rho < 1.0)
    q = np.where(inside, rho * (1.0 - rho), 1.0)
    return np.where(inside, np.exp(4.0 - 1.0 / q), 0.0)


def _log_phase(x, lam):
    r = np.linalg.norm(x, axis=-1)
    rho = np.log(r) / np.log(lam)
    return rho - np.floor(rho)


def _azimuthal(x):
    r2 = np.sum(x * x, axis=-1)
    return np.stack([-x[..., 1] / r2, x[..., 0] / r2, np.zeros_like(r2)], axis=-1)


def _inverse_radius(x):
    return 1.0 / np.linalg.norm(x, axis=-1)


def builtin_fields(lam=2.0):
    """Catalog of named benchmark fields for scale factor ``lam``."""
    sf = ScaleFactor(float(lam))

    def bump(x):
        r = np.linalg.norm(x, axis=-1)
        return _smooth_bump(_log_phase(x, sf.lam)) * (1.0 + 0.5 * x[..., 2] / r) / r

    def swirl(x):
        return _smooth_bump(_log_phase(x, sf.lam))[..., None] * _azimuthal(x)

    return {
        "azimuthal": DssField("vector3", sf, _azimuthal, True, "azimuthal", 1, "azimuthal"),
        "inverse-radius": DssField("scalar", sf, _inverse_radius, True, "inverse-radius", 0,
                                   "inverse-radius"),
        "annulus-bump": DssField("scalar", sf, bump, False, "annulus-bump", 12, "annulus-bump"),
        "annulus-swirl": DssField("vector3", sf, swirl, False, "annulus-swirl", 12,
                                  "annulus-swirl"),
    }


def get_field(name, lam=2.0):
    fields = builtin_fields(lam)
    if name not in fields:
        raise LookupFieldError(f"unknown builtin field {name!r}; known: {sorted(fields)}")
    return fields[name]


def zero_field(kind, lam=2.0):
    if kind == "scalar":
        fn = lambda x: np.zeros(np.shape(x)[:-1])
    else:
        fn = lambda x: np.zeros(np.shape(x))
    return DssField(kind, ScaleFactor(lam), fn, True, "zero", 0, f"zero-{kind}")


# ---------------------------------------------------------------------------
# forcing

@dataclass(frozen=True, eq=False)
class DssForce:
    """Forcing given on the time slab ``1 <= t < lam**2``.

    ``slab(x, t)`` returns ``(..., 3)``; extension uses
    ``f(x, t) = lam**3 f(lam x, lam**2 t)``.
    """

    scale: ScaleFactor
    slab: object
    name: str = "custom"

    def __call__(self, x, t):
        x = _as_points(x)
        lam = self.scale.lam
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape[:-1])
        k = np.floor(np.log(t) / (2.0 * np.log(lam)))
        ts = t * lam ** (-2.0 * k)
        k = np.where(ts >= lam**2, k + 1, np.where(ts < 1.0, k - 1, k))
        xs = x * lam ** (-k)[..., None]
        ts = t * lam ** (-2.0 * k)
        return lam ** (-3.0 * k)[..., None] * np.asarray(self.slab(xs, ts), dtype=float)

    def profile(self, y, s):
        """Similarity profile ``F(y, s) = t**1.5 f(sqrt(t) y, t)``, ``t = e**s``."""
        t = np.exp(s)
        return t**1.5 * self(np.sqrt(t) * _as_points(y), t)

    @property
    def is_zero(self):
        return self.name == "zero"


def zero_force(lam=2.0):
    return DssForce(ScaleFactor(lam), lambda x, t: np.zeros(np.shape(x)), "zero")


# ---------------------------------------------------------------------------
# annulus sampling and gridded data

def annulus_samples(lam, n_r, n_theta, n_phi):
    """Midpoint samples of the fundamental annulus with volume weights.

    Log-uniform in radius, uniform in cos(theta) and phi, so each weight is
    ``r**3 * d(log r) * d(cos theta) * d(phi)``.
    """
    lr = (np.arange(n_r) + 0.5) / n_r * np.log(lam)
    mu = -1.0 + (np.arange(n_theta) + 0.5) * 2.0 / n_theta
    ph = (np.arange(n_phi) + 0.5) * 2.0 * np.pi / n_phi
    R, M, P = np.meshgrid(np.exp(lr), mu, ph, indexing="ij")
    S = np.sqrt(1.0 - M**2)
    pts = np.stack([R * S * np.cos(P), R * S * np.sin(P), R * M], axis=-1)
    w = R**3 * (np.log(lam) / n_r) * (2.0 / n_theta) * (2.0 * np.pi / n_phi)
    return pts.reshape(-1, 3), w.reshape(-1)


def gridded_field(samples, lam, kind, name="gridded"):
    """Field backed by annulus samples on a log-radial x latitude-longitude grid.

    ``samples`` has shape ``(n_r, n_theta, n_phi[, 3])`` at nodes
    ``r_i = lam**(i/n_r)``, ``theta_j = (j + 1/2) pi / n_theta``,
    ``phi_k = 2 pi k / n_phi``.  Values are interpolated trilinearly in
    ``(log_lam r, theta, phi)``; the radial wrap uses the DSS identity so the
    extension is continuous across annuli.
    """
    arr = np.asarray(samples, dtype=float)
    if kind == "scalar":
        arr = arr[..., None]
    n_r, n_t, n_p, nc = arr.shape
    sf = ScaleFactor(float(lam))
    # append the wrapped radial slab: value at r*lam equals value at r divided by lam
    ext = np.concatenate([arr, arr[:1] / sf.lam], axis=0)

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        rho = np.clip(np.log(r) / np.log(sf.lam), 0.0, 1.0) * n_r
        th = np.arccos(np.clip(x[..., 2] / r, -1.0, 1.0)) / np.pi * n_t - 0.5
        ph = np.mod(np.arctan2(x[..., 1], x[..., 0]), 2.0 * np.pi) / (2.0 * np.pi) * n_p
        i0 = np.clip(np.floor(rho).astype(int), 0, n_r - 1)
        fr = rho - i0
        th = np.clip(th, 0.0, n_t - 1.0)
        j0 = np.clip(np.floor(th).astype(int), 0, max(n_t - 2, 0))
        ft = th - j0
        j1 = np.minimum(j0 + 1, n_t - 1)
        k0 = np.floor(ph).astype(int) % n_p
        fp = ph - np.floor(ph)
        k1 = (k0 + 1) % n_p
        out = 0.0
        for di, wr in ((i0, 1 - fr), (i0 + 1, fr)):
            for dj, wt in ((j0, 1 - ft), (j1, ft)):
                for dk, wp in ((k0, 1 - fp), (k1, fp)):
                    out = out + (wr * wt * wp)[..., None] * ext[di, dj, dk]
        return out[..., 0] if kind == "scalar" else out

    digest = hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]
    return DssField(kind, sf, evaluate, False, name, 16, f"grid-{digest}",
                    {"n_r": n_r, "n_theta": n_t, "n_phi": n_p})


def sample_on_annulus_grid(field, n_r, n_theta, n_phi):
    """Sample ``field`` at the nodes used by :func:`gridded_field`."""
    r = field.lam ** (np.arange(n_r) / n_r)
    th = (np.arange(n_theta) + 0.5) * np.pi / n_theta
    ph = np.arange(n_phi) * 2.0 * np.pi / n_phi
    R, TH, PH = np.meshgrid(r, th, ph, indexing="ij")
    pts = np.stack([R * np.sin(TH) * np.cos(PH), R * np.sin(TH) * np.sin(PH),
                    R * np.cos(TH)], axis=-1)
    return np.asarray(field.annulus_data(pts), dtype=float)


def save_annulus_file(path, field, n_r, n_theta, n_phi):
    data = sample_on_annulus_grid(field, n_r, n_theta, n_phi)
    if field.kind == "scalar":
        data = data[..., None]
    header = {"kind": field.kind, "lambda": field.lam, "n_r": n_r,
              "n_theta": n_theta, "n_phi": n_phi}
    return fileio.write_array(path, header, data)


def load_annulus_file(path):
    header, data = fileio.read_array(path)
    for key in ("kind", "lambda", "n_r", "n_theta", "n_phi"):
        if key not in header:
            raise ParameterError(f"annulus file {path} lacks header key {key!r}")
    if header["kind"] == "scalar":
        data = data[..., 0]
    return gridded_field(data, header["lambda"], header["kind"], name=str(path))


# ---------------------------------------------------------------------------
# weak-L3 quasinorm

def lorentz_3inf_estimate(field, n=64):
    """Estimate ``sup_t t |{|f| > t}|**(1/3)`` from annulus samples.

    For DSS data the measure of a level set splits over the annuli
    ``lam**-j A`` and each piece is a rescaled level set of the fundamental
    annulus: ``|{f > t} ∩ lam**-j A| = lam**(-3j) |{f > t lam**-j} ∩ A|``.
    The resulting quasinorm profile is invariant under ``t -> lam t``, so the
    supremum is taken over one period of thresholds, namely the sample values
    themselves.  ``n`` sets the per-axis resolution (``n**3`` samples).
    """
    n_r = n_t = n_p = int(n)
    if n_r <= 0:
        raise ParameterError("empty sample set")
    pts, w = annulus_samples(field.lam, n_r, n_t, n_p)
    vals = _magnitude(field.annulus_data(pts))
    keep = vals > 0
    if vals.size == 0:
        raise ParameterError("empty sample set")
    if not np.any(keep):
        return 0.0
    vals, w = vals[keep], w[keep]
    lam = field.lam
    ell = np.log(vals) / np.log(lam)
    a = np.floor(ell)
    phi = ell - a
    order = np.argsort(phi, kind="stable")
    phi, a, w = phi[order], a[order], w[order]
    c = w * lam ** (3.0 * a)
    geo = 1.0 / (1.0 - lam**-3.0)
    # threshold t = lam**(b + psi) with psi = phi_m and b = 0:
    # mu = geo * [ sum_{phi_i >= psi} c_i + lam**-3 sum_{phi_i < psi} c_i ]
    total = np.sum(c)
    below = np.concatenate([[0.0], np.cumsum(c)[:-1]])
    mu = geo * ((total - below) + lam**-3.0 * below)
    t = lam ** phi
    return float(np.max(t * np.cbrt(mu)))


def divergence_fd(fn, x, h=1e-3):
    """Fourth-order central-difference divergence of a vector evaluator."""
    x = _as_points(x)
    div = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        d = (-fn(x + 2 * e)[..., i] + 8 * fn(x + e)[..., i]
             - 8 * fn(x - e)[..., i] + fn(x - 2 * e)[..., i]) / (12 * h)
        div = div + d
    return div
