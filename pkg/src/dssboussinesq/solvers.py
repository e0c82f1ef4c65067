"""Periodic and stationary solves for the deviation system.

Both work on the packed vector ``x = sqrt(h**3) (U, m Psi)`` so that the
Euclidean norm of ``x`` is the weighted energy norm.  The periodic route
iterates the time-T flow map and sharpens with Newton-Krylov; the
stationary route finds zeros of the packed tendency directly.
"""

from dataclasses import dataclass, field as dc_field
import math
import time

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from . import dynamics as dy
from . import spectral_core as sc
from .errors import ConvergenceError, ParameterError, UsageError


# ---------------------------------------------------------------------------
# maps

def default_steps(data, minimum=32, multiple=16):
    """Smallest multiple of ``multiple`` (at least ``minimum``) within the stability bound."""
    need = data.period / dy.stability_limit(data)
    n = max(minimum, multiple * math.ceil(need / multiple))
    return int(n)


class PoincareMap:
    """Time-T flow map of the deviation system in packed coordinates.

    The input is projected to the admissible (band-limited, solenoidal) set
    before integrating.  ``evaluations`` counts calls.
    """

    def __init__(self, data, steps_per_period=None, s0=0.0):
        self.data = data
        self.box = data.box
        self.steps = int(steps_per_period or default_steps(data))
        self.s0 = float(s0)
        self.ds = data.period / self.steps
        self.integrator = dy.Integrator(data, self.ds)
        self.evaluations = 0
        self.last_ledger = None

    @property
    def m(self):
        return self.data.m

    @property
    def dim(self):
        return 4 * self.box.N**3

    def unpack(self, x, s=None):
        return dy.GalerkinState.unpack(self.box, np.asarray(x, dtype=float), self.m,
                                       self.s0 if s is None else s)

    def pack(self, state):
        return state.pack(self.box, self.m)

    def project(self, x):
        return self.pack(self.unpack(x))

    def flow(self, x, n_periods=1, ledger=None):
        st = self.unpack(x)
        return dy.integrate(st, self.data, self.ds, self.steps * n_periods, ledger,
                            self.integrator)

    def __call__(self, x, with_ledger=False):
        self.evaluations += 1
        led = dy.EnergyLedger(self.data) if with_ledger else None
        out = self.flow(x, 1, led)
        if led is not None:
            self.last_ledger = led
        return self.pack(out)


def poincare(pmap, x0, with_ledger=True):
    """``x1 = S(x0)``; the run's ledger is returned alongside."""
    if not np.all(np.isfinite(x0)):
        raise ParameterError("initial vector is not finite")
    x1 = pmap(x0, with_ledger=with_ledger)
    return x1, pmap.last_ledger if with_ledger else None


class StationaryMap:
    """Packed stationary tendency ``P(x)`` for s-independent data."""

    def __init__(self, data):
        if not data.stationary:
            raise UsageError("stationary map needs s-independent data")
        self.data = data
        self.box = data.box
        self.evaluations = 0

    @property
    def m(self):
        return self.data.m

    def unpack(self, x):
        return dy.GalerkinState.unpack(self.box, np.asarray(x, dtype=float), self.m, 0.0)

    def pack(self, state):
        return state.pack(self.box, self.m)

    def __call__(self, x):
        self.evaluations += 1
        st = self.unpack(x)
        dU, dP = dy.rhs(st, self.data)
        return self.pack(dy.GalerkinState(dU, dP))

    def precondition(self, r):
        """Apply ``(|k|**2 + 1/4)**-1`` componentwise to a packed vector."""
        st = dy.GalerkinState.unpack(self.box, r, self.m, admissible=False)
        inv = 1.0 / (self.box.k2 + 0.25)
        U = np.stack([sc.ifft(self.box, inv * sc.fft(self.box, st.U[i])) for i in range(3)])
        P = sc.ifft(self.box, inv * sc.fft(self.box, st.Psi))
        return dy.GalerkinState(U, P).pack(self.box, self.m)


def stationary_residual(smap, x):
    return smap(x)


# ---------------------------------------------------------------------------
# Newton-Krylov

def newton_krylov(F, x0, tol, max_evals, counter, restart=20, fd_step=1e-6, history=None,
                  precondition=None, forcing=0.1):
    """Inexact Newton with finite-difference GMRES directions.

    ``F`` maps packed vectors to residuals; ``counter()`` returns the number of
    F evaluations so far, and the solve stops once ``max_evals`` is reached.
    Converged when ``|F(x)| <= tol * max(1, |x|)``.  Returns ``(x, Fx, ok)``.
    """
    history = [] if history is None else history
    x = np.array(x0, dtype=float)
    Fx = F(x)
    n = x.size
    while True:
        res = float(np.linalg.norm(Fx))
        scale = max(1.0, float(np.linalg.norm(x)))
        history.append({"stage": "newton", "evals": counter(), "residual": res,
                        "relative": res / scale})
        if res <= tol * scale:
            return x, Fx, True
        budget = max_evals - counter() - 1
        if budget < 2:
            return x, Fx, False
        h = fd_step * (1.0 + float(np.linalg.norm(x)))

        def jv(v, x=x, Fx=Fx, h=h):
            nv = np.linalg.norm(v)
            if nv == 0:
                return np.zeros_like(v)
            return (F(x + (h / nv) * v) - Fx) * (nv / h)

        J = LinearOperator((n, n), matvec=jv, dtype=float)
        M = None
        if precondition is not None:
            M = LinearOperator((n, n), matvec=precondition, dtype=float)
        # target just below the tolerance once close, a fixed fraction otherwise
        eta = max(min(forcing, 0.5 * tol * scale / res), 1e-12)
        k = min(restart, budget)
        cycles = max(1, budget // k)
        dx, _ = gmres(J, -Fx, rtol=eta, atol=0.0, restart=k, maxiter=cycles, M=M)
        x = x + dx
        Fx = F(x)


# ---------------------------------------------------------------------------
# periodic solve

@dataclass
class PeriodicSolution:
    x: np.ndarray
    residual: float
    relative_residual: float
    evaluations: int
    history: list
    ledger: object
    contraction: float
    stage1_iterations: int
    converged: bool
    runtime: float
    diagnostics: dict = dc_field(default_factory=dict)


def solve_periodic(pmap, tol=1e-8, max_iters=50, stall_ratio=0.5, stall_count=2,
                   x0=None, picard_only=False):
    """Fixed point of the flow map from ``x = 0``.

    Stage 1 iterates ``x <- S(x)`` until ``|S(x) - x| <= sqrt(tol) max(1, |x|)``
    or the residual ratio exceeds ``stall_ratio`` for ``stall_count``
    consecutive iterations.  Stage 2 runs Newton-Krylov on ``S(x) - x``.
    ``max_iters`` caps the total number of map evaluations.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    t0 = time.time()
    start = pmap.evaluations
    count = lambda: pmap.evaluations - start
    history = []
    x = np.zeros(pmap.dim) if x0 is None else pmap.project(x0)
    prev = None
    ratios = []
    stalls = 0
    Sx = pmap(x)
    it = 0
    while True:
        r = float(np.linalg.norm(Sx - x))
        scale = max(1.0, float(np.linalg.norm(Sx)))
        history.append({"stage": "picard", "evals": count(), "residual": r, "relative": r / scale})
        if prev is not None and prev > 0:
            ratios.append(r / prev)
            stalls = stalls + 1 if ratios[-1] > stall_ratio else 0
        if r <= tol * max(1.0, float(np.linalg.norm(x))):
            x_fin, F_fin, ok = x, Sx - x, True
            break
        target = (tol if picard_only else math.sqrt(tol)) * scale
        if (r <= target or (stalls >= stall_count and not picard_only)
                or count() >= max_iters):
            x = Sx
            x_fin = None
            break
        prev = r
        x = Sx
        Sx = pmap(x)
        it += 1
    contraction = float(np.exp(np.mean(np.log(ratios)))) if ratios else 0.0
    if x_fin is None:
        if picard_only or count() >= max_iters:
            x_fin, F_fin, ok = x, pmap(x) - x, False
        else:
            x_fin, F_fin, ok = newton_krylov(lambda z: pmap(z) - z, x, tol, max_iters, count,
                                             history=history)
    res = float(np.linalg.norm(F_fin))
    rel = res / max(float(np.linalg.norm(x_fin)), 1e-300) if res > 0 else 0.0
    led = dy.EnergyLedger(pmap.data)
    pmap.flow(x_fin, 1, led)
    sol = PeriodicSolution(x_fin, res, rel, count(), history, led, contraction, it + 1, ok,
                           time.time() - t0,
                           {"rho": pmap.data.constants.get("rho"), "m": pmap.m,
                            "warnings": list(led.warnings)})
    if not ok:
        raise ConvergenceError(
            f"periodic solve did not reach tol={tol:g} within {max_iters} map evaluations "
            f"(residual {res:.3e})", achieved=res, best=x_fin, history=history)
    return sol


def reintegration_drift(pmap, x, n_periods=10):
    """Max over ``n`` periods of ``|x_n - x| / max(1, |x|)`` and the f-range along the orbit."""
    drift = 0.0
    cur = np.array(x)
    fvals = []
    for _ in range(n_periods):
        led = dy.EnergyLedger(pmap.data)
        st = pmap.flow(cur, 1, led)
        cur = pmap.pack(st)
        fvals.extend(led.as_array("f"))
        drift = max(drift, float(np.linalg.norm(cur - x)) / max(1.0, float(np.linalg.norm(x))))
    return drift, (float(np.min(fvals)), float(np.max(fvals)))


def absorbing_ball_check(pmap, radius, rng, n_samples=4):
    """Ratios ``|S(x0)| / |x0|`` for random admissible ``x0`` with ``|x0| = radius``."""
    out = []
    for _ in range(n_samples):
        x0 = random_packed(pmap, rng, radius)
        out.append(float(np.linalg.norm(pmap(x0)) / radius))
    return out


def random_packed(smap, rng, radius):
    st = dy.random_state(smap.box, rng, 1.0)
    x = st.pack(smap.box, smap.m)
    return radius * x / np.linalg.norm(x)


# ---------------------------------------------------------------------------
# stationary solve

@dataclass
class StationarySolution:
    x: np.ndarray
    residual: float
    scale: float
    crosscheck: float
    evaluations: int
    history: list
    converged: bool
    runtime: float
    diagnostics: dict = dc_field(default_factory=dict)


def sign_test(smap, n_samples=64, rng=None, radius=None):
    """``P(x).x`` on random admissible ``x`` with ``|x| = radius`` (default the empirical rho)."""
    rng = np.random.default_rng(0) if rng is None else rng
    radius = smap.data.constants["rho"] if radius is None else radius
    vals = []
    for _ in range(n_samples):
        x = random_packed(smap, rng, radius)
        vals.append(float(np.dot(smap(x), x)))
    return np.array(vals)


def solve_stationary(smap, tol=1e-8, pseudo_periods=4, steps_per_period=None, max_evals=4000,
                     cross_check=True):
    """Zero of ``P``: pseudo-time continuation, then preconditioned Newton-Krylov.

    ``|P(x*)| <= tol * scale`` with ``scale = max(1, |P(0)|)``.  Optionally
    cross-checks ``|S(x*) - x*|`` with the flow map of the same data.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    t0 = time.time()
    start = smap.evaluations
    count = lambda: smap.evaluations - start
    history = []
    z = np.zeros(4 * smap.box.N**3)
    P0 = smap(z)
    scale = max(1.0, float(np.linalg.norm(P0)))
    pmap = PoincareMap(smap.data, steps_per_period)
    x = z
    for _ in range(pseudo_periods):
        x = pmap(x)
        history.append({"stage": "pseudo-time", "evals": count(),
                        "residual": float(np.linalg.norm(smap(x)))})
    # the Newton test is against tol*scale; express it relative to max(1, |x|) for the driver
    def Fn(v):
        return smap(v)

    hist2 = []
    xs = x
    ok = False
    for _ in range(4):
        xs, Px, _ = newton_krylov(Fn, xs, tol * scale / max(1.0, np.linalg.norm(xs) + 1.0),
                                  max_evals, count, restart=40, precondition=smap.precondition,
                                  history=hist2, forcing=1e-3)
        res = float(np.linalg.norm(Px))
        if res <= tol * scale:
            ok = True
            break
        if count() >= max_evals:
            break
    history.extend(hist2)
    res = float(np.linalg.norm(smap(xs)))
    ok = res <= tol * scale
    cc = float("nan")
    if cross_check:
        cc = float(np.linalg.norm(pmap(xs) - xs) / max(1.0, float(np.linalg.norm(xs))))
    sol = StationarySolution(xs, res, scale, cc, count(), history, ok, time.time() - t0,
                             {"rho": smap.data.constants.get("rho"), "m": smap.m,
                              "norm_x": float(np.linalg.norm(xs))})
    if not ok:
        raise ConvergenceError(f"stationary solve stopped at |P| = {res:.3e} (target "
                               f"{tol * scale:.3e})", achieved=res, best=xs, history=history)
    return sol


# ---------------------------------------------------------------------------
# manifests

def solve_manifest(sol, inputs_hash="", tol=None):
    """JSON-ready summary of a solve."""
    out = {"inputs_hash": inputs_hash, "tol": tol, "converged": bool(sol.converged),
           "residual": float(sol.residual), "evaluations": int(sol.evaluations),
           "norm_x": float(np.linalg.norm(sol.x)), "runtime_s": float(sol.runtime),
           "history": sol.history, "rho": sol.diagnostics.get("rho"), "m": sol.diagnostics.get("m"),
           "warnings": sol.diagnostics.get("warnings", [])}
    if isinstance(sol, PeriodicSolution):
        out.update(mode="periodic", relative_residual=sol.relative_residual,
                   contraction=sol.contraction, stage1_iterations=sol.stage1_iterations)
    else:
        out.update(mode="stationary", scale=sol.scale, crosscheck=sol.crosscheck)
    return out
