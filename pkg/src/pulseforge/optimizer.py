"""Derivative-free bound-constrained minimizers.

:func:`minimize_cobyla` follows Powell's linear-approximation trust-region
scheme: a simplex of ``n + 1`` evaluated points defines a linear model of the
objective, bound constraints enter as exact linear constraints, each trust
step minimizes the model inside the ball of radius ``rho`` intersected with
the box, and ``rho`` only ever shrinks (halving down to ``rhoend``). Because
the constraints are known exactly, every evaluated point is feasible.

:func:`minimize_neldermead` is a plain simplex search that evaluates clipped
points and penalizes the clipping distance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import BoundsError, EvaluationError, ValidationError

log = logging.getLogger(__name__)

TERMINATIONS = ("max_evals", "trust_radius_converged", "stall")
BUDGET_UNITS = ("evals", "trust_steps")

# Powell's simplex acceptability and step constants
_ALPHA = 0.25
_BETA = 2.1
_GAMMA = 0.5
_DELTA = 1.1


@dataclass(frozen=True)
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).ravel()
        hi = np.asarray(self.hi, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise ValidationError("lower and upper bounds differ in length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValidationError("bounds must satisfy lo <= hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_pairs(cls, pairs: Sequence[tuple[float, float]]) -> "Bounds":
        arr = np.asarray(pairs, dtype=float).reshape(-1, 2)
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def unbounded(cls, n: int) -> "Bounds":
        return cls(np.full(n, -np.inf), np.full(n, np.inf))

    def __len__(self) -> int:
        return self.lo.shape[0]

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)


@dataclass
class OptimizerReport:
    best_x: np.ndarray
    best_f: float
    n_evals: int
    trace: list[tuple[np.ndarray, float]] = field(default_factory=list)
    termination: str = "max_evals"
    n_iters: int = 0

    def best_so_far(self) -> np.ndarray:
        f = np.array([v for _, v in self.trace], dtype=float)
        f = np.where(np.isfinite(f), f, np.inf)
        return np.minimum.accumulate(f)


class _Evaluator:
    """Counts evaluations, records the trace and enforces feasibility."""

    def __init__(self, fun, bounds: Bounds, callback=None):
        self.fun = fun
        self.bounds = bounds
        self.callback = callback
        self.trace: list[tuple[np.ndarray, float]] = []
        self.best_x: np.ndarray | None = None
        self.best_f = math.inf

    def __call__(self, x: np.ndarray) -> float:
        x = np.array(x, dtype=float)
        if not self.bounds.contains(x):
            raise BoundsError(f"optimizer proposed an infeasible point {x}")
        f = float(self.fun(x))
        self.trace.append((x, f))
        if self.callback is not None:
            self.callback(x, f)
        if not math.isfinite(f):
            log.warning("objective returned %r at %s; point rejected", f, x)
            return math.inf
        if f < self.best_f:
            self.best_f, self.best_x = f, x
        return f

    @property
    def n(self) -> int:
        return len(self.trace)


def _check_start(x0, bounds: Bounds) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape[0] != len(bounds):
        raise ValidationError(f"x0 has {x0.shape[0]} entries, bounds have {len(bounds)}")
    if not bounds.contains(x0):
        bad = [i for i in range(len(x0)) if not bounds.lo[i] <= x0[i] <= bounds.hi[i]]
        raise BoundsError(f"x0 outside bounds at indices {bad}")
    return x0


def box_trust_step(g: np.ndarray, rho: float, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Minimize ``g·d`` subject to ``|d| <= rho`` and ``lo <= d <= hi`` (``lo <= 0 <= hi``).

    The minimizer lies on the path ``d(t) = clip(-t g, lo, hi)`` whose norm is
    nondecreasing in ``t``. Between the times at which coordinates hit their
    bounds, ``|d(t)|² = C + t² G`` so the boundary crossing is solved exactly.
    """
    g = np.asarray(g, dtype=float)
    if not np.any(g):
        return np.zeros_like(g)
    with np.errstate(divide="ignore", invalid="ignore"):
        hit = np.where(g > 0, -lo / g, np.where(g < 0, -hi / g, np.inf))
    limit = np.where(g > 0, lo, np.where(g < 0, hi, 0.0))
    prev = 0.0
    for tk in list(np.unique(hit[np.isfinite(hit)])) + [np.inf]:
        moving = (hit > prev) & (g != 0)
        c = float(np.sum(limit[~moving & (g != 0)] ** 2))
        gm = float(np.sum(g[moving] ** 2))
        if gm > 0:
            t = math.sqrt(max(rho**2 - c, 0.0) / gm)
            if t <= tk:
                return np.clip(-t * g, lo, hi)
        prev = tk
    return limit


def _initial_simplex(x0, rho, bounds, orientation_seed):
    n = x0.shape[0]
    rng = np.random.default_rng(orientation_seed) if orientation_seed is not None else None
    pts = []
    for i in range(n):
        room_up = bounds.hi[i] - x0[i]
        room_dn = x0[i] - bounds.lo[i]
        sign = 1.0
        if room_up < rho and room_dn > room_up:
            sign = -1.0
        elif rng is not None and room_up >= rho and room_dn >= rho and rng.random() < 0.5:
            sign = -1.0
        step = min(rho, room_up if sign > 0 else room_dn)
        x = x0.copy()
        x[i] += sign * step
        pts.append(x)
    return pts


def minimize_cobyla(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    bounds: Bounds,
    rhobeg: float = 0.1,
    rhoend: float | None = None,
    max_evals: int = 50,
    budget_unit: str = "evals",
    stall_evals: int | None = None,
    orientation_seed: int | None = None,
    callback: Callable[[np.ndarray, float], None] | None = None,
) -> OptimizerReport:
    """Bound-constrained COBYLA.

    Parameters
    ----------
    objective : callable
        ``f(x) -> float``; non-finite values are recorded and the point is
        rejected.
    x0 : array_like
        Feasible starting point (evaluated first).
    bounds : Bounds
    rhobeg, rhoend : float
        Initial and final trust radius (``rhoend`` defaults to ``1e-4 rhobeg``).
    max_evals : int
        Budget, counted in objective evaluations or in trust-region steps
        according to ``budget_unit``.
    stall_evals : int, optional
        Stop when this many consecutive evaluations fail to improve the best
        value (default ``max(30, 10 (n + 1))``).
    orientation_seed : int, optional
        Randomly flip initial simplex directions where both are feasible.
    """
    if budget_unit not in BUDGET_UNITS:
        raise ValidationError(f"budget_unit must be one of {BUDGET_UNITS}")
    x0 = _check_start(x0, bounds)
    rhoend = 1e-4 * rhobeg if rhoend is None else rhoend
    if not rhobeg > rhoend > 0:
        raise ValidationError("need rhobeg > rhoend > 0")
    if max_evals < 1:
        raise ValidationError("max_evals must be positive")

    # fixed coordinates (lo == hi) are removed from the search
    free = bounds.hi - bounds.lo > 0
    n = int(np.sum(free))
    full_eval = _Evaluator(objective, bounds, callback)
    stall_evals = stall_evals or max(30, 10 * (n + 1))

    def to_full(z):
        x = x0.copy()
        x[free] = z
        return x

    sub = Bounds(bounds.lo[free], bounds.hi[free])
    iters = 0

    def budget_left() -> bool:
        if budget_unit == "evals":
            return full_eval.n < max_evals
        # trust-step budgeting still caps runaway evaluation counts
        return iters < max_evals and full_eval.n < 50 * max_evals

    def evaluate(z):
        return full_eval(to_full(z))

    def report(term):
        bx = full_eval.best_x if full_eval.best_x is not None else x0
        return OptimizerReport(
            np.array(bx), float(full_eval.best_f), full_eval.n, full_eval.trace, term, iters
        )

    f0 = evaluate(x0[free])
    if not math.isfinite(f0):
        raise EvaluationError(f"objective is not finite at the starting point {x0}")
    if n == 0:
        return report("trust_radius_converged")

    rho = float(rhobeg)
    verts = [x0[free].copy()]
    fvals = [f0]
    for z in _initial_simplex(x0[free], rho, sub, orientation_seed):
        if not budget_left():
            return report("max_evals")
        fz = evaluate(z)
        if not math.isfinite(fz):
            # try the mirrored direction once
            mirrored = 2 * verts[0] - z
            if sub.contains(mirrored) and budget_left():
                z, fz = mirrored, evaluate(mirrored)
            if not math.isfinite(fz):
                raise EvaluationError("objective not finite on the initial simplex")
        verts.append(z)
        fvals.append(fz)
    verts_a = np.array(verts)
    fvals_a = np.array(fvals)
    opt = int(np.argmin(fvals_a))
    last_improve = full_eval.n

    def simplex():
        others = [j for j in range(n + 1) if j != opt]
        sim = verts_a[others] - verts_a[opt]
        try:
            simi = np.linalg.inv(sim.T)  # rows: dual basis, simi[j]·sim[k] = δ_jk
        except np.linalg.LinAlgError:
            simi = np.linalg.pinv(sim.T)
        return others, sim, simi

    def model_gradient(others, simi):
        df = fvals_a[others] - fvals_a[opt]
        return simi.T @ df

    def acceptability(sim, simi):
        vsig = 1.0 / np.maximum(np.linalg.norm(simi, axis=1), 1e-300)
        veta = np.linalg.norm(sim, axis=1)
        ok = bool(np.all(vsig >= _ALPHA * rho) and np.all(veta <= _BETA * rho))
        return ok, vsig, veta

    def replace(k, z, fz):
        nonlocal opt
        verts_a[k] = z
        fvals_a[k] = fz
        if fz < fvals_a[opt]:
            opt = k

    def shrink_or_stop():
        nonlocal rho
        if rho <= rhoend:
            return False
        rho = 0.5 * rho
        if rho <= 1.5 * rhoend:
            rho = rhoend
        log.debug("cobyla: rho -> %.3g (best %.6g)", rho, fvals_a[opt])
        return True

    need_geometry = False
    while True:
        if not budget_left():
            return report("max_evals")
        if full_eval.n - last_improve >= stall_evals:
            return report("stall")
        others, sim, simi = simplex()
        ok, vsig, veta = acceptability(sim, simi)
        g = model_gradient(others, simi)
        xo = verts_a[opt]

        if need_geometry and not ok:
            # replace the worst-placed vertex by a point at distance γρ from
            # the best vertex, normal to the opposite face
            far = veta > _BETA * rho
            j = int(np.argmax(veta)) if np.any(far) else int(np.argmin(vsig))
            direction = simi[j] / np.linalg.norm(simi[j])
            cands = []
            for sgn in (1.0, -1.0):
                d = np.clip(sgn * _GAMMA * rho * direction, sub.lo - xo, sub.hi - xo)
                cands.append((round(abs(float(d @ direction)) / (_GAMMA * rho), 6), -float(g @ d), sgn, d))
            # prefer the sign whose feasible step stays farthest from the face,
            # then the one the linear model favours
            d = max(cands, key=lambda c: c[:3])[3]
            need_geometry = False
            if np.linalg.norm(d) == 0:
                continue
            z = np.clip(xo + d, sub.lo, sub.hi)
            fz = evaluate(z)
            if fz < fvals_a[opt]:
                last_improve = full_eval.n
            if math.isfinite(fz):
                replace(others[j], z, fz)
            continue
        need_geometry = False

        d = box_trust_step(g, rho, sub.lo - xo, sub.hi - xo)
        failed = np.linalg.norm(d) < 0.5 * rho
        if not failed:
            iters += 1
            z = np.clip(xo + d, sub.lo, sub.hi)
            fz = evaluate(z)
            pred = -float(g @ d)
            actual = fvals_a[opt] - fz if math.isfinite(fz) else -math.inf
            if actual > 0:
                last_improve = full_eval.n
            if math.isfinite(fz):
                jdrop = _vertex_to_drop(d, sim, simi, vsig, veta, rho, actual > 0)
                if jdrop is not None:
                    replace(others[jdrop], z, fz)
            if actual > 0 and actual >= 0.1 * pred:
                continue
        # the step was short or poor: fix the geometry first, else shrink rho
        others, sim, simi = simplex()
        if not acceptability(sim, simi)[0]:
            need_geometry = True
            continue
        if not shrink_or_stop():
            return report("trust_radius_converged")


def _vertex_to_drop(d, sim, simi, vsig, veta, rho, improved) -> int | None:
    """Powell's choice of the simplex vertex replaced by a trust-step point.

    Returns ``None`` when keeping the simplex is better (an unimproved point
    that would not enlarge the simplex volume).
    """
    sig = np.abs(simi @ d)
    jdrop = None
    best = 0.0 if improved else 1.0
    for j in range(len(sig)):
        if sig[j] > best:
            best, jdrop = sig[j], j
    sigbar = sig * vsig
    edgmax = _DELTA * rho
    for j in range(len(sig)):
        if sigbar[j] >= _ALPHA * rho or sigbar[j] >= vsig[j]:
            dist = float(np.linalg.norm(d - sim[j])) if improved else veta[j]
            if dist > edgmax:
                edgmax, jdrop = dist, j
    return jdrop


def minimize_neldermead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    bounds: Bounds | None = None,
    max_evals: int = 1000,
    xatol: float = 1e-8,
    fatol: float = 1e-10,
    initial_step: float | None = None,
    penalty: float = 1e3,
    callback: Callable[[np.ndarray, float], None] | None = None,
) -> OptimizerReport:
    """Nelder-Mead with standard coefficients (1, 2, 1/2, 1/2).

    Trial points outside ``bounds`` are evaluated at their clipped image plus
    ``penalty`` times the clipping distance. Ties in the simplex ordering are
    broken by the lowest vertex index.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.shape[0]
    bounds = bounds or Bounds.unbounded(n)
    x0 = _check_start(x0, bounds)
    ev = _Evaluator(objective, bounds, callback)

    def f(x):
        xc = bounds.clip(x)
        val = ev(xc)
        return val + penalty * float(np.linalg.norm(x - xc))

    def report(term):
        return OptimizerReport(np.array(ev.best_x if ev.best_x is not None else x0),
                               float(ev.best_f), ev.n, ev.trace, term, ev.n)

    sim = [x0]
    for i in range(n):
        x = x0.copy()
        if initial_step is not None:
            step = initial_step
        else:
            step = 0.05 * x[i] if x[i] != 0 else 0.00025
        x[i] += step
        if x[i] > bounds.hi[i]:
            x[i] = x0[i] - abs(step)
        sim.append(x)
    sim = np.array(sim)
    fs = []
    for x in sim:
        if ev.n >= max_evals:
            return report("max_evals")
        fs.append(f(x))
    fs = np.array(fs)

    while True:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        # both tests must hold: a simplex straddling the minimum has equal values
        if np.max(np.abs(sim[1:] - sim[0])) <= xatol and np.max(np.abs(fs[1:] - fs[0])) <= fatol:
            return report("trust_radius_converged")
        if ev.n >= max_evals:
            return report("max_evals")
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < fs[0]:
            if ev.n >= max_evals:
                sim[-1], fs[-1] = xr, fr
                continue
            xe = centroid + 2 * (centroid - sim[-1])
            fe = f(xe)
            sim[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
            continue
        if fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
            continue
        if ev.n >= max_evals:
            continue
        if fr < fs[-1]:
            xc = centroid + 0.5 * (xr - centroid)
            fc = f(xc)
            if fc <= fr:
                sim[-1], fs[-1] = xc, fc
                continue
        else:
            xc = centroid + 0.5 * (sim[-1] - centroid)
            fc = f(xc)
            if fc < fs[-1]:
                sim[-1], fs[-1] = xc, fc
                continue
        for i in range(1, n + 1):
            if ev.n >= max_evals:
                break
            sim[i] = sim[0] + 0.5 * (sim[i] - sim[0])
            fs[i] = f(sim[i])
