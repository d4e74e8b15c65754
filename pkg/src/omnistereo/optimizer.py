"""Constrained maximisation of the stereo baseline over the six design parameters.

The design vector is ``theta = [c1, c2, k1, k2, d, r_sys]``. The equality that
both mirrors share one radius is built into the parameterisation, so only the
inequalities enter the solver.

Each start goes through three phases:

1. feasibility restoration (bounded least squares, COBYLA fallback);
2. a Powell-Hestenes-Rockafellar augmented Lagrangian whose inner
   subproblems are solved by COBYLA on the scaled bound box;
3. an SLSQP polish with central finite-difference gradients, kept only if
   it stays feasible and does not lower the baseline.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares, minimize, nnls

from .analysis import size_mass
from .projection import surface
from .rig import RigError, RigSpec, semi_axes

log = logging.getLogger(__name__)

# g1..g9 are the published constraints; the rest are guards (see ConstraintSet)
CONSTRAINT_NAMES = ("g1", "g2", "g3", "g4", "g5", "g6", "g7", "g8", "g9",
                    "sroi_11", "sroi_12", "sroi_21", "sroi_22", "camera_fov")
N_CONS = len(CONSTRAINT_NAMES)
_GRAM_INDEX = 3


class InfeasibleError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class ConstraintSet:
    """Constraint constants and the design bound box.

    ``alpha_sroi_min_deg`` keeps a common field of view between the mirrors
    (without it the baseline grows by turning the stereo region inside out),
    split into four smooth pairwise inequalities. ``camera_fov`` requires
    the camera to see mirror 1's rim no wider than mirror 2's hole allows.
    """
    payload_g: float = 650.0
    h_max: float = 150.0
    theta1_max_deg: float = 14.0
    theta1_min_deg: float = -25.0
    theta2_min_deg: float = -14.0
    vertex_clearance: float = 5.0
    curvature_ratio: float = 5.0 / 3.0
    alpha_sroi_min_deg: float = 20.0
    lower: tuple = (20.0, 20.0, 2.1, 2.1, 20.0, 10.0)
    upper: tuple = (400.0, 400.0, 40.0, 40.0, 400.0, 80.0)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lower, float), np.asarray(self.upper, float)


@dataclass
class OptimizerOptions:
    seeds: int = 16
    seed: int = 0
    max_outer: int = 12
    inner_maxiter: int = 400
    tol: float = 1e-6
    fd_rel_step: float = 1e-6
    mu0: float = 10.0


def baseline(theta) -> float:
    c1, c2, _, _, d, _ = (float(t) for t in theta)
    return c1 + c2 - d


def _validity(theta, template: RigSpec) -> np.ndarray:
    """Signed violations of the preconditions that derive_surfaces needs."""
    c1, _, k1, _, d, r_sys = (float(t) for t in theta)
    a1, b1 = semi_axes(c1, k1)
    dz = 0.5 * d - 0.5 * c1
    cut = a1 - dz
    if cut < 0:
        rim = b1 * math.sqrt(dz * dz / (a1 * a1) - 1.0) - r_sys
    else:
        rim = 1.0
    return np.array([cut, rim, template.r_cam - r_sys])


def evaluate_constraints(theta, template: RigSpec, cons: ConstraintSet = ConstraintSet()) -> np.ndarray:
    """Signed violations in CONSTRAINT_NAMES order (positive = violated by that amount).

    Units: mm, degrees and grams. Geometry that cannot be derived yields +inf
    in every constraint that depends on it.
    """
    c1, c2, k1, k2, d, r_sys = (float(t) for t in theta)
    g = np.full(N_CONS, np.inf)
    g[0] = d - c2
    g[1] = 0.5 * d - c1
    g[2] = cons.curvature_ratio - k2 / k1
    a2, _ = semi_axes(c2, k2)
    g[5] = cons.vertex_clearance - ((d - 0.5 * c2) - a2)
    try:
        spec = template.with_theta(theta)
        s1, s2 = surface(spec, 1), surface(spec, 2)
        sm = size_mass(spec)
    except (RigError, ValueError, ZeroDivisionError):
        return g
    g[3] = sm.m_sys - cons.payload_g
    g[4] = sm.h_sys - cons.h_max
    t1min, t1max = math.degrees(s1.theta_min), math.degrees(s1.theta_max)
    t2min, t2max = math.degrees(s2.theta_min), math.degrees(s2.theta_max)
    g[6] = t1max - cons.theta1_max_deg
    g[7] = cons.theta1_min_deg - t1min
    g[8] = cons.theta2_min_deg - t2min
    a = cons.alpha_sroi_min_deg
    g[9] = a - (t1max - t1min)
    g[10] = a - (t1max - t2min)
    g[11] = a - (t2max - t1min)
    g[12] = a - (t2max - t2min)
    z_top = s1.z0 + s1.a / s1.b * math.hypot(s1.b, r_sys)
    z_hole = s2.z0 - s2.a / s2.b * math.hypot(s2.b, spec.r_cam)
    # atan2: a hole rim below the pinhole no longer limits the view (angle > 180 deg)
    g[13] = math.degrees(2 * math.atan2(r_sys, z_top) - 2 * math.atan2(spec.r_cam, z_hole))
    return g


def equality_residual(theta, template: RigSpec) -> float:
    """|h1|: both mirrors are truncated at the same r_sys by construction."""
    spec = template.with_theta(theta)
    try:
        s1, s2 = surface(spec, 1), surface(spec, 2)
    except RigError:
        return 0.0
    return abs(s1.r_max - s2.r_max)


def max_violation(g) -> float:
    g = np.asarray(g, float)
    return float(np.max(np.maximum(g, 0.0))) if np.all(g < np.inf) else math.inf


# ---------------------------------------------------------------------------
# solver internals
# ---------------------------------------------------------------------------

_BIG = 1e6


class _Problem:
    def __init__(self, template, cons):
        self.template = template
        self.cons = cons
        self.lo, self.hi = cons.bounds
        self.span = self.hi - self.lo
        self.n_eval = 0

    def unscale(self, x):
        return self.lo + np.clip(x, 0.0, 1.0) * self.span

    def scale(self, theta):
        return (np.asarray(theta, float) - self.lo) / self.span

    def g(self, theta):
        self.n_eval += 1
        return evaluate_constraints(theta, self.template, self.cons)

    def graded(self, x) -> np.ndarray:
        """Validity checks plus constraints, with geometry failures replaced by
        finite values that still grow with the validity violation."""
        theta = self.unscale(x)
        v = _validity(theta, self.template)
        g = self.g(theta)
        fill = 100.0 * (1.0 + float(np.sum(np.maximum(v, 0.0))))
        return np.concatenate([v, np.where(g < np.inf, g, fill)])

    def merit(self, x, lam, mu):
        """PHR augmented Lagrangian of -baseline in scaled variables."""
        theta = self.unscale(x)
        g = self.g(theta)
        if not np.all(g < np.inf):
            return _BIG + float(np.sum(np.maximum(_validity(theta, self.template), 0.0)))
        shifted = np.maximum(0.0, lam + mu * g)
        return -baseline(theta) + (np.sum(shifted ** 2) - np.sum(lam ** 2)) / (2.0 * mu)


def _box(n):
    return [{"type": "ineq", "fun": (lambda x, i=i: x[i])} for i in range(n)] + \
           [{"type": "ineq", "fun": (lambda x, i=i: 1.0 - x[i])} for i in range(n)]


def _fd_gradient(fun, x, rel):
    grad = np.zeros_like(x)
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return grad


def _fd_jacobian(fun, x, rel):
    cols = []
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((fun(xp) - fun(xm)) / (2.0 * h))
    return np.column_stack(cols)


def _restore(prob: _Problem, x0, maxiter, tol):
    """Feasibility restoration.

    Bounded least squares on the positive parts of the graded constraints
    (grams scaled by 1/100 so they do not swamp mm and degrees), then a
    COBYLA feasibility pass if that stalls.
    """
    if max_violation(prob.g(prob.unscale(x0))) <= tol:
        return x0
    weights = np.ones(3 + N_CONS)
    weights[3 + _GRAM_INDEX] = 1e-2

    def resid(x):
        return np.maximum(prob.graded(x) + 1e-4, 0.0) * weights

    res = least_squares(resid, x0, bounds=(0.0, 1.0), xtol=1e-12, ftol=1e-12, gtol=1e-12,
                        max_nfev=maxiter)
    x = np.clip(res.x, 0.0, 1.0)
    if max_violation(prob.g(prob.unscale(x))) <= 1e-3:
        return x
    res = minimize(lambda _x: 0.0, x, method="COBYLA",
                   constraints=[{"type": "ineq", "fun": lambda xx: -prob.graded(xx)}] + _box(x.size),
                   options={"maxiter": maxiter, "rhobeg": 0.05, "tol": 1e-10})
    return np.clip(res.x, 0.0, 1.0)


def _polish(prob: _Problem, x0, rel, maxiter):
    """SLSQP on the original problem with central-difference gradients."""
    def fun(x):
        return -baseline(prob.unscale(x))

    def cons(x):
        g = prob.g(prob.unscale(x))
        return -np.where(g < np.inf, g, _BIG)

    res = minimize(fun, x0, method="SLSQP", jac=lambda x: _fd_gradient(fun, x, rel),
                   bounds=[(0.0, 1.0)] * x0.size,
                   constraints=[{"type": "ineq", "fun": cons,
                                 "jac": lambda x: _fd_jacobian(cons, x, rel)}],
                   options={"maxiter": maxiter, "ftol": 1e-12})
    return np.clip(res.x, 0.0, 1.0)


def kkt_check(prob: _Problem, theta, rel: float = 1e-6, active_tol: float = 1e-2):
    """First-order stationarity at ``theta``.

    Multipliers of the active constraints (and active bounds) are fitted by
    non-negative least squares to cancel the objective gradient. Returns
    ``(relative_residual, multipliers)``; the residual is divided by the
    norm of the objective gradient, both in scaled variables.
    """
    x = prob.scale(theta)
    g0 = prob.g(theta)
    grad_f = _fd_gradient(lambda xx: -baseline(prob.unscale(xx)), x, rel)
    jac = _fd_jacobian(lambda xx: prob.g(prob.unscale(xx)), x, rel)
    cols, names = [], []
    for i in np.flatnonzero(np.abs(g0) <= active_tol):
        if np.all(np.isfinite(jac[i])):
            cols.append(jac[i])
            names.append(CONSTRAINT_NAMES[i])
    for j in range(x.size):
        if x[j] <= 1e-9 or x[j] >= 1 - 1e-9:
            e = np.zeros(x.size)
            e[j] = -1.0 if x[j] <= 1e-9 else 1.0
            cols.append(e)
            names.append(f"bound_{j}")
    if not cols:
        return 1.0, {}
    lam, resid = nnls(np.column_stack(cols), -grad_f)
    return float(resid) / float(np.linalg.norm(grad_f)), {n: float(v) for n, v in zip(names, lam)}


def _solve_one(prob: _Problem, x0, opts: OptimizerOptions) -> dict:
    x = _restore(prob, np.clip(x0, 0.0, 1.0), 4 * opts.inner_maxiter, opts.tol)
    viol = max_violation(prob.g(prob.unscale(x)))
    lam = np.zeros(N_CONS)
    mu = opts.mu0
    trace = [{"phase": "restore", "baseline": baseline(prob.unscale(x)), "max_violation": viol}]
    for it in range(1, opts.max_outer + 1):
        res = minimize(prob.merit, x, args=(lam, mu), method="COBYLA", constraints=_box(x.size),
                       options={"maxiter": opts.inner_maxiter, "rhobeg": 0.02, "tol": 1e-10})
        x_new = np.clip(res.x, 0.0, 1.0)
        g = prob.g(prob.unscale(x_new))
        v_new = max_violation(g)
        # once restored, never accept an iterate that raises the max violation
        if not v_new <= max(viol, opts.tol):
            mu = min(mu * 10.0, 1e9)
            continue
        b_old = baseline(prob.unscale(x))
        x, viol = x_new, v_new
        lam = np.maximum(0.0, lam + mu * g)
        trace.append({"phase": "al", "iter": it, "baseline": baseline(prob.unscale(x)),
                      "max_violation": viol, "mu": mu})
        if viol <= opts.tol and abs(trace[-1]["baseline"] - b_old) <= 1e-6 * abs(b_old):
            break
        if viol > opts.tol:
            mu = min(mu * 10.0, 1e9)
    if viol < math.inf:
        x_pol = _polish(prob, x, opts.fd_rel_step, opts.inner_maxiter)
        v_pol = max_violation(prob.g(prob.unscale(x_pol)))
        b_pol = baseline(prob.unscale(x_pol))
        if v_pol <= opts.tol and (viol > opts.tol or b_pol >= baseline(prob.unscale(x))):
            x, viol = x_pol, v_pol
            trace.append({"phase": "polish", "baseline": b_pol, "max_violation": v_pol})
    theta = prob.unscale(x)
    g = prob.g(theta)
    if viol <= opts.tol:
        stationarity, kkt = kkt_check(prob, theta, opts.fd_rel_step)
    else:
        stationarity, kkt = math.inf, {}
    return {"theta": theta, "g": g, "al_lam": lam, "trace": trace,
            "stationarity": stationarity, "kkt": kkt}


def start_points(start, cons: ConstraintSet, opts: OptimizerOptions) -> list:
    """Scaled start vectors: the given start (if any) then seeded uniform draws."""
    lo, hi = cons.bounds
    rng = np.random.default_rng(opts.seed)
    pts = []
    if start is not None:
        pts.append((np.asarray(start, float) - lo) / (hi - lo))
    while len(pts) < opts.seeds:
        pts.append(rng.uniform(0.0, 1.0, size=6))
    return pts


def _h_sys(theta, template):
    try:
        return size_mass(template.with_theta(theta)).h_sys
    except (RigError, ValueError):
        return math.inf


def _jsonable(v):
    return None if not math.isfinite(v) else float(v)


def optimize(start, template: RigSpec, cons: ConstraintSet = ConstraintSet(),
             options: OptimizerOptions | None = None):
    """Maximise the baseline from ``start`` plus seeded random starts in the box.

    ``template`` supplies the non-design constants (camera, materials).
    Returns ``(theta_star, b_star, report)``; raises InfeasibleError with
    the report attached when no start reaches feasibility.
    """
    opts = options or OptimizerOptions()
    prob = _Problem(template, cons)
    lo, hi = cons.bounds
    if start is not None:
        start = np.asarray(start, float)
        if start.shape != (6,) or np.any(start < lo) or np.any(start > hi):
            raise ValueError("start must be a 6-vector inside the bound box")
    runs = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i, x0 in enumerate(start_points(start, cons, opts)):
            out = _solve_one(prob, x0, opts)
            viol = max_violation(out["g"])
            runs.append({
                "start": i,
                "theta": [float(t) for t in out["theta"]],
                "baseline": baseline(out["theta"]),
                "max_violation": _jsonable(viol),
                "feasible": viol <= opts.tol,
                "stationarity": _jsonable(out["stationarity"]),
                "multipliers": out["kkt"],
                "al_multipliers": dict(zip(CONSTRAINT_NAMES, (float(v) for v in out["al_lam"]))),
                "trace": out["trace"],
            })
            log.info("start %d: b=%.4f max violation %.3g", i, runs[-1]["baseline"], viol)
    report = {
        "constraint_names": list(CONSTRAINT_NAMES),
        "constraints": asdict(cons),
        "options": asdict(opts),
        "spec_hash": template.spec_hash(),
        "runs": [{k: v for k, v in r.items() if k != "trace"} for r in runs],
        "evaluations": prob.n_eval,
    }
    feasible = [r for r in runs if r["feasible"]]
    if not feasible:
        report["status"] = "infeasible"
        report["best_violation"] = min((r["max_violation"] or math.inf) for r in runs)
        raise InfeasibleError("no start reached a feasible design", report)
    best = min(feasible, key=lambda r: (-r["baseline"], _h_sys(r["theta"], template), r["theta"]))
    theta_star = np.array(best["theta"])
    g = evaluate_constraints(theta_star, template, cons)
    report.update({
        "status": "ok",
        "best_start": best["start"],
        "theta_star": best["theta"],
        "b_star": best["baseline"],
        "slack": dict(zip(CONSTRAINT_NAMES, (float(-v) for v in g))),
        "active": [n for n, v in zip(CONSTRAINT_NAMES, g) if abs(v) < 1e-4],
        "multipliers": best["multipliers"],
        "h1_residual": equality_residual(theta_star, template),
        "stationarity": best["stationarity"],
        "trace": best["trace"],
    })
    return theta_star, best["baseline"], report
