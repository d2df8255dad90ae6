"""Coordinate and quasi-Newton optimizers for circuit parameters."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

GRID = 1024
SINGLE_RESIDUAL_TOL = 1e-6
DOUBLED_RESIDUAL_TOL = 1e-6


class StructureViolation(RuntimeError):
    """The objective is not sinusoidal in the chosen parameter."""


@dataclass(frozen=True)
class SinusoidFit:
    """y = P sin(2t + phi) + Q sin(t + psi) + offset."""

    P: float
    phi: float
    Q: float
    psi: float
    offset: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.P * np.sin(2 * t + self.phi) + self.Q * np.sin(t + self.psi) + self.offset

    def derivative(self, t, order=1):
        t = np.asarray(t, dtype=float)
        if order == 1:
            return 2 * self.P * np.cos(2 * t + self.phi) + self.Q * np.cos(t + self.psi)
        return -4 * self.P * np.sin(2 * t + self.phi) - self.Q * np.sin(t + self.psi)


def wrap(t):
    """Map angles to [-pi, pi)."""
    return (np.asarray(t) + np.pi) % (2 * np.pi) - np.pi


def _with(params, k, value):
    out = np.array(params, dtype=float, copy=True)
    out[k] = value
    return out


def _pick(candidates, values, current):
    """Lowest value; ties go to the candidate nearest ``current``, then the smaller angle."""
    values = np.asarray(values)
    best = values.min()
    tied = [c for c, v in zip(candidates, values) if v <= best + 1e-12]
    tied.sort(key=lambda c: (round(abs(wrap(c - current)), 12), c))
    return tied[0]


# --------------------------------------------------------------------------- single sinusoid


def rotosolve_step(objective: Callable, k: int, params, f0: float | None = None):
    """Set parameter ``k`` to the minimum of a sin(t + b) + c.

    Three probes at t0, t0 + pi/2, t0 - pi/2 (t0 the current value) fix the
    sinusoid; a fourth probe at t0 + pi checks the structure.
    Returns ``(params, value, n_evals)``.
    """
    params = np.asarray(params, dtype=float)
    t0 = params[k]
    y0 = objective(params) if f0 is None else f0
    yp = objective(_with(params, k, t0 + np.pi / 2))
    ym = objective(_with(params, k, t0 - np.pi / 2))
    evals = 2 if f0 is not None else 3
    c = 0.5 * (yp + ym)
    # y(t0 + s) = c + R cos(s) + S sin(s)
    R, S = y0 - c, 0.5 * (yp - ym)
    yh = objective(_with(params, k, t0 + np.pi))
    evals += 1
    if abs(yh - (c - R)) > SINGLE_RESIDUAL_TOL * max(1.0, abs(c)):
        raise StructureViolation(f"single-sinusoid residual {abs(yh - (c - R)):.2e} on parameter {k}")
    amp = np.hypot(R, S)
    if amp < 1e-14:
        return params, y0, evals
    # minimum of R cos s + S sin s is at s = atan2(S, R) + pi
    s = np.arctan2(S, R) + np.pi
    t_new = float(wrap(t0 + s))
    value = c - amp
    if value > y0:
        return params, y0, evals
    return _with(params, k, t_new), value, evals


# --------------------------------------------------------------------------- doubled sinusoid

DOUBLED_PROBES = (0.0, np.pi, np.pi / 2, -np.pi / 2, np.pi / 4, -np.pi / 4)
HELD_OUT = 3 * np.pi / 4


def fit_doubled(y_of: Callable[[float], float], shift: float = 0.0, values=None):
    """Fit the two-frequency model from the six standard probes.

    Probes are taken at ``shift + p`` for p in DOUBLED_PROBES; the returned
    model is expressed in the shifted variable s = t - shift.
    """
    if values is None:
        values = [y_of(shift + p) for p in DOUBLED_PROBES]
    y0, ypi, yh, ymh, yq, ymq = values
    A = y0 + ypi
    B = y0 - ypi
    C = yh + ymh
    D = yh - ymh
    E = yq - ymq
    a = (2 * E - np.sqrt(2) * D) / 4
    b = (A - C) / 4
    c = D / 2
    d = B / 2
    offset = (A + C) / 4
    P, phi = np.hypot(a, b), np.arctan2(b, a)
    Q, psi = np.hypot(c, d), np.arctan2(d, c)
    return SinusoidFit(float(P), float(phi), float(Q), float(psi), float(offset))


def minimize_fit(fit: SinusoidFit, current: float = 0.0):
    """Global minimizer over [-pi, pi): dense grid then Newton polish."""
    grid = -np.pi + 2 * np.pi * np.arange(GRID) / GRID
    vals = fit(grid)
    # local minima of the sampled curve (periodic neighbours)
    left, right = np.roll(vals, 1), np.roll(vals, -1)
    idx = np.nonzero((vals <= left) & (vals <= right))[0]
    cands = []
    for i in idx:
        t = grid[i]
        for _ in range(3):
            h2 = fit.derivative(t, 2)
            if h2 <= 0:
                break
            t = t - fit.derivative(t, 1) / h2
        t = float(wrap(t))
        if abs(wrap(t - grid[i])) > 2 * np.pi / GRID * 2 or fit(t) > vals[i]:
            t = float(grid[i])
        cands.append(t)
    cands_v = [float(fit(t)) for t in cands]
    t = _pick(np.array(cands), cands_v, current)
    return float(t), float(fit(t))


def doubled_rotosolve_step(objective: Callable, k: int, params, f0: float | None = None, check: bool = True):
    """Rotosolve for a parameter that drives two identical gates.

    Six probes around the current value fit the model, a seventh at 3 pi/4
    checks it. Returns ``(params, value, n_evals, fit)``.
    """
    params = np.asarray(params, dtype=float)
    t0 = float(params[k])
    values = []
    evals = 0
    for p in DOUBLED_PROBES:
        if p == 0.0 and f0 is not None:
            values.append(f0)
            continue
        values.append(objective(_with(params, k, t0 + p)))
        evals += 1
    fit = fit_doubled(None, t0, values)
    if check:
        yh = objective(_with(params, k, t0 + HELD_OUT))
        evals += 1
        resid = abs(yh - fit(HELD_OUT))
        if resid > DOUBLED_RESIDUAL_TOL * max(1.0, abs(fit.offset)):
            raise StructureViolation(f"doubled-sinusoid residual {resid:.2e} on parameter {k}")
    s, value = minimize_fit(fit, 0.0)
    y_cur = values[0]
    if value >= y_cur:
        return params, y_cur, evals, fit
    return _with(params, k, float(wrap(t0 + s))), value, evals, fit


# --------------------------------------------------------------------------- sweeps


@dataclass
class SweepTrace:
    values: list = field(default_factory=list)
    params: list = field(default_factory=list)
    evaluations: int = 0
    converged: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            n = len(self.params[0]) if self.params else 0
            w.writerow(["sweep", "objective"] + [f"p{k}" for k in range(n)])
            for i, (v, p) in enumerate(zip(self.values, self.params)):
                w.writerow([i, repr(float(v))] + [repr(float(x)) for x in p])


def sweep(objective: Callable, params0, schedule: Sequence[str] | str = "doubled", tol: float = 1e-10,
          max_sweeps: int = 100, seed: int | None = None, order: Sequence[int] | None = None):
    """Cyclic coordinate descent.

    ``schedule`` assigns each parameter "single", "doubled" or "skip" (or one
    string for all). Stops when a sweep improves the objective by less than
    ``tol``. Returns ``(params, value, trace)``; ``trace.values`` is monotone.
    """
    params = np.array(params0, dtype=float)
    n = params.size
    if isinstance(schedule, str):
        schedule = [schedule] * n
    if len(schedule) != n:
        raise ValueError("schedule length differs from parameter count")
    order = list(range(n)) if order is None else list(order)
    value = float(objective(params))
    trace = SweepTrace([value], [params.copy()], 1)
    for _ in range(max_sweeps):
        start = value
        for k in order:
            kind = schedule[k]
            if kind == "skip":
                continue
            if kind == "single":
                new, v, ev = rotosolve_step(objective, k, params, value)
            elif kind == "doubled":
                new, v, ev, _ = doubled_rotosolve_step(objective, k, params, value)
            else:
                raise ValueError(f"unknown step kind {kind!r}")
            trace.evaluations += ev
            if v <= value:
                params, value = new, v
        trace.values.append(value)
        trace.params.append(params.copy())
        if start - value < tol:
            trace.converged = True
            break
    return params, value, trace


# --------------------------------------------------------------------------- generic fallback


@dataclass
class FallbackResult:
    x: np.ndarray
    value: float
    evaluations: int
    converged: bool
    message: str = ""


def central_gradient(f: Callable, x, h: float = 1e-6):
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fallback_minimize(objective: Callable, params0, tol: float = 1e-10, max_evals: int = 20000,
                      seed: int | None = None, grad: Callable | None = None, fd_step: float = 1e-6):
    """Quasi-Newton (BFGS) with central-difference gradients unless ``grad`` is given."""
    x0 = np.asarray(params0, dtype=float)
    if not np.isfinite(objective(x0)):
        raise ValueError("objective not finite at the starting point")
    count = [0]

    def f(x):
        count[0] += 1
        return float(objective(x))

    jac = grad if grad is not None else (lambda x: central_gradient(f, x, fd_step))
    res = minimize(f, x0, jac=jac, method="BFGS",
                   options={"gtol": tol, "maxiter": max(1, max_evals // max(1, 2 * x0.size + 1))})
    gnorm = float(np.linalg.norm(jac(res.x)))
    converged = gnorm < max(tol, 1e-12) * 10 or bool(res.success)
    return FallbackResult(res.x, float(res.fun), count[0], converged and count[0] <= max_evals, str(res.message))


def parameter_shift_gradient(objective: Callable, params, k: int) -> float:
    """[f(t + pi/2) - f(t - pi/2)] / 2 for a single Pauli-exponential parameter."""
    params = np.asarray(params, dtype=float)
    t = params[k]
    return 0.5 * (objective(_with(params, k, t + np.pi / 2)) - objective(_with(params, k, t - np.pi / 2)))
