"""Method of moving asymptotes for box-bounded design vectors, and the optimization driver."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

log = logging.getLogger(__name__)


class MmaError(ValueError):
    pass


@dataclass
class MmaSettings:
    move: float = 0.2
    asy_init: float = 0.5
    asy_shrink: float = 0.7
    asy_grow: float = 1.2
    asy_min: float = 1e-2  # asymptote distance bounds, as fractions of the box width
    asy_max: float = 10.0
    albefa: float = 0.1
    raa0: float = 1e-5
    c_elastic: float = 1e3  # penalty on constraint slack; keeps every subproblem feasible
    kkt_tol: float = 1e-9
    max_dual_iter: int = 200

    def __post_init__(self):
        if not (0 < self.move <= 1):
            raise ValueError("move limit must lie in (0, 1]")
        if not (0 < self.asy_shrink < 1 < self.asy_grow):
            raise ValueError("asymptote factors need shrink < 1 < grow")
        if not (0 < self.asy_init and 0 < self.asy_min < self.asy_max):
            raise ValueError("asymptote distances must be positive with asy_min < asy_max")


@dataclass
class MmaState:
    x: np.ndarray
    x_prev: np.ndarray | None = None
    x_prev2: np.ndarray | None = None
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    iteration: int = 0
    lower: float | np.ndarray = 0.0
    upper: float | np.ndarray = 1.0
    kkt: float = 0.0  # dual KKT residual of the last subproblem
    multipliers: np.ndarray | None = None

    @classmethod
    def start(cls, x0, lower=0.0, upper=1.0):
        x0 = np.clip(np.asarray(x0, float), lower, upper)
        return cls(x=x0.copy(), lower=lower, upper=upper)


def _asymptotes(st: MmaState, s: MmaSettings):
    x, width = st.x, np.broadcast_to(st.upper - st.lower, st.x.shape)
    if st.iteration < 2 or st.x_prev2 is None:
        low = x - s.asy_init * width
        upp = x + s.asy_init * width
    else:
        trend = (x - st.x_prev) * (st.x_prev - st.x_prev2)
        gamma = np.where(trend > 0, s.asy_grow, np.where(trend < 0, s.asy_shrink, 1.0))
        low = x - gamma * (st.x_prev - st.low)
        upp = x + gamma * (st.upp - st.x_prev)
        low = np.clip(low, x - s.asy_max * width, x - s.asy_min * width)
        upp = np.clip(upp, x + s.asy_min * width, x + s.asy_max * width)
    return low, upp


@dataclass
class _Subproblem:
    low: np.ndarray
    upp: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    p0: np.ndarray
    q0: np.ndarray
    P: np.ndarray  # (m, n)
    Q: np.ndarray
    b: np.ndarray  # constraint right-hand sides
    c: np.ndarray
    d: np.ndarray

    def primal(self, lam):
        """Minimizer of the Lagrangian over the box for multipliers ``lam``."""
        p = self.p0 + lam @ self.P
        q = self.q0 + lam @ self.Q
        sp_, sq = np.sqrt(p), np.sqrt(q)
        x = (sp_ * self.low + sq * self.upp) / (sp_ + sq)
        x = np.clip(x, self.alpha, self.beta)
        y = np.maximum(0.0, (lam - self.c) / self.d)
        return x, y, p, q

    def constraint(self, x):
        return self.P @ (1.0 / (self.upp - x)) + self.Q @ (1.0 / (x - self.low)) - self.b

    def dual(self, lam):
        x, y, p, q = self.primal(lam)
        g = self.constraint(x) - y
        W = (np.sum(self.p0 / (self.upp - x) + self.q0 / (x - self.low))
             + lam @ g + self.c @ y + 0.5 * self.d @ (y * y))
        return W, g, x, y, p, q

    def dual_hessian(self, lam, x, p, q):
        ux, xl = self.upp - x, x - self.low
        free = (x > self.alpha) & (x < self.beta)
        G = (self.P / ux ** 2 - self.Q / xl ** 2)[:, free]
        curv = (2 * p / ux ** 3 + 2 * q / xl ** 3)[free]
        H = -(G / curv) @ G.T
        H[np.diag_indices_from(H)] -= (lam > self.c) / self.d
        return H


def _natural_residual(lam, g):
    return float(np.max(np.abs(lam - np.maximum(0.0, lam + g)))) if len(lam) else 0.0


def _solve_dual(sub: _Subproblem, s: MmaSettings, lam0=None):
    """Projected Newton ascent on the concave dual; returns (x, y, lam, kkt)."""
    m = len(sub.b)
    lam = np.zeros(m) if lam0 is None else np.clip(np.asarray(lam0, float), 0.0, None)
    W, g, x, y, p, q = sub.dual(lam)
    if m == 0:
        return x, y, lam, 0.0
    res = _natural_residual(lam, g)
    for _ in range(s.max_dual_iter):
        if res <= s.kkt_tol:
            break
        active = (lam <= 1e-14) & (g < 0)
        H = sub.dual_hessian(lam, x, p, q)
        step = np.zeros(m)
        fr = ~active
        if fr.any():
            Hf = H[np.ix_(fr, fr)] - 1e-12 * np.eye(int(fr.sum()))
            try:
                step[fr] = -np.linalg.solve(Hf, g[fr])
            except np.linalg.LinAlgError:
                step[fr] = g[fr]
        if not np.all(np.isfinite(step)) or step @ g <= 0:
            step = g.copy()
        t, accepted = 1.0, False
        for _ in range(60):
            trial = np.maximum(0.0, lam + t * step)
            Wt, gt, xt, yt, pt, qt = sub.dual(trial)
            if Wt >= W + 1e-4 * g @ (trial - lam) - 1e-15 * abs(W):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        lam, W, g, x, y, p, q = trial, Wt, gt, xt, yt, pt, qt
        res = _natural_residual(lam, g)
    return x, y, lam, res


def mma_update(state: MmaState, f0, df0, g, dg, settings: MmaSettings = None) -> MmaState:
    """One MMA step minimizing f0 subject to g <= 0.  Returns the advanced state."""
    s = settings or MmaSettings()
    df0 = np.asarray(df0, float)
    g = np.atleast_1d(np.asarray(g, float))
    n = len(state.x)
    dg = np.asarray(dg, float).reshape(len(g), n) if len(g) else np.zeros((0, n))
    if df0.shape != (n,):
        raise MmaError(f"gradient shapes {df0.shape}, {dg.shape} do not match {n} variables")
    if not (np.all(np.isfinite(df0)) and np.all(np.isfinite(dg)) and np.isfinite(f0)):
        raise MmaError("non-finite objective or constraint gradient")
    if not np.all(np.isfinite(g)):
        raise MmaError("non-finite constraint value")

    x = state.x
    lo = np.broadcast_to(state.lower, x.shape)
    hi = np.broadcast_to(state.upper, x.shape)
    width = np.maximum(hi - lo, 1e-5)
    low, upp = _asymptotes(state, s)
    alpha = np.maximum.reduce([lo, low + s.albefa * (x - low), x - s.move * width])
    beta = np.minimum.reduce([hi, upp - s.albefa * (upp - x), x + s.move * width])

    ux2, xl2 = (upp - x) ** 2, (x - low) ** 2
    reg = s.raa0 / width

    def split(grad):
        plus, minus = np.maximum(grad, 0.0), np.maximum(-grad, 0.0)
        eps = 1e-3 * (plus + minus) + reg
        return (plus + eps) * ux2, (minus + eps) * xl2

    p0, q0 = split(df0)
    P, Q = zip(*(split(r) for r in dg)) if len(g) else ((), ())
    P = np.array(P).reshape(len(g), n)
    Q = np.array(Q).reshape(len(g), n)
    b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - g
    sub = _Subproblem(low, upp, alpha, beta, p0, q0, P, Q, b,
                      np.full(len(g), s.c_elastic), np.ones(len(g)))
    x_new, _, lam, kkt = _solve_dual(sub, s, state.multipliers)
    if kkt > s.kkt_tol:
        log.warning("MMA subproblem KKT residual %.3e above %.1e", kkt, s.kkt_tol)
    return MmaState(x=x_new, x_prev=x.copy(), x_prev2=None if state.x_prev is None else state.x_prev.copy(),
                    low=low, upp=upp, iteration=state.iteration + 1, lower=state.lower, upper=state.upper,
                    kkt=kkt, multipliers=lam)


# -- optimization driver -------------------------------------------------------

@dataclass
class Continuation:
    """Heaviside sharpness doubling and p_xi increments every ``every`` iterations from ``start``."""
    start: int = 41
    every: int = 40
    beta0: float = 1.0
    beta_max: float = 512.0
    p_xi0: float = 1.0
    p_xi_step: float = 0.25
    p_xi_max: float = 3.0

    def at(self, iteration):
        """(beta, p_xi) in effect at 1-based ``iteration``."""
        bumps = 0 if iteration < self.start else 1 + (iteration - self.start) // self.every
        beta = min(self.beta0 * 2.0 ** bumps, self.beta_max)
        p_xi = min(self.p_xi0 + self.p_xi_step * bumps, self.p_xi_max)
        return beta, p_xi

    def settled(self, iteration):
        beta, p_xi = self.at(iteration)
        return beta >= self.beta_max and p_xi >= self.p_xi_max


@dataclass
class OptimizerSettings:
    max_iter: int = 300
    tol_change: float = 1e-3
    mma: MmaSettings = field(default_factory=MmaSettings)
    continuation: Continuation = field(default_factory=Continuation)


@dataclass
class IterationRecord:
    iteration: int
    J: float
    terms: dict
    g: np.ndarray
    change: float
    beta: float
    p_xi: float
    kkt: float
    seconds: float


@dataclass
class OptimizationResult:
    rho: np.ndarray
    xi: np.ndarray
    records: list
    converged: bool
    evaluation: object = None

    def write_history(self, path, g_names):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "J", *g_names, "design_change", "beta", "p_xi"])
            for r in self.records:
                w.writerow([r.iteration, f"{r.J:.12e}", *(f"{v:.12e}" for v in r.g), f"{r.change:.6e}",
                            f"{r.beta:g}", f"{r.p_xi:g}"])


def optimize_loop(problem, rho0, xi0, settings: OptimizerSettings = None, callback=None) -> OptimizationResult:
    """Maximize the problem's weighted objective under its constraints with MMA.

    Each iteration runs the forward analysis, the adjoint, the chain rule to the
    raw variables and one MMA step; the continuation schedule updates the
    projection sharpness and the material penalty.  A failed analysis is retried
    once from the previous design with the move limit halved.  Stops after
    ``max_iter`` iterations, or once continuation has settled and the largest
    design change is below ``tol_change``.
    """
    from .solver import AnalysisFailure

    s = settings or OptimizerSettings()
    n_el, n_xi = problem.n_el, problem.n_xi
    x = np.concatenate([np.asarray(rho0, float).ravel(), np.asarray(xi0, float).ravel()])
    if len(x) != n_el * (1 + n_xi):
        raise MmaError("initial design has the wrong length")
    state = MmaState.start(x)
    records, scale, converged, ev = [], None, False, None

    def split(v):
        return v[:n_el], v[n_el:].reshape(n_el, n_xi)

    for it in range(1, s.max_iter + 1):
        t0 = time.time()
        beta, p_xi = s.continuation.at(it)
        problem.proj = replace(problem.proj, beta=beta)
        problem.interp = replace(problem.interp, p_xi=p_xi)
        try:
            ev = problem.evaluate(*split(state.x))
        except AnalysisFailure as exc:
            if state.x_prev is None:
                raise
            log.warning("iteration %d: analysis failed (%s); retrying with halved move limit", it, exc)
            retry = replace(state, x=state.x_prev, x_prev=state.x_prev2, x_prev2=None, iteration=0)
            state = mma_update(retry, *last_inputs, settings=replace(s.mma, move=0.5 * s.mma.move))
            ev = problem.evaluate(*split(state.x))
        if scale is None:
            scale = max(abs(ev.J), 1e-30)
        f0 = -ev.J / scale
        df0 = -np.concatenate([ev.dJ[0].ravel(), ev.dJ[1].ravel()]) / scale
        dg = (np.array([np.concatenate([a.ravel(), b.ravel()]) for a, b in ev.dg])
              if ev.dg else np.zeros((0, len(x))))
        last_inputs = (f0, df0, ev.g, dg)
        x_old = state.x
        state = mma_update(state, *last_inputs, settings=s.mma)
        change = float(np.max(np.abs(state.x - x_old)))
        rec = IterationRecord(it, ev.J, dict(ev.terms), np.array(ev.g), change, beta, p_xi, state.kkt,
                              time.time() - t0)
        records.append(rec)
        log.info("it %3d  J=%.6e  g=%s  change=%.3e  beta=%g  p_xi=%g", it, ev.J,
                 np.array2string(np.asarray(ev.g), precision=4), change, beta, p_xi)
        if callback is not None:
            callback(rec, state)
        if change <= s.tol_change and s.continuation.settled(it):
            converged = True
            break
    rho, xi = split(state.x)
    return OptimizationResult(rho, xi, records, converged, ev)
