"""
Weighted Fekete sets, transfinite diameters and moment-constrained sups.

A w-Fekete set maximizes ``log_wvdm`` over H^d.  The optimizer runs
cyclic coordinate ascent (golden-section line searches per point and
axis), then projected gradient ascent with Armijo backtracking, and
finishes with projected Newton steps so the convergence test on the
projected gradient can actually be met.  Every accepted step increases
the objective, so the recorded value history is nondecreasing.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import InfeasibleNeighborhoodError
from .measures import GridMeasure, MomentNeighborhood, Rectangle, as_points, moment_indices
from .vdm import (WeightFunction, grad_log_wvdm_complex, hess_log_wvdm, log_wvdm)

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class FeketeOptions:
    restarts: int = 4
    sweeps: int = 30
    gradient_iters: int = 300
    newton_iters: int = 200
    tol: float = 1e-8
    golden_tol: float = 1e-10
    jitter: float = 0.05
    threads: int = 1


@dataclass
class FeketeResult:
    configuration: np.ndarray
    log_wvdm_value: float
    delta_d: float
    iterations: int
    converged: bool
    history: List[float] = field(default_factory=list, repr=False)
    grad_norm: float = float("nan")

    @property
    def d(self) -> int:
        return self.configuration.size

    def to_json_dict(self) -> dict:
        return {"d": self.d, "log_wvdm": self.log_wvdm_value, "delta_d": self.delta_d,
                "iterations": self.iterations, "converged": self.converged,
                "grad_norm": self.grad_norm,
                "configuration": [[float(z.real), float(z.imag)] for z in self.configuration]}


def canonicalize(points) -> np.ndarray:
    """Sort points by (Re, Im)."""
    pts = as_points(points)
    return pts[np.lexsort((pts.imag, pts.real))]


def normalized_log(value: float, d: int) -> float:
    """(2 / d(d-1)) * value: log of the normalized Vandermonde modulus."""
    return 2.0 * value / (d * (d - 1))


# -- initialization ------------------------------------------------------------

def chebyshev_lobatto(n: int, a: float, b: float) -> np.ndarray:
    if n == 1:
        return np.array([0.5 * (a + b)])
    t = -np.cos(np.pi * np.arange(n) / (n - 1))
    return 0.5 * (a + b) + 0.5 * (b - a) * t


def initial_configuration(rect: Rectangle, d: int, rng=None, jitter: float = 0.0) -> np.ndarray:
    """Tensor Chebyshev-Lobatto points of the rectangle subsampled to d."""
    if rect.is_interval:
        pts = chebyshev_lobatto(d, rect.x_min, rect.x_max) + 1j * rect.y_min
    else:
        ny = max(2, int(math.ceil(math.sqrt(d * rect.height / rect.width))))
        nx = max(2, int(math.ceil(d / ny)))
        X, Y = np.meshgrid(chebyshev_lobatto(nx, rect.x_min, rect.x_max),
                           chebyshev_lobatto(ny, rect.y_min, rect.y_max))
        grid = (X + 1j * Y).ravel()
        idx = np.unique(np.round(np.linspace(0, grid.size - 1, d)).astype(int))
        pts = grid[idx]
    if rng is not None and jitter > 0:
        noise = rng.normal(0, jitter * rect.width, d)
        if not rect.is_interval:
            noise = noise + 1j * rng.normal(0, jitter * rect.height, d)
        # halve the jitter until clamping leaves the points distinct
        for _ in range(30):
            cand = rect.clamp(pts + noise)
            if np.unique(cand).size == d:
                return cand
            noise = noise / 2
    return pts


# -- objective -------------------------------------------------------------------

class _Objective:
    """log_wvdm(λ, w) - mu * Σ max(|gap_n| - eps, 0)^2 in real coordinates."""

    def __init__(self, rect: Rectangle, w: WeightFunction, d: int,
                 nbhd: Optional[MomentNeighborhood] = None, mu: float = 0.0,
                 eps: Optional[float] = None):
        self.rect, self.w, self.d = rect, w, d
        self.interval = rect.is_interval
        self.nbhd = nbhd
        self.mu = mu
        self.eps = nbhd.epsilon if (nbhd is not None and eps is None) else eps
        if self.interval:
            self.lower = np.full(d, rect.x_min)
            self.upper = np.full(d, rect.x_max)
        else:
            self.lower = np.tile([rect.x_min, rect.y_min], d)
            self.upper = np.tile([rect.x_max, rect.y_max], d)
        if nbhd is not None:
            idx = [key for key in nbhd.indices if key != (0, 0)]
            self.exps = np.array(idx, dtype=int).reshape(-1, 2)
            self.ref = np.array([nbhd.reference_moments[key] for key in idx])

    def points(self, v: np.ndarray) -> np.ndarray:
        if self.interval:
            return v + 1j * self.rect.y_min
        return v[0::2] + 1j * v[1::2]

    def variables(self, pts) -> np.ndarray:
        pts = as_points(pts)
        if self.interval:
            return pts.real.copy()
        v = np.empty(2 * pts.size)
        v[0::2], v[1::2] = pts.real, pts.imag
        return v

    # moment gaps of the empirical measure and their derivatives
    def _monomials(self, pts):
        x, y = pts.real[None, :], pts.imag[None, :]
        n1, n2 = self.exps[:, 0:1], self.exps[:, 1:2]
        return x ** n1 * y ** n2

    def gaps(self, pts) -> np.ndarray:
        return self._monomials(pts).mean(axis=1) - self.ref

    def penalty(self, pts) -> float:
        if self.nbhd is None or self.mu == 0:
            return 0.0
        e = np.maximum(np.abs(self.gaps(pts)) - self.eps, 0.0)
        return float(np.sum(e * e))

    def value(self, v) -> float:
        pts = self.points(v)
        val = log_wvdm(pts, self.w)
        if self.nbhd is not None and self.mu:
            val -= self.mu * self.penalty(pts)
        return val

    def _penalty_derivs(self, pts, hessian: bool):
        d = self.d
        x, y = pts.real[None, :], pts.imag[None, :]
        n1, n2 = self.exps[:, 0:1], self.exps[:, 1:2]

        def pw(base, n):
            return np.where(n >= 0, base ** np.maximum(n, 0), 0.0)

        gx = n1 * pw(x, n1 - 1) * pw(y, n2) / d
        gy = n2 * pw(x, n1) * pw(y, n2 - 1) / d
        g = self.gaps(pts)
        e = np.maximum(np.abs(g) - self.eps, 0.0)
        s = np.sign(g) * e
        grad = 2 * (s[:, None] * gx).sum(axis=0) + 2j * (s[:, None] * gy).sum(axis=0)
        if not hessian:
            return grad, None
        act = (e > 0).astype(float)
        if self.interval:
            J = gx * act[:, None]
            H = 2 * J.T @ gx
            hxx = n1 * (n1 - 1) * pw(x, n1 - 2) * pw(y, n2) / d
            H[np.diag_indices(d)] += 2 * (s[:, None] * hxx).sum(axis=0)
            return grad, H
        Jfull = np.empty((g.size, 2 * d))
        Jfull[:, 0::2], Jfull[:, 1::2] = gx, gy
        H = 2 * (Jfull * act[:, None]).T @ Jfull
        hxx = n1 * (n1 - 1) * pw(x, n1 - 2) * pw(y, n2) / d
        hxy = n1 * n2 * pw(x, n1 - 1) * pw(y, n2 - 1) / d
        hyy = n2 * (n2 - 1) * pw(x, n1) * pw(y, n2 - 2) / d
        idx = np.arange(d)
        H[2 * idx, 2 * idx] += 2 * (s[:, None] * hxx).sum(axis=0)
        H[2 * idx, 2 * idx + 1] += 2 * (s[:, None] * hxy).sum(axis=0)
        H[2 * idx + 1, 2 * idx] += 2 * (s[:, None] * hxy).sum(axis=0)
        H[2 * idx + 1, 2 * idx + 1] += 2 * (s[:, None] * hyy).sum(axis=0)
        return grad, H

    def point_value(self, pts, i: int, z: complex) -> float:
        """Objective with point i moved to z, up to a constant independent of z."""
        others = np.delete(pts, i)
        with np.errstate(divide="ignore"):
            val = float(np.sum(np.log(np.abs(z - others))))
        val += self.d * float(self.w.log_w(np.array([z]), check=False)[0])
        if self.nbhd is not None and self.mu:
            moved = pts.copy()
            moved[i] = z
            val -= self.mu * self.penalty(moved)
        return val

    def grad(self, v) -> np.ndarray:
        pts = self.points(v)
        g = grad_log_wvdm_complex(pts, self.w)
        if self.nbhd is not None and self.mu:
            g = g - self.mu * self._penalty_derivs(pts, False)[0]
        return self.variables(g) if not self.interval else g.real.copy()

    def hess(self, v) -> np.ndarray:
        pts = self.points(v)
        H = hess_log_wvdm(pts, self.w, interval=self.interval)
        if self.nbhd is not None and self.mu:
            H = H - self.mu * self._penalty_derivs(pts, True)[1]
        return H

    def projected_grad(self, v, g) -> np.ndarray:
        pg = g.copy()
        pg[(v <= self.lower) & (g < 0)] = 0.0
        pg[(v >= self.upper) & (g > 0)] = 0.0
        return pg


# -- stages ----------------------------------------------------------------------

def _golden_max(f, a, b, tol, fa_hint=None):
    """Golden-section search for a maximum of f on [a, b]; returns (x, f(x))."""
    c = b - GOLDEN * (b - a)
    dd = a + GOLDEN * (b - a)
    fc, fd = f(c), f(dd)
    while b - a > tol:
        if fc >= fd:
            b, dd, fd = dd, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + GOLDEN * (b - a)
            fd = f(dd)
    cands = [(fc, c), (fd, dd), (f(a), a), (f(b), b)]
    best = max(cands, key=lambda t: t[0])
    return best[1], best[0]


def _coordinate_sweep(obj: _Objective, v: np.ndarray, fval: float, tol: float):
    """One cyclic pass of per-point, per-axis golden-section line searches."""
    d = obj.d
    nvar_per = 1 if obj.interval else 2
    pts = obj.points(v)
    for i in range(d):
        others = np.delete(pts, i)
        for axis in range(nvar_per):
            k = i * nvar_per + axis
            lo, hi = obj.lower[k], obj.upper[k]
            cur = v[k]
            if obj.interval:
                left = others.real[others.real < cur]
                right = others.real[others.real > cur]
                a = max(lo, left.max()) if left.size else lo
                b = min(hi, right.min()) if right.size else hi
            else:
                near = np.min(np.abs(others - pts[i])) if others.size else (hi - lo)
                a, b = max(lo, cur - near), min(hi, cur + near)
            if b - a <= tol:
                continue

            base = pts[i]

            def f1(t, axis=axis, base=base):
                z = complex(t, base.imag) if axis == 0 else complex(base.real, t)
                return obj.point_value(pts, i, z)

            f_cur = f1(cur)
            t, ft = _golden_max(f1, a, b, tol)
            if ft > f_cur:
                trial = v.copy()
                trial[k] = t
                f_new = obj.value(trial)
                if f_new > fval:
                    v, fval = trial, f_new
                    pts = obj.points(v)
                    others = np.delete(pts, i)
    return v, fval


def _armijo_step(obj, v, fval, direction, g, t0, history):
    t = t0
    for _ in range(60):
        trial = np.clip(v + t * direction, obj.lower, obj.upper)
        ft = obj.value(trial)
        if np.isfinite(ft) and ft >= fval + 1e-4 * np.dot(g, trial - v) and ft >= fval:
            history.append(ft)
            return trial, ft, t
        t *= 0.5
    return v, fval, 0.0


def _projected_gradient(obj, v, fval, iters, tol, history):
    t = 1e-3
    for it in range(iters):
        g = obj.grad(v)
        pg = obj.projected_grad(v, g)
        if np.linalg.norm(pg) < tol:
            return v, fval, it
        v, fval, t_used = _armijo_step(obj, v, fval, g, g, min(4 * t, 1.0), history)
        if t_used == 0.0:
            return v, fval, it
        t = t_used
    return v, fval, iters


def _projected_newton(obj, v, fval, iters, tol, history):
    """Newton ascent on the variables not pinned at a bound.

    Converged when the projected gradient is below `tol` or the predicted
    Newton gain is below working precision of the objective.
    """
    for it in range(iters):
        g = obj.grad(v)
        pg = obj.projected_grad(v, g)
        if np.linalg.norm(pg) < tol:
            return v, fval, it, True
        free = ~(((v <= obj.lower) & (g < 0)) | ((v >= obj.upper) & (g > 0)))
        H = obj.hess(v)[np.ix_(free, free)]
        # ascent: solve (-H + shift) p = g with -H made positive definite
        evals, evecs = np.linalg.eigh(-H)
        floor = max(1e-10 * max(abs(evals).max(), 1.0), 1e-12)
        evals = np.maximum(evals, floor)
        step = np.zeros_like(v)
        step[free] = evecs @ ((evecs.T @ g[free]) / evals)
        gain = 0.5 * float(np.dot(g, step))
        if gain <= 1e-15 * max(1.0, abs(fval)):
            return v, fval, it, True
        v_new, f_new, t_used = _armijo_step(obj, v, fval, step, g, 1.0, history)
        if t_used == 0.0:
            # fall back to a gradient step
            v_new, f_new, t_used = _armijo_step(obj, v, fval, pg, g, 1e-2, history)
            if t_used == 0.0:
                return v, fval, it, bool(gain <= 1e-12 * max(1.0, abs(fval)))
        v, fval = v_new, f_new
    g = obj.grad(v)
    return v, fval, iters, bool(np.linalg.norm(obj.projected_grad(v, g)) < tol)


def _maximize(obj: _Objective, start: np.ndarray, opts: FeketeOptions):
    v = obj.variables(start)
    fval = obj.value(v)
    history = [fval]
    iterations = 0
    for _ in range(opts.sweeps):
        v, f_new = _coordinate_sweep(obj, v, fval, opts.golden_tol)
        iterations += 1
        gain = f_new - fval
        if f_new > fval:
            history.append(f_new)
        fval = f_new
        if gain <= 1e-10 * max(1.0, abs(fval)):
            break
    v, fval, n = _projected_gradient(obj, v, fval, opts.gradient_iters, opts.tol, history)
    iterations += n
    v, fval, n, converged = _projected_newton(obj, v, fval, opts.newton_iters, opts.tol, history)
    iterations += n
    gnorm = float(np.linalg.norm(obj.projected_grad(v, obj.grad(v))))
    return obj.points(v), fval, iterations, converged, history, gnorm


def _better(a, b) -> bool:
    """Is candidate a = (value, config) preferable to b?"""
    if b is None:
        return True
    if a[0] != b[0]:
        return a[0] > b[0]
    ka = [(z.real, z.imag) for z in a[1]]
    kb = [(z.real, z.imag) for z in b[1]]
    return ka < kb


def _task_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _map(fn, items, threads: int):
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def solve_fekete(rect: Rectangle, w: WeightFunction, d: int,
                 opts: Optional[FeketeOptions] = None, seed: int = 0) -> FeketeResult:
    """Approximate w-Fekete set of d points in `rect`.

    Best of ``opts.restarts`` local maximizations; restart 0 starts from the
    Chebyshev-Lobatto layout, later ones from jittered copies.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    opts = opts or FeketeOptions()

    def run(r):
        rng = _task_rng(seed, d, r)
        start = initial_configuration(rect, d, rng if r else None, opts.jitter if r else 0.0)
        obj = _Objective(rect, w, d)
        return _maximize(obj, start, opts)

    runs = _map(run, range(max(1, opts.restarts)), opts.threads)
    best = None
    best_run = None
    for res in runs:
        cand = (res[1], canonicalize(res[0]))
        if _better(cand, best):
            best, best_run = cand, res
    pts, fval, iterations, converged, history, gnorm = best_run
    value = log_wvdm(best[1], w)
    return FeketeResult(best[1], value, math.exp(normalized_log(value, d)),
                        iterations, bool(converged), history, gnorm)


@dataclass
class TransfiniteTable:
    rows: List[FeketeResult]
    extrapolated: float
    slope: float
    fit_ds: List[int]

    @property
    def d_list(self):
        return [r.d for r in self.rows]

    @property
    def deltas(self):
        return np.array([r.delta_d for r in self.rows])

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def to_json_dict(self) -> dict:
        return {"table": [{"d": r.d, "delta_d": r.delta_d, "log_wvdm": r.log_wvdm_value,
                           "converged": r.converged} for r in self.rows],
                "extrapolated_delta": self.extrapolated, "slope": self.slope,
                "fit_d": self.fit_ds, "all_converged": self.all_converged}


def extrapolate_delta(ds: Sequence[int], deltas: Sequence[float]):
    """Least-squares fit delta_d = delta + a/d on the largest half of ds."""
    ds = np.asarray(ds, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    n = ds.size
    use = slice(n // 2, n) if n >= 4 else slice(0, n)
    A = np.vstack([np.ones(ds[use].size), 1.0 / ds[use]]).T
    (delta, a), *_ = np.linalg.lstsq(A, deltas[use], rcond=None)
    return float(delta), float(a), [int(x) for x in ds[use]]


def transfinite_diameter(rect: Rectangle, w: WeightFunction, d_list: Sequence[int],
                         seed: int = 0, opts: Optional[FeketeOptions] = None) -> TransfiniteTable:
    d_list = [int(d) for d in d_list]
    if any(d < 2 for d in d_list) or any(b <= a for a, b in zip(d_list, d_list[1:])):
        raise ValueError("d_list must be increasing with every d >= 2")
    opts = opts or FeketeOptions()
    inner = FeketeOptions(**{**opts.__dict__, "threads": 1})
    rows = _map(lambda d: solve_fekete(rect, w, d, inner, seed), d_list, opts.threads)
    for r in rows:
        if not r.converged:
            logger.warning("Fekete solve for d=%d did not converge", r.d)
    delta, a, fit = extrapolate_delta(d_list, [r.delta_d for r in rows])
    return TransfiniteTable(rows, delta, a, fit)


# -- moment-constrained sup --------------------------------------------------------

@dataclass
class ConstrainedResult:
    log_wvdm_value: float
    W: float
    configuration: np.ndarray
    gaps: np.ndarray
    penalty_rounds: int
    mu: float

    @property
    def d(self) -> int:
        return self.configuration.size

    @property
    def log_W(self) -> float:
        return normalized_log(self.log_wvdm_value, self.d)

    def to_json_dict(self) -> dict:
        return {"d": self.d, "log_wvdm": self.log_wvdm_value, "W": self.W, "log_W": self.log_W,
                "penalty_rounds": self.penalty_rounds, "mu": self.mu,
                "gaps": self.gaps.tolist(),
                "configuration": [[float(z.real), float(z.imag)] for z in self.configuration]}


def quantile_configuration(m: GridMeasure, d: int) -> np.ndarray:
    """d points at the mid-quantiles (j + 1/2)/d of a measure on a line.

    Nodes are ordered by real part; ties in mass are split by interpolation.
    """
    order = np.argsort(m.nodes.real, kind="stable")
    nodes, masses = m.nodes[order], m.masses[order]
    cum = np.cumsum(masses)
    qs = (np.arange(d) + 0.5) / d
    idx = np.searchsorted(cum, qs)
    idx = np.minimum(idx, nodes.size - 1)
    prev = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    frac = np.where(masses[idx] > 0, (qs - prev) / np.where(masses[idx] > 0, masses[idx], 1), 0.5)
    if m.cells is not None:
        h = m.cells[0][order][idx]
        pts = nodes[idx] + (frac - 0.5) * h
    else:
        pts = nodes[idx].copy()
    # separate exact duplicates so the Vandermonde stays finite
    pts = pts.astype(complex)
    for j in range(1, d):
        if pts[j] == pts[j - 1]:
            pts[j] = pts[j] + 1e-9 * j
    return pts


def _excess(gaps, eps):
    return np.maximum(np.abs(gaps) - eps, 0.0)


def find_feasible(rect: Rectangle, nbhd: MomentNeighborhood, d: int,
                  starts: Sequence[np.ndarray], opts: Optional[FeketeOptions] = None) -> np.ndarray:
    """Return a configuration with moments strictly inside the neighborhood.

    Minimizes the squared gap excess from each start (with a weak Vandermonde
    term keeping points apart); raises InfeasibleNeighborhoodError naming the
    worst moment gap otherwise.
    """
    opts = opts or FeketeOptions()
    best_excess, best_gap = None, None
    target = nbhd.epsilon * 0.5
    unit = WeightFunction.unit(rect)
    for start in starts:
        start = rect.clamp(as_points(start))
        if nbhd.contains_config(start) and np.isfinite(log_wvdm(start, unit)):
            return start
        pts = start
        for mu in (1e4, 1e6, 1e8):
            obj = _Objective(rect, unit, d, nbhd, mu=mu * d * d, eps=target)
            pts, *_ = _maximize(obj, pts, FeketeOptions(sweeps=5, gradient_iters=200,
                                                        newton_iters=100, tol=opts.tol))
            if nbhd.contains_config(pts):
                return pts
        gaps = nbhd.config_gaps(pts)
        ex = _excess(gaps, nbhd.epsilon)
        if best_excess is None or ex.max() < best_excess.max():
            best_excess, best_gap = ex, gaps
    j = int(np.argmax(best_excess))
    key = nbhd.indices[j]
    raise InfeasibleNeighborhoodError(
        f"no {d}-point configuration found inside the neighborhood; worst moment "
        f"{key} misses by {best_gap[j]:+.3g} (epsilon {nbhd.epsilon:g})", key, float(best_gap[j]))


def constrained_sup_W(rect: Rectangle, phi: WeightFunction, nbhd: MomentNeighborhood, d: int,
                      seed: int = 0, opts: Optional[FeketeOptions] = None,
                      reference: Optional[GridMeasure] = None,
                      starts: Sequence[np.ndarray] = (),
                      mu0: float = 10.0, max_rounds: int = 40) -> ConstrainedResult:
    """sup of log_wvdm(λ, phi) over configurations whose empirical measure
    lies in `nbhd`, by an exterior quadratic penalty whose coefficient doubles
    until the maximizer is strictly feasible.

    With phi = 1 the returned ``W`` is W_d(mu, k, eps); otherwise W^phi_d.
    """
    opts = opts or FeketeOptions()
    fek = solve_fekete(rect, phi, d, opts, seed)
    candidates = [np.asarray(s, dtype=complex) for s in starts]
    if reference is not None and rect.is_interval:
        candidates.append(quantile_configuration(reference, d) + 1j * rect.y_min)
    candidates.append(fek.configuration)
    if nbhd.contains_config(fek.configuration):
        cfg = fek.configuration
        return ConstrainedResult(fek.log_wvdm_value, fek.delta_d, cfg,
                                 nbhd.config_gaps(cfg), 0, 0.0)

    feasible = find_feasible(rect, nbhd, d, candidates, opts)
    best = (log_wvdm(feasible, phi), canonicalize(feasible))
    for s in candidates:
        s = rect.clamp(s)
        if nbhd.contains_config(s):
            val = log_wvdm(s, phi)
            if np.isfinite(val) and _better((val, canonicalize(s)), best):
                best = (val, canonicalize(s))

    # shoot for a slightly smaller window so the limit point is strictly inside
    eps_t = nbhd.epsilon * (1.0 - 1e-3)
    mu = mu0 * d * d / nbhd.epsilon ** 2
    pts = fek.configuration
    rounds = 0
    inner = FeketeOptions(**{**opts.__dict__, "restarts": 1, "sweeps": min(opts.sweeps, 10)})
    for rounds in range(1, max_rounds + 1):
        obj = _Objective(rect, phi, d, nbhd, mu=mu, eps=eps_t)
        pts, *_ = _maximize(obj, pts, inner)
        if nbhd.contains_config(pts):
            val = log_wvdm(pts, phi)
            if np.isfinite(val) and _better((val, canonicalize(pts)), best):
                best = (val, canonicalize(pts))
            break
        mu *= 2.0
    val, cfg = best
    return ConstrainedResult(val, math.exp(normalized_log(val, d)), cfg,
                             nbhd.config_gaps(cfg), rounds, mu)
