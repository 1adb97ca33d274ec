"""
Logarithmic energy, free entropy and weighted equilibrium measures.

Discretized measures carry their cells.  The double integral of
log|z - t| is then assembled from cell-pair means of the kernel:

* on intervals every entry is the exact mean of log|s - t| over the two
  cells (closed form), so the diagonal is log h - 3/2;
* on rectangles off-diagonal entries are point values at the cell centers
  and the diagonal is log hx + c0(hy/hx), c0 being the mean of log|s - t|
  over pairs of points of a unit-width cell, computed once by quadrature.

Equilibrium measures minimize the discretized weighted energy over the
probability simplex by accelerated projected gradient (FISTA with restart
whenever the objective would increase) followed by an active-set Newton
polish of the KKT system.
"""

from __future__ import annotations

import functools
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .measures import GridMeasure, Rectangle, cell_grid
from .vdm import WeightFunction

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyReport:
    sigma: float
    weighted_energy: float
    external_term: float
    log_delta_w: float = float("nan")

    def __post_init__(self):
        if math.isfinite(self.sigma):
            expected = -self.sigma + self.external_term
            if abs(self.weighted_energy - expected) > 1e-10 * max(1.0, abs(expected)):
                raise ValueError("weighted energy must equal -sigma + external term")

    def to_json_dict(self) -> dict:
        return {"sigma": self.sigma, "weighted_energy": self.weighted_energy,
                "external_term": self.external_term, "log_delta_w": self.log_delta_w}


# -- kernel assembly ---------------------------------------------------------------

def _second_antiderivative(u):
    """F with F'' = log|u| and F(0) = 0."""
    u = np.abs(u)
    out = np.zeros_like(u)
    nz = u > 0
    out[nz] = 0.5 * u[nz] ** 2 * np.log(u[nz]) - 0.75 * u[nz] ** 2
    return out


def interval_cell_kernel(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Exact means of log|s - t| over pairs of cells [x_i ± h_i/2]."""
    a = (x - h / 2)[:, None]
    b = (x + h / 2)[:, None]
    c = (x - h / 2)[None, :]
    e = (x + h / 2)[None, :]
    F = _second_antiderivative
    total = -(F(e - b) - F(e - a) - F(c - b) + F(c - a))
    return total / (h[:, None] * h[None, :])


@functools.lru_cache(maxsize=64)
def unit_cell_constant(aspect: float) -> float:
    """Mean of log|s - t| for s, t uniform in a [0, 1] x [0, aspect] cell."""
    from scipy.integrate import dblquad
    # difference of two uniforms: triangular densities on each axis
    val, _ = dblquad(lambda v, u: 4.0 * (1 - u) * (1 - v) * 0.5 * np.log(u * u + (aspect * v) ** 2),
                     0.0, 1.0, 0.0, 1.0, epsabs=1e-12, epsrel=1e-12)
    return float(val)


def log_kernel(m: GridMeasure) -> np.ndarray:
    """Matrix of cell-pair means of log|z - t| for a discretized measure."""
    if m.cells is None:
        raise ValueError("kernel assembly needs a discretized measure")
    hx, hy = m.cells
    z = m.nodes
    if np.all(hy == 0) and np.all(z.imag == z.imag[0]):
        return interval_cell_kernel(z.real, hx)
    diff = np.abs(z[:, None] - z[None, :])
    np.fill_diagonal(diff, 1.0)
    K = np.log(diff)
    diag = np.log(hx) + np.array([unit_cell_constant(round(float(a), 12)) for a in hy / hx])
    np.fill_diagonal(K, diag)
    return K


# -- energies -----------------------------------------------------------------------

def free_entropy(m: GridMeasure, literal: Optional[bool] = None) -> float:
    """Σ(m) = ∫∫ log|z - t| dm dm.

    Genuinely atomic measures (no cells, or ``literal=True``) give -inf.
    Discretizations give the cell-corrected double sum.
    """
    if literal is None:
        literal = not m.is_discretization
    if literal:
        return float("-inf")
    K = log_kernel(m)
    return float(m.masses @ K @ m.masses)


def weighted_energy(m: GridMeasure, w: WeightFunction, literal: Optional[bool] = None) -> EnergyReport:
    """I_w(m) = -Σ(m) + 2 ∫ Q dm."""
    sigma = free_entropy(m, literal)
    external = 2.0 * float(np.dot(m.masses, w.Q(m.nodes, check=True)))
    energy = -sigma + external if math.isfinite(sigma) else float("inf")
    return EnergyReport(sigma, energy, external)


# -- equilibrium solver ---------------------------------------------------------------

def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x >= 0, Σx = 1} (sorting method)."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass
class EquilibriumResult:
    measure: GridMeasure
    energy: EnergyReport
    converged: bool
    iterations: int
    grad_norm: float
    history: list = field(default_factory=list, repr=False)
    conditionally_definite: bool = True

    # measure-like access so results can stand in for the GridMeasure
    @property
    def nodes(self):
        return self.measure.nodes

    @property
    def masses(self):
        return self.measure.masses

    @property
    def cells(self):
        return self.measure.cells


def _kkt_polish(E, q, m):
    """Active-set Newton step for min m'Em + 2q'm on the simplex.

    Returns a feasible candidate or None when the support guess fails.
    """
    support = m > 0
    for _ in range(20):
        idx = np.nonzero(support)[0]
        n = idx.size
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = 2 * E[np.ix_(idx, idx)]
        A[:n, n] = 1.0
        A[n, :n] = 1.0
        rhs = np.concatenate([-2 * q[idx], [1.0]])
        try:
            sol = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            return None
        ms = sol[:n]
        if np.any(ms < 0):
            support[idx[ms < 0]] = False
            if not support.any():
                return None
            continue
        cand = np.zeros_like(m)
        cand[idx] = ms
        g = 2 * E @ cand + 2 * q
        lam = -sol[n]
        off = ~support
        if np.all(g[off] >= lam - 1e-12 * max(1.0, abs(lam))):
            return cand
        worst = np.nonzero(off)[0][np.argmin(g[off])]
        support[worst] = True
    return None


def _projected_grad_norm(E, q, m, L):
    g = 2 * E @ m + 2 * q
    return float(np.linalg.norm(L * (project_simplex(m - g / L) - m)))


def minimize_energy(K: np.ndarray, q: np.ndarray, m0: np.ndarray,
                    tol: float = 1e-8, max_iter: int = 20000, polish: bool = True):
    """Minimize -m'Km + 2q'm over the simplex.

    Returns (masses, converged, iterations, grad_norm, history).
    """
    E = -K
    L = 2.0 * float(np.linalg.eigvalsh(E)[-1]) if E.shape[0] <= 4096 else 2.0 * np.abs(E).sum(axis=1).max()

    def f(m):
        return float(m @ E @ m + 2 * q @ m)

    m = project_simplex(np.asarray(m0, dtype=float))
    y = m.copy()
    t = 1.0
    fm = f(m)
    history = [fm]
    gnorm = _projected_grad_norm(E, q, m, L)
    it = 0
    for it in range(1, max_iter + 1):
        g = 2 * E @ y + 2 * q
        m_new = project_simplex(y - g / L)
        f_new = f(m_new)
        if f_new > fm:
            # restart momentum from the last accepted point
            y, t = m.copy(), 1.0
            continue
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = m_new + ((t - 1) / t_new) * (m_new - m)
        m, fm, t = m_new, f_new, t_new
        history.append(fm)
        if it % 25 == 0:
            gnorm = _projected_grad_norm(E, q, m, L)
            if gnorm < tol:
                break
            if polish and it % 500 == 0:
                cand = _kkt_polish(E, q, m)
                if cand is not None and f(cand) <= fm:
                    cg = _projected_grad_norm(E, q, cand, L)
                    if cg < gnorm:
                        m, fm, y, t, gnorm = cand, f(cand), cand.copy(), 1.0, cg
                        history.append(fm)
                        if gnorm < tol:
                            break
    gnorm = _projected_grad_norm(E, q, m, L)
    return m, gnorm < tol, it, gnorm, history


def conditional_min_eigenvalue(K: np.ndarray) -> float:
    """Smallest eigenvalue of -K restricted to zero-sum vectors."""
    n = K.shape[0]
    P = np.eye(n) - 1.0 / n
    ev = np.linalg.eigvalsh(P @ (-K) @ P)
    # drop the eigenvalue belonging to the constant direction
    ev = np.sort(ev)
    j = np.argmin(np.abs(ev))
    return float(np.delete(ev, j).min())


def solve_equilibrium(rect: Rectangle, w: WeightFunction, n: int, tol: float = 1e-8,
                      max_iter: int = 20000, m0: Optional[np.ndarray] = None,
                      check_definite: bool = False) -> EquilibriumResult:
    """Weighted equilibrium measure of `rect` discretized on about n cells."""
    if n < 16:
        raise ValueError("grid size must be >= 16")
    nodes, hx, hy = cell_grid(rect, n)
    template = GridMeasure(nodes, np.full(nodes.size, 1.0 / nodes.size), None, (hx, hy))
    K = log_kernel(template)
    q = w.Q(nodes)
    start = template.masses if m0 is None else m0
    masses, converged, iterations, gnorm, history = minimize_energy(K, q, start, tol, max_iter)
    if not converged:
        logger.warning("equilibrium solve stopped at iteration cap (grad norm %.3g)", gnorm)
    definite = True
    if check_definite:
        definite = conditional_min_eigenvalue(K) > 0
    measure = GridMeasure(nodes, masses / masses.sum(), "equilibrium", (hx, hy))
    rep = weighted_energy(measure, w)
    rep = EnergyReport(rep.sigma, rep.weighted_energy, rep.external_term, -rep.weighted_energy)
    return EquilibriumResult(measure, rep, bool(converged), iterations, gnorm, history, definite)


_cache_lock = threading.Lock()
_eq_cache: dict = {}


def cached_equilibrium(rect: Rectangle, w: WeightFunction, n: int) -> EquilibriumResult:
    key = (rect, w.key(), int(n))
    with _cache_lock:
        hit = _eq_cache.get(key)
    if hit is not None:
        return hit
    res = solve_equilibrium(rect, w, n)
    with _cache_lock:
        _eq_cache.setdefault(key, res)
        return _eq_cache[key]


@dataclass(frozen=True)
class RateValue:
    value: float
    equilibrium_converged: bool

    def __float__(self):
        return self.value


def rate_functional(m: GridMeasure, phi: WeightFunction, rect: Rectangle, n: int = 512) -> RateValue:
    """I(m) = I_phi(m) - I_phi(mu_eq(rect, phi)), equilibrium cached per (rect, phi, n)."""
    eq = cached_equilibrium(rect, phi, n)
    val = weighted_energy(m, phi).weighted_energy - eq.energy.weighted_energy
    return RateValue(float(val), eq.converged)
