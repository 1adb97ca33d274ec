"""
Base measures, Bernstein-Markov ratios and stochastic estimates of
weighted Vandermonde integrals.

The integrals are

    Z_d = ∫_{H^d} |VDM^phi_d(λ)|² dτ(λ),
    J_d = same integral restricted to the moment neighborhood G̃_d.

For d <= 3 both are computed by tensor Gauss-Legendre quadrature.  Beyond
that, log Z_d comes from thermodynamic integration along the path
|VDM^phi|^β dτ^d, β in [0, 2], and log J_d = log Z_d + log P_d where the
probability P_d of the neighborhood is obtained by a second integration
along an exterior penalty exp(-ρ U), U = d² Σ (excess/ε)², followed by the
fraction of walkers strictly inside at the largest ρ.  U vanishes on G̃_d,
so this identity is exact and no hard-wall chain has to find the set on
its own.

All chains are ensembles of independent walkers updated one particle at a
time by Metropolis.  Each walker yields its own estimate, so standard
errors come from the spread across walkers.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.integrate import simpson
from scipy.special import logsumexp

from .errors import ChainInitializationError, DensityConditionError
from .measures import MomentNeighborhood, Rectangle, as_points, max_moment_shift, moment_indices
from .vdm import WeightFunction, batch_log_wvdm, log_wvdm


# -- base measures -------------------------------------------------------------------

def _disc_rect_area(x0, y0, r, xa, xb, ya, yb, order=16):
    """Area of the disc D(x0 + i y0, r) intersected with [xa,xb] x [ya,yb]."""
    lo = max(-1.0, (xa - x0) / r)
    hi = min(1.0, (xb - x0) / r)
    if lo >= hi or ya >= yb:
        return 0.0
    tl, th = math.asin(lo), math.asin(hi)
    breaks = [tl, th]
    for yv in (ya, yb):
        c = abs(yv - y0) / r
        if c < 1:
            a = math.acos(c)
            breaks += [a, -a]
    breaks = sorted(b for b in breaks if tl <= b <= th)
    gx, gw = np.polynomial.legendre.leggauss(order)
    total = 0.0
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        t = 0.5 * (a + b) + 0.5 * (b - a) * gx
        s = r * np.cos(t)
        chord = np.clip(np.minimum(yb, y0 + s) - np.maximum(ya, y0 - s), 0.0, None)
        total += 0.5 * (b - a) * float(np.dot(gw, chord * s))
    return total


@dataclass(eq=False)
class BaseMeasure:
    """Reference measure τ on a rectangle.

    ``lebesgue`` is length (intervals) or area.  ``density_grid`` is a
    piecewise-constant density on the cells of a tensor grid: `values` has
    shape (nx,) on intervals and (ny, nx) on rectangles.

    The density condition τ(D(z0, r)) >= r**T for r <= r0 is checked on a
    grid of centers (corners included) unless ``validate=False``.
    """

    kind: str
    domain: Rectangle
    T: Optional[float] = None
    r0: Optional[float] = None
    edges_x: Optional[np.ndarray] = None
    edges_y: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    validate: bool = True

    def __post_init__(self):
        H = self.domain
        if self.kind == "lebesgue":
            self.edges_x = np.array([H.x_min, H.x_max])
            self.edges_y = np.array([H.y_min, H.y_max])
            self.values = np.ones((1, 1))
        elif self.kind == "density_grid":
            vals = np.asarray(self.values, dtype=float)
            if vals.ndim == 1:
                vals = vals[None, :]
            if np.any(vals < 0) or not np.all(np.isfinite(vals)):
                raise ValueError("densities must be finite and nonnegative")
            ny, nx = vals.shape
            self.edges_x = (np.linspace(H.x_min, H.x_max, nx + 1) if self.edges_x is None
                            else np.asarray(self.edges_x, dtype=float))
            self.edges_y = (np.linspace(H.y_min, H.y_max, ny + 1) if self.edges_y is None
                            else np.asarray(self.edges_y, dtype=float))
            if self.edges_x.size != nx + 1 or self.edges_y.size != ny + 1:
                raise ValueError("edge arrays do not match the density table")
            if H.is_interval and ny != 1:
                raise ValueError("interval densities take a 1-D table")
            self.values = vals
        else:
            raise ValueError(f"unknown base measure kind {self.kind!r}")
        if H.is_interval:
            self.edges_y = np.array([H.y_min, H.y_min])
        self._pick_constants()
        if self.validate:
            self.check_density_condition()

    # construction helpers
    @classmethod
    def lebesgue(cls, rect: Rectangle) -> "BaseMeasure":
        return cls("lebesgue", rect)

    @classmethod
    def density_grid(cls, rect: Rectangle, values, edges_x=None, edges_y=None,
                     T=None, r0=None, validate=True) -> "BaseMeasure":
        return cls("density_grid", rect, T, r0, edges_x, edges_y, values, validate)

    def _pick_constants(self):
        H = self.domain
        floor = float(self.values.min())
        if H.is_interval:
            # endpoint disc mass is floor * r >= r**2 for r <= floor
            T, r0 = 2.0, min(H.width / 2, 1.0, floor if floor > 0 else 1.0)
        else:
            # corner quarter disc: floor * pi r^2 / 4 >= r**3 for r <= floor * pi / 4
            T = 3.0
            r0 = min(min(H.width, H.height) / 2, 0.75, 0.75 * floor if floor > 0 else 0.75)
        if self.T is None:
            self.T = T
        if self.r0 is None:
            self.r0 = r0

    @property
    def cell_masses(self) -> np.ndarray:
        dx = np.diff(self.edges_x)
        dy = np.diff(self.edges_y) if not self.domain.is_interval else np.ones(1)
        return self.values * dy[:, None] * dx[None, :]

    @property
    def mass(self) -> float:
        return float(self.cell_masses.sum())

    def to_json_dict(self) -> dict:
        out = {"kind": self.kind, "domain": self.domain.to_dict(), "T": self.T, "r0": self.r0}
        if self.kind == "density_grid":
            vals = self.values[0] if self.domain.is_interval else self.values
            out.update(values=vals.tolist(), edges_x=self.edges_x.tolist(),
                       edges_y=self.edges_y.tolist())
        return out

    @classmethod
    def from_json_dict(cls, data: dict, domain: Optional[Rectangle] = None) -> "BaseMeasure":
        rect = Rectangle.from_dict(data["domain"]) if "domain" in data else domain
        if rect is None:
            raise ValueError("base measure needs a domain")
        kind = data.get("kind", "lebesgue")
        if kind == "lebesgue":
            return cls("lebesgue", rect, data.get("T"), data.get("r0"))
        return cls.density_grid(rect, data["values"], data.get("edges_x"),
                                None if rect.is_interval else data.get("edges_y"),
                                data.get("T"), data.get("r0"), data.get("validate", True))

    # mass of discs
    def disc_mass(self, z0: complex, r: float) -> float:
        """τ(D(z0, r) ∩ H)."""
        x0, y0 = z0.real, z0.imag
        ex, ey = self.edges_x, self.edges_y
        if self.domain.is_interval:
            dy = abs(y0 - ey[0])
            if dy >= r:
                return 0.0
            half = math.sqrt(r * r - dy * dy)
            overlap = np.clip(np.minimum(ex[1:], x0 + half) - np.maximum(ex[:-1], x0 - half), 0, None)
            return float(np.dot(self.values[0], overlap))
        total = 0.0
        ix = np.nonzero((ex[1:] > x0 - r) & (ex[:-1] < x0 + r))[0]
        iy = np.nonzero((ey[1:] > y0 - r) & (ey[:-1] < y0 + r))[0]
        for j in iy:
            for i in ix:
                v = self.values[j, i]
                if v:
                    total += v * _disc_rect_area(x0, y0, r, ex[i], ex[i + 1], ey[j], ey[j + 1])
        return total

    def check_density_condition(self, n_centers: int = 9, n_radii: int = 12):
        """Raise DensityConditionError if some disc of radius <= r0 centered in H
        has τ-mass below r**T."""
        H = self.domain
        xs = np.linspace(H.x_min, H.x_max, n_centers)
        ys = [H.y_min] if H.is_interval else np.linspace(H.y_min, H.y_max, n_centers)
        radii = self.r0 * np.geomspace(1e-3, 1.0, n_radii)
        for y in ys:
            for x in xs:
                for r in radii:
                    mass = self.disc_mass(complex(x, y), r)
                    if mass < r ** self.T * (1 - 1e-12):
                        raise DensityConditionError(
                            f"disc at ({x:g}, {y:g}) of radius {r:.3g} has mass {mass:.3g} "
                            f"< r^T = {r ** self.T:.3g} (T={self.T:g})")

    # sampling and density
    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        """iid draws from τ/τ(H) as a complex array of the given shape."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape))
        cm = self.cell_masses.ravel()
        cells = rng.choice(cm.size, size=n, p=cm / cm.sum()) if cm.size > 1 else np.zeros(n, int)
        ny, nx = self.values.shape
        jy, ix = np.divmod(cells, nx)
        ex, ey = self.edges_x, self.edges_y
        x = ex[ix] + (ex[ix + 1] - ex[ix]) * rng.uniform(size=n)
        if self.domain.is_interval:
            y = np.full(n, self.domain.y_min)
        else:
            y = ey[jy] + (ey[jy + 1] - ey[jy]) * rng.uniform(size=n)
        return (x + 1j * y).reshape(shape)

    def log_density(self, z) -> np.ndarray:
        """log of the τ density (w.r.t. length or area) at z; -inf outside H."""
        z = np.asarray(z, dtype=complex)
        inside = self.domain.contains(z)
        if self.kind == "lebesgue":
            return np.where(inside, 0.0, -np.inf)
        ix = np.clip(np.searchsorted(self.edges_x, z.real, side="right") - 1, 0, self.values.shape[1] - 1)
        if self.domain.is_interval:
            jy = np.zeros_like(ix)
        else:
            jy = np.clip(np.searchsorted(self.edges_y, z.imag, side="right") - 1, 0, self.values.shape[0] - 1)
        with np.errstate(divide="ignore"):
            out = np.log(self.values[jy, ix])
        return np.where(inside, out, -np.inf)

    def quadrature(self, n: int):
        """Gauss-Legendre rule for ∫ f dτ: n nodes per cell and axis.

        Returns (nodes, weights) with nodes complex.
        """
        gx, gw = np.polynomial.legendre.leggauss(n)

        def axis_rule(edges):
            a, b = edges[:-1, None], edges[1:, None]
            return (0.5 * (a + b) + 0.5 * (b - a) * gx).ravel(), (0.5 * (b - a) * gw).ravel()

        xs, wx = axis_rule(self.edges_x)
        dens_x = np.repeat(np.arange(self.values.shape[1]), n)
        if self.domain.is_interval:
            w = wx * self.values[0, dens_x]
            keep = w > 0
            return (xs + 1j * self.domain.y_min)[keep], w[keep]
        ys, wy = axis_rule(self.edges_y)
        dens_y = np.repeat(np.arange(self.values.shape[0]), n)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        W = np.outer(wy, wx) * self.values[np.ix_(dens_y, dens_x)]
        keep = W.ravel() > 0
        return (X + 1j * Y).ravel()[keep], W.ravel()[keep]


# -- estimates ----------------------------------------------------------------------

@dataclass
class McEstimate:
    value: float
    std_error: float
    n_samples: int
    method: str
    diagnostics: dict = field(default_factory=dict)
    truncation_bound: float = 0.0

    def __post_init__(self):
        if not self.std_error >= 0:
            raise ValueError("std_error must be nonnegative")

    @property
    def flagged(self) -> bool:
        return bool(self.diagnostics.get("flagged", False))

    def to_json_dict(self) -> dict:
        return {"value": self.value, "std_error": self.std_error, "n_samples": self.n_samples,
                "method": self.method, "truncation_bound": self.truncation_bound,
                "diagnostics": self.diagnostics}


@dataclass(frozen=True)
class McOptions:
    walkers: int = 64
    beta_points: int = 21
    burn_in: int = 150
    sweeps: int = 250
    thin: int = 1
    target_acceptance: float = 0.3
    adapt_every: int = 10
    rho_max: float = 10.0
    rho_per_decade: int = 5
    rho_start_load: float = 1e-2
    method: str = "auto"
    quad_nodes: int = 48
    quad_panels: int = 64
    threads: int = 1

    def __post_init__(self):
        if self.walkers % self.blocks or self.walkers < 2 * self.blocks:
            raise ValueError("walkers must be a multiple of threads, at least two per thread")
        if self.beta_points < 3 or self.beta_points % 2 == 0:
            raise ValueError("beta_points must be odd and >= 3")
        if self.method not in ("auto", "quadrature", "thermodynamic"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def blocks(self) -> int:
        # one walker block per thread; results depend on the thread count only
        return max(1, self.threads)


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _map(fn, items, threads):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# -- quadrature oracles --------------------------------------------------------------

def _pair_log_sum(cols):
    out = 0.0
    for i in range(len(cols)):
        for j in range(i + 1, len(cols)):
            with np.errstate(divide="ignore"):
                out = out + np.log(np.abs(cols[i] - cols[j]))
    return out


def _tensor_log_Z(phi, tau, d, n):
    z, w = tau.quadrature(n)
    lw = np.log(w)
    lphi = phi.log_w(z)
    grids = np.meshgrid(*([np.arange(z.size)] * d), indexing="ij")
    idx = [g.ravel() for g in grids]
    cols = [z[i] for i in idx]
    logf = 2.0 * _pair_log_sum(cols) + sum(2.0 * d * lphi[i] + lw[i] for i in idx)
    return float(logsumexp(logf))


def _odd_even_roots(v, n):
    """Real roots x of x**n = v (vectorized); nan where none."""
    if n % 2:
        r = np.sign(v) * np.abs(v) ** (1.0 / n)
        return [r]
    with np.errstate(invalid="ignore"):
        r = np.where(v >= 0, np.abs(v) ** (1.0 / n), np.nan)
    return [r, -r]


def _interval_log_J(H, phi, tau, nbhd, d, panels, order=8):
    """Constrained integral on an interval, last coordinate sliced exactly.

    The outer d-1 coordinates use composite Gauss-Legendre with `panels`
    panels; for fixed outer points the feasible set of the last coordinate
    is a union of intervals between roots of x**n1 = const.
    """
    a, b, y0 = H.x_min, H.x_max, H.y_min
    eps = nbhd.epsilon
    ref = nbhd.reference_vector()
    idx = nbhd.indices
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.union1d(np.linspace(a, b, panels + 1), tau.edges_x)
    lo, hi = edges[:-1, None], edges[1:, None]
    xo = (0.5 * (lo + hi) + 0.5 * (hi - lo) * gx).ravel()
    wo = (0.5 * (hi - lo) * gw).ravel()
    zo = xo + 1j * y0
    dens_o = np.exp(tau.log_density(zo))
    keep = dens_o > 0
    xo, wo = xo[keep], wo[keep] * dens_o[keep]
    lphi_o = phi.log_w(xo + 1j * y0)

    grids = np.meshgrid(*([np.arange(xo.size)] * (d - 1)), indexing="ij")
    outer_idx = [g.ravel() for g in grids]
    total = -np.inf
    chunk = 20000
    inner_edges = np.union1d(np.linspace(a, b, 9), tau.edges_x)
    for s in range(0, outer_idx[0].size, chunk):
        ids = [o[s:s + chunk] for o in outer_idx]
        cols = [xo[i] for i in ids]
        m = cols[0].size
        log_outer = (2.0 * _pair_log_sum(cols) + sum(2.0 * d * lphi_o[i] + np.log(wo[i]) for i in ids)
                     if d > 1 else np.zeros(m))
        ok = np.ones(m, bool)
        breaks = [np.broadcast_to(inner_edges, (m, inner_edges.size))]
        for j, (n1, n2) in enumerate(idx):
            kappa = y0 ** n2 if n2 else 1.0
            S = sum(c ** n1 for c in cols) * kappa
            lo_v = d * (ref[j] - eps) - S
            hi_v = d * (ref[j] + eps) - S
            if n1 == 0 or kappa == 0:
                const = S + (kappa if n1 == 0 else 0.0)
                ok &= np.abs(const / d - ref[j]) < eps
                continue
            for v in (lo_v, hi_v):
                for r in _odd_even_roots(v / kappa, n1):
                    breaks.append(np.clip(np.nan_to_num(r, nan=a), a, b)[:, None])
        B = np.sort(np.concatenate(breaks, axis=1), axis=1)
        left, right = B[:, :-1], B[:, 1:]
        mid = 0.5 * (left + right)
        feas = np.ones(mid.shape, bool)
        for j, (n1, n2) in enumerate(idx):
            if n1 == 0:
                continue
            kappa = y0 ** n2 if n2 else 1.0
            S = sum(c ** n1 for c in cols) * kappa
            feas &= np.abs((S[:, None] + kappa * mid ** n1) / d - ref[j]) < eps
        feas &= right > left
        feas &= ok[:, None]
        # Gauss-Legendre on every feasible sub-interval
        xs = 0.5 * (left + right)[..., None] + 0.5 * (right - left)[..., None] * gx
        logf = np.log(0.5 * np.maximum(right - left, 1e-300))[..., None] + np.log(gw)
        with np.errstate(divide="ignore"):
            for c in cols:
                logf = logf + 2.0 * np.log(np.abs(xs - c[:, None, None]))
            zi = xs + 1j * y0
            logf = logf + 2.0 * d * phi.log_w(zi, check=False) + tau.log_density(zi)
        logf = np.where(feas[..., None], logf, -np.inf)
        inner = logsumexp(logf.reshape(m, -1), axis=1)
        with np.errstate(invalid="ignore"):
            terms = log_outer + inner
        terms = terms[np.isfinite(terms)]
        if terms.size:
            total = np.logaddexp(total, logsumexp(terms))
    return float(total)


def _tensor_log_J(H, phi, tau, nbhd, d, n):
    z, w = tau.quadrature(n)
    lw = np.log(w)
    lphi = phi.log_w(z)
    grids = np.meshgrid(*([np.arange(z.size)] * d), indexing="ij")
    idx = [g.ravel() for g in grids]
    cols = [z[i] for i in idx]
    logf = 2.0 * _pair_log_sum(cols) + sum(2.0 * d * lphi[i] + lw[i] for i in idx)
    pts = np.stack(cols, axis=1)
    gaps = _config_gaps_batch(pts, nbhd)
    inside = np.all(np.abs(gaps) < nbhd.epsilon, axis=1)
    return float(logsumexp(np.where(inside, logf, -np.inf)))


def _quad_log_Z(H, phi, tau, d, opts):
    n = opts.quad_nodes if H.is_interval else max(4, opts.quad_nodes // 6)
    val = _tensor_log_Z(phi, tau, d, n)
    coarse = _tensor_log_Z(phi, tau, d, max(d + 1, n // 2))
    return McEstimate(val, 0.0, n ** d, "quadrature", {"nodes_per_axis": n},
                      truncation_bound=abs(val - coarse))


def _quad_log_J(H, phi, tau, nbhd, d, opts):
    if H.is_interval:
        p = opts.quad_panels
        val = _interval_log_J(H, phi, tau, nbhd, d, p)
        coarse = _interval_log_J(H, phi, tau, nbhd, d, max(4, p // 2))
        n = p * 8
    else:
        n = max(6, opts.quad_nodes // 6)
        val = _tensor_log_J(H, phi, tau, nbhd, d, n)
        coarse = _tensor_log_J(H, phi, tau, nbhd, d, max(3, n // 2))
    bound = abs(val - coarse) if np.isfinite(val) and np.isfinite(coarse) else float("inf")
    return McEstimate(val, 0.0, n ** d, "quadrature", {}, truncation_bound=bound)


# -- walker ensemble -----------------------------------------------------------------------

def _monomials(z: np.ndarray, indices) -> np.ndarray:
    e = np.asarray(indices)
    z = np.asarray(z)[..., None]
    return z.real ** e[:, 0] * z.imag ** e[:, 1]


def _config_gaps_batch(pts: np.ndarray, nbhd: MomentNeighborhood) -> np.ndarray:
    return _monomials(pts, nbhd.indices).mean(axis=1) - nbhd.reference_vector()


class _Ensemble:
    """M walkers of d points targeting exp(β log|VDM^phi| - ρ U) dτ^d."""

    def __init__(self, H, phi, tau, d, pts, nbhd=None):
        self.H, self.phi, self.tau, self.d = H, phi, tau, d
        self.nbhd = nbhd
        self.pts = np.array(pts, dtype=complex)
        self.interval = H.is_interval
        self.refresh()

    def refresh(self):
        self.logv = batch_log_wvdm(self.pts, self.phi)
        self.lphi = self.phi.log_w(self.pts, check=False)
        if self.nbhd is not None:
            self.S = _monomials(self.pts, self.nbhd.indices).sum(axis=1)
            self.U = self.penalty(self.S)

    def penalty(self, S):
        nb = self.nbhd
        gaps = S / self.d - nb.reference_vector()
        ex = np.maximum(np.abs(gaps) - nb.epsilon, 0.0) / nb.epsilon
        return self.d ** 2 * np.sum(ex * ex, axis=-1)

    def inside(self):
        gaps = self.S / self.d - self.nbhd.reference_vector()
        return np.all(np.abs(gaps) < self.nbhd.epsilon, axis=1)

    def sweep(self, rng, beta, rho, scale):
        M, d = self.pts.shape
        accepted = 0
        rows = np.arange(M)
        for i in range(d):
            old = self.pts[:, i]
            step = rng.normal(size=M) * scale
            if self.interval:
                prop = old + step
            else:
                prop = old + step + 1j * rng.normal(size=M) * scale
            ok = self.H.contains(prop)
            prop = np.where(ok, prop, old)
            lp_new = self.phi.log_w(prop, check=False)
            with np.errstate(divide="ignore", invalid="ignore"):
                dn = np.abs(prop[:, None] - self.pts)
                do = np.abs(old[:, None] - self.pts)
                dn[:, i] = 1.0
                do[:, i] = 1.0
                dlog = np.log(dn).sum(axis=1) - np.log(do).sum(axis=1) + d * (lp_new - self.lphi[:, i])
                logr = beta * dlog if beta else np.zeros(M)
                if self.tau.kind != "lebesgue":
                    logr = logr + self.tau.log_density(prop) - self.tau.log_density(old)
                if rho and self.nbhd is not None:
                    dS = _monomials(prop, self.nbhd.indices) - _monomials(old, self.nbhd.indices)
                    U_new = self.penalty(self.S + dS)
                    logr = logr - rho * (U_new - self.U)
            acc = ok & np.isfinite(logr) & (np.log(rng.uniform(size=M)) < logr)
            if beta == 0:
                acc &= np.isfinite(dlog)
            if not acc.any():
                continue
            accepted += int(acc.sum())
            self.pts[acc, i] = prop[acc]
            self.lphi[acc, i] = lp_new[acc]
            self.logv[acc] += dlog[acc]
            if self.nbhd is not None:
                if not rho:
                    dS = _monomials(prop, self.nbhd.indices) - _monomials(old, self.nbhd.indices)
                    U_new = self.penalty(self.S + dS)
                self.S[acc] += dS[acc]
                self.U[acc] = U_new[acc]
        # exact recomputation keeps incremental sums from drifting
        self.refresh()
        return accepted / (M * d)


def _run_stage(ens, rng, beta, rho, scale, opts, record_U=False):
    """Burn in (adapting the scale), then measure per-walker means."""
    accs = []
    for s in range(opts.burn_in):
        a = ens.sweep(rng, beta, rho, scale)
        accs.append(a)
        if (s + 1) % opts.adapt_every == 0:
            recent = float(np.mean(accs[-opts.adapt_every:]))
            scale *= math.exp(2.0 * (recent - opts.target_acceptance))
            scale = min(scale, 2.0 * max(ens.H.width, ens.H.height))
    M = ens.pts.shape[0]
    sum_v = np.zeros(M)
    sum_v2 = np.zeros(M)
    sum_U = np.zeros(M)
    n_in = np.zeros(M)
    trace = []
    acc_meas = []
    n = 0
    for s in range(opts.sweeps):
        acc_meas.append(ens.sweep(rng, beta, rho, scale))
        if (s + 1) % opts.thin:
            continue
        n += 1
        sum_v += ens.logv
        sum_v2 += ens.logv ** 2
        if record_U:
            sum_U += ens.U
            n_in += ens.inside()
            trace.append(float(ens.U.mean()))
        else:
            trace.append(float(ens.logv.mean()))
    acc = float(np.mean(acc_meas))
    return {"mean_v": sum_v / n, "mean_v2": sum_v2 / n, "mean_U": sum_U / n,
            "frac_in": n_in / n, "acceptance": acc, "scale": scale, "n": n, "trace": trace}


def _ess(trace: Sequence[float], walkers: int) -> float:
    """Effective sample size of a walker-averaged trace (initial positive sequence)."""
    x = np.asarray(trace, dtype=float)
    n = x.size
    if n < 4 or np.var(x) == 0:
        return float(n * walkers)
    x = x - x.mean()
    acf = np.correlate(x, x, "full")[n - 1:] / (np.arange(n, 0, -1) * x.var())
    tau = 1.0
    for k in range(1, n // 2):
        pair = acf[2 * k - 1] + acf[2 * k]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n * walkers / tau)


def _acceptance_flag(rates, stages):
    bad = [(float(s), float(a)) for s, a in zip(stages, rates) if not 0.1 <= a <= 0.6]
    return bad


def _block_ti(H, phi, tau, d, seed, opts, block, betas):
    rng = _rng(seed, 0, block)
    m = opts.walkers // opts.blocks
    # β = 0: exact iid draws from τ
    draws = tau.sample(rng, (m * opts.sweeps, d))
    v0 = batch_log_wvdm(draws, phi).reshape(opts.sweeps, m)
    stages = [{"mean_v": v0.mean(axis=0), "mean_v2": (v0 ** 2).mean(axis=0),
               "acceptance": 1.0, "scale": 0.0, "n": opts.sweeps, "trace": list(v0.mean(axis=1))}]
    start = tau.sample(rng, (m, d))
    ens = _Ensemble(H, phi, tau, d, start)
    scale = 0.5 * max(H.width, H.height) / d
    for beta in betas[1:]:
        st = _run_stage(ens, rng, float(beta), 0.0, scale, opts)
        scale = st["scale"]
        stages.append(st)
    return stages, ens.pts.copy(), scale


def _block_penalty(H, phi, tau, d, seed, opts, block, pts, scale, nbhd, rhos):
    rng = _rng(seed, 1, block)
    ens = _Ensemble(H, phi, tau, d, pts, nbhd)
    first = {"mean_U": ens.U.copy(), "frac_in": ens.inside().astype(float)}
    stages = []
    for rho in rhos:
        st = _run_stage(ens, rng, 2.0, float(rho), scale, opts, record_U=True)
        scale = st["scale"]
        stages.append(st)
    return first, stages


def _thermodynamic(H, phi, tau, d, seed, opts, nbhd=None):
    betas = np.linspace(0.0, 2.0, opts.beta_points)
    h = betas[1] - betas[0]
    blocks = range(opts.blocks)
    ti = _map(lambda b: _block_ti(H, phi, tau, d, seed, opts, b, betas), blocks, opts.threads)

    def gather(key, stage):
        return np.concatenate([res[0][stage][key] for res in ti])

    means = np.array([gather("mean_v", s) for s in range(betas.size)])  # (n_beta, M)
    second = np.array([gather("mean_v2", s) for s in range(betas.size)])
    var = second.mean(axis=1) - means.mean(axis=1) ** 2
    trap = h * (means.sum(axis=0) - 0.5 * (means[0] + means[-1]))
    # endpoint correction of the trapezoid rule: d/dβ E_β[log|VDM|] = Var_β
    correction = -(h * h / 12.0) * (var[-1] - var[0])
    log_base = d * math.log(tau.mass)  # β = 0: the integrand is 1
    per_walker = log_base + trap + correction
    M = per_walker.size
    acc = [float(np.mean([res[0][s]["acceptance"] for res in ti])) for s in range(1, betas.size)]
    bad = _acceptance_flag(acc, betas[1:])
    trace = np.mean([res[0][-1]["trace"] for res in ti], axis=0)
    z_est = McEstimate(
        float(per_walker.mean()), float(per_walker.std(ddof=1) / math.sqrt(M)),
        M * opts.sweeps * (betas.size), "thermodynamic",
        {"acceptance": acc, "flagged": bool(bad), "bad_stages": bad,
         "ess_final_stage": _ess(trace, M), "endpoint_correction": float(correction),
         "log_base": log_base,
         "betas": betas.tolist(), "stage_means": means.mean(axis=1).tolist()})
    if nbhd is None:
        return z_est, None

    # probability of the neighborhood along the penalty path
    ens_U = []
    for res in ti:
        e = _Ensemble(H, phi, tau, d, res[1], nbhd)
        ens_U.append(e.U)
    U0 = float(np.mean(np.concatenate(ens_U)))
    decades = opts.rho_per_decade
    rho_min = min(opts.rho_start_load / max(U0, 1e-300), opts.rho_max * 1e-3)
    n_rho = int(math.ceil(decades * math.log10(opts.rho_max / rho_min))) + 1
    n_rho += 1 - n_rho % 2  # odd count for Simpson
    rhos = np.geomspace(rho_min, opts.rho_max, n_rho)
    pen = _map(lambda b: _block_penalty(H, phi, tau, d, seed, opts, b, ti[b][1], ti[b][2], nbhd, rhos),
               blocks, opts.threads)
    EU0 = np.concatenate([p[0]["mean_U"] for p in pen])
    EU = np.array([np.concatenate([p[1][j]["mean_U"] for p in pen]) for j in range(n_rho)])
    frac = np.concatenate([p[1][-1]["frac_in"] for p in pen])
    # ∫_0^ρmax E_ρ[U] dρ: linear piece on [0, ρ1], Simpson in log ρ after
    g = rhos[:, None] * EU
    path = 0.5 * rhos[0] * (EU0 + EU[0]) + simpson(g, x=np.log(rhos), axis=0)
    f_in = float(frac.mean())
    if f_in == 0.0:
        from .fekete import find_feasible
        starts = [res[1][0] for res in ti]
        find_feasible(H, nbhd, d, starts)  # raises when infeasible
        raise ChainInitializationError(
            "no walker entered the moment neighborhood; try a larger epsilon or rho_max")
    log_p = float(-path.mean() + math.log(f_in))
    # per-walker linearization of -path + log(mean fraction) keeps their covariance
    replicate = -path + frac / f_in
    se = float(replicate.std(ddof=1) / math.sqrt(M))
    acc_p = [float(np.mean([p[1][j]["acceptance"] for p in pen])) for j in range(n_rho)]
    bad_p = _acceptance_flag(acc_p, rhos)
    trace_p = np.mean([p[1][-1]["trace"] for p in pen], axis=0)
    p_est = McEstimate(
        log_p, se, M * opts.sweeps * n_rho, "thermodynamic",
        {"acceptance": acc_p, "flagged": bool(bad_p), "bad_stages": bad_p, "rhos": rhos.tolist(),
         "fraction_inside": f_in, "initial_penalty": U0, "ess_final_stage": _ess(trace_p, M)})
    return z_est, p_est


def _use_quadrature(d, opts):
    if opts.method == "quadrature":
        return True
    return opts.method == "auto" and d <= 3


def log_Z(H: Rectangle, phi: WeightFunction, tau: BaseMeasure, d: int, seed: int = 0,
          opts: Optional[McOptions] = None) -> McEstimate:
    """log ∫_{H^d} |VDM^phi_d|² dτ^d."""
    if d < 2:
        raise ValueError("d must be >= 2")
    opts = opts or McOptions()
    if _use_quadrature(d, opts):
        return _quad_log_Z(H, phi, tau, d, opts)
    return _thermodynamic(H, phi, tau, d, seed, opts)[0]


def _pair(H, phi, tau, nbhd, d, seed, opts):
    if _use_quadrature(d, opts):
        z = _quad_log_Z(H, phi, tau, d, opts)
        j = _quad_log_J(H, phi, tau, nbhd, d, opts)
        if not np.isfinite(j.value):
            from .fekete import find_feasible, initial_configuration
            find_feasible(H, nbhd, d, [initial_configuration(H, d)])
        return z, j
    z, p = _thermodynamic(H, phi, tau, d, seed, opts, nbhd)
    j = McEstimate(z.value + p.value, math.hypot(z.std_error, p.std_error),
                   z.n_samples + p.n_samples, "thermodynamic",
                   {"log_Z": z.to_json_dict(), "log_prob": p.to_json_dict(),
                    "flagged": z.flagged or p.flagged})
    return z, j


def log_J(H: Rectangle, phi: WeightFunction, tau: BaseMeasure, nbhd: MomentNeighborhood,
          d: int, seed: int = 0, opts: Optional[McOptions] = None) -> McEstimate:
    """log of the integral of |VDM^phi_d|² dτ^d over configurations in `nbhd`."""
    if d < 2:
        raise ValueError("d must be >= 2")
    return _pair(H, phi, tau, nbhd, d, seed, opts or McOptions())[1]


def log_prob(H: Rectangle, phi: WeightFunction, tau: BaseMeasure, nbhd: MomentNeighborhood,
             d: int, seed: int = 0, opts: Optional[McOptions] = None) -> McEstimate:
    """log Prob_d(G̃_d) = log J - log Z.

    The standard error of the stochastic version is that of the penalty
    path alone: log Z cancels exactly because both terms share its chains.
    ``diagnostics["rate_check"]`` holds -(1/d²) log Prob_d.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    opts = opts or McOptions()
    z, j = _pair(H, phi, tau, nbhd, d, seed, opts)
    value = j.value - z.value
    if j.method == "quadrature":
        se = 0.0
        diag = {"flagged": False}
        bound = j.truncation_bound + z.truncation_bound
    else:
        path = j.diagnostics["log_prob"]
        se = path["std_error"]
        diag = {"flagged": j.flagged, "penalty_path": path["diagnostics"]}
        bound = 0.0
    diag.update(log_J={"value": j.value, "std_error": j.std_error},
                log_Z={"value": z.value, "std_error": z.std_error},
                rate_check=-value / d ** 2)
    return McEstimate(value, se, j.n_samples, j.method, diag, truncation_bound=bound)


# -- sandwich bounds -------------------------------------------------------------------------

@dataclass
class SandwichBounds:
    """Bounds on (1/d²) log J_d for a moment neighborhood."""

    lower: float
    upper: float
    radius: float
    log_tau_box: float
    pair_floor: float
    center: np.ndarray = field(repr=False)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def to_json_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "midpoint": self.midpoint,
                "radius": self.radius, "log_tau_box": self.log_tau_box,
                "pair_floor": self.pair_floor}


def _box_min_log_w(phi: WeightFunction, H: Rectangle, z: complex, r: float, n: int = 33) -> float:
    if phi.kind == "unit":
        return 0.0
    if H.is_interval:
        pts = np.linspace(max(H.x_min, z.real - r), min(H.x_max, z.real + r), n) + 1j * H.y_min
    else:
        t = np.linspace(-r, r, n)
        X, Y = np.meshgrid(t, t)
        keep = X ** 2 + Y ** 2 <= r * r
        pts = H.clamp(z + (X + 1j * Y)[keep])
    vals = phi.log_w(pts)
    slack = 0.0
    if phi.differentiable:
        slack = float(np.abs(phi.grad_log_w(pts)).max()) * (2 * r / (n - 1))
    return float(vals.min()) - slack


def sandwich_bounds(H: Rectangle, phi: WeightFunction, tau: BaseMeasure, nbhd: MomentNeighborhood,
                    d: int, seed: int = 0, fekete_opts=None, n_radii: int = 61) -> SandwichBounds:
    """Deterministic bounds on (1/d²) log J_d(nbhd).

    Upper: J <= τ(H)^d sup |VDM^phi|² over the neighborhood.
    Lower: take the constrained maximizer z for the half-width neighborhood
    and a radius r <= exp(-sqrt d) small enough that every configuration
    within r of z stays in `nbhd`; then J >= τ(Δ_r(z) ∩ H^d) times the
    smallest |VDM^phi|² on that box, bounded below pairwise by
    |z_i - z_j| - 2r and by the smallest weight over each disc.  The radius
    maximizing this bound is used.
    """
    from .fekete import constrained_sup_W

    top = constrained_sup_W(H, phi, nbhd, d, seed, fekete_opts)
    upper = 2.0 * top.log_wvdm_value / d ** 2 + math.log(tau.mass) / d
    half = constrained_sup_W(H, phi, nbhd.widened(0.5), d, seed, fekete_opts)
    z = as_points(half.configuration)
    margin = nbhd.epsilon - float(np.max(np.abs(nbhd.config_gaps(z))))
    iu = np.triu_indices(d, 1)
    dist = np.abs(z[:, None] - z[None, :])[iu]
    best = None
    for r in math.exp(-math.sqrt(d)) * np.geomspace(1e-6, 1.0, n_radii):
        if 2 * r >= dist.min() or max_moment_shift(z, r, nbhd.k) >= margin:
            continue
        masses = np.array([tau.disc_mass(zi, r) for zi in z])
        if np.any(masses <= 0):
            continue
        log_box = float(np.log(masses).sum())
        pair = float(np.log(dist - 2 * r).sum())
        wmin = sum(_box_min_log_w(phi, H, zi, r) for zi in z)
        lower = (log_box + 2 * pair + 2 * d * wmin) / d ** 2
        if best is None or lower > best.lower:
            best = SandwichBounds(lower, upper, float(r), log_box, pair, z)
    if best is None:
        return SandwichBounds(float("-inf"), upper, 0.0, float("-inf"), float("-inf"), z)
    return best


# -- Bernstein-Markov ratios -----------------------------------------------------------------

@dataclass(frozen=True)
class BmRow:
    k: int
    max_ratio: float
    root: float

    def to_json_dict(self) -> dict:
        return {"k": self.k, "max_ratio": self.max_ratio, "root": self.root}


def _cheb_variable(H: Rectangle, z):
    half = H.width / 2 if H.width > 0 else H.height / 2
    return (np.asarray(z) - H.center) / half


def _sup_interval(H, w, k, coefs, grid):
    x = np.linspace(H.x_min, H.x_max, grid)
    z = x + 1j * H.y_min
    u = _cheb_variable(H, z)
    lw = k * w.log_w(z)
    vals = np.log(np.abs(C.chebval(u, coefs)) + 1e-300) + lw  # (trials, grid)
    j = np.argmax(vals, axis=-1)
    best = vals[np.arange(vals.shape[0]), j]
    # one parabolic (finite-difference Newton) step off the best grid point
    jl, jr = np.clip(j - 1, 0, grid - 1), np.clip(j + 1, 0, grid - 1)
    rows = np.arange(vals.shape[0])
    fl, f0, fr = vals[rows, jl], best, vals[rows, jr]
    h = x[1] - x[0]
    curv = fl - 2 * f0 + fr
    with np.errstate(divide="ignore", invalid="ignore"):
        off = np.where(curv < 0, 0.5 * h * (fl - fr) / curv, 0.0)
    xn = np.clip(x[j] + np.clip(off, -h, h), H.x_min, H.x_max)
    zn = xn + 1j * H.y_min
    un = _cheb_variable(H, zn)
    pn = np.array([C.chebval(un[t], coefs[:, t]) for t in range(coefs.shape[1])])
    fn = np.log(np.abs(pn) + 1e-300) + k * w.log_w(zn)
    return np.exp(np.maximum(best, fn))


def _sup_rect(H, w, k, coefs, grid):
    x = np.linspace(H.x_min, H.x_max, grid)
    y = np.linspace(H.y_min, H.y_max, grid)
    out = np.full(coefs.shape[1], -np.inf)
    for yy in y:
        z = x + 1j * yy
        vals = np.log(np.abs(C.chebval(_cheb_variable(H, z), coefs)) + 1e-300) + k * w.log_w(z)
        out = np.maximum(out, vals.max(axis=-1))
    return np.exp(out)


def weighted_norms(H: Rectangle, w: WeightFunction, tau: BaseMeasure, k: int, coefs,
                   grid: int = 2048):
    """(sup_H |w^k p|, ||w^k p||_{L²(τ)}) for p = Σ coefs_j T_j(u).

    `coefs` has shape (deg+1,) or (deg+1, trials); u maps H's bounding
    interval onto [-1, 1].  The sup is a grid maximum refined by one local
    step, hence a slight underestimate of the true sup.
    """
    coefs = np.asarray(coefs)
    single = coefs.ndim == 1
    if single:
        coefs = coefs[:, None]
    sup = (_sup_interval if H.is_interval else _sup_rect)(H, w, k, coefs, grid)
    nq = coefs.shape[0] + (2 * k if w.kind != "unit" else 0) + 32
    if not H.is_interval:
        nq = min(nq, 96)
    z, wq = tau.quadrature(nq)
    vals = np.abs(C.chebval(_cheb_variable(H, z), coefs)) ** 2 * np.exp(2 * k * w.log_w(z))
    l2 = np.sqrt(vals @ wq)
    if single:
        return float(sup[0]), float(l2[0])
    return sup, l2


def bm_ratio(H: Rectangle, w: WeightFunction, tau: BaseMeasure, k_list: Sequence[int],
             trials: int = 200, seed: int = 0, grid: int = 2048) -> List[BmRow]:
    """Largest ratio ||w^k p||_H / ||w^k p||_{L²(τ)} over random polynomials
    of degree <= k with standard normal Chebyshev coefficients."""
    rows = []
    for k in k_list:
        if k < 1:
            raise ValueError("degrees must be positive")
        rng = _rng(seed, 2, k)
        coefs = rng.standard_normal((k + 1, trials))
        if not H.is_interval:
            coefs = coefs + 1j * rng.standard_normal((k + 1, trials))
        sup, l2 = weighted_norms(H, w, tau, k, coefs, grid)
        with np.errstate(divide="ignore"):
            R = float(np.max(sup / l2))
        rows.append(BmRow(int(k), R, R ** (1.0 / k)))
    return rows
