"""
Probability measures on a rectangle.

Rectangles, discretized (grid) measures, real moments, moment
neighborhoods of a measure in the weak* topology, empirical measures of
point configurations and the small perturbation boxes around them.

Points of the plane are stored as complex numbers throughout.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

Moments = Dict[Tuple[int, int], float]

MASS_TOL = 1e-12


def as_points(points) -> np.ndarray:
    """Return `points` as a 1-D complex array (copy)."""
    arr = np.array(points, dtype=complex).ravel()
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Rectangle:
    """Closed axis-parallel rectangle [x_min, x_max] x [y_min, y_max].

    A zero height (``y_min == y_max``) models a real interval.
    """

    x_min: float
    x_max: float
    y_min: float = 0.0
    y_max: float = 0.0

    def __post_init__(self):
        if not self.x_min < self.x_max:
            raise ValueError("Rectangle needs x_min < x_max")
        if not self.y_min <= self.y_max:
            raise ValueError("Rectangle needs y_min <= y_max")

    @classmethod
    def interval(cls, a: float, b: float, y: float = 0.0) -> "Rectangle":
        return cls(float(a), float(b), float(y), float(y))

    @property
    def is_interval(self) -> bool:
        return self.y_min == self.y_max

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> complex:
        return complex(0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    @property
    def corners(self) -> np.ndarray:
        return np.array([complex(x, y) for x in (self.x_min, self.x_max)
                         for y in (self.y_min, self.y_max)])

    def contains(self, z):
        """Closed-set membership, vectorized over `z`."""
        z = np.asarray(z, dtype=complex)
        return ((z.real >= self.x_min) & (z.real <= self.x_max)
                & (z.imag >= self.y_min) & (z.imag <= self.y_max))

    def clamp(self, z):
        z = np.asarray(z, dtype=complex)
        return (np.clip(z.real, self.x_min, self.x_max)
                + 1j * np.clip(z.imag, self.y_min, self.y_max))

    def to_dict(self) -> dict:
        return {"x_min": self.x_min, "x_max": self.x_max,
                "y_min": self.y_min, "y_max": self.y_max}

    @classmethod
    def from_dict(cls, data) -> "Rectangle":
        if isinstance(data, (list, tuple)):
            data = dict(zip(("x_min", "x_max", "y_min", "y_max"), data))
        return cls(float(data["x_min"]), float(data["x_max"]),
                   float(data.get("y_min", 0.0)), float(data.get("y_max", 0.0)))

    @classmethod
    def parse(cls, text: str) -> "Rectangle":
        """Parse ``"x_min,x_max[,y_min,y_max]"``."""
        vals = [float(v) for v in text.split(",")]
        if len(vals) == 2:
            return cls.interval(*vals)
        if len(vals) == 4:
            return cls(*vals)
        raise ValueError("rectangle must be 'x_min,x_max' or 'x_min,x_max,y_min,y_max'")


@dataclass(frozen=True)
class GridMeasure:
    """Probability measure carried by finitely many nodes.

    Parameters
    ----------
    nodes : array of complex
        Pairwise distinct support points.
    masses : array of float
        Nonnegative masses summing to 1.
    label : str, optional
    cells : (hx, hy) arrays, optional
        Cell widths when the measure discretizes a continuous measure
        (node = cell center). Measures without cells are genuinely atomic.
    """

    nodes: np.ndarray
    masses: np.ndarray
    label: Optional[str] = None
    cells: Optional[Tuple[np.ndarray, np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        nodes = as_points(self.nodes)
        masses = np.asarray(self.masses, dtype=float).ravel()
        if nodes.shape != masses.shape:
            raise ValueError("nodes and masses must have the same length")
        if nodes.size == 0:
            raise ValueError("a probability measure needs at least one node")
        if np.any(masses < 0):
            raise ValueError("masses must be nonnegative")
        if abs(masses.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {masses.sum()!r}, not 1")
        if np.unique(nodes).size != nodes.size:
            raise ValueError("nodes must be pairwise distinct")
        object.__setattr__(self, "nodes", _frozen(nodes))
        object.__setattr__(self, "masses", _frozen(masses))
        if self.cells is not None:
            hx, hy = (np.broadcast_to(np.asarray(c, dtype=float), nodes.shape) for c in self.cells)
            if np.any(hx <= 0):
                raise ValueError("cell widths must be positive")
            object.__setattr__(self, "cells", (_frozen(hx), _frozen(hy)))

    def __len__(self):
        return self.nodes.size

    @property
    def is_discretization(self) -> bool:
        return self.cells is not None

    def integrate(self, f) -> float:
        """∫ f dm for a vectorized callable f of complex points."""
        return float(np.dot(self.masses, f(self.nodes)))

    def with_masses(self, masses, label=None) -> "GridMeasure":
        """Same nodes and cells, new masses (renormalized to 1)."""
        masses = np.clip(np.asarray(masses, dtype=float), 0.0, None)
        masses = masses / masses.sum()
        return GridMeasure(self.nodes, masses, label if label is not None else self.label, self.cells)

    def scaled(self, s: float, shift: complex = 0.0, label=None) -> "GridMeasure":
        """Push-forward under z -> s*z + shift (s > 0)."""
        if not s > 0:
            raise ValueError("scale must be positive")
        cells = None
        if self.cells is not None:
            cells = (self.cells[0] * s, self.cells[1] * s)
        return GridMeasure(s * self.nodes + shift, self.masses, label, cells)

    # -- serialization ---------------------------------------------------
    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        has_cells = self.cells is not None
        header = ["x", "y", "mass"] + (["hx", "hy"] if has_cells else [])
        writer.writerow(header)
        for i, (z, m) in enumerate(zip(self.nodes, self.masses)):
            row = [repr(float(z.real)), repr(float(z.imag)), repr(float(m))]
            if has_cells:
                row += [repr(float(self.cells[0][i])), repr(float(self.cells[1][i]))]
            writer.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, label=None) -> "GridMeasure":
        """Parse `to_csv` output; lines starting with '#' are comments."""
        body = "\n".join(line for line in text.splitlines() if not line.startswith("#"))
        rows = list(csv.DictReader(io.StringIO(body)))
        nodes = [complex(float(r["x"]), float(r["y"])) for r in rows]
        masses = np.array([float(r["mass"]) for r in rows])
        masses = masses / masses.sum()
        cells = None
        if rows and "hx" in rows[0] and rows[0]["hx"] not in (None, ""):
            cells = (np.array([float(r["hx"]) for r in rows]),
                     np.array([float(r["hy"]) for r in rows]))
        return cls(nodes, masses, label, cells)

    def to_json_dict(self) -> dict:
        out = {"label": self.label,
               "x": self.nodes.real.tolist(), "y": self.nodes.imag.tolist(),
               "mass": self.masses.tolist()}
        if self.cells is not None:
            out["hx"] = self.cells[0].tolist()
            out["hy"] = self.cells[1].tolist()
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "GridMeasure":
        nodes = np.asarray(data["x"], dtype=float) + 1j * np.asarray(data["y"], dtype=float)
        cells = (data["hx"], data["hy"]) if "hx" in data else None
        return cls(nodes, data["mass"], data.get("label"), cells)


# -- grid builders --------------------------------------------------------

def cell_grid(rect: Rectangle, n: int):
    """Cell centers and widths of a uniform grid with about `n` cells.

    Intervals get `n` cells; proper rectangles an nx x ny tensor grid with
    nx*ny close to n and nearly square cells.
    """
    if rect.is_interval:
        edges = np.linspace(rect.x_min, rect.x_max, n + 1)
        x = 0.5 * (edges[:-1] + edges[1:])
        return x + 1j * rect.y_min, np.diff(edges), np.zeros(n)
    aspect = rect.width / rect.height
    nx = max(1, int(round(math.sqrt(n * aspect))))
    ny = max(1, int(round(n / nx)))
    ex = np.linspace(rect.x_min, rect.x_max, nx + 1)
    ey = np.linspace(rect.y_min, rect.y_max, ny + 1)
    cx, cy = 0.5 * (ex[:-1] + ex[1:]), 0.5 * (ey[:-1] + ey[1:])
    X, Y = np.meshgrid(cx, cy, indexing="xy")
    hx = np.full(X.size, ex[1] - ex[0])
    hy = np.full(X.size, ey[1] - ey[0])
    return (X + 1j * Y).ravel(), hx, hy


def discretize(rect: Rectangle, n: int, cdf=None, density=None, label=None) -> GridMeasure:
    """Grid discretization of a continuous measure on `rect`.

    On intervals pass the distribution function `cdf` (exact cell masses)
    or a `density`; on rectangles a `density` of complex points.
    """
    nodes, hx, hy = cell_grid(rect, n)
    if cdf is not None:
        if not rect.is_interval:
            raise ValueError("cdf discretization is only defined on intervals")
        x = nodes.real
        masses = np.diff(cdf(np.concatenate([x - hx / 2, x[-1:] + hx[-1:] / 2])))
    elif density is not None:
        area = hx * (hy if not rect.is_interval else 1.0)
        masses = np.asarray(density(nodes), dtype=float) * area
    else:
        raise ValueError("need cdf or density")
    masses = np.clip(masses, 0.0, None)
    return GridMeasure(nodes, masses / masses.sum(), label, (hx, hy))


def arcsine(n: int, a: float = -1.0, b: float = 1.0) -> GridMeasure:
    """Arcsine (equilibrium) measure of [a, b] discretized on n equal cells."""
    c, r = 0.5 * (a + b), 0.5 * (b - a)

    def cdf(x):
        return np.arcsin(np.clip((x - c) / r, -1.0, 1.0)) / np.pi + 0.5

    return discretize(Rectangle.interval(a, b), n, cdf=cdf, label="arcsine")


def tilted_arcsine(n: int, tilt: float, a: float = -1.0, b: float = 1.0) -> GridMeasure:
    """Discretized density (1 - tilt*u) / (pi sqrt(1 - u^2)), u the point of
    [a, b] mapped to [-1, 1].  Its mean in u is -tilt/2; |tilt| <= 1."""
    if abs(tilt) > 1:
        raise ValueError("tilt must lie in [-1, 1]")

    def cdf(x):
        u = np.clip((2 * np.asarray(x) - a - b) / (b - a), -1, 1)
        return np.clip(np.arcsin(u) / np.pi + 0.5 + tilt * np.sqrt(1 - u * u) / np.pi, 0, 1)

    return discretize(Rectangle.interval(a, b), n, cdf=cdf, label=f"tilted_arcsine({tilt:g})")


def uniform(rect: Rectangle, n: int) -> GridMeasure:
    return discretize(rect, n, density=lambda z: np.ones(z.shape), label="uniform")


# -- moments and neighborhoods ---------------------------------------------

def moment_indices(k: int):
    """Exponent pairs (n1, n2) with n1 + n2 <= k, by total degree then n1."""
    return [(n1, t - n1) for t in range(k + 1) for n1 in range(t + 1)]


def _moment_array(nodes: np.ndarray, weights: np.ndarray, k: int) -> np.ndarray:
    x, y = nodes.real, nodes.imag
    xp = x[None, :] ** np.arange(k + 1)[:, None]
    yp = y[None, :] ** np.arange(k + 1)[:, None]
    return np.array([np.dot(weights, xp[n1] * yp[n2]) for n1, n2 in moment_indices(k)])


def moments(m: GridMeasure, k: int) -> Moments:
    """Real moments ∫ x^n1 y^n2 dm for n1 + n2 <= k."""
    if k < 0:
        raise ValueError("k must be >= 0")
    vals = _moment_array(m.nodes, m.masses, k)
    out = dict(zip(moment_indices(k), (float(v) for v in vals)))
    out[(0, 0)] = 1.0
    return out


def empirical(points, label: str = "empirical") -> GridMeasure:
    """Empirical measure (1/d) Σ δ(λ_j); coincident points merge their mass."""
    pts = as_points(points)
    if pts.size < 1:
        raise ValueError("need at least one point")
    uniq, counts = np.unique(pts, return_counts=True)
    return GridMeasure(uniq, counts / pts.size, label)


@dataclass(frozen=True)
class MomentNeighborhood:
    """Moment neighborhood G(mu, k, eps): measures whose moments up to total
    degree k lie strictly within eps of the reference moments."""

    reference_moments: Moments
    k: int
    epsilon: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        keys = set(self.reference_moments)
        if keys != set(moment_indices(self.k)):
            raise ValueError("reference moments must cover exactly n1 + n2 <= k")
        if abs(self.reference_moments[(0, 0)] - 1.0) > MASS_TOL:
            raise ValueError("the (0,0) reference moment must be 1")
        ordered = {key: float(self.reference_moments[key]) for key in moment_indices(self.k)}
        object.__setattr__(self, "reference_moments", ordered)

    @classmethod
    def around(cls, m: GridMeasure, k: int, epsilon: float) -> "MomentNeighborhood":
        return cls(moments(m, k), k, epsilon)

    def widened(self, factor: float) -> "MomentNeighborhood":
        return MomentNeighborhood(self.reference_moments, self.k, self.epsilon * factor)

    @property
    def indices(self):
        return moment_indices(self.k)

    def reference_vector(self) -> np.ndarray:
        return np.array([self.reference_moments[key] for key in self.indices])

    def gaps(self, m: GridMeasure) -> np.ndarray:
        """Signed moment differences moment(m) - reference, in index order."""
        return _moment_array(m.nodes, m.masses, self.k) - self.reference_vector()

    def config_gaps(self, points) -> np.ndarray:
        """Moment gaps of the empirical measure of `points` (no merging needed)."""
        pts = as_points(points)
        w = np.full(pts.size, 1.0 / pts.size)
        return _moment_array(pts, w, self.k) - self.reference_vector()

    def contains_config(self, points) -> bool:
        return bool(np.all(np.abs(self.config_gaps(points)) < self.epsilon))

    def to_json_dict(self) -> dict:
        return {"k": self.k, "epsilon": self.epsilon,
                "moments": [[n1, n2, v] for (n1, n2), v in self.reference_moments.items()]}

    @classmethod
    def from_json_dict(cls, data: dict) -> "MomentNeighborhood":
        mom = {(int(n1), int(n2)): float(v) for n1, n2, v in data["moments"]}
        return cls(mom, int(data["k"]), float(data["epsilon"]))

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict())


def in_neighborhood(m: GridMeasure, nbhd: MomentNeighborhood) -> bool:
    """True iff every moment gap up to degree k is strictly below epsilon."""
    return bool(np.all(np.abs(nbhd.gaps(m)) < nbhd.epsilon))


# -- perturbation boxes -------------------------------------------------------

def box_radius(d: int) -> float:
    return math.exp(-math.sqrt(d))


@dataclass(frozen=True)
class DeltaBox:
    """Product of closed discs |λ'_j - λ_j| <= radius around a configuration.

    `radius` defaults to exp(-sqrt(d)).
    """

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _frozen(as_points(self.center)))

    @property
    def d(self) -> int:
        return self.center.size

    def contains(self, points) -> bool:
        pts = as_points(points)
        return pts.shape == self.center.shape and bool(
            np.all(np.abs(pts - self.center) <= self.radius))

    def sample(self, rng: np.random.Generator, n: int, rect: Optional[Rectangle] = None) -> np.ndarray:
        """Draw n configurations uniformly from the box (intersected with rect^d).

        Returns an (n, d) complex array.
        """
        c = self.center
        out = np.empty((n, c.size), dtype=complex)
        interval = rect is not None and rect.is_interval
        for j in range(c.size):
            if interval:
                lo = max(c[j].real - self.radius, rect.x_min)
                hi = min(c[j].real + self.radius, rect.x_max)
                out[:, j] = rng.uniform(lo, hi, n) + 1j * rect.y_min
                continue
            filled = 0
            while filled < n:
                m = 2 * (n - filled) + 8
                rr = self.radius * np.sqrt(rng.uniform(0, 1, m))
                th = rng.uniform(0, 2 * np.pi, m)
                cand = c[j] + rr * np.exp(1j * th)
                if rect is not None:
                    cand = cand[rect.contains(cand)]
                take = min(cand.size, n - filled)
                out[filled:filled + take, j] = cand[:take]
                filled += take
        return out


def delta_box(points, radius: Optional[float] = None) -> DeltaBox:
    pts = as_points(points)
    if pts.size < 1:
        raise ValueError("need at least one point")
    return DeltaBox(pts, box_radius(pts.size) if radius is None else float(radius))


def max_moment_shift(center, radius: float, k: int) -> float:
    """Upper bound on how far any moment of degree <= k of an empirical
    measure can move when each point moves by at most `radius`.

    Uses |a^n1 b^n2 - a'^n1 b'^n2| <= (n1 + n2) R^(n1+n2-1) * radius with R
    bounding all coordinates over the enlarged box.
    """
    pts = as_points(center)
    R = float(np.max(np.maximum(np.abs(pts.real), np.abs(pts.imag)))) + radius
    shift = 0.0
    for n1, n2 in moment_indices(k):
        t = n1 + n2
        if t:
            shift = max(shift, t * R ** (t - 1) * radius)
    return shift
