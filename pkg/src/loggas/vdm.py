"""
Weighted Vandermonde determinants in the log domain.

``log_wvdm(λ, w) = Σ_{i<j} log|λ_i - λ_j| + d Σ_i log w(λ_i)``; the
squared modulus used by the energy/volume machinery is twice this.
Coincident points give ``-inf`` rather than an error so that samplers can
treat them as zero density.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from .errors import DomainError, SingularConfigurationError, UnsupportedWeightError
from .measures import Rectangle, as_points

KINDS = ("unit", "exp_poly", "poly", "tabulated")


def _poly_eval(exps: np.ndarray, coefs: np.ndarray, z: np.ndarray) -> np.ndarray:
    x, y = z.real, z.imag
    out = np.zeros(z.shape)
    for (n1, n2), c in zip(exps, coefs):
        out = out + c * x ** n1 * y ** n2
    return out


def _poly_grad(exps, coefs, z):
    """(∂/∂x, ∂/∂y) of a real polynomial, packed as a complex array."""
    x, y = z.real, z.imag
    gx = np.zeros(z.shape)
    gy = np.zeros(z.shape)
    for (n1, n2), c in zip(exps, coefs):
        if n1:
            gx = gx + c * n1 * x ** (n1 - 1) * y ** n2
        if n2:
            gy = gy + c * n2 * x ** n1 * y ** (n2 - 1)
    return gx + 1j * gy


def _poly_hess(exps, coefs, z):
    """Second derivatives (xx, xy, yy) of a real polynomial."""
    x, y = z.real, z.imag
    hxx = np.zeros(z.shape)
    hxy = np.zeros(z.shape)
    hyy = np.zeros(z.shape)
    for (n1, n2), c in zip(exps, coefs):
        if n1 > 1:
            hxx = hxx + c * n1 * (n1 - 1) * x ** (n1 - 2) * y ** n2
        if n1 and n2:
            hxy = hxy + c * n1 * n2 * x ** (n1 - 1) * y ** (n2 - 1)
        if n2 > 1:
            hyy = hyy + c * n2 * (n2 - 1) * x ** n1 * y ** (n2 - 2)
    return hxx, hxy, hyy


@dataclass(frozen=True)
class WeightFunction:
    """Positive continuous weight w on a rectangle, with Q = -log w.

    kinds
        ``unit``       w = 1
        ``exp_poly``   w = exp(-Q), Q a real polynomial in (x, y)
        ``poly``       w itself a real polynomial, positive on the domain
        ``tabulated``  values on a grid, (bi)linear interpolation

    Use the classmethod constructors rather than the raw fields.
    """

    kind: str
    domain: Rectangle
    coefficients: Dict[Tuple[int, int], float] = field(default_factory=dict)
    grid: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        coefs = {(int(a), int(b)): float(c) for (a, b), c in self.coefficients.items()}
        object.__setattr__(self, "coefficients", coefs)
        object.__setattr__(self, "_exps", np.array(list(coefs) or np.zeros((0, 2)), dtype=int).reshape(-1, 2))
        object.__setattr__(self, "_coefs", np.array(list(coefs.values()), dtype=float))
        if self.kind == "tabulated":
            self._setup_table()
        self._validate()

    # -- constructors ------------------------------------------------------
    @classmethod
    def unit(cls, domain: Rectangle) -> "WeightFunction":
        return cls("unit", domain)

    @classmethod
    def exp_poly(cls, domain: Rectangle, q_coefficients) -> "WeightFunction":
        """w = exp(-Q) with Q = Σ c x^n1 y^n2 given as {(n1, n2): c}."""
        return cls("exp_poly", domain, dict(q_coefficients))

    @classmethod
    def poly(cls, domain: Rectangle, coefficients) -> "WeightFunction":
        return cls("poly", domain, dict(coefficients))

    @classmethod
    def tabulated(cls, domain: Rectangle, xs, values, ys=None) -> "WeightFunction":
        xs = np.asarray(xs, dtype=float)
        ys = None if ys is None else np.asarray(ys, dtype=float)
        return cls("tabulated", domain, {}, (xs, ys, np.asarray(values, dtype=float)))

    def _setup_table(self):
        xs, ys, vals = self.grid
        if self.domain.is_interval or ys is None:
            if vals.shape != xs.shape:
                raise ValueError("tabulated values must match the x grid")
            interp = None
        else:
            from scipy.interpolate import RegularGridInterpolator
            if vals.shape != (ys.size, xs.size):
                raise ValueError("tabulated values must have shape (len(ys), len(xs))")
            interp = RegularGridInterpolator((ys, xs), vals, method="linear",
                                             bounds_error=False, fill_value=None)
        object.__setattr__(self, "_interp", interp)

    def _validate(self):
        H = self.domain
        if H.is_interval:
            z = np.linspace(H.x_min, H.x_max, 1025) + 1j * H.y_min
        else:
            gx = np.linspace(H.x_min, H.x_max, 129)
            gy = np.linspace(H.y_min, H.y_max, 129)
            X, Y = np.meshgrid(gx, gy)
            z = (X + 1j * Y).ravel()
        with np.errstate(divide="ignore", invalid="ignore"):
            lw = self.log_w(z, check=False)
        if not np.all(np.isfinite(lw)):
            raise ValueError(f"{self.kind} weight must be finite and > 0 on {H}")

    # -- evaluation --------------------------------------------------------
    def _check(self, z):
        if not np.all(self.domain.contains(z)):
            raise DomainError("point outside the weight's rectangle")

    def log_w(self, z, check: bool = True) -> np.ndarray:
        """log w(z) = -Q(z), vectorized over complex z."""
        z = np.asarray(z, dtype=complex)
        if check:
            self._check(z)
        if self.kind == "unit":
            return np.zeros(z.shape)
        if self.kind == "exp_poly":
            return -_poly_eval(self._exps, self._coefs, z)
        if self.kind == "poly":
            return np.log(_poly_eval(self._exps, self._coefs, z))
        return np.log(self._table(z))

    def __call__(self, z, check: bool = True):
        return np.exp(self.log_w(z, check))

    def Q(self, z, check: bool = True):
        return -self.log_w(z, check)

    def _table(self, z):
        xs, ys, vals = self.grid
        if self._interp is None:
            return np.interp(z.real, xs, vals)
        pts = np.stack([np.ravel(z.imag), np.ravel(z.real)], axis=-1)
        return self._interp(pts).reshape(z.shape)

    def grad_log_w(self, z, check: bool = True) -> np.ndarray:
        """∇ log w packed as complex (∂x + i ∂y)."""
        z = np.asarray(z, dtype=complex)
        if check:
            self._check(z)
        if self.kind == "unit":
            return np.zeros(z.shape, dtype=complex)
        if self.kind == "exp_poly":
            return -_poly_grad(self._exps, self._coefs, z)
        if self.kind == "poly":
            return _poly_grad(self._exps, self._coefs, z) / _poly_eval(self._exps, self._coefs, z)
        raise UnsupportedWeightError("tabulated weights have no gradient")

    def hess_log_w(self, z):
        """Second derivatives (xx, xy, yy) of log w."""
        z = np.asarray(z, dtype=complex)
        zero = np.zeros(z.shape)
        if self.kind == "unit":
            return zero, zero, zero
        if self.kind == "exp_poly":
            return tuple(-h for h in _poly_hess(self._exps, self._coefs, z))
        if self.kind == "poly":
            p = _poly_eval(self._exps, self._coefs, z)
            g = _poly_grad(self._exps, self._coefs, z)
            hxx, hxy, hyy = _poly_hess(self._exps, self._coefs, z)
            gx, gy = g.real / p, g.imag / p
            return hxx / p - gx * gx, hxy / p - gx * gy, hyy / p - gy * gy
        raise UnsupportedWeightError("tabulated weights have no Hessian")

    def key(self) -> str:
        """Stable identity string (cache key)."""
        import json
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @property
    def differentiable(self) -> bool:
        return self.kind != "tabulated"

    @property
    def degrees(self) -> Tuple[int, int]:
        """Per-variable degrees (deg_x, deg_y) of a polynomial weight."""
        if self.kind == "unit":
            return (0, 0)
        if self.kind != "poly":
            raise UnsupportedWeightError(f"{self.kind} weight is not a polynomial")
        nz = self._exps[self._coefs != 0]
        if nz.size == 0:
            return (0, 0)
        return (int(nz[:, 0].max()), int(nz[:, 1].max()))

    @property
    def degree(self) -> int:
        return max(self.degrees)

    # -- serialization -----------------------------------------------------
    def to_json_dict(self) -> dict:
        out = {"kind": self.kind, "domain": self.domain.to_dict(),
               "coefficients": [[n1, n2, c] for (n1, n2), c in self.coefficients.items()]}
        if self.kind == "tabulated":
            xs, ys, vals = self.grid
            out["grid"] = {"x": xs.tolist(), "y": None if ys is None else ys.tolist(),
                           "values": vals.tolist()}
        return out

    @classmethod
    def from_json_dict(cls, data: dict, domain: Optional[Rectangle] = None) -> "WeightFunction":
        if domain is None:
            domain = Rectangle.from_dict(data["domain"])
        kind = data.get("kind", "unit")
        coefs = {(int(a), int(b)): float(c) for a, b, c in data.get("coefficients", [])}
        if kind == "tabulated":
            g = data["grid"]
            return cls.tabulated(domain, g["x"], g["values"], g.get("y"))
        return cls(kind, domain, coefs)


# -- Vandermonde evaluation ---------------------------------------------------

def _pair_logs(pts: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(pts.size, 1)
    with np.errstate(divide="ignore"):
        return np.log(np.abs(pts[i] - pts[j]))


def log_vdm(points) -> float:
    """Σ_{i<j} log|λ_i - λ_j|; -inf when two points coincide."""
    pts = as_points(points)
    if pts.size < 2:
        raise ValueError("a Vandermonde determinant needs d >= 2 points")
    return float(_pair_logs(pts).sum())


def log_wvdm(points, w: WeightFunction) -> float:
    """log|VDM^w_d(λ)| = log_vdm(λ) + d Σ_i log w(λ_i)."""
    pts = as_points(points)
    lv = log_vdm(pts)
    return lv + pts.size * float(np.sum(w.log_w(pts)))


def batch_log_vdm(configs: np.ndarray) -> np.ndarray:
    """log_vdm for each row of an (n, d) complex array."""
    configs = np.asarray(configs, dtype=complex)
    i, j = np.triu_indices(configs.shape[1], 1)
    with np.errstate(divide="ignore"):
        return np.log(np.abs(configs[:, i] - configs[:, j])).sum(axis=1)


def batch_log_wvdm(configs: np.ndarray, w: WeightFunction) -> np.ndarray:
    configs = np.asarray(configs, dtype=complex)
    d = configs.shape[1]
    return batch_log_vdm(configs) + d * w.log_w(configs, check=False).sum(axis=1)


def grad_log_wvdm_complex(points, w: WeightFunction) -> np.ndarray:
    """Gradient of log_wvdm packed as complex, one entry per point."""
    pts = as_points(points)
    if not w.differentiable:
        raise UnsupportedWeightError("gradient needs a unit, exp_poly or poly weight")
    diff = pts[:, None] - pts[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0):
        raise SingularConfigurationError("coincident points")
    inv = 1.0 / np.conj(diff)
    np.fill_diagonal(inv, 0.0)
    return inv.sum(axis=1) + pts.size * w.grad_log_w(pts, check=False)


def hess_log_wvdm(points, w: WeightFunction, interval: bool = False) -> np.ndarray:
    """Hessian of log_wvdm in real coordinates.

    With ``interval=True`` the variables are the d real parts only (d x d);
    otherwise they are interleaved (x_0, y_0, x_1, y_1, ...) (2d x 2d).
    """
    pts = as_points(points)
    d = pts.size
    diff = pts[:, None] - pts[None, :]
    np.fill_diagonal(diff, 1.0)
    u, v = diff.real, diff.imag
    r4 = np.abs(diff) ** 4
    bxx = (v * v - u * u) / r4
    bxy = -2 * u * v / r4
    byy = -bxx
    for b in (bxx, bxy, byy):
        np.fill_diagonal(b, 0.0)
    wxx, wxy, wyy = w.hess_log_w(pts)
    if interval:
        H = -bxx
        H[np.diag_indices(d)] = bxx.sum(axis=1) + d * wxx
        return H
    H = np.zeros((2 * d, 2 * d))
    H[0::2, 0::2] = -bxx
    H[0::2, 1::2] = -bxy
    H[1::2, 0::2] = -bxy
    H[1::2, 1::2] = -byy
    idx = np.arange(d)
    H[2 * idx, 2 * idx] = bxx.sum(axis=1) + d * wxx
    H[2 * idx, 2 * idx + 1] = bxy.sum(axis=1) + d * wxy
    H[2 * idx + 1, 2 * idx] = bxy.sum(axis=1) + d * wxy
    H[2 * idx + 1, 2 * idx + 1] = byy.sum(axis=1) + d * wyy
    return H


def grad_log_wvdm(points, w: WeightFunction) -> np.ndarray:
    """Gradient of log|VDM^w_d| in the 2d real coordinates, shape (d, 2).

    Row i holds (∂/∂Re λ_i, ∂/∂Im λ_i).
    """
    g = grad_log_wvdm_complex(points, w)
    return np.stack([g.real, g.imag], axis=1)


# -- Markov inequality machinery -------------------------------------------------

@dataclass(frozen=True)
class MarkovBoundParams:
    """Constants of the perturbation floor 1 - d A (c1 d^g1)^2 exp(-sqrt d)."""

    A: float
    c1: float
    gamma1: float

    def __post_init__(self):
        if not (self.A > 0 and self.c1 > 0 and self.gamma1 > 0):
            raise ValueError("Markov bound constants must be positive")


def markov_constant(rect: Rectangle) -> float:
    """Markov constant A for polynomials of degree <= k in each variable.

    Affine reduction to [-1, 1] per axis bounds the partial derivatives by
    (2/width) k^2 ||p|| and (2/height) k^2 ||p||; the gradient norm needs
    their Euclidean combination.
    """
    if rect.is_interval:
        return 2.0 / rect.width
    return math.hypot(2.0 / rect.width, 2.0 / rect.height)


def markov_lipschitz_bound(k: int, rect: Optional[Rectangle] = None, A: Optional[float] = None) -> float:
    """Coefficient A k^2 with |p(z1) - p(z2)| <= A k^2 ||p||_H |z1 - z2|."""
    if k < 1:
        raise ValueError("degree must be >= 1")
    if A is None:
        if rect is None:
            raise ValueError("need a rectangle or an explicit A")
        A = markov_constant(rect)
    if not A > 0:
        raise ValueError("A must be positive")
    return A * k * k


def perturbation_floor(d: int, params: MarkovBoundParams) -> float:
    """psi(d) = 1 - d A (c1 d^g1)^2 exp(-sqrt d).

    Negative values mean the bound is vacuous at this d.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    deg = params.c1 * d ** params.gamma1
    return 1.0 - d * params.A * deg * deg * math.exp(-math.sqrt(d))


def vdm_markov_params(rect: Rectangle, w: WeightFunction) -> MarkovBoundParams:
    """Constants for Λ_d = |VDM^w_d|^2 with a polynomial weight.

    Per real variable, Λ_d has degree <= 2(d-1) + 2 d deg(w) <= (2 + 2 deg w) d.
    """
    if w.kind not in ("unit", "poly"):
        raise UnsupportedWeightError("the perturbation floor needs a polynomial weight")
    return MarkovBoundParams(markov_constant(rect), 2.0 + 2.0 * w.degree, 1.0)
