"""
Check suites run by ``loggas verify``.

Each check returns a plain dict ``{"passed": bool, ...raw numbers...}`` so
reports serialize directly.  Problem sizes come from the run configuration,
which lets a quick smoke run and the full desk-scale run share code.
Targets are the classical values for [-1, 1]: capacity 1/2, unweighted
equilibrium energy log 2, free entropy of the arcsine law -log 2.
"""

from __future__ import annotations

import math
from typing import Callable, Dict

import numpy as np

from .equilibrium import cached_equilibrium, rate_functional, solve_equilibrium
from .fekete import FeketeOptions, constrained_sup_W, solve_fekete, transfinite_diameter
from .measures import (MomentNeighborhood, Rectangle, arcsine, delta_box, moments,
                       tilted_arcsine)
from .montecarlo import BaseMeasure, McOptions, bm_ratio, log_J, log_prob, log_Z, sandwich_bounds
from .vdm import (WeightFunction, batch_log_wvdm, grad_log_wvdm, log_wvdm, perturbation_floor,
                  vdm_markov_params)

LOG2 = math.log(2.0)


def _interval():
    return Rectangle.interval(-1.0, 1.0)


def _gaussian(R):
    return WeightFunction.exp_poly(R, {(2, 0): 1.0})


def _fekete_opts(cfg) -> FeketeOptions:
    return FeketeOptions(**{**cfg.fekete, "threads": cfg.threads})


def _chain_opts(cfg, **extra) -> McOptions:
    return McOptions(**{**cfg.chain, **extra, "threads": cfg.threads})


def check_transfinite(cfg) -> dict:
    R = _interval()
    d_list = cfg.d_list or list(range(8, 49, 8))
    tab = transfinite_diameter(R, WeightFunction.unit(R), d_list, cfg.seed, _fekete_opts(cfg))
    deltas = tab.deltas
    monotone = bool(np.all(np.diff(deltas) <= 1e-3))
    rel = abs(tab.extrapolated - 0.5) / 0.5
    return {"passed": bool(rel <= 0.02 and monotone and tab.all_converged),
            "extrapolated_delta": tab.extrapolated, "relative_error_vs_half": rel,
            "deltas": deltas.tolist(), "d_list": d_list, "nonincreasing": monotone,
            "all_converged": tab.all_converged}


def check_equilibrium(cfg) -> dict:
    R = _interval()
    res = solve_equilibrium(R, WeightFunction.unit(R), cfg.grid, **cfg.equilibrium)
    m = res.measure
    right = m.nodes.real + 0.5 * m.cells[0]
    deciles = np.linspace(-1, 1, 11)[1:-1]
    cdf = np.interp(deciles, right, np.cumsum(m.masses))
    exact = np.arcsin(deciles) / np.pi + 0.5
    cdf_err = float(np.abs(cdf - exact).max())
    energy = res.energy.weighted_energy
    hist = np.asarray(res.history)
    monotone = bool(np.all(np.diff(hist) <= 0))
    mom = moments(m, 4)
    mom_err = max(abs(mom[(2, 0)] - 0.5), abs(mom[(4, 0)] - 0.375), abs(mom[(1, 0)]))
    passed = cdf_err <= 0.01 and abs(energy - LOG2) <= 0.01 and monotone and res.converged \
        and mom_err <= 0.01
    return {"passed": bool(passed), "decile_cdf_error": cdf_err, "energy": energy,
            "energy_target": LOG2, "monotone": monotone, "converged": res.converged,
            "grad_norm": res.grad_norm, "moment_error": mom_err}


def check_triangle(cfg) -> dict:
    R = _interval()
    d_list = cfg.d_list or list(range(8, 49, 8))
    out = {"passed": True}
    for name, w in (("unit", WeightFunction.unit(R)), ("gaussian", _gaussian(R))):
        tab = transfinite_diameter(R, w, d_list, cfg.seed, _fekete_opts(cfg))
        eq = solve_equilibrium(R, w, cfg.grid, **cfg.equilibrium)
        gap = abs(math.log(tab.extrapolated) + eq.energy.weighted_energy)
        ok = gap <= 0.05 and tab.all_converged and eq.converged
        out[name] = {"log_delta": math.log(tab.extrapolated), "energy": eq.energy.weighted_energy,
                     "gap": gap, "converged": tab.all_converged and eq.converged}
        out["passed"] = bool(out["passed"] and ok)
    return out


def check_floor(cfg) -> dict:
    R = _interval()
    w = WeightFunction.poly(R, {(0, 0): 1.0, (2, 0): 0.25})
    params = vdm_markov_params(R, w)
    rows = []
    for d in cfg.sizes.get("floor", [16, 25, 36]):
        fek = solve_fekete(R, w, d, _fekete_opts(cfg), cfg.seed)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3, d]))
        sample = delta_box(fek.configuration).sample(rng, 200, R)
        ratio = np.exp(2.0 * (batch_log_wvdm(sample, w) - fek.log_wvdm_value))
        psi = perturbation_floor(d, params)
        rows.append({"d": d, "psi": psi, "min_ratio": float(ratio.min()),
                     "floor_holds": bool(psi <= 0 or ratio.min() >= psi)})
    mins = [r["min_ratio"] for r in rows]
    increasing = bool(np.all(np.diff(mins) > 0))
    return {"passed": bool(all(r["floor_holds"] for r in rows) and increasing),
            "rows": rows, "min_ratio_increasing": increasing}


def check_small_d(cfg) -> dict:
    R = _interval()
    tau = BaseMeasure.lebesgue(R)
    nb = MomentNeighborhood({(0, 0): 1.0, (1, 0): 0.0, (0, 1): 0.0}, 1, 0.1)
    quad = _chain_opts(cfg, method="quadrature")
    mc = _chain_opts(cfg, method="thermodynamic")
    rows = []
    for name, phi in (("unit", WeightFunction.unit(R)), ("gaussian", _gaussian(R))):
        for d in (2, 3):
            qz = log_Z(R, phi, tau, d, opts=quad).value
            qj = log_J(R, phi, tau, nb, d, opts=quad).value
            for s in range(cfg.sizes.get("small_d_seeds", 5)):
                seed = cfg.seed + s
                z = log_Z(R, phi, tau, d, seed, mc)
                j = log_J(R, phi, tau, nb, d, seed, mc)
                rows.append({"weight": name, "d": d, "seed": seed,
                             "z_score_Z": (z.value - qz) / z.std_error,
                             "z_score_J": (j.value - qj) / j.std_error})
    worst = max(max(abs(r["z_score_Z"]), abs(r["z_score_J"])) for r in rows)
    return {"passed": bool(worst <= 3.0), "worst_z": worst, "rows": rows}


def check_sandwich(cfg) -> dict:
    R = _interval()
    phi = WeightFunction.unit(R)
    tau = BaseMeasure.lebesgue(R)
    nb = MomentNeighborhood.around(arcsine(1024), 4, 0.05)
    rows = []
    for d in cfg.sizes.get("sandwich", [16, 24]):
        est = log_J(R, phi, tau, nb, d, cfg.seed, _chain_opts(cfg))
        b = sandwich_bounds(R, phi, tau, nb, d, cfg.seed, _fekete_opts(cfg))
        val = est.value / d ** 2
        rows.append({"d": d, "estimate": val, "std_error": est.std_error / d ** 2,
                     **b.to_json_dict(),
                     "inside": bool(b.lower <= val <= b.upper),
                     "midpoint_gap": abs(b.midpoint + LOG2)})
    passed = all(r["inside"] and r["midpoint_gap"] <= 0.2 for r in rows)
    return {"passed": bool(passed), "target": -LOG2, "rows": rows}


def check_trend(cfg) -> dict:
    R = _interval()
    phi = WeightFunction.unit(R)
    nb = MomentNeighborhood.around(arcsine(1024), 4, 0.05)
    gaps = {}
    for d in (16, 24, 32):
        res = constrained_sup_W(R, phi, nb, d, cfg.seed, _fekete_opts(cfg))
        gaps[d] = res.log_W + LOG2
    passed = abs(gaps[24]) <= 0.15 and abs(gaps[32]) <= abs(gaps[16])
    return {"passed": bool(passed), "target": -LOG2, "gaps": {str(k): v for k, v in gaps.items()}}


def check_rate(cfg) -> dict:
    R = _interval()
    phi = WeightFunction.unit(R)
    tau = BaseMeasure.lebesgue(R)
    eq = cached_equilibrium(R, phi, cfg.grid)
    at_eq = rate_functional(eq.measure, phi, R, cfg.grid).value
    ref = tilted_arcsine(1024, 0.8)
    rate = rate_functional(ref, phi, R, cfg.grid).value
    nb = MomentNeighborhood.around(ref, 1, 0.002)
    rel = {}
    for d in (12, 16, 24):
        est = log_prob(R, phi, tau, nb, d, cfg.seed, _chain_opts(cfg))
        rel[d] = abs(est.diagnostics["rate_check"] - rate) / rate
    passed = abs(at_eq) <= 1e-8 and rel[16] <= 0.25 and rel[24] <= rel[12]
    return {"passed": bool(passed), "rate_at_equilibrium": at_eq, "rate": rate,
            "relative_discrepancy": {str(k): v for k, v in rel.items()}}


def check_bm(cfg) -> dict:
    R = _interval()
    tau = BaseMeasure.lebesgue(R)
    ks = cfg.bm.get("k_list", list(range(20, 61)))
    trials = cfg.bm.get("trials", 200)
    out = {}
    for name, w in (("unit", WeightFunction.unit(R)), ("gaussian", _gaussian(R))):
        rows = bm_ratio(R, w, tau, ks, trials, cfg.seed)
        out[name] = [r.to_json_dict() for r in rows]
    left = BaseMeasure.density_grid(R, [1.0, 0.0], validate=False)
    right_heavy = WeightFunction.exp_poly(R, {(1, 0): -1.0})
    neg = bm_ratio(R, right_heavy, left, ks, trials, cfg.seed)
    out["negative_control"] = [r.to_json_dict() for r in neg]
    good = all(r["root"] <= 1.1 for key in ("unit", "gaussian") for r in out[key])
    bad = any(r["root"] >= 1.2 for r in out["negative_control"])
    out["passed"] = bool(good and bad)
    return out


def fd_gradient(points, w: WeightFunction) -> np.ndarray:
    """Central-difference gradient of log_wvdm, shape (d, 2).

    The step is scaled to the closest pair and one Richardson step removes
    the h² term, so nearby points do not swamp the comparison.
    """
    pts = np.asarray(points, dtype=complex)
    d = pts.size
    gaps = np.abs(pts[:, None] - pts[None, :])
    np.fill_diagonal(gaps, np.inf)
    h = min(1e-4, 1e-3 * float(gaps.min()))
    out = np.zeros((d, 2))
    for i in range(d):
        for axis, unit in ((0, 1.0), (1, 1j)):
            if axis and w.domain.is_interval:
                continue

            def diff(step):
                e = np.zeros(d, complex)
                e[i] = unit * step
                return (log_wvdm(pts + e, w) - log_wvdm(pts - e, w)) / (2 * step)

            out[i, axis] = (4 * diff(h / 2) - diff(h)) / 3
    return out


def random_gradient_cases(seed: int, n: int = 100):
    """(points, weight) pairs on an interval and a rectangle, d in [2, 10]."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 4]))
    rects = [Rectangle(-1, 1), Rectangle(-1, 1, -0.5, 0.5)]
    for t in range(n):
        R = rects[t % 2]
        d = int(rng.integers(2, 11))
        w = WeightFunction.exp_poly(R, {(2, 0): 0.5, (0, 2): 0.3}) if t % 3 else WeightFunction.unit(R)
        # keep a margin so difference steps stay inside the weight's domain
        x = R.x_min + 1e-3 + (R.width - 2e-3) * rng.uniform(size=d)
        y = R.y_min if R.is_interval else R.y_min + 1e-3 + (R.height - 2e-3) * rng.uniform(size=d)
        yield x + 1j * y, w


def check_gradient(cfg) -> dict:
    worst = 0.0
    for pts, w in random_gradient_cases(cfg.seed):
        g = grad_log_wvdm(pts, w)
        fd = fd_gradient(pts, w)
        if w.domain.is_interval:
            g, fd = g[:, :1], fd[:, :1]
        worst = max(worst, float(np.abs(g - fd).max()))
    return {"passed": bool(worst <= 1e-5), "max_abs_error": worst}


SUITES: Dict[str, Callable] = {
    "interval-classical": lambda cfg: {"transfinite": check_transfinite(cfg),
                                       "equilibrium": check_equilibrium(cfg)},
    "triangle": lambda cfg: {"triangle": check_triangle(cfg)},
    "floor": lambda cfg: {"floor": check_floor(cfg)},
    "small-d": lambda cfg: {"small_d": check_small_d(cfg)},
    "sandwich": lambda cfg: {"sandwich": check_sandwich(cfg)},
    "trend": lambda cfg: {"trend": check_trend(cfg)},
    "rate": lambda cfg: {"rate": check_rate(cfg)},
    "bernstein-markov": lambda cfg: {"bernstein_markov": check_bm(cfg)},
    "gradient": lambda cfg: {"gradient": check_gradient(cfg)},
}
