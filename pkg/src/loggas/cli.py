"""
Command-line front end.

Every subcommand reads a run configuration (JSON file via --config, then
command-line overrides), calls one library function and writes JSON or CSV
stamped with the library version and a hash of the resolved configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__, checks
from .equilibrium import free_entropy, rate_functional, solve_equilibrium
from .errors import LoggasError
from .fekete import FeketeOptions, solve_fekete, transfinite_diameter
from .measures import GridMeasure, MomentNeighborhood, Rectangle, arcsine, tilted_arcsine
from .montecarlo import BaseMeasure, McOptions, bm_ratio, log_J, log_prob, log_Z
from .vdm import WeightFunction


@dataclass
class RunConfig:
    """Everything a run depends on.  Output paths are not part of the hash."""

    rectangle: List[float] = field(default_factory=lambda: [-1.0, 1.0])
    weight: Optional[dict] = None
    base_measure: Optional[dict] = None
    d: Optional[int] = None
    d_list: Optional[List[int]] = None
    grid: int = 512
    neighborhood: Optional[dict] = None
    chain: dict = field(default_factory=dict)
    fekete: dict = field(default_factory=dict)
    equilibrium: dict = field(default_factory=dict)
    bm: dict = field(default_factory=dict)
    sizes: dict = field(default_factory=dict)
    suites: List[str] = field(default_factory=lambda: ["interval-classical"])
    seed: int = 0
    threads: int = 1

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known - {"outputs"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**{k: v for k, v in data.items() if k in known})

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # builders
    def rect(self) -> Rectangle:
        return Rectangle(*self.rectangle)

    def weight_function(self) -> WeightFunction:
        if self.weight is None:
            return WeightFunction.unit(self.rect())
        return WeightFunction.from_json_dict(self.weight, None if "domain" in self.weight else self.rect())

    def tau(self) -> BaseMeasure:
        if self.base_measure is None:
            return BaseMeasure.lebesgue(self.rect())
        return BaseMeasure.from_json_dict(self.base_measure, self.rect())

    def fekete_options(self) -> FeketeOptions:
        return FeketeOptions(**{**self.fekete, "threads": self.threads})

    def chain_options(self) -> McOptions:
        return McOptions(**{**self.chain, "threads": self.threads})

    def nbhd(self) -> MomentNeighborhood:
        nb_cfg = self.neighborhood
        if nb_cfg is None:
            raise ValueError("this command needs a 'neighborhood' in the config")
        if "moments" in nb_cfg:
            return MomentNeighborhood.from_json_dict(nb_cfg)
        ref = nb_cfg.get("reference", "arcsine")
        R = self.rect()
        if ref == "arcsine":
            m = arcsine(1024, R.x_min, R.x_max)
        elif ref.startswith("tilted:"):
            m = tilted_arcsine(1024, float(ref.split(":", 1)[1]), R.x_min, R.x_max)
        elif ref == "equilibrium":
            m = solve_equilibrium(R, self.weight_function(), self.grid, **self.equilibrium).measure
        else:
            m = GridMeasure.from_csv(Path(ref).read_text())
        return MomentNeighborhood.around(m, int(nb_cfg["k"]), float(nb_cfg["epsilon"]))


def _stamp(cfg: RunConfig) -> dict:
    return {"version": __version__, "config_hash": cfg.hash()}


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _emit_json(payload: dict, out: Optional[str]):
    text = json.dumps(payload, sort_keys=True, indent=2, default=_json_default) + "\n"
    _emit_text(text, out)


def _emit_text(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv_with_stamp(csv_text: str, cfg: RunConfig) -> str:
    s = _stamp(cfg)
    return f"# loggas {s['version']} config_hash={s['config_hash']}\n" + csv_text


# -- subcommands ----------------------------------------------------------------------

def cmd_fekete(cfg: RunConfig, args) -> int:
    R, w = cfg.rect(), cfg.weight_function()
    if cfg.d_list:
        tab = transfinite_diameter(R, w, cfg.d_list, cfg.seed, cfg.fekete_options())
        _emit_json({**_stamp(cfg), **tab.to_json_dict()}, args.out)
        return 0 if tab.all_converged else 1
    if cfg.d is None:
        raise ValueError("give --d or --d-list")
    res = solve_fekete(R, w, cfg.d, cfg.fekete_options(), cfg.seed)
    _emit_json({**_stamp(cfg), **res.to_json_dict()}, args.out)
    return 0 if res.converged else 1


def cmd_eqmeasure(cfg: RunConfig, args) -> int:
    res = solve_equilibrium(cfg.rect(), cfg.weight_function(), cfg.grid, **cfg.equilibrium)
    _emit_text(_csv_with_stamp(res.measure.to_csv(), cfg), args.out)
    summary = {**_stamp(cfg), "converged": res.converged, "iterations": res.iterations,
               "grad_norm": res.grad_norm, **res.energy.to_json_dict()}
    if args.summary:
        _emit_json(summary, args.summary)
    return 0 if res.converged else 1


def _read_measure(path: str, literal: bool = False) -> GridMeasure:
    m = GridMeasure.from_csv(Path(path).read_text(), label=Path(path).stem)
    if literal and m.cells is not None:
        m = GridMeasure(m.nodes, m.masses, m.label)
    return m


def cmd_entropy(cfg: RunConfig, args) -> int:
    m = _read_measure(args.measure, args.literal)
    sigma = free_entropy(m)
    _emit_json({**_stamp(cfg), "measure": args.measure, "sigma": sigma,
                "mode": "discretization" if m.is_discretization else "literal"}, args.out)
    return 0


def cmd_rate(cfg: RunConfig, args) -> int:
    m = _read_measure(args.measure)
    r = rate_functional(m, cfg.weight_function(), cfg.rect(), cfg.grid)
    _emit_json({**_stamp(cfg), "measure": args.measure, "rate": r.value,
                "equilibrium_converged": r.equilibrium_converged}, args.out)
    return 0 if r.equilibrium_converged else 1


def cmd_sample(cfg: RunConfig, args) -> int:
    if cfg.d is None:
        raise ValueError("give --d")
    R, phi, tau, opts = cfg.rect(), cfg.weight_function(), cfg.tau(), cfg.chain_options()
    if args.mode == "Z":
        est = log_Z(R, phi, tau, cfg.d, cfg.seed, opts)
    elif args.mode == "J":
        est = log_J(R, phi, tau, cfg.nbhd(), cfg.d, cfg.seed, opts)
    else:
        est = log_prob(R, phi, tau, cfg.nbhd(), cfg.d, cfg.seed, opts)
    _emit_json({**_stamp(cfg), "mode": args.mode, "d": cfg.d, **est.to_json_dict()}, args.out)
    return 1 if est.flagged else 0


def cmd_bm(cfg: RunConfig, args) -> int:
    ks = cfg.bm.get("k_list", list(range(20, 61, 10)))
    rows = bm_ratio(cfg.rect(), cfg.weight_function(), cfg.tau(), ks,
                    cfg.bm.get("trials", 200), cfg.seed, cfg.bm.get("grid", 2048))
    _emit_json({**_stamp(cfg), "rows": [r.to_json_dict() for r in rows]}, args.out)
    return 0


def cmd_verify(cfg: RunConfig, args) -> int:
    report = {**_stamp(cfg), "seed": cfg.seed, "threads": cfg.threads, "suites": {}}
    passed = True
    for name in cfg.suites:
        if name not in checks.SUITES:
            raise ValueError(f"unknown suite {name!r}; choose from {sorted(checks.SUITES)}")
        try:
            results = checks.SUITES[name](cfg)
        except LoggasError as exc:
            results = {"error": {"passed": False, "message": f"{type(exc).__name__}: {exc}"}}
        report["suites"][name] = results
        passed = passed and all(r["passed"] for r in results.values())
    report["passed"] = passed
    _emit_json(report, args.out)
    return 0 if passed else 1


COMMANDS = {"fekete": cmd_fekete, "eqmeasure": cmd_eqmeasure, "entropy": cmd_entropy,
            "rate": cmd_rate, "sample": cmd_sample, "bm": cmd_bm, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output path (default: stdout)")
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--threads", type=int, help="worker threads")
    common.add_argument("--rect", help="x_min,x_max[,y_min,y_max]")
    common.add_argument("--weight", help="weight function JSON file")

    parser = argparse.ArgumentParser(prog="loggas", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--version", action="version", version=f"loggas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fekete", parents=[common], help="Fekete points / transfinite diameter")
    p.add_argument("--d", type=int)
    p.add_argument("--d-list", help="comma-separated sizes, e.g. 8,16,24")
    p.add_argument("--restarts", type=int)

    p = sub.add_parser("eqmeasure", parents=[common], help="weighted equilibrium measure (CSV)")
    p.add_argument("--grid", type=int)
    p.add_argument("--summary", help="also write energy report JSON here")

    p = sub.add_parser("entropy", parents=[common], help="free entropy of a measure CSV")
    p.add_argument("--measure", required=True)
    p.add_argument("--literal", action="store_true", help="treat the nodes as genuine atoms")

    p = sub.add_parser("rate", parents=[common], help="rate functional of a measure CSV")
    p.add_argument("--measure", required=True)
    p.add_argument("--grid", type=int)

    p = sub.add_parser("sample", parents=[common], help="Monte Carlo estimate of log Z / log J / log Prob")
    p.add_argument("--mode", choices=["Z", "J", "prob"], required=True)
    p.add_argument("--d", type=int)

    sub.add_parser("bm", parents=[common], help="Bernstein-Markov ratio table")

    p = sub.add_parser("verify", parents=[common], help="run check suites, write a JSON report")
    p.add_argument("--suite", action="append", help="suite name (repeatable)")
    return parser


def resolve_config(args) -> RunConfig:
    data = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg = RunConfig.from_dict(data)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    if args.rect:
        cfg.rectangle = list(Rectangle.parse(args.rect).to_dict().values())
    if args.weight:
        cfg.weight = json.loads(Path(args.weight).read_text())
    for name in ("d", "grid"):
        if getattr(args, name, None) is not None:
            setattr(cfg, name, getattr(args, name))
    if getattr(args, "d_list", None):
        cfg.d_list = [int(x) for x in args.d_list.split(",")]
    if getattr(args, "restarts", None) is not None:
        cfg.fekete = {**cfg.fekete, "restarts": args.restarts}
    if getattr(args, "suite", None):
        cfg.suites = args.suite
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (LoggasError, ValueError, OSError) as exc:
        print(f"loggas {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
