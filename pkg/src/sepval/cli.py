"""Experiment runner: ``sepval <experiment> [--config FILE] [--flags]``.

Parameters come from built-in defaults, then an optional ``key = value``
config file, then command-line flags (flags win). Every CSV gets a
``<name>.meta.json`` sidecar with the resolved parameters.

Exit codes: 0 success, 2 configuration error, 3 solver failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import allen_cahn as ac
from . import blockgraph as bg
from . import lqr_models as lm
from . import riccati
from . import valuefn as vf
from .linalg import format_matrix

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


def _int_list(text: str) -> list[int]:
    return [int(t) for t in str(text).replace(" ", "").split(",") if t]


def _float_list(text: str) -> list[float]:
    return [float(t) for t in str(text).replace(" ", "").split(",") if t]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Param:
    name: str
    parse: Callable[[str], Any]
    default: Any
    help: str
    choices: tuple | None = None


COMMON = [
    Param("out", str, "out", "output directory"),
    Param("seed", int, 7, "seed for every random draw"),
    Param("plot", _bool, False, "also write a gnuplot script"),
]

_MODEL = Param("model", str, "heat", "value function source", ("heat", "random"))
_BAND = Param("band", int, 1, "bandwidth of A for --model random")
_HEAT_C = Param("c", float, 1.0, "heat diffusion coefficient")
_HEAT_DX = Param("dx", float, 1.0, "heat grid spacing")

EXPERIMENTS: dict[str, tuple[str, list[Param]]] = {
    "graph-demo": ("distances and neighborhoods of a named topology", [
        Param("topology", str, "path", "graph family", ("path", "cycle", "grid", "star", "file")),
        Param("s", int, 5, "node count (rows*cols for grid)"),
        Param("cols", int, 1, "grid columns"),
        Param("edges", str, "", "edge-list file for --topology file (1-based 'i j' lines)"),
        Param("radii", _int_list, [1, 2], "neighborhood radii, comma separated"),
    ]),
    "heat": ("CARE solution and column decay of the semi-discrete heat LQR", [
        Param("s", int, 10, "grid points"), _HEAT_C, _HEAT_DX,
        Param("method", str, "sign", "CARE method", riccati.CARE_METHODS),
    ]),
    "random-lqr": ("column decay and exponential fits for banded random LQR", [
        Param("s", int, 100, "state dimension"),
        Param("bands", _int_list, [1, 2, 4, 8], "bandwidths r, comma separated"),
    ]),
    "a1-check": ("localization residuals and the telescoping error bound", [
        _MODEL, Param("s", int, 5, "subsystems"), _BAND, _HEAT_C, _HEAT_DX,
        Param("l", _int_list, [1, 2], "radii, comma separated"),
        Param("a", float, 1.0, "half-width of the sample box"),
        Param("samples", int, 200, "lattice points (2s axis points are added)"),
    ]),
    "sensitivity": ("finite-difference sensitivity profile by graph distance", [
        _MODEL, Param("s", int, 10, "subsystems"), _BAND, _HEAT_C, _HEAT_DX,
        Param("a", float, 1.0, "half-width of the sample box"),
        Param("samples", int, 20, "lattice points"),
        Param("h", float, 0.0, "finite-difference step (0: 1e-4 max(1, |x|_inf))"),
    ]),
    "allen-cahn-decay": ("first column of P(y0) for several viscosities", [
        Param("s", int, 100, "grid points"),
        Param("sigmas", _float_list, [1e-1, 1e-2, 1e-3, 1e-4], "viscosities, comma separated"),
        Param("method", str, "doubling", "CARE method", riccati.CARE_METHODS),
    ]),
    "allen-cahn-cost": ("total-cost error of banded SDRE feedback", [
        Param("s", int, 100, "grid points"),
        Param("sigmas", _float_list, [1e-4, 1e-3], "viscosities, comma separated"),
        Param("bands", _int_list, [2, 5, 10, 20], "feedback bandwidths, comma separated"),
        Param("dt", float, 1e-2, "time step"),
        Param("T", float, 10.0, "horizon"),
        Param("refresh", str, "threshold", "SDRE refresh policy", ("threshold", "every")),
        Param("threshold", float, 0.05, "relative state change triggering a refresh"),
        Param("refresh_every", int, 25, "maximum steps between refreshes"),
        Param("weight", str, "unit", "cost units: 'unit' drops the gamma factor", ("unit", "gamma")),
        Param("trajectories", _bool, False, "write the full-P trajectories"),
    ]),
    "export-dataset": ("training pairs (x_B, psi_j) for one separable term", [
        _MODEL, Param("s", int, 5, "subsystems"), _BAND, _HEAT_C, _HEAT_DX,
        Param("j", int, 1, "term index (1-based)"),
        Param("l", int, 1, "radius"),
        Param("sampler", str, "uniform", "sample layout", ("uniform", "grid")),
        Param("count", int, 100, "uniform rows, or grid points per axis"),
        Param("a", float, 1.0, "half-width of the sample box"),
    ]),
}


def _params(experiment: str) -> list[Param]:
    return COMMON + EXPERIMENTS[experiment][1]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sepval", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name, (desc, params) in EXPERIMENTS.items():
        p = sub.add_parser(name, help=desc, description=desc)
        p.add_argument("--config", help="key = value file; flags override it", default=None)
        for prm in COMMON + params:
            default = prm.default
            if isinstance(default, list):
                default = ",".join(str(v) for v in default)
            p.add_argument(f"--{prm.name.replace('_', '-')}", dest=prm.name, default=None,
                           help=f"{prm.help} (default: {default})", metavar=prm.name.upper())
    return parser


def read_config(path) -> dict[str, tuple[str, int]]:
    """Parse ``key = value`` lines; returns key -> (raw value, line number)."""
    text = Path(path).read_text()
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text, source=str(path))
    except configparser.ParsingError as exc:
        # the injected section header shifts line numbers by one
        lineno, line = exc.errors[0]
        raise ConfigError(f"{path}:{lineno - 1}: expected 'key = value', got {line}") from exc
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{path}:{exc.lineno - 1}: duplicate key {exc.option!r}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc.message}") from exc
    lines = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        key = raw.split("=", 1)[0].split(":", 1)[0].strip()
        if key and not key.startswith(("#", ";")):
            lines.setdefault(key, no)
    return {k: (v, lines.get(k, 0)) for k, v in cp["run"].items()}


def resolve(experiment: str, flags: dict[str, str | None], config: dict | None = None,
            config_name: str = "config") -> dict[str, Any]:
    """Defaults <- config file <- flags, with validation."""
    params = {p.name: p for p in _params(experiment)}
    values: dict[str, Any] = {name: p.default for name, p in params.items()}
    for key, (raw, line) in (config or {}).items():
        name = key.replace("-", "_")
        if name not in params:
            raise ConfigError(f"{config_name}:{line}: unknown key {key!r} for {experiment}")
        try:
            values[name] = params[name].parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{config_name}:{line}: bad value for {key!r}: {exc}") from exc
    for name, raw in flags.items():
        if raw is None or name not in params:
            continue
        try:
            values[name] = params[name].parse(raw)
        except ValueError as exc:
            raise ConfigError(f"--{name}: bad value {raw!r}: {exc}") from exc
    for name, p in params.items():
        if p.choices and values[name] not in p.choices:
            raise ConfigError(f"{name}: {values[name]!r} not in {p.choices}")
    return values


class Writer:
    """Writes CSVs with LF endings plus a metadata sidecar per file."""

    def __init__(self, out: Path, experiment: str, params: dict):
        self.out = out
        self.experiment = experiment
        self.params = params
        self.written: list[Path] = []
        out.mkdir(parents=True, exist_ok=True)

    def csv(self, name: str, text: str, **extra) -> Path:
        path = self.out / name
        path.write_bytes(text.encode())
        meta = {"experiment": self.experiment, "file": name, "version": __version__,
                "params": self.params, **extra}
        side = self.out / f"{name}.meta.json"
        side.write_bytes((json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n").encode())
        self.written += [path, side]
        return path

    def text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_bytes(text.encode())
        self.written.append(path)
        return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _g(v: float) -> str:
    return f"{v:.17g}"


def _gnuplot(files: list[str], title: str, logy: bool = True) -> str:
    lines = ["set datafile separator ','", f"set title '{title}'", "set key outside"]
    if logy:
        lines.append("set logscale y")
    plots = [f"'{f}' using 1:2 skip 1 with linespoints title '{f}'" for f in files]
    lines.append("plot " + ", \\\n     ".join(plots))
    return "\n".join(lines) + "\n"


def _lqr_model(p: dict) -> lm.LQRProblem:
    if p["model"] == "heat":
        return lm.heat_model(p["s"], p["c"], p["dx"])
    return lm.random_lqr(p["s"], p["seed"], p["band"])


def run_graph_demo(p: dict, w: Writer) -> None:
    topo, s = p["topology"], p["s"]
    if topo == "path":
        g = bg.path_graph(s)
    elif topo == "cycle":
        g = bg.cycle_graph(s)
    elif topo == "star":
        g = bg.star_graph(s)
    elif topo == "grid":
        cols = p["cols"]
        if s % cols:
            raise ConfigError(f"grid: s={s} is not a multiple of cols={cols}")
        g = bg.grid_graph(s // cols, cols)
    else:
        if not p["edges"]:
            raise ConfigError("topology 'file' needs --edges")
        g = bg.read_edge_list(p["edges"])
    rows = ["i,j,dist"]
    for i in range(g.s):
        for j in range(g.s):
            d = g.dist[i, j]
            rows.append(f"{i + 1},{j + 1},{'inf' if d == bg.UNREACHABLE else int(d)}")
    w.csv("dist.csv", "\n".join(rows) + "\n", diameter=g.diameter)
    rows = ["j,l,members,sub_dim"]
    for l in p["radii"]:
        for j in range(g.s):
            nb = bg.neighborhood(g, j, l)
            rows.append(f"{j + 1},{l},{' '.join(str(m + 1) for m in nb.members)},{nb.sub_dim}")
    w.csv("neighborhoods.csv", "\n".join(rows) + "\n")


def run_heat(p: dict, w: Writer) -> None:
    prob = lm.heat_model(p["s"], p["c"], p["dx"])
    P, rep = riccati.solve_care(prob.problem, method=p["method"])
    w.text("P.txt", format_matrix(P))
    series = lm.column_decay(P, 0)
    w.csv("decay.csv", series.to_csv(), residual=rep.residual, method=rep.method)
    w.csv("fit.csv", lm.fits_to_csv([(1, lm.exp_fit(series))], key="col"))
    if p["plot"]:
        w.text("plot.gp", _gnuplot(["decay.csv"], "|P[i,1]|, heat equation"))


def run_random_lqr(p: dict, w: Writer) -> None:
    results = lm.random_lqr_decay(p["s"], p["bands"], p["seed"])
    names = []
    for res in results:
        name = f"decay_r{res.r}.csv"
        w.csv(name, res.series.to_csv(), r=res.r, residual=res.report.residual,
              closed_loop_radius=res.report.closed_loop)
        names.append(name)
    w.csv("fit.csv", lm.fits_to_csv([(res.r, res.fit) for res in results]))
    if p["plot"]:
        w.text("plot.gp", _gnuplot(names, "|P_r[i,1]|, banded random LQR"))


def _value_and_graph(p: dict):
    prob = _lqr_model(p)
    V = prob.value()
    return V.oracle(prob.time_mode), prob.graph, prob.blocks


def run_a1_check(p: dict, w: Writer) -> None:
    V, g, blocks = _value_and_graph(p)
    samples = vf.default_samples(blocks, p["a"], p["samples"])
    per_block = ["l,j,residual"]
    summary = ["l,gamma_hat,error,bound,satisfied"]
    for l in p["l"]:
        approx = vf.assemble(V, g, blocks, l)
        res = vf.a1_residual(V, g, blocks, l, samples, approx=approx)
        rep = vf.theorem_bound_report(V, approx, res.max, samples)
        per_block += [f"{l},{j + 1},{_g(v)}" for j, v in enumerate(res.per_block)]
        summary.append(f"{l},{_g(res.max)},{_g(rep.error)},{_g(rep.bound)},{str(rep.satisfied).lower()}")
    w.csv("a1.csv", "\n".join(per_block) + "\n")
    w.csv("bound.csv", "\n".join(summary) + "\n", diameter=g.diameter)


def run_sensitivity(p: dict, w: Writer) -> None:
    V, g, blocks = _value_and_graph(p)
    samples = vf.lattice_points(p["samples"], blocks.n, p["a"])
    prof = vf.sensitivity_profile(V, g, blocks, samples, p["h"] or None)
    rows = ["i,j,dist,max_abs_delta"] + [f"{i + 1},{j + 1},{d},{_g(v)}" for i, j, d, v in prof.records]
    w.csv("sensitivity.csv", "\n".join(rows) + "\n")
    rows = ["dist,max_abs_delta"] + [f"{d},{_g(v)}" for d, v in prof.by_distance().items()]
    w.csv("by_distance.csv", "\n".join(rows) + "\n")
    if p["plot"]:
        w.text("plot.gp", _gnuplot(["by_distance.csv"], "max |delta_ij| by distance"))


def run_allen_cahn_decay(p: dict, w: Writer) -> None:
    results = ac.frozen_decay_study(p["s"], p["sigmas"], method=p["method"])
    names = []
    for res in results:
        name = f"decay_sigma_{ac.sigma_label(res.sigma)}.csv"
        w.csv(name, res.series.to_csv(), sigma=res.sigma)
        names.append(name)
    lines = ["sigma,A_fit,B_fit,residual"]
    lines += [f"{_g(r.sigma)},{_g(r.fit.A_fit)},{_g(r.fit.B_fit)},{_g(r.fit.residual)}" for r in results]
    w.csv("fit.csv", "\n".join(lines) + "\n")
    if p["plot"]:
        w.text("plot.gp", _gnuplot(names, "|P(y0)[i,1]|, Allen-Cahn"))


def run_allen_cahn_cost(p: dict, w: Writer) -> None:
    cfg = ac.SDREConfig(dt=p["dt"], T=p["T"], refresh=p["refresh"], threshold=p["threshold"],
                        refresh_every=p["refresh_every"])
    fulls: dict = {}
    table = ac.cost_error_table(p["s"], p["sigmas"], p["bands"], cfg, weight=p["weight"], full_runs=fulls)
    extra = {"sdre": cfg.metadata(), "weight": p["weight"],
             "full_costs": dict(zip((ac.sigma_label(s) for s in table.sigmas), table.full_costs)),
             "statuses": table.statuses}
    w.csv("cost_error.csv", table.to_csv(), **extra)
    if p["trajectories"]:
        for sigma, run in fulls.items():
            w.csv(f"trajectory_sigma_{ac.sigma_label(sigma)}.csv", run.to_csv(), sigma=sigma,
                  sdre=cfg.metadata(), solve_count=run.solve_count, final_norm=run.final_norm)


def run_export_dataset(p: dict, w: Writer) -> None:
    V, g, blocks = _value_and_graph(p)
    j = p["j"] - 1
    if not 0 <= j < g.s:
        raise ConfigError(f"j={p['j']} out of range 1..{g.s}")
    nb = bg.neighborhood(g, j, p["l"], blocks)
    ds = vf.export_term_dataset(V, blocks, nb, p["sampler"], p["count"], p["a"], p["seed"])
    name = f"term_j{p['j']}_l{p['l']}.csv"
    w.csv(name, ds.to_csv(), dataset=ds.metadata)


RUNNERS = {
    "graph-demo": run_graph_demo,
    "heat": run_heat,
    "random-lqr": run_random_lqr,
    "a1-check": run_a1_check,
    "sensitivity": run_sensitivity,
    "allen-cahn-decay": run_allen_cahn_decay,
    "allen-cahn-cost": run_allen_cahn_cost,
    "export-dataset": run_export_dataset,
}


def run(experiment: str, params: dict) -> list[Path]:
    w = Writer(Path(params["out"]), experiment, params)
    RUNNERS[experiment](params, w)
    return w.written


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k not in ("experiment", "config")}
    try:
        config = read_config(args.config) if args.config else None
        params = resolve(args.experiment, flags, config, args.config or "config")
        written = run(args.experiment, params)
    except ConfigError as exc:
        print(f"sepval: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (riccati.RiccatiError, ac.SDREError) as exc:
        print(f"sepval: solver failure in {args.experiment}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"sepval: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"sepval: invalid parameters: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
