"""Command-line front end: reproducible runs from an INI config file.

Subcommands: solve, sweep, fit, certify, check-transform. Every command
takes --config, --out, --workers, --seed. Configs use INI sections
[geometry], [solver], [sweep], [barrier], [output]; unknown sections or
keys are rejected, and the parsed config has a canonical serialization
whose sha256 is embedded in output manifests. Exit codes: 0 success,
1 usage/config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .barriers import BarrierSpec, BarrierSpecError, bernstein_eval, certify_sign
from .experiments import (DEFAULT_WINDOW_DELTA, RateRow, RateTable, fit_rate,
                          sweep_epsilon, theorem_targets)
from .geometry import (GapGeometry, geometry_from_descriptor,
                       make_disk_geometry, make_flat_geometry,
                       make_quadratic_geometry, RadialPolynomialProfile,
                       validate_hypotheses)
from .solver import LineSearchError, SolverConfig, gradient_field, solve
from .svgplot import loglog_svg
from .transforms import PhiChart, verify_phi_bounds

WORKERS_ENV = "GAPLAB_WORKERS"


class ConfigError(ValueError):
    pass


def _json_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


_SCHEMA = {
    "geometry": {"kind", "epsilon", "dim", "upper_matrix", "lower_matrix",
                 "coeffs_upper", "coeffs_lower", "reference_radius"},
    "solver": {"p", "eta", "grid_ns", "grid_nt", "outer_radius", "dirichlet",
               "newton_tol", "max_newton", "continuation", "grading_ratio"},
    "sweep": {"epsilons", "window_delta", "drop_largest", "workers",
              "transform_radii", "transform_samples", "osc_radii"},
    "barrier": {"variant", "delta", "gamma", "beta", "a_const", "kappa1",
                "kappa2", "samples", "region_inner", "region_outer"},
    "output": {"svg", "seed"},
}


class RunConfig:
    """Validated, hashable view of one INI run configuration."""

    def __init__(self, data: dict):
        for section, keys in data.items():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key in keys:
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown key '{section}.{key}'")
        self.data = data

    @staticmethod
    def from_path(path) -> "RunConfig":
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"cannot read config file {path}")
        data = {s: {k: _json_value(v) for k, v in parser[s].items()}
                for s in parser.sections()}
        return RunConfig(data)

    def get(self, section, key, default=None):
        return self.data.get(section, {}).get(key, default)

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    # -- typed builders ----------------------------------------------------

    def geometry(self, epsilon=None) -> GapGeometry:
        g = self.data.get("geometry", {})
        kind = g.get("kind")
        eps = float(epsilon if epsilon is not None else g.get("epsilon", 0.01))
        dim = int(g.get("dim", 2))
        ref = float(g.get("reference_radius", 0.9))
        if kind == "disks":
            return make_disk_geometry(eps, dim=dim, reference_radius=ref)
        if kind == "flat":
            return make_flat_geometry(eps, dim=dim)
        if kind == "quadratic":
            if "upper_matrix" not in g or "lower_matrix" not in g:
                raise ConfigError("quadratic geometry needs "
                                  "'geometry.upper_matrix'/'geometry.lower_matrix'")
            return make_quadratic_geometry(eps, g["upper_matrix"],
                                           g["lower_matrix"], reference_radius=ref)
        if kind == "polynomial":
            if "coeffs_upper" not in g or "coeffs_lower" not in g:
                raise ConfigError("polynomial geometry needs "
                                  "'geometry.coeffs_upper'/'geometry.coeffs_lower'")
            up = RadialPolynomialProfile(dim - 1, g["coeffs_upper"])
            lo = RadialPolynomialProfile(dim - 1, g["coeffs_lower"])
            probe = np.full(dim - 1, 0.5)
            c1 = float((up.value(probe) - lo.value(probe)) / 0.25 / (dim - 1))
            if c1 <= 0:
                raise ConfigError("polynomial profiles do not separate")
            hyp_c2 = 1.0
            geom = GapGeometry(dim=dim, epsilon=eps, h_upper=up, h_lower=lo,
                               c1=min(c1, 1.0), c2=hyp_c2, reference_radius=ref)
            rep = validate_hypotheses(geom, samples=500, radius=ref)
            return GapGeometry(dim=dim, epsilon=eps, h_upper=up, h_lower=lo,
                               c1=max(rep.c1_est, 1e-12), c2=rep.c2_est * 1.001,
                               kappa1=rep.kappa1_est if rep.kappa1_est > 0 else None,
                               kappa2=rep.kappa2_est if rep.kappa1_est > 0 else None,
                               reference_radius=ref)
        raise ConfigError(f"unknown geometry kind {kind!r}")

    def geometry_family(self):
        """Descriptor-based family for sweeps (epsilon gets substituted)."""
        return self.geometry().descriptor()

    def solver_config(self) -> SolverConfig:
        s = self.data.get("solver", {})
        kwargs = {}
        for key, cast in (("p", float), ("grid_ns", int), ("grid_nt", int),
                          ("outer_radius", float), ("newton_tol", float),
                          ("max_newton", int), ("grading_ratio", float)):
            if key in s:
                kwargs[key] = cast(s[key])
        if "eta" in s:
            kwargs["eta"] = None if s["eta"] in (None, "adaptive") else float(s["eta"])
        if "dirichlet" in s:
            kwargs["dirichlet"] = str(s["dirichlet"])
        if "continuation" in s:
            kwargs["continuation"] = [tuple(map(float, pair))
                                      for pair in s["continuation"]]
        try:
            return SolverConfig(**kwargs)
        except ValueError as exc:
            raise ConfigError(f"solver config invalid: {exc}") from exc

    def barrier_spec(self) -> BarrierSpec:
        b = self.data.get("barrier", {})
        if "variant" not in b:
            raise ConfigError("missing 'barrier.variant'")
        geom = self.geometry()
        p = float(self.get("solver", "p", 2.0))
        return BarrierSpec(
            variant=str(b["variant"]),
            n=geom.dim,
            p=p,
            delta=float(b.get("delta", 0.0)),
            gamma=float(b.get("gamma", 0.0)),
            beta=float(b.get("beta", 0.0)),
            A=float(b.get("a_const", 1.0)),
            kappa1=(float(b["kappa1"]) if "kappa1" in b else geom.kappa1),
            kappa2=(float(b["kappa2"]) if "kappa2" in b else geom.kappa2),
            epsilon=geom.epsilon,
        )

    def seed(self, override=None) -> int:
        if override is not None:
            return int(override)
        return int(self.get("output", "seed", 0))


# ---------------------------------------------------------------------------
# manifest and table serialization helpers
# ---------------------------------------------------------------------------

def _manifest(cfg: RunConfig, extra: dict) -> dict:
    return {
        "config_hash": cfg.hash(),
        "config": cfg.data,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "versions": {"gaplab": __version__, "numpy": np.__version__},
        **extra,
    }


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def table_from_csv(text: str, geometry: dict, config: dict,
                   window_delta: float) -> RateTable:
    """Rebuild a RateTable from its deterministic CSV serialization."""
    lines = [ln for ln in text.strip().split("\n") if ln]
    header = lines[0].split(",")
    osc_cols = [(i, float(h.split("=", 1)[1])) for i, h in enumerate(header)
                if h.startswith("osc_r=")]
    d = sum(1 for h in header if h.startswith("argmax_x"))
    rows = []
    for ln in lines[1:]:
        cells = ln.split(",")
        get = dict(zip(header, cells))
        osc = {r: float(cells[i]) for i, r in osc_cols if cells[i] != ""}
        rows.append(RateRow(
            epsilon=float(get["epsilon"]),
            max_grad_neck=float(get["max_grad_neck"]),
            max_grad_global=float(get["max_grad_global"]),
            argmax_x=[float(get[f"argmax_x{i + 1}"]) for i in range(d)],
            window_radius=float(get["window_radius"]),
            osc_by_radius=osc,
            converged=get["converged"] == "1",
            iters=int(get["iters"]),
            energy=float(get["energy"]),
            grid_ns=int(get["grid_ns"]),
            grid_nt=int(get["grid_nt"]),
        ))
    return RateTable(rows=rows, geometry=geometry, config=config,
                     window_delta=window_delta)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(cfg: RunConfig, out: Path, workers: int, seed: int) -> int:
    geom = cfg.geometry()
    scfg = cfg.solver_config()
    fld = solve(geom, scfg)
    gf = gradient_field(fld)
    container = fld.to_container()
    _write(out / "field.json", json.dumps(container))
    _write(out / "manifest.json", json.dumps(_manifest(cfg, {
        "command": "solve",
        "max_grad": gf.max_magnitude,
        "argmax_x": gf.argmax_x.tolist(),
        "energy": fld.trace[-1].get("energy"),
        "iterations": sum(t.get("iters", 0) for t in fld.trace),
        "converged": fld.converged,
    }), indent=2))
    print(f"max|Du| = {gf.max_magnitude:.6g} at x = {gf.argmax_x.tolist()}")
    print(f"energy = {fld.trace[-1].get('energy'):.6g}")
    print(f"iterations = {sum(t.get('iters', 0) for t in fld.trace)}")
    print(f"field container written to {out / 'field.json'}")
    if not fld.converged:
        print("WARNING: solve did not converge", file=sys.stderr)
        return 2
    return 0


def _run_sweep(cfg: RunConfig, workers: int):
    sw = cfg.data.get("sweep", {})
    if "epsilons" not in sw:
        raise ConfigError("missing 'sweep.epsilons'")
    epsilons = [float(e) for e in sw["epsilons"]]
    window_delta = float(sw.get("window_delta", DEFAULT_WINDOW_DELTA))
    scfg = cfg.solver_config()
    family = cfg.geometry_family()
    return sweep_epsilon(family, scfg, epsilons, window_delta=window_delta,
                         workers=workers)


def cmd_sweep(cfg: RunConfig, out: Path, workers: int, seed: int) -> int:
    table = _run_sweep(cfg, workers)
    _write(out / "rates.csv", table.csv_text())
    _write(out / "manifest.json", json.dumps(_manifest(cfg, {
        "command": "sweep",
        "window_delta": table.window_delta,
        "geometry": table.geometry,
        "rows": [r.to_dict() for r in table.rows],
    }), indent=2))
    n_conv = sum(r.converged for r in table.rows)
    print(f"sweep complete: {len(table.rows)} rows "
          f"({n_conv} converged) -> {out / 'rates.csv'}")
    return 0 if n_conv == len(table.rows) else 2


def cmd_fit(cfg: RunConfig, out: Path, workers: int, seed: int) -> int:
    csv_path = out / "rates.csv"
    manifest_path = out / "manifest.json"
    sw = cfg.data.get("sweep", {})
    window_delta = float(sw.get("window_delta", DEFAULT_WINDOW_DELTA))
    reused = False
    if csv_path.exists() and manifest_path.exists():
        old = json.loads(manifest_path.read_text())
        if old.get("config_hash") == cfg.hash():
            table = table_from_csv(csv_path.read_text(),
                                   old.get("geometry", {}), {}, window_delta)
            reused = True
    if not reused:
        table = _run_sweep(cfg, workers)
        _write(csv_path, table.csv_text())

    drop_largest = bool(sw.get("drop_largest", True))
    fit = fit_rate(table, drop_largest=drop_largest)
    geom = cfg.geometry()
    p = float(cfg.get("solver", "p", 2.0))
    delta = float(cfg.get("barrier", "delta", 0.0))
    targets = theorem_targets(geom.dim, p, delta)

    manifest = _manifest(cfg, {
        "command": "fit",
        "window_delta": window_delta,
        "geometry": table.geometry,
        "rows": [r.to_dict() for r in table.rows],
        "fit": fit.to_dict(),
        "targets": targets.to_dict(),
        "reused_rates_csv": reused,
    })
    _write(manifest_path, json.dumps(manifest, indent=2))

    points = [(1.0 / r.epsilon, r.max_grad_neck) for r in table.converged_rows()]
    fitdata = ["inv_epsilon,max_grad_neck"]
    fitdata += [f"{repr(x)},{repr(y)}" for x, y in points]
    _write(out / "fitdata.csv", "\n".join(fitdata) + "\n")
    if bool(cfg.get("output", "svg", True)):
        lower = targets.lower_exponent
        band = (lower if lower is not None else 0.9 * targets.upper_exponent,
                targets.upper_exponent)
        svg = loglog_svg(points, fit=(fit.slope, fit.intercept), band=band,
                         title="gradient blow-up rate",
                         xlabel="1/eps", ylabel="max |Du| (neck window)")
        _write(out / "rates.svg", svg)
    print(f"fitted slope = {fit.slope:.6g} +- {fit.stderr:.3g} "
          f"(R^2 = {fit.r_squared:.6f})")
    print(f"targets: upper {targets.upper_exponent}, lower {targets.lower_exponent}")
    return 0


def cmd_certify(cfg: RunConfig, out: Path, workers: int, seed: int) -> int:
    spec = cfg.barrier_spec()
    b = cfg.data.get("barrier", {})
    samples = int(b.get("samples", 10000))
    geom = cfg.geometry()
    if spec.variant in ("supersolution_v", "subsolution_w"):
        spec.validate()  # inadmissible parameters are a config error here
        cert = certify_sign(spec, geom, samples=samples, seed=seed)
        _write(out / "certificate.json", json.dumps(cert.to_dict(), indent=2))
        print(f"certificate: admissible={cert.admissible} "
              f"violations={len(cert.violations)} "
              f"interior_min_margin={cert.interior_min_margin:.3e}")
        return 0
    fld = solve(geom, cfg.solver_config())
    rep = bernstein_eval(spec, fld)
    _write(out / "certificate.json", json.dumps(_manifest(cfg, {
        "command": "certify", "report": rep.to_dict()}), indent=2))
    print(f"bernstein report: quantity={rep.quantity} "
          f"argmax_x={rep.argmax_x.tolist()}")
    return 0


def cmd_check_transform(cfg: RunConfig, out: Path, workers: int, seed: int) -> int:
    sw = cfg.data.get("sweep", {})
    radii = [float(r) for r in sw.get("transform_radii", [0.05, 0.1, 0.2])]
    samples = int(sw.get("transform_samples", 1000))
    geom = cfg.geometry()
    reports = []
    for r in radii:
        chart = PhiChart(geom, scale_r=r)
        reports.append(verify_phi_bounds(chart, samples=samples,
                                         seed=seed).to_dict())
    slope = None
    if len(radii) >= 2:
        slope = float(np.polyfit(np.log(1.0 / np.array(radii)),
                                 np.log([rep["C_btilde"] for rep in reports]),
                                 1)[0])
    payload = _manifest(cfg, {
        "command": "check-transform",
        "reports": reports,
        "btilde_slope_vs_inverse_r": slope,
    })
    _write(out / "transform_report.json", json.dumps(payload, indent=2))
    print(f"C_jacobian = {[round(rep['C_jacobian'], 3) for rep in reports]}")
    print(f"C_btilde = {[round(rep['C_btilde'], 3) for rep in reports]}")
    print(f"parallelism residuals = "
          f"{[rep['parallelism_residual_max'] for rep in reports]}")
    if slope is not None:
        print(f"log C_btilde vs log(1/r) slope = {slope:.4f}")
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
    "certify": cmd_certify,
    "check-transform": cmd_check_transform,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gaplab",
        description="p-Laplace thin-gap laboratory: solves, sweeps, "
                    "certificates, transform checks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI run config")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--workers", type=int,
                        default=int(os.environ.get(WORKERS_ENV, "1")),
                        help="worker pool size for sweeps")
        sp.add_argument("--seed", type=int, default=None,
                        help="sampling seed (overrides config)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        cfg = RunConfig.from_path(args.config)
        seed = cfg.seed(args.seed)
        out = Path(args.out)
        return COMMANDS[args.command](cfg, out, args.workers, seed)
    except (ConfigError, BarrierSpecError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (LineSearchError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
