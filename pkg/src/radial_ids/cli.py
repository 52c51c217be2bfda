"""Command line entry point: solve, diagnose, verify and report.

Subcommands share the flags ``--config``, ``--out-dir`` and repeatable
``--override KEY=VALUE``.  All emitted files are deterministic functions of
the configuration.
"""

import argparse
import hashlib
import json
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import RunConfig, load_config
from .diagnostics import InitialDataFamily, penrose_report
from .errors import ConfigError, RadialIDSError
from .family import exp_perturbed_family, load_generator, round_family, tangent_generator
from .matter import AngularProfile, power_law_matter
from .oracle import constraint_residuals, warped_residuals
from .quadrature import QUAD_RTOL
from .sphere import SphereGrid
from .spherical import RadialGrid, solve_spherical
from .umbilic import evolve_lapse, integrate_p_umbilic

MANIFEST_SCHEMA = "radial-ids-manifest/1"
PER_RADIUS_HEADER = "# radial-ids per-radius diagnostics v1"


def build_objects(cfg: RunConfig):
    sphere = SphereGrid(cfg.grid["n_theta"], cfg.grid["n_phi"])
    fam = cfg.family
    if fam["kind"] == "round":
        family = round_family(sphere)
    else:
        if fam["generator_file"] is not None:
            B = load_generator(cfg.base_dir / fam["generator_file"], sphere)
        else:
            B = tangent_generator(sphere, np.array(fam["generator"]), fam["amplitude"])
        family = exp_perturbed_family(sphere, B, fam["lambda"], cfg.r0)
    m = cfg.matter
    model = power_law_matter(A_mu=m["A_mu"], A_j=m["A_j"], A_k=m["A_k"], decay_b=m["decay_b"],
                             decay_c=m["decay_c"], Lambda=cfg.Lambda, n=cfg.n,
                             jI_mode=m["jI_mode"], A_jI=m["A_jI"])
    rgrid = RadialGrid(cfg.r0, cfg.r_max, cfg.grid["radial_nodes"], n=cfg.n, Lambda=cfg.Lambda)
    return sphere, family, model, rgrid


def run_spherical(cfg, model, rgrid):
    value = cfg.boundary_value if cfg.boundary == "prescribed" else None
    if isinstance(value, dict):
        raise ConfigError("spherical runs need a numeric boundary_value", key="boundary_value")
    return solve_spherical(model, rgrid, mode=cfg.boundary, value=value, f0=cfg.f0)


def run_umbilic(cfg, sphere, family, model, rgrid):
    momentum = integrate_p_umbilic(model, rgrid, sphere, compat_tol=cfg.tolerances["compat"])
    if cfg.boundary == "minimal":
        raise ConfigError("boundary minimal (1/N = 0) cannot start the lapse march; "
                          "use generalized_horizon or prescribed", key="boundary")
    if cfg.boundary == "generalized_horizon":
        p0 = np.abs(momentum.p[0])
        if np.any(p0 == 0.0):
            raise ConfigError("generalized_horizon needs p(r0) != 0 everywhere", key="boundary")
        phi = 1.0 / (cfg.r0 * p0)
    else:
        v = cfg.boundary_value
        phi = AngularProfile(v)(sphere.theta_nodes, sphere.phi_nodes) if isinstance(v, dict) else v
    tol = cfg.tolerances
    return evolve_lapse(phi, model, momentum, family, rgrid, rtol=tol["rtol"], atol=tol["atol"],
                        max_ratio=tol["step_ratio"])


def _versions():
    return {"radial_ids": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _all_tolerances(cfg):
    tol = dict(cfg.tolerances)
    tol.update({
        "oracle_band_cos": cfg.oracle["band_cos"],
        "oracle_stride": cfg.oracle["stride"],
        "quadrature_rtol": QUAD_RTOL,
        "lapse_degeneracy_rel": 1e-13,
        "ladder": "r_max * 2^(-j/2), j = 0..6",
    })
    return dict(sorted(tol.items()))


def _dump_json(path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n")


def _write_per_radius(path, report):
    names, table = report.per_radius_table()
    header = PER_RADIUS_HEADER + "\n" + ",".join(names)
    np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")


def _oracle_summary(cfg, data, solution=None):
    out = {}
    if solution is not None:
        r = solution.grid.nodes
        mu, j = warped_residuals(r, solution.N, solution.k(), solution.p, cfg.n, cfg.Lambda,
                                 solution.model.mu_of_r(r), solution.model.j0_of_r(r))
        ok = np.isfinite(mu)
        out["warped"] = {"mu_max": float(np.abs(mu[ok]).max()), "j0_max": float(np.abs(j[ok]).max())}
    if data is not None:
        orc = cfg.oracle
        w = orc["r_window"]
        res = constraint_residuals(data, r_window=w, stride=orc["stride"], band_cos=orc["band_cos"])
        out["chart"] = res.summary(data.sphere.weights)
    return out


class Pipeline:
    """Sequential solve -> diagnose -> oracle -> report for one configuration."""

    def __init__(self, cfg: RunConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.files = []

    def _path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.out / name

    def solve(self, kind):
        cfg = self.cfg
        sphere, family, model, rgrid = build_objects(cfg)
        if kind == "spherical":
            sol = run_spherical(cfg, model, rgrid)
            sol.to_csv(self._path("radial.csv"))
            data = InitialDataFamily.from_spherical(sol, sphere) if cfg.n == 3 else None
            return sol, data
        run = run_umbilic(cfg, sphere, family, model, rgrid)
        run.steps_csv(self._path("steps.csv"))
        run.slice_csv(self._path("slice_r0.csv"), 0)
        run.slice_csv(self._path("slice_rmax.csv"), -1)
        boundary = cfg.boundary
        return run, InitialDataFamily.from_umbilic(run, boundary)

    def diagnose(self, data, solution, with_oracle):
        cfg = self.cfg
        tol = {k: cfg.tolerances[k] for k in ("monotonicity", "penrose", "dec", "horizon", "rigidity")}
        if data is None:
            doc = {"schema": "radial-ids-report/1", "dimension": cfg.n,
                   "note": "leaf energies are defined for n = 3 only"}
            if with_oracle:
                doc["residuals"] = _oracle_summary(cfg, None, solution)
            _dump_json(self._path("report.json"), doc)
            return doc
        report = penrose_report(data, f_choices=cfg.f_choice_tuples(), tolerances=tol)
        if with_oracle:
            report.residuals = _oracle_summary(cfg, data, solution if cfg.solver_kind == "spherical"
                                               and hasattr(solution, "grid") else None)
        _write_per_radius(self._path("per_radius.csv"), report)
        doc = report.scalars()
        _dump_json(self._path("report.json"), doc)
        return doc

    def manifest(self, command):
        files = {}
        for name in sorted(set(self.files)):
            files[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()
        # the config echo keeps its own out_dir so identical configs give identical manifests
        doc = {"schema": MANIFEST_SCHEMA, "command": command, "config": self.cfg.raw,
               "versions": _versions(), "tolerances": _all_tolerances(self.cfg), "files": files}
        _dump_json(self.out / "manifest.json", doc)


def _context(exc):
    tb = exc.__traceback__
    module = "radial_ids"
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("radial_ids."):
            module = name
        tb = tb.tb_next
    radius = getattr(exc, "radius", None)
    where = f" (r = {radius:.6g})" if radius is not None and "r =" not in str(exc) else ""
    return f"{module}: {exc}{where}"


def build_parser():
    parser = argparse.ArgumentParser(prog="radial-ids", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "solve-spherical": "solve the spherically symmetric system and write radial.csv",
        "solve-umbilic": "march the umbilic lapse equation and write step and slice tables",
        "diagnose": "solve per the config mode, then write report.json and per_radius.csv",
        "report": "diagnose and append constraint-residual oracle norms",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="YAML configuration file")
        p.add_argument("--out-dir", type=Path, default=None, help="output directory (overrides out_dir)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="set a dotted config key; repeatable")
    return parser


def run(command, cfg: RunConfig, out_dir=None):
    out = Path(out_dir) if out_dir is not None else cfg.out_dir
    pipe = Pipeline(cfg, out)
    if command == "solve-spherical":
        pipe.solve("spherical")
    elif command == "solve-umbilic":
        pipe.solve("umbilic")
    else:
        solution, data = pipe.solve(cfg.solver_kind)
        with_oracle = command == "report" and cfg.oracle["enabled"] and cfg.mode != "diagnose_only"
        pipe.diagnose(data, solution, with_oracle)
    pipe.manifest(command)
    return pipe


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.override)
        run(args.command, cfg, args.out_dir)
    except ConfigError as exc:
        key = f" [key: {exc.key}]" if exc.key else ""
        print(f"radial-ids: configuration error: {exc}{key}", file=sys.stderr)
        return 2
    except (RadialIDSError, ValueError, RuntimeError) as exc:
        print(f"radial-ids: error in {_context(exc)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
