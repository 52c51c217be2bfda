"""Run configuration: a single YAML document with a fixed key set.

Every key is optional except where noted; unknown keys are rejected so that
typos cannot silently fall back to defaults.  Nested keys are addressed with
dots (``matter.decay_b``) in error messages and ``--override`` flags.
"""

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError

MODES = ("spherical", "umbilic", "diagnose_only")
BOUNDARIES = ("minimal", "generalized_horizon", "prescribed")
FAMILY_KINDS = ("round", "exp_perturbed")
F_CHOICES = ("zero", "eps_full", "angular_ratio")

DEFAULTS = {
    "mode": "spherical",
    "solver": "spherical",
    "n": 3,
    "Lambda": 0.0,
    "r0": 1.0,
    "r_max": 1000.0,
    "boundary": "minimal",
    "boundary_value": None,
    "f0": None,
    "grid": {"radial_nodes": 400, "n_theta": 16, "n_phi": 32},
    "family": {"kind": "round", "lambda": 1.0, "amplitude": 0.05, "generator": None,
               "generator_file": None},
    "matter": {"A_mu": 0.0, "A_j": 0.0, "A_k": 0.0, "A_jI": 0.0, "jI_mode": "explicit",
               "decay_b": 2.5, "decay_c": 4.0},
    "f_choices": ["zero", {"eps_full": 0.0}, "angular_ratio"],
    "tolerances": {"monotonicity": 1e-8, "penrose": 1e-6, "dec": 1e-12, "horizon": 1e-8,
                   "rigidity": 1e-6, "rtol": 1e-9, "atol": 1e-12, "step_ratio": 0.01,
                   "compat": 1e-2},
    "oracle": {"enabled": True, "stride": 10, "band_cos": 0.6, "r_window": None},
    "out_dir": "out",
}

# keys whose values are free-form (not checked against DEFAULTS sub-keys)
_LEAF_MAPPINGS = {"matter.A_mu", "matter.A_j", "matter.A_k", "matter.A_jI", "boundary_value"}


@dataclass
class RunConfig:
    """Validated run configuration.

    ``raw`` is the normalized document (defaults filled in) used for the
    manifest echo; the remaining fields are typed views of it.
    """

    mode: str
    solver: str
    n: int
    Lambda: float
    r0: float
    r_max: float
    boundary: str
    boundary_value: object
    f0: float
    grid: dict
    family: dict
    matter: dict
    f_choices: list
    tolerances: dict
    oracle: dict
    out_dir: Path
    raw: dict = field(repr=False, default_factory=dict)
    base_dir: Path = field(default=Path("."), repr=False)

    @property
    def solver_kind(self):
        return self.mode if self.mode != "diagnose_only" else self.solver

    def f_choice_tuples(self):
        out = []
        for c in self.f_choices:
            if isinstance(c, dict):
                (name, eps), = c.items()
                out.append((name, float(eps)))
            else:
                out.append(c)
        return out


def _merge(defaults, doc, prefix=""):
    if not isinstance(doc, dict):
        raise ConfigError(f"section {prefix.rstrip('.') or '<root>'} must be a mapping",
                          key=prefix.rstrip(".") or None)
    out = copy.deepcopy(defaults)
    for key, value in doc.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown key {path!r}", key=path)
        if isinstance(defaults[key], dict) and path not in _LEAF_MAPPINGS:
            out[key] = _merge(defaults[key], value if value is not None else {}, path + ".")
        else:
            out[key] = value
    return out


def _number(doc, path, positive=False, integer=False, allow_none=False):
    node = doc
    *parents, last = path.split(".")
    for p in parents:
        node = node[p]
    value = node[last]
    if value is None and allow_none:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path} must be a number, got {value!r}", key=path)
    if integer and int(value) != value:
        raise ConfigError(f"{path} must be an integer", key=path)
    if not np.isfinite(value):
        raise ConfigError(f"{path} must be finite", key=path)
    if positive and not value > 0:
        raise ConfigError(f"{path} must be positive", key=path)
    return int(value) if integer else float(value)


def _profile_spec(doc, path):
    value = doc["matter"][path.split(".")[-1]]
    if isinstance(value, bool):
        raise ConfigError(f"{path} must be a number or a basis mapping", key=path)
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, dict):
        from .matter import AngularProfile

        try:
            AngularProfile({str(k): float(v) for k, v in value.items()})
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"{path}: {exc}", key=path) from None
        return {str(k): float(v) for k, v in value.items()}
    raise ConfigError(f"{path} must be a number or a basis mapping", key=path)


def _choice(value, allowed, path):
    if value not in allowed:
        raise ConfigError(f"{path} must be one of {', '.join(allowed)}; got {value!r}", key=path)
    return value


def _validate_f_choices(choices):
    if not isinstance(choices, list) or not choices:
        raise ConfigError("f_choices must be a non-empty list", key="f_choices")
    out = []
    for c in choices:
        if isinstance(c, str):
            _choice(c, F_CHOICES, "f_choices")
            if c == "eps_full":
                c = {"eps_full": 0.0}
            out.append(c)
        elif isinstance(c, dict) and len(c) == 1 and "eps_full" in c:
            eps = c["eps_full"]
            if isinstance(eps, bool) or not isinstance(eps, (int, float)) or not 0.0 <= eps <= 1.0:
                raise ConfigError("f_choices eps_full needs 0 <= eps <= 1", key="f_choices")
            out.append({"eps_full": float(eps)})
        else:
            raise ConfigError(f"invalid f_choices entry {c!r}", key="f_choices")
    return out


def parse_config(document, base_dir=None, overrides=()) -> RunConfig:
    """Validate a YAML document (string or mapping) into a :class:`RunConfig`.

    ``overrides`` are ``"dotted.key=value"`` strings applied before validation;
    values are parsed as YAML scalars.
    """
    if isinstance(document, str):
        try:
            doc = yaml.safe_load(document)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed configuration document: {exc}") from None
    else:
        doc = copy.deepcopy(document)
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("configuration document must be a mapping")
    for item in overrides:
        apply_override(doc, item)
    doc = _merge(DEFAULTS, doc)
    base_dir = Path(base_dir) if base_dir is not None else Path(".")

    mode = _choice(doc["mode"], MODES, "mode")
    solver = _choice(doc["solver"], ("spherical", "umbilic"), "solver")
    n = _number(doc, "n", integer=True)
    if n < 3:
        raise ConfigError("n must be at least 3", key="n")
    Lam = _number(doc, "Lambda")
    if Lam > 0:
        raise ConfigError("Lambda must be nonpositive", key="Lambda")
    r0 = _number(doc, "r0", positive=True)
    r_max = _number(doc, "r_max", positive=True)
    if not r0 < r_max:
        raise ConfigError("r0 must be smaller than r_max", key="r_max")
    boundary = _choice(doc["boundary"], BOUNDARIES, "boundary")
    bval = doc["boundary_value"]
    if bval is not None and not isinstance(bval, dict):
        bval = _number(doc, "boundary_value")
    if boundary == "prescribed" and bval is None:
        raise ConfigError("boundary prescribed needs boundary_value", key="boundary_value")
    f0 = _number(doc, "f0", allow_none=True)

    grid = {k: _number(doc, f"grid.{k}", positive=True, integer=True) for k in doc["grid"]}
    if grid["radial_nodes"] < 8:
        raise ConfigError("grid.radial_nodes must be at least 8", key="grid.radial_nodes")

    fam = dict(doc["family"])
    _choice(fam["kind"], FAMILY_KINDS, "family.kind")
    fam["lambda"] = _number(doc, "family.lambda", positive=True)
    fam["amplitude"] = _number(doc, "family.amplitude")
    if fam["generator"] is not None:
        M = np.asarray(fam["generator"], dtype=float) if _is_matrix(fam["generator"]) else None
        if M is None or M.shape != (3, 3) or not np.allclose(M, M.T):
            raise ConfigError("family.generator must be a symmetric 3x3 matrix", key="family.generator")
        fam["generator"] = M.tolist()
    if fam["generator_file"] is not None:
        path = base_dir / str(fam["generator_file"])
        if not path.is_file():
            raise ConfigError(f"family.generator_file {str(path)!r} does not exist",
                              key="family.generator_file")
    if fam["kind"] == "exp_perturbed" and fam["generator"] is None and fam["generator_file"] is None:
        raise ConfigError("exp_perturbed family needs generator or generator_file", key="family.generator")

    mat = dict(doc["matter"])
    for key in ("A_mu", "A_j", "A_k", "A_jI"):
        mat[key] = _profile_spec(doc, f"matter.{key}")
    _choice(mat["jI_mode"], ("explicit", "umbilic_derived"), "matter.jI_mode")
    mat["decay_b"] = _number(doc, "matter.decay_b")
    mat["decay_c"] = _number(doc, "matter.decay_c")
    if not mat["decay_b"] > n / 2.0:
        raise ConfigError(f"matter.decay_b = {mat['decay_b']} must exceed n/2 = {n / 2.0}",
                          key="matter.decay_b")
    if not mat["decay_c"] > (n + 2) / 2.0:
        raise ConfigError(f"matter.decay_c = {mat['decay_c']} must exceed (n+2)/2 = {(n + 2) / 2.0}",
                          key="matter.decay_c")

    f_choices = _validate_f_choices(doc["f_choices"])
    tol = {k: _number(doc, f"tolerances.{k}", positive=True) for k in doc["tolerances"]}
    orc = dict(doc["oracle"])
    if not isinstance(orc["enabled"], bool):
        raise ConfigError("oracle.enabled must be true or false", key="oracle.enabled")
    orc["stride"] = _number(doc, "oracle.stride", positive=True, integer=True)
    orc["band_cos"] = _number(doc, "oracle.band_cos", positive=True)
    if orc["r_window"] is not None:
        w = orc["r_window"]
        if not (isinstance(w, list) and len(w) == 2 and all(isinstance(x, (int, float)) for x in w)
                and w[0] < w[1]):
            raise ConfigError("oracle.r_window must be [lo, hi] with lo < hi", key="oracle.r_window")
        orc["r_window"] = [float(w[0]), float(w[1])]

    doc.update(mode=mode, solver=solver, n=n, Lambda=Lam, r0=r0, r_max=r_max, boundary_value=bval,
               f0=f0, grid=grid, family=fam, matter=mat, f_choices=f_choices, tolerances=tol,
               oracle=orc)
    out_dir = doc["out_dir"]
    if not isinstance(out_dir, str):
        raise ConfigError("out_dir must be a path string", key="out_dir")
    return RunConfig(mode, solver, n, Lam, r0, r_max, boundary, bval, f0, grid, fam, mat,
                     f_choices, tol, orc, Path(out_dir), raw=doc, base_dir=base_dir)


def _is_matrix(value):
    return isinstance(value, list) and all(isinstance(row, list) for row in value)


def apply_override(doc, item):
    """Set ``doc[dotted.key] = yaml(value)`` in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not KEY=VALUE")
    key, _, text = item.partition("=")
    key = key.strip()
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: {exc}", key=key) from None
    node = doc
    parts = key.split(".")
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
        if not isinstance(node, dict):
            raise ConfigError(f"override {key}: {p} is not a section", key=key)
    node[parts[-1]] = value


def load_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {str(path)!r}: {exc.strerror}") from None
    return parse_config(text, base_dir=path.parent, overrides=overrides)
