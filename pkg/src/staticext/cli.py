"""Command line interface: solve, kernel, scan and verify.

Configuration and reports are JSON; per-node fields are written as CSV.
Exit codes: 0 success, 2 solver divergence (or failed checks for verify),
1 configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import analysis as an
from .gauge import dirichlet_laplacian
from .mesh import Chart, ChartError, Surface, refine
from .rng import LCG
from .solver import NewtonError, NewtonSettings, newton_solve
from .system import BoundaryData, State, StaticSystem, flat_data, schwarzschild_data

log = logging.getLogger("staticext")

DEFAULT_SEED = 42

_HARMONIC = {
    "type": "object",
    "properties": {"l": {"type": "integer", "minimum": 0},
                   "m": {"type": "integer"},
                   "value": {"type": "number"}},
    "required": ["l", "m", "value"],
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "surface": {
            "oneOf": [
                {"type": "object",
                 "properties": {"type": {"const": "sphere"},
                                "radius": {"type": "number", "exclusiveMinimum": 0}},
                 "required": ["type"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"type": {"const": "harmonics"},
                                "lmax": {"type": "integer", "minimum": 0},
                                "coeffs": {"type": "array", "items": _HARMONIC, "minItems": 1}},
                 "required": ["type", "lmax", "coeffs"], "additionalProperties": False},
            ]
        },
        "grid": {
            "type": "object",
            "properties": {"ns": {"type": "integer", "minimum": 4},
                           "ntheta": {"type": "integer", "minimum": 4},
                           "nphi": {"type": "integer", "minimum": 4},
                           "order": {"enum": [2, 4, 6]}},
            "required": ["ns", "ntheta", "nphi"],
            "additionalProperties": False,
        },
        "decay": {
            "type": "object",
            "properties": {"q": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                           "R_eta": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "boundary_data": {
            "oneOf": [
                {"type": "object", "properties": {"type": {"const": "flat"}},
                 "required": ["type"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"type": {"const": "schwarzschild"},
                                "m": {"type": "number", "minimum": 0, "exclusiveMaximum": 2}},
                 "required": ["type", "m"], "additionalProperties": False},
                {"type": "object",
                 "properties": {"type": {"const": "perturbation"},
                                "dtau_coeffs": {"type": "array", "items": _HARMONIC},
                                "dphi_coeffs": {"type": "array", "items": _HARMONIC}},
                 "required": ["type", "dtau_coeffs", "dphi_coeffs"], "additionalProperties": False},
            ]
        },
        "newton": {
            "type": "object",
            "properties": {"tol": {"type": "number", "exclusiveMinimum": 0},
                           "max_iter": {"type": "integer", "minimum": 1},
                           "damping": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                           "jacobian": {"enum": ["krylov", "frozen", "refresh"]}},
            "additionalProperties": False,
        },
        "spectrum": {
            "type": "object",
            "properties": {"k": {"type": "integer", "minimum": 1, "maximum": 20}},
            "additionalProperties": False,
        },
        "seed": {"type": "integer", "minimum": 0},
    },
    "required": ["surface", "grid"],
    "additionalProperties": False,
}


class ConfigError(ValueError):
    """Configuration file missing, unparsable or invalid."""


def validate_config(cfg: dict) -> dict:
    """Validate against the schema and fill defaults."""
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None
    out = json.loads(json.dumps(cfg))
    out.setdefault("decay", {}).setdefault("q", 0.75)
    out.setdefault("boundary_data", {"type": "flat"})
    out.setdefault("newton", {})
    out.setdefault("spectrum", {})
    out.setdefault("seed", DEFAULT_SEED)
    out["grid"].setdefault("order", 6)
    return out


def load_config(path) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return validate_config(cfg)


def build_chart(cfg: dict) -> Chart:
    g = cfg["grid"]
    try:
        return Chart(Surface.from_config(cfg["surface"]), g["ns"], g["ntheta"], g["nphi"], g["order"])
    except ChartError as exc:
        raise ConfigError(str(exc)) from None


def build_system(cfg: dict, chart: Chart) -> StaticSystem:
    d = cfg["decay"]
    return StaticSystem(chart, r_eta=d.get("R_eta"), q=d["q"])


def _harmonic_field(coeffs, theta, phi) -> np.ndarray:
    if not coeffs:
        return np.zeros_like(theta)
    try:
        return Surface(tuple((c["l"], c["m"], c["value"]) for c in coeffs)).radius(theta, phi)[0]
    except ChartError as exc:
        raise ConfigError(str(exc)) from None


def boundary_data(cfg: dict, chart: Chart) -> BoundaryData:
    """Boundary data from the config.  A perturbation scales the Euclidean
    induced metric by (1 + f) and adds g to the Euclidean mean curvature,
    f and g given as harmonic expansions in (theta, phi)."""
    bd = cfg["boundary_data"]
    kind = bd["type"]
    if kind == "flat":
        return flat_data(chart)
    if kind == "schwarzschild":
        return schwarzschild_data(chart, float(bd["m"]))
    _, th, ph = (a[chart.boundary] for a in chart.coords)
    base = flat_data(chart)
    f = _harmonic_field(bd["dtau_coeffs"], th, ph)
    dphi = _harmonic_field(bd["dphi_coeffs"], th, ph)
    if np.any(1.0 + f <= 0):
        raise ConfigError("dtau_coeffs make the boundary metric degenerate")
    return BoundaryData(base.tau * (1.0 + f)[:, None], base.phi + dphi, "perturbation")


def newton_settings(cfg: dict) -> NewtonSettings:
    n = cfg["newton"]
    s = NewtonSettings()
    for key in ("tol", "max_iter", "damping", "jacobian"):
        if key in n:
            setattr(s, key, n[key])
    return s


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def write_json(path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    if path is None or str(path) == "-":
        sys.stdout.write(text + "\n")
    else:
        Path(path).write_text(text + "\n", encoding="utf-8")


FIELD_HEADER = "i,j,k,x,y,z,g11,g12,g13,g22,g23,g33,u"


def write_fields_csv(path, chart: Chart, state: State) -> None:
    """One row per node; integers for indices, 17 significant digits otherwise."""
    I, J, K = np.meshgrid(np.arange(chart.ns), np.arange(chart.ntheta), np.arange(chart.nphi),
                          indexing="ij")
    g = state.g
    comps = np.stack([g[:, 0, 0], g[:, 0, 1], g[:, 0, 2], g[:, 1, 1], g[:, 1, 2], g[:, 2, 2]], axis=1)
    vals = np.column_stack([chart.x, comps, state.u])
    idx = np.column_stack([I.ravel(), J.ravel(), K.ravel()])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(FIELD_HEADER + "\n")
        for a, v in zip(idx, vals):
            fh.write("%d,%d,%d," % tuple(a) + ",".join("%.17g" % x for x in v) + "\n")


def _run_info(cfg: dict) -> dict:
    return {"config": cfg, "seed": cfg["seed"], "rng": LCG.describe()}


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_solve(config_path, out_path, fields_path=None) -> int:
    cfg = load_config(config_path)
    chart = build_chart(cfg)
    data = boundary_data(cfg, chart)
    system = build_system(cfg, chart)
    settings = newton_settings(cfg)
    settings.spectrum_k = int(cfg["spectrum"].get("k", 0))
    code = 0
    try:
        state, report = newton_solve(system, data, settings)
    except NewtonError as exc:
        log.error("newton failed: %s", exc)
        report, state, code = exc.report, None, 2
    payload = {"report": report.to_dict(), **_run_info(cfg)}
    write_json(out_path, payload)
    if fields_path and state is not None:
        write_fields_csv(fields_path, chart, state)
    return code


def cmd_kernel(config_path, k: int | None = None, out_path=None) -> int:
    cfg = load_config(config_path)
    chart = build_chart(cfg)
    k = int(k or cfg["spectrum"].get("k", 12))
    if not 1 <= k <= 20:
        raise ConfigError("number of singular values must be between 1 and 20")
    d = cfg["decay"]
    sp_ = an.nullity(chart, k, r_eta=d.get("R_eta"), q=d["q"])
    write_json(out_path, {"singular_values": sp_.values, "nullity": sp_.gap_index,
                          "gap_ratio": sp_.gap_ratio, "ambiguous": sp_.ambiguous,
                          "k": k, **_run_info(cfg)})
    return 0


def cmd_scan(config_path, t_min: float, t_max: float, steps: int, out_path=None) -> int:
    cfg = load_config(config_path)
    if steps < 1 or t_min <= 0 or t_max < t_min:
        raise ConfigError("scan needs 0 < t_min <= t_max and steps >= 1")
    g = cfg["grid"]
    d = cfg["decay"]
    table = an.static_regularity_scan(Surface.from_config(cfg["surface"]), t_min, t_max, steps,
                                      grid=(g["ns"], g["ntheta"], g["nphi"]),
                                      k=cfg["spectrum"].get("k", 12), order=g["order"],
                                      r_eta=d.get("R_eta"), q=d["q"])
    write_json(out_path, {**table.to_dict(), **_run_info(cfg)})
    return 0


def _order(coarse: float, fine: float) -> float:
    if fine <= 0.0 or coarse <= 0.0:
        return float("inf")
    return float(np.log2(coarse / fine))


ROUNDOFF = 1e-12


def _check(name, value, tol, order=None, min_order=1.5, extra=None) -> dict:
    """A pass/fail record.  The order requirement is waived when the coarse
    value is already at round-off."""
    ok = value <= tol
    if order is not None and value > ROUNDOFF:
        ok = ok and order >= min_order
    rec = {"check": name, "value": value, "tol": tol, "passed": bool(ok)}
    if order is not None:
        rec["order"] = order if np.isfinite(order) else 99.0
        rec["min_order"] = min_order
    if extra:
        rec.update(extra)
    return rec


def _two_grids(chart):
    return chart, refine(chart)


def suite_green(chart: Chart, seed: int) -> list:
    coarse, fine = _two_grids(chart)
    out = []
    for i in range(5):
        res = []
        for c in (coarse, fine):
            h1, v1 = an.random_smooth_pair(c, seed + 2 * i)
            h2, v2 = an.random_smooth_pair(c, seed + 2 * i + 1)
            res.append(an.green_identity_residual(c, h1, v1, h2, v2))
        out.append(_check(f"green pair {i}", res[0], 5e-3, _order(*res), extra={"refined": res[1]}))
    return out


def suite_cokernel(chart: Chart, seed: int) -> list:
    coarse, fine = _two_grids(chart)
    out = []
    basis = an.harmonic_killing_basis(coarse)
    g, u = an.schwarzschild_pair(coarse, 0.1)
    for a in range(3):
        X, dX, _ = basis.jets(a)
        out.append(_check(f"cokernel schwarzschild translation {a}",
                          an.cokernel_residual(coarse, g, u, X, dX), 5e-3))
    bases = {id(coarse): basis, id(fine): an.harmonic_killing_basis(fine)}
    for i in range(5):
        res = []
        for c in (coarse, fine):
            h, v = an.random_smooth_pair(c, seed + i)
            X, dX = an.random_killing_field(c, bases[id(c)], seed + 100 + i)
            res.append(an.lin_cokernel_residual(c, h, v, X, dX))
        out.append(_check(f"linearized cokernel pair {i}", res[0], 5e-3, _order(*res),
                          extra={"refined": res[1]}))
    return out


def suite_gauge(chart: Chart, seed: int) -> list:
    from .solver import factorize

    out = []
    basis = an.harmonic_killing_basis(chart)
    lap = dirichlet_laplacian(chart)
    inner = chart.interior_mask
    harm = max(float(np.max(np.abs((lap @ basis.Y[a])[inner])) / np.max(np.abs(basis.Y[a])))
               for a in range(len(basis)))
    scale = float(np.max(np.abs(lap.diagonal())))
    out.append(_check("harmonic correction: relative discrete Laplacian residual", harm / scale, 1e-10))
    edge = float(np.max(np.abs(basis.X[:, chart.boundary])))
    out.append(_check("harmonic basis: vanishes on the surface", edge, 1e-12))
    S = StaticSystem(chart)
    data = flat_data(chart)
    Lbar = S.linearize_flat()
    rng = LCG(seed)
    r0 = S.residual(State.flat(S.n), data)
    eps = 1e-5
    for i in range(5):
        xi = rng.uniform(S.size, -1.0, 1.0)
        lin = Lbar @ xi
        fd = (S.residual(State.from_vector(eps * xi, S.n), data) - r0) / eps
        err = float(np.linalg.norm(fd - lin) / np.linalg.norm(lin))
        out.append(_check(f"linearization consistency direction {i}", err, 1e-4))
    state, rep = newton_solve(S, schwarzschild_data(chart, 0.05), NewtonSettings(),
                              factor=factorize(Lbar, S))
    out.append(_check("newton schwarzschild: static-harmonic gauge", rep.gauge["static_harmonic"], 1e-6))
    out.append(_check("newton schwarzschild: orthogonality",
                      float(np.max(np.abs(rep.gauge["orthogonality"]))), 1e-6))
    return out


def suite_schwarzschild(chart: Chart, seed: int) -> list:
    coarse, fine = _two_grids(chart)
    res = [an.static_vacuum_residual(c, *an.schwarzschild_pair(c, 0.1)) for c in (coarse, fine)]
    out = [_check("static vacuum residual, m = 0.1", res[0], 1e-3, _order(*res), min_order=1.8,
                  extra={"refined": res[1]})]
    g, u = an.schwarzschild_pair(coarse, 0.1)
    mass = an.adm_mass(coarse, g)
    out.append(_check("adm mass, m = 0.1 (relative error)", abs(mass - 0.1) / 0.1, 0.02,
                      extra={"mass": mass}))
    rt = an.regge_teitelboim(coarse, g, u)
    out.append(_check("regge-teitelboim = -16 pi m (relative error)",
                      abs(rt.value + 16 * np.pi * 0.1) / (16 * np.pi * 0.1), 0.02,
                      extra={"functional": rt.value, "mass_term": rt.mass_term, "volume_term": rt.volume_term}))
    r = coarse.radius
    x = coarse.x
    for name, v in (("1/r", 1.0 / r), ("x1/r^3", x[:, 0] / r**3)):
        out.append(_check(f"conformal DH identity, v = {name}", an.conformal_dh_check(coarse, v), 1e-3))
    if coarse.surface.is_round and abs(coarse.surface.coeffs[0][2] - 1.0) < 1e-14:
        for c in (-1.0, -0.5, 0.5, 1.0):
            val = an.convexity_probe_sphere(coarse, c)
            err = abs(val - 16 * np.pi * c * c) / (16 * np.pi * c * c)
            out.append(_check(f"convexity probe c = {c}", err, 0.01, extra={"probe": val}))
    return out


SUITES = {"green": suite_green, "cokernel": suite_cokernel, "gauge": suite_gauge,
          "schwarzschild": suite_schwarzschild}


def cmd_verify(config_path, suite: str = "all", out_path=None) -> int:
    cfg = load_config(config_path)
    if suite != "all" and suite not in SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {sorted(SUITES)} or 'all'")
    chart = build_chart(cfg)
    names = sorted(SUITES) if suite == "all" else [suite]
    checks = []
    for name in names:
        for rec in SUITES[name](chart, cfg["seed"]):
            rec["suite"] = name
            checks.append(rec)
            log.info("%s %s: %.3e (%s)", name, rec["check"], rec["value"],
                     "pass" if rec["passed"] else "FAIL")
    passed = all(r["passed"] for r in checks)
    write_json(out_path, {"suite": suite, "passed": passed, "checks": checks, **_run_info(cfg)})
    return 0 if passed else 2


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="staticext", description="Static vacuum extension solver.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve for a static vacuum extension")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--fields", help="optional per-node CSV dump")
    k = sub.add_parser("kernel", help="smallest singular values of the flat operator")
    k.add_argument("--config", required=True)
    k.add_argument("--num-singular", type=int, default=None)
    k.add_argument("--out", default="-")
    c = sub.add_parser("scan", help="nullity over a dilation family of the surface")
    c.add_argument("--config", required=True)
    c.add_argument("--t-min", type=float, default=0.9)
    c.add_argument("--t-max", type=float, default=1.1)
    c.add_argument("--steps", type=int, default=11)
    c.add_argument("--out", default="-")
    v = sub.add_parser("verify", help="run identity checks")
    v.add_argument("--config", required=True)
    v.add_argument("--suite", default="all", choices=sorted(SUITES) + ["all"])
    v.add_argument("--out", default="-")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "solve":
            return cmd_solve(args.config, args.out, args.fields)
        if args.command == "kernel":
            return cmd_kernel(args.config, args.num_singular, args.out)
        if args.command == "scan":
            return cmd_scan(args.config, args.t_min, args.t_max, args.steps, args.out)
        return cmd_verify(args.config, args.suite, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
