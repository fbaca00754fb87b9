"""Command-line front end: config loading, pipeline runs and file output.

    biot-homog cell|kernels|macro|verify --config run.toml [--out DIR]
               [--mode kernel|micro] [--negative-control]

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 solver failure.

Config schema (TOML, one table per section):

    [geometry]   dim, res, inclusion ("cube" | "sphere"), size (side or radius), center?
    [materials]  lambda1, mu1, lambda2, mu2   (or A1_mandel, A2_mandel matrices),
                 c1, c2, K1, K2 (scalar or d×d), g, alpha1, alpha2
    [time]       dt, steps
    [macro]      extent, res, p1_bc?, mode?, f1?, f2?, vtk_steps?, manufactured?
    [output]     dir?

Floats are written with 17 significant digits and keys in a fixed order, so
identical configs give byte-identical JSON/CSV files.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .effective import homogenize
from .fem_core import ConvergenceError
from .geometry import Cube, GeometryError, MacroDomain, Sphere, build_unit_cell
from .macro_biot import KERNEL, MICRO, MacroAssembly, MacroConfig, MacroConfigError, run_macro
from .manufactured import bubble, direction, spatial_case
from .materials import MaterialError, PhaseMaterials, as_matrix, from_mandel
from .verify import check_tensor_laws, corrupt_coefficients, run_suite

log = logging.getLogger("biot_homog")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3
MODES = {"kernel": KERNEL, "micro": MICRO, KERNEL: KERNEL, MICRO: MICRO}


class ConfigError(ValueError):
    pass


# config

@dataclass
class RunConfig:
    dim: int
    cell_res: int
    inclusion: object
    center: tuple | None
    materials: PhaseMaterials
    dt: float
    steps: int
    domain: MacroDomain | None
    mode: str
    f1: np.ndarray
    f2: np.ndarray
    vtk_steps: list
    manufactured: bool
    out_dir: Path


_MISSING = object()


def _get(table, section, key, default=_MISSING):
    sec = table.get(section, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{section}] must be a table")
    if key not in sec:
        if default is _MISSING:
            raise ConfigError(f"missing required field '{section}.{key}'")
        return default
    return sec[key]


def _number(table, section, key, default=_MISSING, kind=float):
    value = _get(table, section, key, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"field '{section}.{key}' must be a number, got {value!r}")
    if kind is int and not float(value).is_integer():
        raise ConfigError(f"field '{section}.{key}' must be an integer")
    return kind(value)


def _array(table, section, key, default=_MISSING):
    value = _get(table, section, key, default)
    if value is None:
        return None
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"field '{section}.{key}' must be numeric") from None
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"field '{section}.{key}' must be finite")
    return arr


def _materials(raw, dim):
    sec = "materials"
    tensors = []
    for i in (1, 2):
        if f"A{i}_mandel" in raw.get(sec, {}):
            M = _array(raw, sec, f"A{i}_mandel")
            n = dim * (dim + 1) // 2
            if M.shape != (n, n):
                raise ConfigError(f"field '{sec}.A{i}_mandel' must be {n}x{n}")
            tensors.append(from_mandel(M, dim))
        else:
            lam = _number(raw, sec, f"lambda{i}")
            mu = _number(raw, sec, f"mu{i}")
            tensors.append(PhaseMaterials.isotropic(dim, lam, mu, lam, mu).A1)
    K = []
    for key in ("K1", "K2"):
        k = _array(raw, sec, key)
        if k.ndim == 0:
            k = as_matrix(k, dim)
        if k.shape != (dim, dim):
            raise ConfigError(f"field '{sec}.{key}' must be a scalar or {dim}x{dim} matrix")
        K.append(k)
    g = _number(raw, sec, "g")
    mat = PhaseMaterials(A1=tensors[0], A2=tensors[1], c1=_number(raw, sec, "c1"),
                         c2=_number(raw, sec, "c2"), K1=K[0], K2=K[1], g=g,
                         alpha1=_number(raw, sec, "alpha1"), alpha2=_number(raw, sec, "alpha2"))
    try:
        mat.validate()
    except MaterialError as exc:
        raise ConfigError(f"invalid materials: {exc}") from None
    return mat


def _vector(raw, section, key, dim):
    v = _array(raw, section, key, default=None)
    if v is None:
        return np.zeros(dim)
    if v.shape != (dim,):
        raise ConfigError(f"field '{section}.{key}' must have {dim} entries")
    return v


def parse_config(raw, need_macro=False, out_override=None, mode_override=None):
    """Validate a parsed TOML mapping; raises ConfigError naming the offending field."""
    dim = _number(raw, "geometry", "dim", kind=int)
    if dim not in (2, 3):
        raise ConfigError("field 'geometry.dim' must be 2 or 3")
    res = _number(raw, "geometry", "res", kind=int)
    shape = _get(raw, "geometry", "inclusion")
    size = _number(raw, "geometry", "size")
    if shape == "cube":
        inclusion = Cube(size)
    elif shape == "sphere":
        inclusion = Sphere(size)
    else:
        raise ConfigError(f"field 'geometry.inclusion' must be 'cube' or 'sphere', got {shape!r}")
    if not size > 0:
        raise ConfigError("field 'geometry.size' must be positive")
    center = _array(raw, "geometry", "center", default=None)
    if center is not None and center.shape != (dim,):
        raise ConfigError(f"field 'geometry.center' must have {dim} entries")
    materials = _materials(raw, dim)
    dt = _number(raw, "time", "dt")
    steps = _number(raw, "time", "steps", kind=int)
    if not dt > 0:
        raise ConfigError("field 'time.dt' must be positive")
    if steps < 0:
        raise ConfigError("field 'time.steps' must be nonnegative")
    domain = None
    if need_macro or "macro" in raw:
        extent = _array(raw, "macro", "extent")
        mres = _array(raw, "macro", "res")
        if extent.shape != (dim,) or mres.shape != (dim,):
            raise ConfigError(f"fields 'macro.extent' and 'macro.res' need {dim} entries")
        if not np.all(mres == np.round(mres)):
            raise ConfigError("field 'macro.res' must hold integers")
        bc = _get(raw, "macro", "p1_bc", "dirichlet_zero")
        try:
            domain = MacroDomain(dim, tuple(float(e) for e in extent),
                                 tuple(int(r) for r in mres), bc)
        except GeometryError as exc:
            raise ConfigError(f"invalid macro domain: {exc}") from None
    mode = mode_override or _get(raw, "macro", "mode", KERNEL)
    if mode not in MODES:
        raise ConfigError(f"field 'macro.mode' must be kernel_convolution or micro_coupled, "
                          f"got {mode!r}")
    # field output only matters for macro runs; cell/kernels ignore the macro table
    vtk_steps = _get(raw, "macro", "vtk_steps", [steps]) if need_macro else [steps]
    if (not isinstance(vtk_steps, list)
            or not all(isinstance(s, int) and 0 <= s <= steps for s in vtk_steps)):
        raise ConfigError(f"field 'macro.vtk_steps' must list step indices in [0, {steps}]")
    manufactured = _get(raw, "macro", "manufactured", False)
    if not isinstance(manufactured, bool):
        raise ConfigError("field 'macro.manufactured' must be true or false")
    out_dir = Path(out_override or _get(raw, "output", "dir", "."))
    return RunConfig(dim=dim, cell_res=res, inclusion=inclusion,
                     center=None if center is None else tuple(center), materials=materials,
                     dt=dt, steps=steps, domain=domain, mode=MODES[mode],
                     f1=_vector(raw, "macro", "f1", dim), f2=_vector(raw, "macro", "f2", dim),
                     vtk_steps=sorted(set(vtk_steps)), manufactured=manufactured,
                     out_dir=out_dir)


def load_config(path, **kw):
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    return parse_config(raw, **kw)


# serialization

def fmt(x):
    """17-significant-digit float text that parses back to the same double."""
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite value {x}")
    s = format(x, ".17g")
    if not any(c in s for c in ".en"):
        s += ".0"
    return s


def dumps(obj, indent=0):
    """Deterministic JSON text: keys keep insertion order, floats use ``fmt``."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_json_str(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return fmt(obj)
    return _json_str(str(obj))


def _json_str(s):
    return json.dumps(s, ensure_ascii=False)


def write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def effective_document(mesh, co, checks):
    return {
        "dim": mesh.dim,
        "A_eff_index_order": "row-major a[i][j][k][l]",
        "A_eff": co.A_eff.ravel().tolist(),
        "K_eff": co.K_eff.tolist(),
        "B": co.B.tolist(),
        "Lambda": co.Lambda.tolist(),
        "c_tilde": co.c_tilde,
        "g_tilde": co.g_tilde,
        "f_bar": np.asarray(co.f_bar, float).tolist(),
        "vol_fracs": [float(v) for v in co.vol_fracs],
        "mesh": {"res": mesh.res, "inclusion_voxels": mesh.n_inclusion_voxels,
                 "interface_faces": mesh.n_faces, "interface_area": mesh.interface_area,
                 "max_corrector_residual": float(co.run_info["max_corrector_residual"])},
        "checks": {r.name: bool(r.passed) for r in sorted(checks, key=lambda r: r.name)},
    }


def kernel_csv(kt):
    d = kt.dim
    head = (["t", "eta"] + [f"theta_{i + 1}" for i in range(d)] + ["m", "cum_eta"]
            + [f"cum_theta_{i + 1}" for i in range(d)] + ["cum_m"])
    cols = np.column_stack([kt.times, kt.eta, kt.theta, kt.m, kt.cum_eta, kt.cum_theta,
                            kt.cum_m])
    lines = [",".join(head)] + [",".join(fmt(v) for v in row) for row in cols]
    return "\n".join(lines) + "\n"


def read_csv(path):
    """Header and float table of a CSV written by this module."""
    with open(path, encoding="utf-8") as fh:
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    return rows[0], np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(rows[0]))


def svg_plot(t, series, title, width=640, height=400):
    """Line plot as plain SVG polylines; ``series`` maps label -> values."""
    margin = 50
    colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]
    t = np.asarray(t, float)
    t_span = (t.max() - t.min()) or 1.0
    allv = np.concatenate([np.asarray(v, float) for v in series.values()])
    lo, hi = float(allv.min()), float(allv.max())
    span = (hi - lo) or 1.0
    pw, ph = width - 2 * margin, height - 2 * margin

    def xy(tv, v):
        return (margin + (tv - t.min()) / t_span * pw, height - margin - (v - lo) / span * ph)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<polyline fill="none" stroke="black" points="{margin},{margin} {margin},'
           f'{height - margin} {width - margin},{height - margin}"/>',
           f'<text x="{margin}" y="{height - margin + 18}" font-size="11">{fmt(t.min())}</text>',
           f'<text x="{width - margin}" y="{height - margin + 18}" font-size="11" '
           f'text-anchor="end">t = {fmt(t.max())}</text>',
           f'<text x="{margin - 4}" y="{height - margin}" font-size="11" '
           f'text-anchor="end">{lo:.3g}</text>',
           f'<text x="{margin - 4}" y="{margin + 4}" font-size="11" '
           f'text-anchor="end">{hi:.3g}</text>']
    for k, (label, vals) in enumerate(series.items()):
        pts = " ".join(f"{x:.3f},{y:.3f}" for x, y in (xy(a, b) for a, b in zip(t, vals)))
        color = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - margin - 4}" y="{margin + 16 * (k + 1)}" font-size="12" '
                   f'text-anchor="end" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def vtk_structured_points(domain, fields, title):
    """Legacy ASCII VTK; ``fields`` maps name -> (n_nodes,) scalars or (n_nodes, d) vectors."""
    shape = domain.node_shape
    dims = list(shape) + [1] * (3 - domain.dim)
    spacing = list(domain.h) + [1.0] * (3 - domain.dim)
    lines = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET STRUCTURED_POINTS",
             "DIMENSIONS " + " ".join(str(v) for v in dims),
             "ORIGIN 0 0 0", "SPACING " + " ".join(fmt(v) for v in spacing),
             f"POINT_DATA {domain.n_nodes}"]
    for name, values in fields.items():
        values = np.asarray(values, float)
        # node ids are C-ordered (last axis fastest); VTK wants x fastest
        if values.ndim == 1:
            ordered = values.reshape(shape).transpose().ravel()
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [fmt(v) for v in ordered]
        else:
            padded = np.zeros((len(values), 3))
            padded[:, :domain.dim] = values
            ordered = padded.reshape(shape + (3,)).transpose(
                tuple(reversed(range(domain.dim))) + (domain.dim,)).reshape(-1, 3)
            lines.append(f"VECTORS {name} double")
            lines += [" ".join(fmt(v) for v in row) for row in ordered]
    return "\n".join(lines) + "\n"


def read_vtk(path):
    """Minimal reader for files written by ``vtk_structured_points``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if lines[0] != "# vtk DataFile Version 3.0" or lines[2] != "ASCII":
        raise ValueError("not a legacy ASCII VTK file")
    if lines[3] != "DATASET STRUCTURED_POINTS":
        raise ValueError("not a STRUCTURED_POINTS dataset")
    header = {}
    i = 4
    while not lines[i].startswith("POINT_DATA"):
        key, *vals = lines[i].split()
        header[key] = [float(v) for v in vals]
        i += 1
    n = int(lines[i].split()[1])
    i += 1
    fields = {}
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] == "SCALARS":
            fields[parts[1]] = np.array([float(v) for v in lines[i + 2:i + 2 + n]])
            i += 2 + n
        elif parts[0] == "VECTORS":
            fields[parts[1]] = np.array([[float(v) for v in ln.split()]
                                         for ln in lines[i + 1:i + 1 + n]])
            i += 1 + n
        else:
            raise ValueError(f"unexpected VTK line {lines[i]!r}")
    return header, fields


# commands

def _cell(cfg, tol=1e-12):
    mesh = build_unit_cell(cfg.dim, cfg.cell_res, cfg.inclusion, cfg.center)
    return mesh, homogenize(mesh, cfg.materials, f1=cfg.f1, f2=cfg.f2, dt=cfg.dt,
                            steps=cfg.steps, tol=tol)


def cmd_cell(cfg, negative_control=False):
    mesh, cs = _cell(cfg)
    coeffs = corrupt_coefficients(cs.coefficients) if negative_control else cs.coefficients
    checks = check_tensor_laws(coeffs, cfg.materials)
    doc = effective_document(mesh, coeffs, checks)
    write_text(cfg.out_dir / "effective.json", dumps(doc) + "\n")
    failed = [r.name for r in checks if not r.passed]
    for name in failed:
        log.error("check failed: %s", name)
    return EXIT_CHECK if failed else EXIT_OK


def cmd_kernels(cfg, negative_control=False):
    _, cs = _cell(cfg)
    kt = cs.kernels
    write_text(cfg.out_dir / "kernels.csv", kernel_csv(kt))
    write_text(cfg.out_dir / "kernels.svg",
               svg_plot(kt.times, {"eta": kt.eta, "m": kt.m}, "memory kernel increments"))
    return EXIT_OK


def macro_series(domain, coeffs, hist, exact=None):
    asm = MacroAssembly(domain, coeffs)
    head = ["t", "p1_l2", "p1_max", "u_l2", "P_l2"]
    rows = []
    for n, t in enumerate(hist.times):
        rows.append([t, asm.l2_norm(hist.p1[n]), float(np.abs(hist.p1[n]).max()),
                     asm.l2_norm(hist.u[n]), asm.l2_norm(hist.P[n])])
    if exact is not None:
        head += ["p1_error_l2", "u_error_l2"]
        for n, row in enumerate(rows):
            p_ex, u_ex = exact(hist.times[n])
            row += [asm.l2_norm(hist.p1[n] - p_ex), asm.l2_norm(hist.u[n] - u_ex)]
    lines = [",".join(head)] + [",".join(fmt(v) for v in r) for r in rows]
    return "\n".join(lines) + "\n"


def cmd_macro(cfg, negative_control=False):
    if cfg.domain is None:
        raise ConfigError("missing required section [macro]")
    mesh, cs = _cell(cfg)
    exact = None
    if cfg.manufactured:
        res = cfg.domain.res
        if len(set(res)) != 1:
            raise ConfigError("manufactured runs need equal 'macro.res' entries")
        T = cfg.dt * cfg.steps
        _, hist = spatial_case(cs.coefficients, cs.kernels, cfg.domain.extent, res[0], T,
                            cfg.steps, mode=cfg.mode, cell_mesh=mesh, materials=cfg.materials,
                            return_history=True)
        coeffs = cs.coefficients.replace(f_bar=np.zeros(cfg.dim))
        b = bubble(cfg.domain.node_coords(), cfg.domain.extent)[0]
        a = direction(cfg.dim)

        def exact(t):
            return t * b, t * np.outer(b, a)
    else:
        coeffs = cs.coefficients
        mc = MacroConfig(cfg.domain, coeffs, cs.kernels, cfg.dt, cfg.steps, mode=cfg.mode)
        hist = run_macro(mc, mesh, cfg.materials)
    write_text(cfg.out_dir / "series.csv", macro_series(cfg.domain, coeffs, hist, exact))
    for n in cfg.vtk_steps:
        text = vtk_structured_points(cfg.domain, {"p1": hist.p1[n], "u": hist.u[n],
                                                  "P": hist.P[n]},
                                     f"biot-homog macro step {n} t={fmt(hist.times[n])}")
        write_text(cfg.out_dir / f"step_{n}.vtk", text)
    return EXIT_OK


def cmd_verify(cfg, negative_control=False):
    if cfg.domain is None:
        raise ConfigError("missing required section [macro]")
    mesh = build_unit_cell(cfg.dim, cfg.cell_res, cfg.inclusion, cfg.center)
    suite = run_suite(mesh, cfg.materials, cfg.domain, cfg.dt, cfg.steps, f1=cfg.f1, f2=cfg.f2,
                      negative_control=negative_control)
    doc = {"passed": suite.passed, "negative_control": bool(negative_control),
           "checks": [r.to_dict() for r in suite.reports]}
    write_text(cfg.out_dir / "report.json", dumps(doc) + "\n")
    for r in suite.reports:
        log.info("%-40s %s", r.name, "pass" if r.passed else "FAIL")
        if not r.passed:
            log.error("check failed: %s measured=%r tolerance=%r", r.name, r.measured,
                      r.tolerance)
    return EXIT_OK if suite.passed else EXIT_CHECK


COMMANDS = {"cell": cmd_cell, "kernels": cmd_kernels, "macro": cmd_macro, "verify": cmd_verify}


def build_parser():
    p = argparse.ArgumentParser(prog="biot-homog",
                                description="Double-porosity poroelastic homogenization")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--out", help="output directory (overrides output.dir)")
    p.add_argument("--mode", choices=["kernel", "micro"], help="macro coupling mode")
    p.add_argument("--negative-control", action="store_true",
                   help="plant a corrupted A_eff entry; checks must then fail")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, need_macro=args.command in ("macro", "verify"),
                          out_override=args.out,
                          mode_override=None if args.mode is None else MODES[args.mode])
        return COMMANDS[args.command](cfg, negative_control=args.negative_control)
    except (ConfigError, GeometryError, MaterialError, MacroConfigError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
