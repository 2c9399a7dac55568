"""Run configuration, mesh files, CSV output and the command line interface.

Configuration files are flat ``[section]`` blocks of ``key = value`` lines;
``#`` starts a comment.  List values are comma separated.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .eigensolver import EigenSolverError
from .materials import Material, MaterialTable
from .mesh import DIRICHLET, Mesh, generate_unit_square, tag_code

STUDIES = ("solve", "sweep", "uniform", "adapt", "robust")
BACKENDS = ("auto", "dense", "shift_invert")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based line number when known."""

    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


class MeshFormatError(ValueError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line else msg)


# --- configuration ----------------------------------------------------------

def _floats(s):
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s):
    out = []
    for x in s.split(","):
        if not x.strip():
            continue
        v = float(x)
        if v != int(v):
            raise ValueError(f"{x.strip()!r} is not an integer")
        out.append(int(v))
    return tuple(out)


def _int(s):
    v = _ints(s)
    if len(v) != 1:
        raise ValueError("expected one integer")
    return v[0]


def _opt_float(s):
    return None if s.strip().lower() in ("", "none") else float(s)


def _str(s):
    return s.strip()


# (section, key) -> (field name, parser)
_SCHEMA = {
    ("problem", "mesh"): ("mesh", _str),
    ("problem", "n"): ("n", _int),
    ("problem", "boundary"): ("boundary", _str),
    ("problem", "split"): ("split", _str),
    ("materials", "nu"): ("nu", float),
    ("materials", "ids"): ("material_ids", _ints),
    ("materials", "E"): ("E", _floats),
    ("materials", "rho"): ("rho", _floats),
    ("discretization", "k"): ("k", _ints),
    ("discretization", "epsilon"): ("epsilon", _int),
    ("discretization", "a"): ("a", _floats),
    ("solver", "backend"): ("backend", _str),
    ("solver", "shift"): ("shift", _opt_float),
    ("solver", "tol"): ("tol", float),
    ("solver", "m"): ("m", _int),
    ("solver", "seed"): ("seed", _int),
    ("study", "type"): ("study", _str),
    ("study", "iterations"): ("iterations", _int),
    ("study", "theta"): ("theta", float),
    ("study", "mode"): ("mode", _int),
    ("study", "ns"): ("ns", _ints),
    ("study", "Es"): ("Es", _floats),
    ("study", "quantity"): ("quantity", _str),
    ("study", "reference"): ("reference", _floats),
    ("study", "rel_tol"): ("rel_tol", float),
    ("output", "dir"): ("output_dir", _str),
}
_REQUIRED = ("nu", "E")


@dataclass
class RunConfig:
    nu: float
    E: tuple
    mesh: str = "unit_square"
    n: int = 8
    boundary: str = "bottom"
    split: str = ""
    material_ids: tuple = (0,)
    rho: tuple = ()
    k: tuple = (1,)
    epsilon: int = 1
    a: tuple = (10.0,)
    backend: str = "auto"
    shift: float | None = None
    tol: float = 1e-8
    m: int = 10
    seed: int = 0
    study: str = "solve"
    iterations: int = 15
    theta: float = 0.5
    mode: int = 0
    ns: tuple = ()
    Es: tuple = ()
    quantity: str = "frequency"
    reference: tuple = ()
    rel_tol: float = 0.02
    output_dir: str = "out"
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    def materials(self) -> MaterialTable:
        rho = self.rho or (1.0,) * len(self.E)
        return MaterialTable(self.nu, {i: Material(e, r) for i, e, r
                                       in zip(self.material_ids, self.E, rho)})

    def split_spec(self):
        if not self.split:
            return None
        axis, pos, lo, hi = self.split.replace(",", " ").split()
        return axis, float(pos), (int(lo), int(hi))

    def build_mesh(self) -> Mesh:
        if self.mesh == "unit_square":
            return generate_unit_square(self.n, self.boundary, split=self.split_spec())
        return read_mesh(Path(self.mesh).read_text())


def _fail(cfg_lines, name, msg):
    raise ConfigError(msg, cfg_lines.get(name))


def _validate(cfg: RunConfig) -> RunConfig:
    L = cfg.lines
    if not 0 < cfg.nu <= 0.5:
        _fail(L, "nu", f"nu={cfg.nu} outside (0, 0.5]")
    if len(cfg.material_ids) != len(cfg.E):
        _fail(L, "E", f"{len(cfg.E)} Young moduli for {len(cfg.material_ids)} material ids")
    if cfg.rho and len(cfg.rho) != len(cfg.E):
        _fail(L, "rho", f"{len(cfg.rho)} densities for {len(cfg.E)} materials")
    if any(e <= 0 for e in cfg.E):
        _fail(L, "E", "Young moduli must be positive")
    if any(r <= 0 for r in cfg.rho):
        _fail(L, "rho", "densities must be positive")
    if len(set(cfg.material_ids)) != len(cfg.material_ids):
        _fail(L, "material_ids", "duplicate material ids")
    if not cfg.k or any(k not in (1, 2, 3) for k in cfg.k):
        _fail(L, "k", f"k must be in {{1, 2, 3}}, got {cfg.k}")
    if cfg.epsilon not in (-1, 0, 1):
        _fail(L, "epsilon", f"epsilon must be -1, 0 or 1, got {cfg.epsilon}")
    if not cfg.a or any(a <= 0 for a in cfg.a):
        _fail(L, "a", "stabilization parameters must be positive")
    if cfg.backend not in BACKENDS:
        _fail(L, "backend", f"backend must be one of {BACKENDS}, got {cfg.backend!r}")
    if cfg.study not in STUDIES:
        _fail(L, "study", f"study type must be one of {STUDIES}, got {cfg.study!r}")
    if not 0 < cfg.theta <= 1:
        _fail(L, "theta", f"theta must lie in (0, 1], got {cfg.theta}")
    if cfg.tol <= 0:
        _fail(L, "tol", "tolerance must be positive")
    if cfg.m < 1:
        _fail(L, "m", "m must be at least 1")
    if not 0 <= cfg.mode < cfg.m:
        _fail(L, "mode", f"mode index must lie in 0..m-1 (m={cfg.m})")
    if cfg.iterations < 0:
        _fail(L, "iterations", "iterations must be non-negative")
    if cfg.quantity not in ("frequency", "kappa_hat"):
        _fail(L, "quantity", "quantity must be 'frequency' or 'kappa_hat'")
    if cfg.mesh == "unit_square":
        if cfg.n < 1:
            _fail(L, "n", "n must be positive")
        try:
            generate_unit_square(1, cfg.boundary)
        except ValueError as exc:
            _fail(L, "boundary", str(exc))
        if cfg.split:
            try:
                axis, pos, ids = cfg.split_spec()
            except ValueError:
                _fail(L, "split", "split must read 'axis position id_low id_high'")
            if axis not in ("x", "y") or not 0 < pos < 1:
                _fail(L, "split", f"bad split {cfg.split!r}")
            missing = set(ids) - set(cfg.material_ids)
            if missing:
                _fail(L, "split", f"split uses unknown material id(s) {sorted(missing)}")
        elif cfg.material_ids != (0,) and 0 not in cfg.material_ids:
            _fail(L, "material_ids", "a single-material square uses material id 0")
    if cfg.study in ("uniform", "robust") and len(cfg.ns) < (4 if cfg.study == "uniform" else 1):
        _fail(L, "ns", f"study '{cfg.study}' needs mesh levels ns (4 or more for uniform)")
    if cfg.study == "robust" and not cfg.Es:
        _fail(L, "Es", "robust study needs a list of Young moduli Es")
    return cfg


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration text."""
    values, lines = {}, {}
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", no)
            section = line[1:-1].strip()
            if section not in {s for s, _ in _SCHEMA}:
                raise ConfigError(f"unknown section [{section}]", no)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no)
        if section is None:
            raise ConfigError("key outside of any [section]", no)
        key, val = (x.strip() for x in line.split("=", 1))
        if (section, key) not in _SCHEMA:
            raise ConfigError(f"unknown key {key!r} in [{section}]", no)
        name, conv = _SCHEMA[(section, key)]
        if name in values:
            raise ConfigError(f"duplicate key {key!r}", no)
        try:
            values[name] = conv(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {val!r} ({exc})", no) from None
        lines[name] = no
    for name in _REQUIRED:
        if name not in values:
            key = next(k for (s, k), (f, _) in _SCHEMA.items() if f == name)
            raise ConfigError(f"missing required key {key!r}")
    return _validate(RunConfig(**values, lines=lines))


def _fmt(v):
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    if v is None:
        return "none"
    return str(v)


def dump_config(cfg: RunConfig) -> str:
    """Serialize every field; ``parse_config(dump_config(c)) == c``."""
    out, current = [], None
    for (section, key), (name, _) in _SCHEMA.items():
        if section != current:
            if current is not None:
                out.append("")
            out.append(f"[{section}]")
            current = section
        out.append(f"{key} = {_fmt(getattr(cfg, name))}")
    return "\n".join(out) + "\n"


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


# --- mesh files -------------------------------------------------------------

def write_mesh(mesh: Mesh) -> str:
    """Serialize a mesh; vertex coordinates use 17 significant digits."""
    buf = io.StringIO()
    buf.write(f"ndim=2 nv={mesh.n_vertices} nt={mesh.n_elements} "
              f"nf={len(mesh.boundary_edges)}\n")
    for x, y in mesh.vertices:
        buf.write(f"{x:.17g} {y:.17g}\n")
    for t, m in zip(mesh.triangles, mesh.materials):
        buf.write(f"{t[0]} {t[1]} {t[2]} {m}\n")
    for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        buf.write(f"{e[0]} {e[1]} {'D' if tag == DIRICHLET else 'N'}\n")
    return buf.getvalue()


def read_mesh(text: str) -> Mesh:
    """Parse :func:`write_mesh` output, reporting problems with line numbers."""
    lines = [(i, ln.strip()) for i, ln in enumerate(text.splitlines(), start=1) if ln.strip()]
    if not lines:
        raise MeshFormatError("empty mesh file", 1)
    no, head = lines[0]
    try:
        hdr = dict(tok.split("=") for tok in head.split())
        if hdr.get("ndim") != "2":
            raise MeshFormatError("only ndim=2 is supported", no)
        nv, nt, nf = (int(hdr[k]) for k in ("nv", "nt", "nf"))
    except MeshFormatError:
        raise
    except (ValueError, KeyError):
        raise MeshFormatError(f"malformed header {head!r}", no) from None
    if min(nv, nt, nf) < 0 or len(lines) - 1 != nv + nt + nf:
        raise MeshFormatError(f"header announces {nv}+{nt}+{nf} records, file has "
                              f"{len(lines) - 1}", no)
    body = lines[1:]
    verts = np.empty((nv, 2))
    for r, (no, ln) in enumerate(body[:nv]):
        parts = ln.split()
        if len(parts) != 2:
            raise MeshFormatError("vertex line needs 'x y'", no)
        try:
            verts[r] = [float(p) for p in parts]
        except ValueError:
            raise MeshFormatError(f"bad vertex coordinates {ln!r}", no) from None
    tris = np.empty((nt, 3), dtype=np.int64)
    mats = np.empty(nt, dtype=np.int64)
    for r, (no, ln) in enumerate(body[nv:nv + nt]):
        parts = ln.split()
        try:
            if len(parts) != 4:
                raise ValueError
            tris[r] = [int(p) for p in parts[:3]]
            mats[r] = int(parts[3])
        except ValueError:
            raise MeshFormatError("triangle line needs 'v0 v1 v2 material'", no) from None
        if tris[r].min() < 0 or tris[r].max() >= nv:
            raise MeshFormatError(f"triangle references a vertex outside 0..{nv - 1}", no)
        p = verts[tris[r]]
        d1, d2 = p[1] - p[0], p[2] - p[0]
        if d1[0] * d2[1] - d1[1] * d2[0] <= 0:
            raise MeshFormatError("triangle is clockwise or degenerate", no)
    edges = np.empty((nf, 2), dtype=np.int64)
    tags = np.empty(nf, dtype=np.int64)
    for r, (no, ln) in enumerate(body[nv + nt:]):
        parts = ln.split()
        try:
            if len(parts) != 3:
                raise ValueError
            edges[r] = [int(p) for p in parts[:2]]
            tags[r] = tag_code(parts[2])
        except ValueError:
            raise MeshFormatError("boundary line needs 'v0 v1 D|N'", no) from None
        if edges[r].min() < 0 or edges[r].max() >= nv:
            raise MeshFormatError(f"boundary edge references a vertex outside 0..{nv - 1}", no)
    try:
        return Mesh(verts, tris, mats, edges, tags)
    except ValueError as exc:
        raise MeshFormatError(str(exc)) from None


# --- CSV --------------------------------------------------------------------

def _num(v):
    if v is None:
        return ""
    v = complex(v)
    if v.imag == 0:
        r = v.real
        return "nan" if math.isnan(r) else f"{r:.17g}"
    return f"{v:.17g}"


def csv_header(m: int) -> list[str]:
    return (["iter", "dof", "h_max"] + [f"kappa_hat_{i}" for i in range(1, m + 1)]
            + [f"freq_{i}" for i in range(1, m + 1)] + [f"err_{i}" for i in range(1, m + 1)]
            + ["eta", "eta_sq", "theta_osc", "eff_1", "seconds"])


def emit_csv(records, path, m: int | None = None) -> Path:
    """Write adaptive/uniform records; an empty list gives a header-only file."""
    records = list(records)
    if m is None:
        m = max((len(r.kappa_hat) for r in records), default=1)
    path = Path(path)
    rows = []
    for r in records:
        kh = list(r.kappa_hat)[:m] + [None] * (m - len(r.kappa_hat))
        fr = list(r.frequency)[:m] + [None] * (m - len(r.frequency))
        err = list(r.err if r.err is not None else [])[:m]
        err += [None] * (m - len(err))
        rows.append([str(r.iteration), str(r.dof), _num(r.h_max)] + [_num(x) for x in kh]
                    + [_num(x) for x in fr] + [_num(x) for x in err]
                    + [_num(r.eta), _num(r.eta_sq), _num(r.theta_osc), _num(r.eff),
                       _num(r.seconds)])
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(csv_header(m))
            w.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    return Path(path)


# --- commands ---------------------------------------------------------------

def _solver_kwargs(cfg):
    return dict(backend=cfg.backend, shift=cfg.shift, tol=cfg.tol, seed=cfg.seed)


def run_solve(cfg: RunConfig, out: Path) -> Path:
    from .study import solve_frequencies
    rows = []
    mesh = cfg.build_mesh()
    for k in cfg.k:
        for a in cfg.a:
            f = solve_frequencies(mesh, cfg.materials(), k, a, cfg.m, epsilon=cfg.epsilon,
                                  **_solver_kwargs(cfg))
            for i, fi in enumerate(f, start=1):
                rows.append([k, a, i, _num(fi ** 2), _num(fi)])
    return _write_table(out / "solve.csv", ["k", "a", "i", "kappa_hat", "freq"], rows)


def run_sweep(cfg: RunConfig, out: Path) -> Path:
    from .study import stabilization_sweep
    refs = cfg.reference or None
    cells = stabilization_sweep(cfg.build_mesh(), cfg.materials(), cfg.k, cfg.a, cfg.m,
                                references=refs, rel_tol=cfg.rel_tol, epsilon=cfg.epsilon,
                                **_solver_kwargs(cfg))
    rows = []
    for c in cells:
        if c.error is not None:
            rows.append([c.k, c.a, "", "", "", c.error])
            continue
        for i, f in enumerate(c.frequencies, start=1):
            flag = "" if c.spurious is None else int(c.spurious[i - 1])
            rows.append([c.k, c.a, i, _num(f), flag, ""])
    return _write_table(out / "sweep.csv", ["k", "a", "i", "freq", "spurious", "error"], rows)


def run_uniform(cfg: RunConfig, out: Path) -> Path:
    from .study import uniform_convergence
    rows = []
    for k in cfg.k:
        for a in cfg.a:
            s = uniform_convergence(cfg.materials(), cfg.ns, k=k, a=a, boundary=cfg.boundary,
                                    mode=cfg.mode, quantity=cfg.quantity,
                                    reference=cfg.reference[0] if cfg.reference else None,
                                    m=cfg.mode + 1, **_solver_kwargs(cfg),
                                    split=cfg.split_spec())
            ext = s.extrapolation
            order = s.order if (s.reference is not None or ext is not None) else None
            for h, d, v in zip(s.hs, s.dofs, s.values):
                rows.append([k, a, _num(h), d, _num(v), _num(order),
                             _num(ext.value if ext else None)])
    return _write_table(out / "uniform.csv",
                        ["k", "a", "h", "dof", cfg.quantity, "order", "extrapolated"], rows)


def run_adapt(cfg: RunConfig, out: Path) -> list[Path]:
    from .estimator import adaptive_loop
    paths = []
    for k in cfg.k:
        recs = []
        try:
            adaptive_loop(cfg.build_mesh(), cfg.materials(), k=k, iterations=cfg.iterations,
                          mode=cfg.mode, a=cfg.a[0], epsilon=cfg.epsilon, theta=cfg.theta,
                          m=cfg.m,
                          reference=cfg.reference or None, callback=recs.append,
                          **_solver_kwargs(cfg))
        finally:
            paths.append(emit_csv(recs, out / f"adapt_k{k}.csv"))
    return paths


def run_robust(cfg: RunConfig, out: Path) -> Path:
    from .study import robustness_sweep
    ref = cfg.reference[0] if cfg.reference else None
    rows = []
    for k in cfg.k:
        for r in robustness_sweep(cfg.Es, cfg.nu, ns=cfg.ns, reference_per_E=ref, k=k,
                                  a=cfg.a[0], boundary=cfg.boundary, **_solver_kwargs(cfg)):
            for d, kh, e in zip(r.dofs, r.kappa_hat, r.eff):
                rows.append([k, _num(r.E), _num(r.nu), d, _num(kh), _num(e),
                             _num(r.extrapolated)])
    return _write_table(out / "robust.csv",
                        ["k", "E", "nu", "dof", "kappa_hat", "eff", "extrapolated"], rows)


RUNNERS = {"solve": run_solve, "sweep": run_sweep, "uniform": run_uniform,
           "adapt": run_adapt, "robust": run_robust}

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5


def _parser():
    p = argparse.ArgumentParser(prog="ipdgeig", description="IPDG elasticity eigenvalue solver")
    sub = p.add_subparsers(dest="command", required=True)
    for name in STUDIES:
        s = sub.add_parser(name, help=f"run a '{name}' study from a config file")
        s.add_argument("config", help="configuration file")
        s.add_argument("-o", "--out", help="output directory (overrides [output] dir)")
    m = sub.add_parser("mesh", help="generate or check mesh files")
    msub = m.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", help="structured unit-square mesh")
    g.add_argument("n", type=int)
    g.add_argument("-b", "--boundary", default="D",
                   help="'D', 'N' or a comma separated list of clamped sides")
    g.add_argument("--split", default="", help="'axis position id_low id_high'")
    g.add_argument("-o", "--output", help="output file (default: stdout)")
    c = msub.add_parser("check", help="validate a mesh file and print statistics")
    c.add_argument("file")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "mesh":
            return _mesh_command(args)
        cfg = load_config(args.config)
        if cfg.study != args.command:
            raise ConfigError(f"config declares study type {cfg.study!r}, "
                              f"command is {args.command!r}", cfg.lines.get("study"))
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.cfg").write_text(dump_config(cfg))
        result = RUNNERS[cfg.study](cfg, out)
        for p in (result if isinstance(result, list) else [result]):
            print(p)
        return EXIT_OK
    except (ConfigError, MeshFormatError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EigenSolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _mesh_command(args) -> int:
    if args.mesh_command == "gen":
        split = None
        if args.split:
            axis, pos, lo, hi = args.split.replace(",", " ").split()
            split = (axis, float(pos), (int(lo), int(hi)))
        text = write_mesh(generate_unit_square(args.n, args.boundary, split=split))
        if args.output:
            Path(args.output).write_text(text)
        else:
            sys.stdout.write(text)
        return EXIT_OK
    mesh = read_mesh(Path(args.file).read_text())
    stats = mesh.shape_regularity()
    print(f"vertices {mesh.n_vertices} triangles {mesh.n_elements} facets {mesh.n_facets} "
          f"h_max {mesh.h_max:.6g} min_angle {stats.min_angle:.4g} "
          f"materials {sorted(set(mesh.materials.tolist()))}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
