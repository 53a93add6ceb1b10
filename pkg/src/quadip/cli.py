"""Command line entry point: ``quadip {mesh,solve,converge,rates}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import harness
from .assembly import method_config
from .errors import QuadipError
from .mesh import (
    DistortionSpec,
    all_dirichlet,
    classify_boundary,
    distort,
    mesh_size,
    read_mesh,
    unit_square_mesh,
    write_mesh,
)
from .model import make_problem
from .postprocess import displacement_error, stress_error, write_field

log = logging.getLogger("quadip")

_RULES = {
    "all": all_dirichlet,
    "left": lambda p: abs(p[0]) < 1e-12,
}


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_mesh_gen(args) -> int:
    mesh = classify_boundary(unit_square_mesh(args.levels), _RULES[args.dirichlet])
    if args.df > 0.0:
        mesh = distort(mesh, DistortionSpec(args.df, args.seed, args.move_boundary))
    _write_or_print(write_mesh(mesh), args.output)
    return 0


def cmd_mesh_distort(args) -> int:
    mesh = read_mesh(Path(args.input).read_text())
    mesh = distort(mesh, DistortionSpec(args.df, args.seed, args.move_boundary))
    _write_or_print(write_mesh(mesh), args.output)
    return 0


def cmd_mesh_info(args) -> int:
    text = Path(args.input).read_text() if args.input != "-" else sys.stdin.read()
    mesh = read_mesh(text)
    print(f"vertices   {mesh.n_vertices}")
    print(f"cells      {mesh.n_cells}")
    print(f"edges      {mesh.n_edges} (interior {len(mesh.interior_edges)}, "
          f"dirichlet {len(mesh.dirichlet_edges)}, neumann {len(mesh.neumann_edges)})")
    print(f"h          {mesh_size(mesh)!r}")
    return 0


def cmd_solve(args) -> int:
    options = {}
    if args.beam_profile:
        options["beam_profile"] = args.beam_profile
    if args.plate_reference:
        options["reference"] = args.plate_reference
    problem = make_problem(args.problem, args.nu, **options)
    config = method_config(args.method, args.k_mu, args.k_lambda)
    if args.mesh:
        mesh = read_mesh(Path(args.mesh).read_text())
    else:
        mesh = harness.build_mesh(args.problem, args.level, args.df, args.seed,
                                  args.move_boundary, options)
    res = harness.solve_case(problem, mesh, config, args.tolerance)
    log.info("%s: %d dofs, relative residual %.3e", config.method_id, res.ndofs, res.residual)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "mesh.txt").write_text(write_mesh(mesh))
    (out / "displacement.txt").write_text(write_field("displacement", res.field.nodal_average()))
    (out / "stress.txt").write_text(write_field("stress", res.stress.values))
    print(f"method {config.method_id} ndofs {res.ndofs} residual {res.residual:.3e} h {mesh_size(mesh)!r}")
    if problem.has_exact:
        h1, l2 = displacement_error(mesh, res.field, problem)
        s = stress_error(mesh, problem.material, res.stress, problem)
        print(f"disp_h1 {h1!r} disp_l2 {l2!r} stress_l2 {s!r}")
    return 0


def cmd_converge(args) -> int:
    spec = harness.load_spec(args.spec)
    if args.output:
        spec.output_dir = args.output
    records = harness.run_experiment(spec, cache_dir=args.cache_dir, jobs=args.jobs, timing=args.timing)
    text = harness.records_to_csv(records)
    if spec.output_dir:
        path = harness.write_csv(records, Path(spec.output_dir) / "convergence.csv")
        print(f"wrote {len(records)} rows to {path}")
    else:
        sys.stdout.write(text)
    failed = [r for r in records if not r.ok]
    if failed:
        log.error("%d of %d rows failed", len(failed), len(records))
        return 1
    return 0


def cmd_rates(args) -> int:
    records = harness.read_records(Path(args.csv).read_text())
    rows = harness.rate_table(records, args.key)
    print(f"{'method':<12}{'nu':>10}{'df':>6}{'level':>7}{'h':>12}{args.key:>14}{'rate':>8}")
    for r in rows:
        rate = "" if r["rate"] is None else f"{r['rate']:.3f}"
        print(f"{r['method']:<12}{r['nu']:>10g}{r['df']:>6g}{r['level']:>7d}{r['h']:>12.4e}"
              f"{r[args.key]:>14.4e}{rate:>8}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="quadip", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    mesh = sub.add_parser("mesh", help="generate, distort or inspect meshes")
    msub = mesh.add_subparsers(dest="mesh_command", required=True)

    def distortion_flags(q, with_df_default=True):
        q.add_argument("--df", type=float, default=0.0 if with_df_default else None,
                       required=not with_df_default)
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--move-boundary", action="store_true")

    g = msub.add_parser("gen", help="uniform unit-square mesh")
    g.add_argument("--levels", type=int, required=True)
    g.add_argument("--dirichlet", choices=sorted(_RULES), default="all")
    g.add_argument("-o", "--output")
    distortion_flags(g)
    g.set_defaults(func=cmd_mesh_gen)

    d = msub.add_parser("distort", help="randomly distort a mesh file")
    d.add_argument("input")
    d.add_argument("-o", "--output")
    distortion_flags(d, with_df_default=False)
    d.set_defaults(func=cmd_mesh_distort)

    i = msub.add_parser("info", help="summarise a mesh file ('-' for stdin)")
    i.add_argument("input")
    i.set_defaults(func=cmd_mesh_info)

    s = sub.add_parser("solve", help="solve one case and write field files")
    s.add_argument("--problem", default="square_plate")
    s.add_argument("--method", default="NIPG")
    s.add_argument("--nu", type=float, default=0.3)
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--mesh", help="mesh file instead of a generated unit square")
    s.add_argument("--k-mu", type=float)
    s.add_argument("--k-lambda", type=float)
    s.add_argument("--tolerance", type=float, default=harness.DEFAULT_TOLERANCE)
    s.add_argument("--beam-profile", choices=("tent", "ramp"))
    s.add_argument("--plate-reference", choices=("surrogate", "closed_form"),
                   help="square plate only: closed_form reports errors against the exact field")
    s.add_argument("-o", "--output", default="solution")
    distortion_flags(s)
    s.set_defaults(func=cmd_solve)

    c = sub.add_parser("converge", help="run an experiment file")
    c.add_argument("spec")
    c.add_argument("-o", "--output", help="output directory (overrides the file)")
    c.add_argument("--cache-dir", help=f"surrogate cache (default ${harness.CACHE_ENV})")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--timing", action="store_true", help="fill the wall_ms column")
    c.set_defaults(func=cmd_converge)

    r = sub.add_parser("rates", help="rate table from a convergence CSV")
    r.add_argument("csv")
    r.add_argument("--key", default="disp_h1", choices=("disp_h1", "disp_l2", "stress_l2"))
    r.set_defaults(func=cmd_rates)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=max(level, logging.DEBUG), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except QuadipError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
