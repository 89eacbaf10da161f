"""Command-line interface: ``packopt <command> [options]``.

Exit codes: 0 success, 1 usage or input error, 2 solver or metric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("packopt")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for solver failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p, mesh=True):
    if mesh:
        p.add_argument("--mesh", required=True, help="input mesh (MSH 2.2 ASCII)")
    p.add_argument("--config", help="config file (key = value lines)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="packopt", description=__doc__.splitlines()[0])
    ap.add_argument("--print-config", action="store_true",
                    help="print the effective configuration (defaults or --config) and exit")
    ap.add_argument("--config", dest="top_config", help=argparse.SUPPRESS)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="forward solve; writes VTK and metrics JSON")
    _common(p)
    p.add_argument("--out", default=None, help="output directory (default: config output_dir)")

    p = sub.add_parser("optimize", help="adjoint shape optimization")
    _common(p)
    p.add_argument("--out", default=None)

    p = sub.add_parser("gradcheck", help="adjoint vs central finite differences")
    _common(p)
    p.add_argument("--directions", type=int, default=10)
    p.add_argument("--eps", type=float, nargs="+", default=[1e-5, 1e-6, 1e-7],
                   help="steps relative to the mean cell diameter")
    p.add_argument("--tol", type=float, default=1e-2)

    p = sub.add_parser("mesh-quality", help="quality statistics of a mesh")
    p.add_argument("--mesh", required=True)
    p.add_argument("--bins", type=int, default=10)

    p = sub.add_parser("make-case", help="generate the channel-with-obstacles mesh")
    p.add_argument("--out", required=True, help="output MSH path")
    p.add_argument("--obstacles", type=int, default=4)
    p.add_argument("--h", type=float, default=1.0e-4, help="target edge length [m]")
    p.add_argument("--segments", type=int, default=32, help="edges per obstacle circle")
    p.add_argument("--length", type=float, default=8e-3)
    p.add_argument("--height", type=float, default=2e-3)
    p.add_argument("--radius", type=float, default=2.5e-4)
    p.add_argument("--mirror", action="store_true",
                   help="obstacles on the centreline, exactly mirror-symmetric mesh")
    return ap


def _load(args):
    from .config import load_config
    from .io import read_msh

    cfg = load_config(args.config)
    mesh = read_msh(args.mesh) if getattr(args, "mesh", None) else None
    return cfg, mesh


def _outdir(args, cfg) -> Path:
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    from .io import write_metrics, write_vtk
    from .metrics import solve_case

    cfg, mesh = _load(args)
    out = _outdir(args, cfg)
    sol = solve_case(mesh, cfg)
    write_vtk(out / "solution.vtk", mesh, u=sol.flow.u, p=sol.flow.p, c=sol.concentration.values)
    write_metrics(out / "metrics.json", sol.metrics)
    for k, v in sol.metrics.as_dict().items():
        print(f"{k:6s} = {v:.10g}")
    if sol.concentration.overshoot > 0.01:
        log.warning("concentration overshoot %.2f%% of the data range",
                    100 * sol.concentration.overshoot)
    return EXIT_OK


def cmd_optimize(args) -> int:
    from .io import write_history, write_metrics, write_msh, write_vtk
    from .shapeopt import OptimizationError, optimize

    cfg, mesh = _load(args)
    out = _outdir(args, cfg)
    every = cfg.optimizer.vtk_every
    history = []

    def snapshot(rec, fwd):
        history.append(rec)
        write_history(out / "history.csv", history)
        if every > 0 and rec.iteration % every == 0:
            write_vtk(out / f"iter_{rec.iteration:04d}.vtk", fwd.mesh, u=fwd.flow.u,
                      p=fwd.flow.p, c=fwd.concentration.values)

    try:
        res = optimize(mesh, cfg, callback=snapshot)
    except OptimizationError as exc:
        write_msh(out / "last_valid.msh", exc.result.mesh)
        write_history(out / "history.csv", exc.result.history)
        print(f"optimization aborted: {exc}; last valid mesh saved to {out / 'last_valid.msh'}",
              file=sys.stderr)
        return EXIT_SOLVER
    write_history(out / "history.csv", res.history)
    write_msh(out / "optimized.msh", res.mesh)
    fwd = res.forward
    write_vtk(out / "final.vtk", res.mesh, u=fwd.flow.u, p=fwd.flow.p, c=fwd.concentration.values)
    write_metrics(out / "metrics.json", fwd.metrics)
    h0, h1 = res.history[0], res.history[-1]
    print(f"status      {res.status} after {h1.iteration} iterations")
    print(f"beta        {h0.beta:.6e} -> {h1.beta:.6e} ({100 * (h1.beta / h0.beta - 1):+.2f}%)")
    print(f"a_geo       {h0.a_geo:.6e} -> {h1.a_geo:.6e} ({100 * (h1.a_geo / h0.a_geo - 1):+.2f}%)")
    print(f"dp          {h0.dp:.6e} -> {h1.dp:.6e} ({100 * (h1.dp / h0.dp - 1):+.2f}%)")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .shapeopt import gradcheck

    cfg, mesh = _load(args)
    if args.directions < 1:
        raise UsageError("--directions must be >= 1")
    rows = gradcheck(mesh, cfg, args.directions, tuple(args.eps), seed=cfg.seed)
    print(f"{'dir':>3} {'eps':>8} {'finite diff':>22} {'adjoint':>22} {'rel err':>10}")
    for r in rows:
        print(f"{r.direction:3d} {r.eps:8.1e} {r.fd:22.14e} {r.adjoint:22.14e} {r.rel_error:10.2e}")
    worst = max(r.rel_error for r in rows)
    print(f"worst relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_SOLVER


def cmd_mesh_quality(args) -> int:
    from .io import read_msh
    from .mesh import cell_qualities

    mesh = read_msh(args.mesh)
    q = cell_qualities(mesh)
    print(f"cells {mesh.num_cells}  vertices {mesh.num_vertices}  dim {mesh.dim}")
    print(f"quality min {q.min():.4f}  mean {q.mean():.4f}  max {q.max():.4f}")
    counts, edges = np.histogram(q, bins=args.bins, range=(0.0, 1.0))
    width = max(1, int(counts.max()))
    for c, a, b in zip(counts, edges[:-1], edges[1:]):
        print(f"[{a:.2f}, {b:.2f})  {c:8d}  " + "#" * int(round(40 * c / width)))
    return EXIT_OK


def cmd_make_case(args) -> int:
    from .cases import default_layout, make_case
    from .io import write_msh

    if args.mirror:
        L, H = args.length, args.height
        n = args.obstacles
        xs = np.linspace(0.3 * L, 0.65 * L, n) if n > 1 else [0.4 * L] * n
        centers, radii = [(float(x), H / 2) for x in xs], [args.radius] * n
    else:
        centers, radii = default_layout(args.obstacles, args.length, args.height, args.radius)
    try:
        mesh = make_case(length=args.length, height=args.height, centers=centers, radii=radii,
                         h=args.h, segments=args.segments, mirror=args.mirror)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    write_msh(args.out, mesh)
    print(f"wrote {args.out}: {mesh.num_cells} cells, {mesh.num_vertices} vertices")
    return EXIT_OK


_COMMANDS = {
    "simulate": cmd_simulate,
    "optimize": cmd_optimize,
    "gradcheck": cmd_gradcheck,
    "mesh-quality": cmd_mesh_quality,
    "make-case": cmd_make_case,
}


def main(argv=None) -> int:
    from .config import ConfigError, dump_config, load_config
    from .fem import SolverError
    from .io import MshFormatError
    from .mesh import MeshError
    from .metrics import MetricError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.print_config:
            cfg_path = args.top_config or getattr(args, "config", None)
            sys.stdout.write(dump_config(load_config(cfg_path)))
            return EXIT_OK
        if not args.command:
            raise UsageError("a command is required")
        logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, MshFormatError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"packopt: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, MetricError, MeshError, FloatingPointError) as exc:
        print(f"packopt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
