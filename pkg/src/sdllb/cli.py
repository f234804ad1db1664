"""Command line: ``sdllb run | convergence | krate | mesh``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, SimConfig, load_config
from .fem import FieldVec
from .mesh import Mesh, mesh_size, unit_disk_mesh, unit_square_mesh
from .rates import RateTable, h_rate_study, k_rate_study
from .stepper import StepError, TraceRow, run, run_report
from .vtk import write_vtk

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4

log = logging.getLogger("sdllb")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, int):
        return str(v)
    return "%.17g" % v


def write_trace(trace: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(TraceRow.COLUMNS)
        for row in trace:
            w.writerow([_fmt(getattr(row, c)) for c in TraceRow.COLUMNS])


def write_rates(table: RateTable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(table.columns())
        for row in table.rows():
            w.writerow(["" if isinstance(v, float) and math.isnan(v) else _fmt(v) for v in row.values()])


def format_table(table: RateTable) -> str:
    cols = table.columns()
    rows = [[("-" if isinstance(v, float) and math.isnan(v) else f"{v:.4g}") for v in r.values()] for r in table.rows()]
    widths = [max(len(c), *(len(r[i]) for r in rows)) for i, c in enumerate(cols)]
    out = ["  ".join(c.rjust(wd) for c, wd in zip(cols, widths))]
    out += ["  ".join(v.rjust(wd) for v, wd in zip(r, widths)) for r in rows]
    return "\n".join(out)


def _mesh_mapping(config: SimConfig) -> dict:
    if config.domain == "square":
        return {"domain": "square", "subdivisions": config.subdivisions, "one_over_h": config.subdivisions}
    return {"domain": "disk", "level": config.level, "mesh": "hexagon fan refined level times"}


class Manifest:
    """Written on every exit path."""

    def __init__(self, outdir: Path, command: str, config: SimConfig | None):
        self.path = outdir / "manifest.json"
        self.start = time.time()
        self.data = {
            "command": command,
            "version": __version__,
            "python": platform.python_version(),
            "config": config.to_dict() if config is not None else None,
            "mesh_mapping": _mesh_mapping(config) if config is not None else None,
            "outputs": [],
            "status": "running",
        }

    def finish(self, status: str, **extra) -> None:
        self.data.update(extra)
        self.data["status"] = status
        self.data["wall_time_s"] = time.time() - self.start
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")


def cmd_run(config: SimConfig, outdir, manifest: Manifest | None = None) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = manifest or Manifest(outdir, "run", config)
    try:
        result = run(config)
    except StepError as err:
        manifest.finish("solver_failure", error=str(err), step=err.step, residual=err.residual)
        raise
    outputs = {"trace": str(outdir / "trace.csv"), "snapshots": []}
    write_trace(result.trace, outdir / "trace.csv")
    mesh = result.space.mesh
    for n, state in sorted(result.snapshots.items()):
        p = outdir / f"snapshot_{n:06d}.vtk"
        write_vtk(mesh, {"m": state.m, "s": state.s}, p, title=f"sdllb n={n} t={state.t:.17g}")
        outputs["snapshots"].append(str(p))
    rep = run_report(config, result)
    manifest.finish("ok", outputs=outputs, steps=config.num_steps, decay_report=rep.lines())
    return outputs


def cmd_convergence(config: SimConfig, levels: int, outdir) -> RateTable:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(outdir, "convergence", config)
    try:
        table = h_rate_study(config, levels, keep_traces=False)
    except StepError as err:
        manifest.finish("solver_failure", error=str(err), step=err.step, residual=err.residual)
        raise
    write_rates(table, outdir / "rates.csv")
    manifest.finish("ok", outputs={"rates": str(outdir / "rates.csv")}, levels=levels)
    return table


def cmd_krate(config: SimConfig, ks: list[float], outdir) -> RateTable:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(outdir, "krate", config)
    try:
        table = k_rate_study(config, ks, keep_traces=False)
    except StepError as err:
        manifest.finish("solver_failure", error=str(err), step=err.step, residual=err.residual)
        raise
    write_rates(table, outdir / "rates.csv")
    manifest.finish("ok", outputs={"rates": str(outdir / "rates.csv")}, ks=ks)
    return table


def cmd_mesh(domain: str, level: int, path) -> Mesh:
    mesh = unit_square_mesh(8 * 2**level) if domain == "square" else unit_disk_mesh(level)
    write_vtk(mesh, {}, path, title=f"sdllb {domain} mesh level {level} h={mesh_size(mesh):.6g}")
    return mesh


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sdllb", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="time-step one configuration")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)

    c = sub.add_parser("convergence", help="extrapolated spatial rates")
    c.add_argument("--config", required=True)
    c.add_argument("--levels", type=int, default=3)
    c.add_argument("--out", required=True)

    k = sub.add_parser("krate", help="temporal self-convergence")
    k.add_argument("--config", required=True)
    k.add_argument("--ks", required=True, help="comma-separated, strictly decreasing; the last is the reference")
    k.add_argument("--out", required=True)

    m = sub.add_parser("mesh", help="write a mesh as legacy VTK")
    m.add_argument("--domain", choices=("square", "disk"), required=True)
    m.add_argument("--level", type=int, default=0)
    m.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    config = None
    try:
        if args.command == "mesh":
            cmd_mesh(args.domain, args.level, args.out)
            return EXIT_OK
        config = load_config(args.config)
        if args.command == "run":
            cmd_run(config, args.out)
        elif args.command == "convergence":
            print(format_table(cmd_convergence(config, args.levels, args.out)))
        else:
            ks = [float(v) for v in args.ks.split(",") if v.strip()]
            print(format_table(cmd_krate(config, ks, args.out)))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        if args.command != "mesh" and hasattr(args, "out"):
            try:
                Path(args.out).mkdir(parents=True, exist_ok=True)
                Manifest(Path(args.out), args.command, None).finish("config_error", error=str(err))
            except OSError:
                pass
        return EXIT_CONFIG
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except StepError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
