"""Command line front end.

Exit codes: 0 success, 1 benchmark check failed, 2 configuration error,
3 solver failure, 4 input/output error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
import time
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, parse_config
from .mesh import MeshError, quality_report, save_mesh
from .solver import SolverError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4
OUTPUT_ROOT_ENV = "LOGCONF_OUTPUT_ROOT"

log = logging.getLogger("logconf")


def write_atomic(path: Path, text: str) -> None:
    """Write through a temporary file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_dir(directory: str) -> Path:
    p = Path(directory)
    if not p.is_absolute():
        p = Path(os.environ.get(OUTPUT_ROOT_ENV, ".")) / p
    return p


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror}") from None
    cfg = parse_config(text)
    kind = cfg.geometry
    if kind.startswith("file:"):
        mesh_path = Path(kind[len("file:"):])
        if not mesh_path.is_absolute():
            mesh_path = Path(path).parent / mesh_path
        if not mesh_path.exists():
            raise ConfigError("geometry.kind", f"mesh file {mesh_path} not found")
        cfg.values["geometry.kind"] = f"file:{mesh_path}"
    return cfg


def write_run_artifacts(out: Path, cfg: RunConfig, outcome, *, vtk: bool = True) -> list[str]:
    from .cases import field_export
    from .runs import state_of

    written = []

    def put(name, text):
        write_atomic(out / name, text)
        written.append(name)

    put("manifest.ini", cfg.to_text())
    put("mesh.txt", save_mesh(outcome.disc.mesh))
    put("run.csv", outcome.csv_text())
    if vtk:
        st = state_of(outcome.disc, outcome.u, outcome.We, outcome.t)
        vtk_text, csv_text = field_export(outcome.disc, st)
        put("final.vtk", vtk_text)
        put("final_fields.csv", csv_text)
    return written


def cmd_run(args) -> int:
    from .runs import execute

    cfg = load_config(args.config)
    out = output_dir(args.output or cfg["output.directory"])
    t0 = time.perf_counter()
    outcome = execute(cfg)
    write_run_artifacts(out, cfg, outcome, vtk=cfg["output.vtk"])
    log.info("run finished in %.1f s; artifacts in %s", time.perf_counter() - t0, out)
    print(out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    import csv
    import io

    from .runs import execute

    cfg = load_config(args.config)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values", "no values given")
    cfgs = [cfg.with_value(args.param, v) for v in values]
    out = output_dir(args.output or cfg["output.directory"])
    # warm starts need an unchanged mesh and unchanged boundary data
    warm = not args.cold and not (args.param.startswith("geometry.")
                                  or args.param in ("model.kind", "model.a_max_sq"))
    rows = []
    prev = None
    for raw, c in zip(values, cfgs):
        outcome = execute(c, u0=prev.u if (warm and prev is not None) else None,
                          case=prev.case if (warm and prev is not None) else None,
                          disc=prev.disc if (warm and prev is not None) else None)
        write_run_artifacts(out / f"{args.param}={raw}", c, outcome, vtk=c["output.vtk"])
        for r in outcome.rows:
            rows.append({args.param: raw, **r})
        prev = outcome
    fields = []
    for r in rows:
        for k in r:
            if k not in fields:
                fields.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    write_atomic(out / "sweep.csv", buf.getvalue())
    print(out / "sweep.csv")
    return EXIT_OK


def cmd_mesh(args) -> int:
    from .runs import build_case

    cfg = load_config(args.config)
    out = output_dir(args.output or cfg["output.directory"])
    case = build_case(cfg)
    write_atomic(out / "mesh.txt", save_mesh(case.mesh))
    write_atomic(out / "mesh_quality.json", json.dumps(quality_report(case.mesh), indent=2) + "\n")
    print(out / "mesh.txt")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import BENCHMARKS, run_benchmark

    if args.name not in BENCHMARKS:
        raise ConfigError("bench", f"unknown benchmark {args.name!r}")
    out = output_dir(args.output or f"bench-{args.name}-L{args.level}")
    report = run_benchmark(args.name, args.level, out)
    write_atomic(out / "report.json", json.dumps(report, indent=2) + "\n")
    for c in report["checks"]:
        print(f"{c['id']:>4} {c['status'].upper():4} {c['name']}: {c['detail']}")
    print(out / "report.json")
    return EXIT_OK if report["passed"] else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logconf", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configured case")
    r.add_argument("config")
    r.add_argument("-o", "--output", help="output directory (overrides output.directory)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("bench", help="run a benchmark preset and write a pass/fail report")
    b.add_argument("name", help="cylinder, crossslot or trislot")
    b.add_argument("--level", type=int, choices=(0, 1, 2), default=0)
    b.add_argument("-o", "--output")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="repeat a run over values of one key")
    s.add_argument("config")
    s.add_argument("--param", required=True, help="section.key to vary")
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--cold", action="store_true", help="do not warm-start from the previous value")
    s.add_argument("-o", "--output")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("mesh", help="generate the mesh of a configuration")
    m.add_argument("config")
    m.add_argument("-o", "--output")
    m.set_defaults(func=cmd_mesh)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MeshError as exc:
        print(f"config error: geometry.kind: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure in stage '{exc.stage or 'solve'}': {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
