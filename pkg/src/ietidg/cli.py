"""Batch experiment driver.

Runs a (p, r, s) sweep from a YAML config through the IETI-DP solver and
writes ``results.csv``, ``results.md`` (long table plus an it/kappa pivot)
and ``records.jsonl`` (one JSON record per cell, including residual history).

Exit status: 0 on success, 1 if any cell failed to converge or errored,
2 on configuration errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .assembly import ConfigError
from .config import ExperimentConfig, load_config
from .ietidp import IetiDPSolver
from .multipatch import MultiPatch, Side, edge_eval
from .oracle import solve_direct

log = logging.getLogger("ietidg")

COLUMNS = ["domain", "p", "r", "s", "delta", "rtol", "threads", "dofs", "skeleton",
           "multipliers", "primal", "iterations", "kappa", "converged", "setup_s", "solve_s",
           "oracle_error", "error"]

GEOMETRY_SCHEMA = "ietidg.geometry/1"


def run_cell(mp0: MultiPatch, cfg: ExperimentConfig, p: int, r: int, s: int,
             oracle_cap: int | None = None) -> tuple[dict, dict]:
    """Solve one sweep cell; returns the table row and the full JSON record."""
    row = dict(domain=cfg.domain.kind, p=p, r=r, s=s, delta=cfg.delta, rtol=cfg.rtol,
               threads=cfg.threads, oracle_error="", error="")
    record = {"schema": "ietidg.cell/1", "config": cfg.name, "solve": None}
    try:
        mp = mp0.discretize(p, r, s)
        t0 = time.perf_counter()
        solver = IetiDPSolver(mp, cfg.f, cfg.delta, cfg.threads)
        t1 = time.perf_counter()
        rep = solver.solve(cfg.rtol, cfg.maxit)
        t2 = time.perf_counter()
        row.update(solver.sizes)
        row.pop("patches")
        row.update(iterations=rep.iterations, kappa=rep.kappa, converged=rep.converged,
                   setup_s=round(t1 - t0, 3), solve_s=round(t2 - t1, 3))
        record["solve"] = rep.to_record()
        if oracle_cap is not None and row["dofs"] <= oracle_cap:
            ref, _ = solve_direct(mp, cfg.f, cfg.delta)
            num = math.sqrt(sum(float(np.sum((a - b) ** 2)) for a, b in zip(rep.coefficients, ref)))
            den = math.sqrt(sum(float(np.sum(b ** 2)) for b in ref)) or 1.0
            row["oracle_error"] = num / den
    except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
        log.error("cell p=%d r=%d s=%d failed: %s", p, r, s, exc)
        row.update(converged=False, error=f"{type(exc).__name__}: {exc}")
    record["row"] = row
    return row, record


def run_experiment(cfg: ExperimentConfig, out_dir=None, oracle_cap: int | None = None) -> list[dict]:
    """Run every sweep cell in order and write the result files; returns the rows."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = cfg.cells()
    mp0 = cfg.domain.build() if cells else None
    rows = []
    with open(out / "records.jsonl", "w") as jf:
        for p, r, s in cells:
            row, record = run_cell(mp0, cfg, p, r, s, oracle_cap)
            log.info("p=%d r=%d s=%d it=%s kappa=%s", p, r, s, row.get("iterations"),
                     row.get("kappa"))
            rows.append(row)
            jf.write(json.dumps(record, default=float) + "\n")
    write_csv(rows, out / "results.csv")
    (out / "results.md").write_text(markdown_tables(rows, cfg))
    return rows


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in COLUMNS})


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.4g}"
    return str(v)


def _aligned(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h)
              for i, h in enumerate(header)]
    line = lambda cells: "| " + " | ".join(c.rjust(w) for c, w in zip(cells, widths)) + " |"
    sep = "|" + "|".join("-" * (w + 1) + ":" for w in widths) + "|"
    return "\n".join([line(header), sep] + [line(b) for b in body]) + "\n"


def pivot_table(rows: list[dict], cfg: ExperimentConfig) -> str:
    """``it / kappa`` cells with degrees as columns; rows by r, by s, or by (r, s)."""
    if not rows:
        return ""
    if cfg.s == "p-1":
        key, label = (lambda row: f"{row['r']}"), "r"
    elif len(cfg.r) == 1:
        key, label = (lambda row: f"{row['s']}"), "s"
    else:
        key, label = (lambda row: f"{row['r']}/{row['s']}"), "r/s"
    keys = list(dict.fromkeys(key(row) for row in rows))
    degrees = sorted({row["p"] for row in rows})
    table = {(key(row), row["p"]): row for row in rows}
    body = []
    for k in keys:
        cells = [k]
        for p in degrees:
            row = table.get((k, p))
            if row is None or "iterations" not in row:
                cells.append("" if row is None else "failed")
            else:
                mark = "" if row["converged"] else "*"
                cells.append(f"{row['iterations']}{mark} / {row['kappa']:.2f}")
        body.append(cells)
    return _aligned([label] + [f"p={p} (it / kappa)" for p in degrees], body)


def markdown_tables(rows: list[dict], cfg: ExperimentConfig) -> str:
    header = [c for c in COLUMNS if c not in ("error",)]
    body = [[_fmt(row.get(c, "")) for c in header] for row in rows]
    text = f"# {cfg.name}\n\ndomain `{cfg.domain.kind}`, load `{cfg.load}`, delta {cfg.delta}, " \
           f"rtol {cfg.rtol}, threads {cfg.threads}\n\n"
    text += _aligned(header, body)
    if rows:
        text += "\n" + pivot_table(rows, cfg)
    failed = [row for row in rows if row.get("error")]
    for row in failed:
        text += f"\np={row['p']} r={row['r']} s={row['s']}: {row['error']}\n"
    return text


def emit_geometry(mp: MultiPatch, path, samples: int = 33) -> None:
    """Write closed patch boundary polylines and junction markers.

    Format: a header line, then per patch ``patch <k> <n>`` followed by ``n``
    lines ``x y`` (first point repeated at the end), then one line per
    junction ``junction <kind> x y``.
    """
    t = np.linspace(0.0, 1.0, samples)
    with open(path, "w") as fh:
        fh.write(f"# {GEOMETRY_SCHEMA}\n")
        for k, G in enumerate(mp.patches):
            pts = []
            for side, forward in ((Side.SOUTH, True), (Side.EAST, True),
                                  (Side.NORTH, False), (Side.WEST, False)):
                X = edge_eval(G, side, t if forward else t[::-1])[0]
                pts.append(X[:-1])
            poly = np.vstack(pts + [pts[0][:1]])
            fh.write(f"patch {k} {len(poly)}\n")
            for x, y in poly:
                fh.write(f"{x:.15g} {y:.15g}\n")
        for j in mp.junctions:
            fh.write(f"junction {j.kind} {j.point[0]:.15g} {j.point[1]:.15g}\n")


def read_geometry(path) -> tuple[list[np.ndarray], list[tuple[str, float, float]]]:
    """Parse a file written by :func:`emit_geometry`."""
    polys, juncs = [], []
    lines = Path(path).read_text().splitlines()
    i = 0
    while i < len(lines):
        parts = lines[i].split()
        if parts and parts[0] == "patch":
            n = int(parts[2])
            polys.append(np.array([list(map(float, l.split())) for l in lines[i + 1:i + 1 + n]]))
            i += n
        elif parts and parts[0] == "junction":
            juncs.append((parts[1], float(parts[2]), float(parts[3])))
        i += 1
    return polys, juncs


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ietidg", description=__doc__.splitlines()[0])
    ap.add_argument("config", help="experiment YAML file")
    ap.add_argument("--out", help="output directory (overrides output.dir)")
    ap.add_argument("--delta", type=float, help="penalty parameter override")
    ap.add_argument("--rtol", type=float, help="PCG tolerance override")
    ap.add_argument("--threads", type=int, help="per-patch worker threads override")
    ap.add_argument("--emit-geometry", action="store_true",
                    help="write geometry.txt (patch polylines, junctions) and skip solving")
    ap.add_argument("--oracle-check", action="store_true",
                    help="compare with the monolithic direct solve on small cells")
    ap.add_argument("--oracle-cap", type=int, default=5000,
                    help="largest DOF count for --oracle-check (default 5000)")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(delta=args.delta, rtol=args.rtol,
                                                      threads=args.threads)
    except (ConfigError, OSError) as exc:
        print(f"ietidg: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out or cfg.out_dir)
    if args.emit_geometry:
        out.mkdir(parents=True, exist_ok=True)
        emit_geometry(cfg.domain.build(), out / "geometry.txt")
        print(out / "geometry.txt")
        return 0
    rows = run_experiment(cfg, out, args.oracle_cap if args.oracle_check else None)
    print((out / "results.md").read_text())
    return 0 if all(row.get("converged") for row in rows) else 1


if __name__ == "__main__":
    sys.exit(main())
