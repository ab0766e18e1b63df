"""Operator command line: align, rank, simulate, degrade, serve, losscheck.

Exit codes: 0 success, 2 contract/usage error, 1 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .annotations import load_geojson, save_geojson
from .errors import MaploopError
from .raster import TileGrid, read_probmap_pgm
from .scenario import load_scenario_file
from .seg_gate import LossBatch, loss_det, loss_seg, loss_total
from .session import (
    SessionConfig,
    align_footprints,
    degrade,
    run_simulation,
    write_curve_csv,
    write_report_json,
)
from .triage import rank_tiles, ranking_to_csv


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--rk", type=float, default=0.02)
    p.add_argument("--retrain-every", type=int, default=20)
    p.add_argument("--metric", choices=["mi", "ndp", "sad", "random"], default="sad")
    p.add_argument("--tile-size", type=int, default=256)
    p.add_argument("--theta", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--radius", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)


def _config_from_args(args) -> SessionConfig:
    return SessionConfig(
        k=args.k,
        r_k=args.rk,
        retrain_every=args.retrain_every,
        metric=args.metric.upper(),
        tile_size=args.tile_size,
        theta=args.theta,
        beta=args.beta,
        radius=args.radius,
        seed=args.seed,
    )


def cmd_align(args) -> int:
    fset = load_geojson(args.annotations)
    prob = read_probmap_pgm(args.prob)
    cfg = SessionConfig(beta=args.beta, radius=args.radius, group_dist=args.group_dist)
    aligned, groups, sol = align_footprints(fset, prob, cfg)
    save_geojson(aligned, args.out)
    if sol is not None and args.solution:
        from .alignment import save_solution

        save_solution(groups, sol, args.solution)
    return 0


def cmd_rank(args) -> int:
    fset = load_geojson(args.annotations)
    prob = read_probmap_pgm(args.prob)
    grid = TileGrid.for_raster(prob.width, prob.height, args.tile_size)
    ranked = rank_tiles(fset, prob, grid, args.metric.upper())
    ranking_to_csv(ranked, args.out)
    return 0


def cmd_degrade(args) -> int:
    truth = load_geojson(args.annotations)
    out = degrade(truth, args.add_pct, args.remove_pct, args.max_shift, args.seed)
    save_geojson(out, args.out)
    return 0


def cmd_simulate(args) -> int:
    sc = load_scenario_file(args.scenario)
    if sc.truth is None:
        raise MaploopError("simulate requires a scenario with ground truth")
    report, curve = run_simulation(
        sc.config, sc.truth, sc.annotations, sc.provider, head=sc.head
    )
    os.makedirs(args.out, exist_ok=True)
    write_curve_csv(curve, os.path.join(args.out, "curve.csv"))
    write_report_json(report, os.path.join(args.out, "report.json"))
    print(json.dumps(report.to_json(), indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    data_dir = args.data_dir or os.environ.get("MAPLOOP_DATA_DIR", "./maploop-data")
    bind = args.bind or os.environ.get("MAPLOOP_BIND", "127.0.0.1:8000")
    host, _, port = bind.partition(":")
    app = create_app(data_dir)
    uvicorn.run(app, host=host, port=int(port or 8000))
    return 0


def cmd_losscheck(args) -> int:
    with open(args.input) as f:
        obj = json.load(f)
    batch = LossBatch(
        seg_logits=np.asarray(obj["seg_logits"], dtype=float),
        seg_targets=np.asarray(obj["seg_targets"], dtype=float),
        det_logits=np.asarray(obj["det_logits"], dtype=float),
        det_targets=np.asarray(obj["det_targets"], dtype=float),
    )
    print(
        json.dumps(
            {
                "loss_seg": loss_seg(batch),
                "loss_det": loss_det(batch),
                "loss_total": loss_total(batch),
            }
        )
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="maploop")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("align", help="align footprints to a probability map")
    a.add_argument("--annotations", required=True)
    a.add_argument("--prob", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--solution", default=None)
    a.add_argument("--beta", type=float, default=2.0)
    a.add_argument("--radius", type=int, default=30)
    a.add_argument("--group-dist", type=float, default=100.0)
    a.set_defaults(fn=cmd_align)

    r = sub.add_parser("rank", help="write a tile-ranking CSV")
    r.add_argument("--annotations", required=True)
    r.add_argument("--prob", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--metric", choices=["mi", "ndp", "sad"], default="sad")
    r.add_argument("--tile-size", type=int, default=256)
    r.set_defaults(fn=cmd_rank)

    d = sub.add_parser("degrade", help="simulate annotation damage")
    d.add_argument("--annotations", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--add-pct", type=float, default=0.0)
    d.add_argument("--remove-pct", type=float, default=0.0)
    d.add_argument("--max-shift", type=int, default=0)
    d.add_argument("--seed", type=int, default=0)
    d.set_defaults(fn=cmd_degrade)

    s = sub.add_parser("simulate", help="run a full simulated session")
    s.add_argument("--scenario", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    v = sub.add_parser("serve", help="start the HTTP service")
    v.add_argument("--bind", default=None)
    v.add_argument("--data-dir", default=None)
    _add_config_flags(v)
    v.set_defaults(fn=cmd_serve)

    lc = sub.add_parser("losscheck", help="evaluate the loss oracles on a batch")
    lc.add_argument("--input", required=True)
    lc.set_defaults(fn=cmd_losscheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except MaploopError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
