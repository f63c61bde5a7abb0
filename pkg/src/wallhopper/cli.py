"""Command-line entry points.

Exit codes: 0 success / plan converged, 2 plan completed but not converged,
1 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import WallhopperError


def _terrain_cmd(args) -> int:
    from . import terrain

    params = json.loads(args.params) if args.params else {}
    hm = terrain.generate_terrain(args.kind, params, args.seed)
    terrain.save_heightmap(hm, args.out)
    print(f"wrote {args.out} ({hm.n_y}x{hm.n_z} nodes, {hm.resolution} m)")
    return 0


def _costmap_cmd(args) -> int:
    from . import costmap, terrain

    hm = terrain.load_heightmap(getattr(args, "in"))
    weights = tuple(float(v) for v in args.weights.split(","))
    cm = costmap.compose(hm, weights, deep_threshold=args.deep_threshold)
    costmap.save_costmap(cm, args.out)
    if args.layers:
        base = Path(args.out)
        for name in ("slope", "roughness", "deep"):
            costmap.save_costmap(cm, base.with_name(base.stem + f".{name}.txt"), layer=name)
    if args.patches:
        n_w, n_h = (int(v) for v in args.patches.lower().split("x"))
        cat = costmap.partition(cm, n_w, n_h)
        out = Path(args.out).with_suffix(".patches.csv")
        costmap.save_patch_catalog(cat, out)
        print(f"wrote {out} ({cat.n_patches} patches)")
    print(f"wrote {args.out}")
    return 0


def _plan_cmd(args) -> int:
    from . import pipeline

    artifact = pipeline.run_scenario(args.scenario, out_dir=args.out, seed=args.seed)
    rep = artifact.result.best_report
    print(
        f"best plan: {artifact.result.best.n} jumps, fitness {rep.f:.3f}, "
        f"converged {artifact.converged}"
    )
    if args.out:
        print(f"artifact written to {args.out}")
    return 0 if artifact.converged else 2


def _verify_cmd(args) -> int:
    from . import pipeline

    report = pipeline.verify_artifact_dir(args.artifact)
    print(json.dumps(report, indent=1, sort_keys=True))
    ok = report["max_violation"] <= args.tol and report["continuity_ok"]
    return 0 if ok else 2


def _plot_cmd(args) -> int:
    from . import pipeline

    written = pipeline.plot_artifact_dir(args.artifact)
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wallhopper", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    t = sub.add_parser("generate-terrain", help="write a procedural height map")
    t.add_argument("--kind", required=True, choices=["flat", "hemisphere", "bulged_pillars", "rocky"])
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--params", help="JSON dict of generator parameters")
    t.add_argument("--out", required=True)
    t.set_defaults(fn=_terrain_cmd)

    c = sub.add_parser("costmap", help="build a cost map from a height map")
    c.add_argument("--in", required=True, help="height-map file")
    c.add_argument("--weights", default="1,1,10", help="w_slope,w_rough,w_deep")
    c.add_argument("--deep-threshold", type=float, default=0.5)
    c.add_argument("--patches", help="patch grid as NwxNh, e.g. 10x20")
    c.add_argument("--layers", action="store_true", help="also write per-layer grids")
    c.add_argument("--out", required=True)
    c.set_defaults(fn=_costmap_cmd)

    r = sub.add_parser("plan", help="run a scenario end to end")
    r.add_argument("--scenario", required=True)
    r.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    r.add_argument("--out", default=None, help="artifact directory")
    r.set_defaults(fn=_plan_cmd)

    v = sub.add_parser("verify", help="re-audit a written artifact")
    v.add_argument("--artifact", required=True)
    v.add_argument("--tol", type=float, default=1e-3)
    v.set_defaults(fn=_verify_cmd)

    g = sub.add_parser("plot", help="re-render plots for a written artifact")
    g.add_argument("--artifact", required=True)
    g.set_defaults(fn=_plot_cmd)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except WallhopperError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _single(cmd):
    def entry(argv=None):
        argv = sys.argv[1:] if argv is None else argv
        return main([cmd] + list(argv))

    return entry


main_generate_terrain = _single("generate-terrain")
main_costmap = _single("costmap")
main_plan = _single("plan")
main_verify = _single("verify")
main_plot = _single("plot")


if __name__ == "__main__":
    sys.exit(main())
