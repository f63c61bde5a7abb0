"""Scenario orchestration: config files, end-to-end runs, verification, plots.

A scenario file is INI-style text whose sections mirror the parameter groups
of the planner (terrain, robot, costmap, inner loop, outer loop, run).  A run
produces an artifact directory with the resolved config, the winning decision
and per-jump solutions, dense trajectories, the fitness trace, a verification
report from an independent refined re-rollout, and plot files.
"""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__, cem, costmap, ocp, terrain
from .dynamics import RobotParams, forward_kinematics, inverse_kinematics, rollout_detailed
from .errors import ConfigError, ParseError
from .ocp import GoalTarget, JumpProblem, PatchTarget, SolverConfig

FLOAT_FMT = "%.12g"


@dataclass
class Scenario:
    name: str
    terrain_kind: str = "flat"
    terrain_params: dict = field(default_factory=dict)
    terrain_seed: int = 0
    terrain_file: str | None = None
    start: tuple = (5.0, -10.0)
    goal: tuple = (5.0, -14.0)
    params: RobotParams = field(default_factory=RobotParams)
    cm_weights: tuple = (1.0, 1.0, 10.0)
    deep_threshold: float = 0.5
    n_w: int = 10
    n_h: int = 20
    N: int = 30
    n_sub: int = 5
    clearance: float = 0.5
    w_s: float = 0.001
    w_hw: float = 0.0
    w_l: float = 1000.0
    eps_land: float = 0.05
    eps_goal: float = 0.05
    w_e: float = 1.0
    w_p: float = 1.0e7
    w_ac: float = 0.0
    w_lt: float = 0.0
    cem: cem.CemConfig = field(default_factory=cem.CemConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    seed: int = 0
    replan: bool = False

    def config_text(self) -> str:
        """Canonical resolved-config rendering (hashed into the artifact)."""
        payload = {
            "name": self.name,
            "terrain": {
                "kind": self.terrain_kind,
                "params": self.terrain_params,
                "seed": self.terrain_seed,
                "file": self.terrain_file,
            },
            "start": list(self.start),
            "goal": list(self.goal),
            "robot": asdict(self.params),
            "costmap": {
                "weights": list(self.cm_weights),
                "deep_threshold": self.deep_threshold,
                "patches": [self.n_w, self.n_h],
            },
            "inner": {
                "N": self.N,
                "n_sub": self.n_sub,
                "clearance": self.clearance,
                "weights": [self.w_s, self.w_hw, self.w_l],
                "eps_land": self.eps_land,
                "eps_goal": self.eps_goal,
                "solver": asdict(self.solver),
            },
            "outer": {
                "w_e": self.w_e,
                "w_p": self.w_p,
                "w_ac": self.w_ac,
                "w_lt": self.w_lt,
                "cem": asdict(self.cem),
            },
            "seed": self.seed,
            "replan": self.replan,
        }
        return json.dumps(payload, indent=1, sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(self.config_text().encode()).hexdigest()[:16]


def _get(cp, section, key, cast, default):
    if cp.has_option(section, key):
        raw = cp.get(section, key)
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} ({exc})") from exc
    return default


def _pair(raw: str) -> tuple:
    parts = raw.replace(",", " ").split()
    if len(parts) != 2:
        raise ValueError(f"expected two numbers, got {raw!r}")
    return (float(parts[0]), float(parts[1]))


def _triple(raw: str) -> tuple:
    parts = raw.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError(f"expected three numbers, got {raw!r}")
    return tuple(float(p) for p in parts)


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"scenario file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ParseError(f"{path}: {exc}") from exc

    terrain_params = {}
    if cp.has_section("terrain"):
        for key in cp.options("terrain"):
            if key in ("kind", "seed", "file"):
                continue
            val = cp.get("terrain", key)
            if key in ("bulges", "ridges"):
                terrain_params[key] = json.loads(val)
            else:
                terrain_params[key] = float(val)

    robot = RobotParams(
        m=_get(cp, "robot", "mass", float, 5.0),
        p_ar=(0.0, _get(cp, "robot", "anchor_distance", float, 10.0), 0.0),
        g=(0.0, 0.0, -_get(cp, "robot", "gravity", float, 9.81)),
        f_leg_max=_get(cp, "robot", "f_leg_max", float, 300.0),
        f_r_min=_get(cp, "robot", "f_r_min", float, 15.0),
        f_r_max=_get(cp, "robot", "f_r_max", float, 80.0),
        mu=_get(cp, "robot", "friction", float, 0.8),
        t_th=_get(cp, "robot", "t_th", float, 0.05),
    )
    cem_cfg = cem.CemConfig(
        population=_get(cp, "outer", "population", int, 200),
        elite_frac=_get(cp, "outer", "elite_pct", float, 20.0) / 100.0,
        max_iters=_get(cp, "outer", "max_iters", int, 50),
        alpha=_get(cp, "outer", "alpha", float, 0.5),
        p_min_scale=_get(cp, "outer", "p_min_scale", float, 0.8),
        n_max=_get(cp, "outer", "n_max", int, 6),
        threads=_get(cp, "outer", "threads", int, 10),
        bias_fraction=_get(cp, "outer", "bias_fraction", float, 0.2),
        stagnation_window=_get(cp, "outer", "stagnation_window", int, 6),
    )
    solver = SolverConfig(
        tol_feas=_get(cp, "inner", "tol_feas", float, 1e-4),
        tol_opt=_get(cp, "inner", "tol_opt", float, 1e-4),
        max_inner=_get(cp, "inner", "max_inner", int, 300),
        max_outer=_get(cp, "inner", "max_outer", int, 10),
    )
    scen = Scenario(
        name=path.stem,
        terrain_kind=_get(cp, "terrain", "kind", str, "flat"),
        terrain_params=terrain_params,
        terrain_seed=_get(cp, "terrain", "seed", int, 0),
        terrain_file=_get(cp, "terrain", "file", str, None),
        start=_get(cp, "run", "start", _pair, (5.0, -10.0)),
        goal=_get(cp, "run", "goal", _pair, (5.0, -14.0)),
        params=robot,
        cm_weights=_get(cp, "costmap", "weights", _triple, (1.0, 1.0, 10.0)),
        deep_threshold=_get(cp, "costmap", "deep_threshold", float, 0.5),
        n_w=_get(cp, "costmap", "patch_w", int, 10),
        n_h=_get(cp, "costmap", "patch_h", int, 20),
        N=_get(cp, "inner", "knots", int, 30),
        n_sub=_get(cp, "inner", "n_sub", int, 5),
        clearance=_get(cp, "inner", "clearance", float, 0.5),
        w_s=_get(cp, "inner", "w_s", float, 0.001),
        w_hw=_get(cp, "inner", "w_hw", float, 0.0),
        w_l=_get(cp, "inner", "w_l", float, 1000.0),
        eps_land=_get(cp, "inner", "eps_land", float, 0.05),
        eps_goal=_get(cp, "inner", "eps_goal", float, 0.05),
        w_e=_get(cp, "outer", "w_e", float, 1.0),
        w_p=_get(cp, "outer", "w_p", float, 1.0e7),
        w_ac=_get(cp, "outer", "w_ac", float, 0.0),
        w_lt=_get(cp, "outer", "w_lt", float, 0.0),
        cem=cem_cfg,
        solver=solver,
        seed=_get(cp, "run", "seed", int, 0),
        replan=_get(cp, "run", "replan", lambda v: v.lower() in ("1", "true", "yes"), False),
    )
    return scen


def build_context(scen: Scenario) -> cem.PlanningContext:
    if scen.terrain_file:
        hm = terrain.load_heightmap(scen.terrain_file)
    else:
        hm = terrain.generate_terrain(scen.terrain_kind, scen.terrain_params, scen.terrain_seed)
    cm = costmap.compose(
        hm, scen.cm_weights, anchors=(scen.params.p_al, scen.params.p_ar),
        deep_threshold=scen.deep_threshold,
    )
    cat = costmap.partition(cm, scen.n_w, scen.n_h)
    for label, (y, z) in (("start", scen.start), ("goal", scen.goal)):
        if not hm.in_extent(y, z):
            raise ConfigError(f"{label} point ({y}, {z}) outside the terrain extent")
    if tuple(scen.start) == tuple(scen.goal):
        raise ConfigError("start and goal must differ")
    return cem.PlanningContext(
        terrain=hm,
        costmap=cm,
        catalog=cat,
        start_yz=tuple(scen.start),
        goal_yz=tuple(scen.goal),
        params=scen.params,
        solver=scen.solver,
        N=scen.N,
        n_sub=scen.n_sub,
        clearance=scen.clearance,
        w_s=scen.w_s,
        w_hw=scen.w_hw,
        w_l=scen.w_l,
        eps_land=scen.eps_land,
        eps_goal=scen.eps_goal,
        w_e=scen.w_e,
        w_p=scen.w_p,
        w_ac=scen.w_ac,
        w_lt=scen.w_lt,
    )


@dataclass
class PlanArtifact:
    scenario: Scenario
    context: cem.PlanningContext
    result: cem.CemResult
    verification: dict | None = None

    @property
    def converged(self) -> bool:
        return bool(self.result.converged)

    @property
    def jumps(self) -> list:
        rep = self.result.best_report
        return rep.jumps if rep is not None else []


# ---------------------------------------------------------------------------
# Verification: independent refined re-rollout of every jump
# ---------------------------------------------------------------------------


def verify(artifact: PlanArtifact, refine: int = 4) -> dict:
    """Re-integrate each jump at ``refine``x sub-step density and re-audit.

    Also checks the cascade is continuous: each jump lifts off exactly where
    the previous one landed.
    """
    ctx = artifact.context
    out = {"jumps": [], "continuity": 0.0, "max_violation": 0.0, "refine": refine}
    prev_land = None
    for j, sol in enumerate(artifact.jumps):
        x0 = sol.X[0]
        if prev_land is not None:
            liftoff = forward_kinematics(x0[:3], ctx.params)
            out["continuity"] = max(out["continuity"], float(np.max(np.abs(liftoff - prev_land))))
        d = artifact.result.best
        problem = cem._make_problem(ctx, x0, j, d)
        problem = replace(problem, n_sub=ctx.n_sub * refine)
        rep = ocp.evaluate_constraints(sol.U, None_as(sol, problem), sol.t_f, problem)
        rec = rep.as_dict()
        rec["jump"] = j + 1
        out["jumps"].append(rec)
        out["max_violation"] = max(out["max_violation"], rep.max_violation)
        prev_land = sol.landing_point
    out["continuity_ok"] = out["continuity"] <= 1e-6
    return out


def None_as(sol, problem):
    """Refined knot states for the audit (the stored knots are at solver density)."""
    return rollout_detailed(
        problem.x0, sol.U, sol.t_f, problem.n_sub, problem.params, check=False
    ).knots


def replan_cascade(artifact: PlanArtifact) -> list:
    """Re-solve each remaining jump from the achieved landing state.

    Mirrors closed-loop use: after every jump the next one is re-optimized
    from the verified landing location instead of the planned one.  Returns
    the replanned jump solutions.
    """
    ctx = artifact.context
    d = artifact.result.best
    jumps = []
    x0 = ctx.start_state()
    for depth in range(d.n):
        problem = cem._make_problem(ctx, x0, depth, d)
        sol = ocp.solve(problem, ctx.solver)
        jumps.append(sol)
        if not sol.converged or depth == d.n - 1:
            break
        # achieved landing from the refined re-rollout
        refined = rollout_detailed(
            problem.x0, sol.U, sol.t_f, ctx.n_sub * 4, ctx.params, check=False
        ).knots
        land = forward_kinematics(refined[-1][:3], ctx.params)
        x0 = np.concatenate([inverse_kinematics(land, ctx.params), np.zeros(3)])
    return jumps


# ---------------------------------------------------------------------------
# Artifact writing
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return FLOAT_FMT % v


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_artifact(artifact: PlanArtifact, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scen = artifact.scenario
    res = artifact.result
    ctx = artifact.context

    (out / "scenario.resolved.json").write_text(scen.config_text())
    manifest = {
        "config_hash": scen.config_hash(),
        "seed": scen.seed,
        "version": __version__,
        "converged": artifact.converged,
        "iterations": res.iterations,
        "inner_solves": res.solve_count,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))

    best = res.best
    with open(out / "decision.txt", "w") as fh:
        fh.write(f"jumps {best.n}\n")
        fh.write("patches " + " ".join(str(p) for p in best.active_patches()) + "\n")
        rep = res.best_report
        fh.write(f"fitness {_fmt(rep.f)}\nf1 {_fmt(rep.f1)}\nf2 {_fmt(rep.f2)}\n")
        fh.write(f"converged {artifact.converged}\n")

    _write_csv(
        out / "fitness_trace.csv",
        ["iteration", "best_fitness", "best_ever", "selected_jumps"],
        [(it, bf, be, n) for (it, bf, be, n) in res.fitness_trace],
    )

    traj_rows = []
    jump_dir = out / "jumps"
    jump_dir.mkdir(exist_ok=True)
    for j, sol in enumerate(artifact.jumps):
        with open(jump_dir / f"jump_{j + 1:02d}.txt", "w") as fh:
            fh.write(f"t_f {_fmt(sol.t_f)}\n")
            fh.write(f"converged {sol.converged}\n")
            fh.write(f"max_violation {_fmt(sol.max_violation)}\n")
            fh.write(f"objective {_fmt(sol.objective)}\n")
            fh.write(f"energy {_fmt(sol.c_e)}\n")
            fh.write("landing " + " ".join(_fmt(v) for v in sol.landing_point) + "\n")
            fh.write("U rows: f_rl f_rr fleg_x fleg_y fleg_z\n")
            for row in sol.U:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")
            fh.write("X rows: psi l1 l2 dpsi dl1 dl2\n")
            for row in sol.X:
                fh.write(" ".join(_fmt(v) for v in row) + "\n")
        ts = sol.t_f / ctx.N
        for k, x in enumerate(sol.X):
            p = forward_kinematics(x[:3], ctx.params)
            traj_rows.append(
                (j + 1, k, float(k * ts), float(x[0]), float(x[1]), float(x[2]),
                 float(p[0]), float(p[1]), float(p[2]))
            )
    _write_csv(
        out / "trajectory.csv",
        ["jump", "knot", "t", "psi", "l1", "l2", "p_x", "p_y", "p_z"],
        traj_rows,
    )

    if artifact.verification is not None:
        ver = artifact.verification
        (out / "verification.json").write_text(json.dumps(ver, indent=1, sort_keys=True))
        rows = []
        for rec in ver["jumps"]:
            rows.append((rec["jump"], *(rec[k] for k in sorted(rec) if k != "jump")))
        if rows:
            keys = [k for k in sorted(ver["jumps"][0]) if k != "jump"]
            _write_csv(out / "verification.csv", ["jump"] + keys, rows)
    return out


def run_scenario(path, out_dir=None, seed: int | None = None) -> PlanArtifact:
    """End to end: terrain -> cost map -> patches -> planner -> artifact."""
    scen = load_scenario(path) if not isinstance(path, Scenario) else path
    if seed is not None:
        scen = replace(scen, seed=seed)
    ctx = build_context(scen)
    result = cem.run(scen.cem, ctx, seed=scen.seed)
    artifact = PlanArtifact(scenario=scen, context=ctx, result=result)
    if artifact.jumps:
        artifact.verification = verify(artifact)
    if out_dir is not None:
        write_artifact(artifact, out_dir)
        emit_plots(artifact, Path(out_dir))
    return artifact


# ---------------------------------------------------------------------------
# Artifact reloading (verify/plot on a written directory)
# ---------------------------------------------------------------------------


def _scenario_from_payload(payload: dict) -> Scenario:
    robot = dict(payload["robot"])
    for key in ("p_al", "p_ar", "g"):
        robot[key] = tuple(robot[key])
    inner = payload["inner"]
    outer = payload["outer"]
    return Scenario(
        name=payload["name"],
        terrain_kind=payload["terrain"]["kind"],
        terrain_params=payload["terrain"]["params"],
        terrain_seed=payload["terrain"]["seed"],
        terrain_file=payload["terrain"]["file"],
        start=tuple(payload["start"]),
        goal=tuple(payload["goal"]),
        params=RobotParams(**robot),
        cm_weights=tuple(payload["costmap"]["weights"]),
        deep_threshold=payload["costmap"]["deep_threshold"],
        n_w=payload["costmap"]["patches"][0],
        n_h=payload["costmap"]["patches"][1],
        N=inner["N"],
        n_sub=inner["n_sub"],
        clearance=inner["clearance"],
        w_s=inner["weights"][0],
        w_hw=inner["weights"][1],
        w_l=inner["weights"][2],
        eps_land=inner["eps_land"],
        eps_goal=inner["eps_goal"],
        w_e=outer["w_e"],
        w_p=outer["w_p"],
        w_ac=outer["w_ac"],
        w_lt=outer["w_lt"],
        cem=cem.CemConfig(**outer["cem"]),
        solver=SolverConfig(**{
            k: (tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v)
            for k, v in inner["solver"].items()
        }),
        seed=payload["seed"],
        replan=payload["replan"],
    )


def _parse_jump_file(path) -> ocp.JumpSolution:
    lines = Path(path).read_text().splitlines()
    meta = {}
    i = 0
    while i < len(lines) and not lines[i].startswith("U rows"):
        key, _, rest = lines[i].partition(" ")
        meta[key] = rest
        i += 1
    i += 1
    U = []
    while i < len(lines) and not lines[i].startswith("X rows"):
        U.append([float(v) for v in lines[i].split()])
        i += 1
    i += 1
    X = []
    while i < len(lines) and lines[i].strip():
        X.append([float(v) for v in lines[i].split()])
        i += 1
    return ocp.JumpSolution(
        U=np.array(U),
        t_f=float(meta["t_f"]),
        X=np.array(X),
        converged=meta["converged"] == "True",
        max_violation=float(meta["max_violation"]),
        objective=float(meta["objective"]),
        c_e=float(meta["energy"]),
        landing_point=np.array([float(v) for v in meta["landing"].split()]),
        landing_cost=0.0,
        report=None,
    )


def load_artifact(art_dir) -> PlanArtifact:
    art = Path(art_dir)
    if not (art / "scenario.resolved.json").exists():
        raise ConfigError(f"{art} does not contain a plan artifact")
    payload = json.loads((art / "scenario.resolved.json").read_text())
    scen = _scenario_from_payload(payload)
    ctx = build_context(scen)
    decision = {}
    for line in (art / "decision.txt").read_text().splitlines():
        key, _, rest = line.partition(" ")
        decision[key] = rest
    n = int(decision["jumps"])
    patches = tuple(int(v) for v in decision["patches"].split()) if decision["patches"] else ()
    patches = patches + (0,) * (scen.cem.n_max - 1 - len(patches))
    best = cem.DecisionSet(n=n, patches=patches)
    jumps = [
        _parse_jump_file(p) for p in sorted((art / "jumps").glob("jump_*.txt"))
    ]
    report = cem.FitnessReport(
        f=float(decision["fitness"]),
        f1=float(decision["f1"]),
        f2=float(decision["f2"]),
        loop_detected=False,
        converged=decision["converged"] == "True",
        jumps=jumps,
    )
    trace = []
    trace_file = art / "fitness_trace.csv"
    if trace_file.exists():
        rows = trace_file.read_text().strip().splitlines()[1:]
        for row in rows:
            it, bf, be, nsel = row.split(",")
            trace.append((int(it), float(bf), float(be), int(nsel)))
    result = cem.CemResult(
        best=best,
        best_report=report,
        converged=report.converged,
        fitness_trace=trace,
        iterations=len(trace),
        solve_count=0,
        cache_hits=0,
        final_params=None,
    )
    verification = None
    ver_file = art / "verification.json"
    if ver_file.exists():
        verification = json.loads(ver_file.read_text())
    return PlanArtifact(scenario=scen, context=ctx, result=result, verification=verification)


def verify_artifact_dir(art_dir, refine: int = 4) -> dict:
    return verify(load_artifact(art_dir), refine=refine)


def plot_artifact_dir(art_dir) -> list:
    artifact = load_artifact(art_dir)
    return emit_plots(artifact, art_dir)


# ---------------------------------------------------------------------------
# Plots (SVG via matplotlib Agg) and their CSV twins
# ---------------------------------------------------------------------------


def emit_plots(artifact: PlanArtifact, out_dir) -> list:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ctx = artifact.context
    written = []

    # terrain + trajectory view
    fig, ax = plt.subplots(figsize=(5, 8))
    cm = ctx.costmap
    extent = [cm.origin_y, cm.y_max, cm.origin_z, cm.z_max]
    im = ax.imshow(
        ctx.costmap.cost, origin="lower", extent=extent, cmap="RdYlGn_r", alpha=0.8,
        aspect="equal",
    )
    fig.colorbar(im, ax=ax, label="landing cost")
    cat = ctx.catalog
    for i in range(cat.n_w + 1):
        ax.axvline(cat.origin_y + i * cat.patch_w, color="gray", lw=0.3)
    for i in range(cat.n_h + 1):
        ax.axhline(cat.origin_z + i * cat.patch_h, color="gray", lw=0.3)
    ax.plot(*ctx.start_yz, marker="^", color="black", ms=10, label="start")
    ax.plot(*ctx.goal_yz, marker="*", color="blue", ms=14, label="goal")
    for j, sol in enumerate(artifact.jumps):
        from .dynamics import cartesian_path

        p = cartesian_path(sol.X, ctx.params)
        ax.plot(p[:, 1], p[:, 2], "-", color="blue", lw=1.5)
        if j < len(artifact.jumps) - 1:
            ax.plot(sol.landing_point[1], sol.landing_point[2], "o", color="orange", ms=7)
    ax.set_xlabel("Y [m]")
    ax.set_ylabel("Z [m]")
    ax.legend(loc="upper right", fontsize=8)
    fig.savefig(out / "map.svg", metadata={"Date": None})
    plt.close(fig)
    written.append(out / "map.svg")

    # fitness and jump-count trends
    trace = artifact.result.fitness_trace
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    if trace:
        its = [t[0] for t in trace]
        ax1.plot(its, [t[3] for t in trace], "s-")
        ax2.semilogy(its, [t[2] for t in trace], "o-", label="best ever")
        ax2.semilogy(its, [t[1] for t in trace], ".--", label="iteration best")
        ax2.legend()
    ax1.set_ylabel("selected jumps")
    ax2.set_ylabel("fitness")
    ax2.set_xlabel("iteration")
    fig.savefig(out / "fitness.svg", metadata={"Date": None})
    plt.close(fig)
    written.append(out / "fitness.svg")
    return written
