"""Cross-entropy outer loop over the discrete jump plan.

An individual is (n, pi): the number of jumps and a fixed-length vector of
intermediate patch ids (only the first n-1 entries are evaluated; the final
jump always targets the goal point).  Sampling uses independent categorical
distributions, one over jump counts and one per intermediate slot; elites
update them by smoothed empirical frequency with a probability floor that
keeps every class explorable.

Fitness is f = f1 + f2: f1 the weighted sum of the selected patches' mean
terrain costs, f2 the weighted total consumed energy when every jump in the
cascade converges, or a large penalty otherwise.  Individuals that revisit a
patch (including the start/goal patches) are penalized up front without any
inner-loop solve.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .costmap import CostMap, PatchCatalog
from .dynamics import RobotParams, inverse_kinematics
from .errors import ConfigError, DomainError, RolloutError, WallhopperError
from .ocp import GoalTarget, JumpProblem, JumpSolution, PatchTarget, SolverConfig, solve
from .terrain import HeightMap, interpolate

WORKERS_ENV = "WALLHOPPER_WORKERS"


@dataclass(frozen=True)
class DecisionSet:
    """One outer-loop individual: jump count and intermediate patch ids."""

    n: int
    patches: tuple

    def active_patches(self) -> tuple:
        return self.patches[: self.n - 1]


@dataclass(frozen=True)
class CategoricalParams:
    """Sampling distributions: r_n over jump counts 1..n_max, one categorical
    per intermediate slot over patch ids."""

    r_n: np.ndarray
    r_pi: np.ndarray  # (n_max - 1, n_patches)

    @property
    def n_max(self) -> int:
        return self.r_n.shape[0]

    @property
    def n_patches(self) -> int:
        return self.r_pi.shape[1]


@dataclass
class FitnessReport:
    f: float
    f1: float
    f2: float
    loop_detected: bool
    converged: bool
    jumps: list = field(default_factory=list)
    failed_at: int = -1


@dataclass(frozen=True)
class PlanningContext:
    """Everything a fitness evaluation needs besides the decision itself."""

    terrain: HeightMap
    costmap: CostMap
    catalog: PatchCatalog
    start_yz: tuple
    goal_yz: tuple
    params: RobotParams = field(default_factory=RobotParams)
    solver: SolverConfig = field(default_factory=SolverConfig)
    N: int = 30
    n_sub: int = 5
    clearance: float = 0.5
    w_s: float = 0.001
    w_hw: float = 0.0
    w_l: float = 1000.0
    eps_land: float = 0.05
    eps_goal: float = 0.05
    standoff: float = 0.05
    w_e: float = 1.0
    w_p: float = 1.0e7
    w_ac: float = 0.0
    w_lt: float = 0.0

    def surface_point(self, y: float, z: float) -> np.ndarray:
        x = interpolate(self.terrain, y, z) + self.standoff
        return np.array([x, y, z])

    def start_state(self) -> np.ndarray:
        p = self.surface_point(*self.start_yz)
        return np.concatenate([inverse_kinematics(p, self.params), np.zeros(3)])

    def goal_point(self) -> np.ndarray:
        return self.surface_point(*self.goal_yz)


@dataclass
class CemConfig:
    population: int = 200
    elite_frac: float = 0.2
    max_iters: int = 50
    alpha: float = 0.5
    p_min_scale: float = 0.8  # floor = p_min_scale / class count, per distribution
    n_max: int = 6
    threads: int = 10
    bias_fraction: float = 0.2
    stagnation_window: int = 6
    stagnation_tol: float = 1e-9


@dataclass
class CemResult:
    best: DecisionSet
    best_report: FitnessReport
    converged: bool
    fitness_trace: list  # per iteration: (iter, best_f_iter, best_f_ever, n_best_iter)
    iterations: int
    solve_count: int
    cache_hits: int
    final_params: CategoricalParams


def uniform_params(n_max: int, n_patches: int) -> CategoricalParams:
    return CategoricalParams(
        r_n=np.full(n_max, 1.0 / n_max),
        r_pi=np.full((n_max - 1, n_patches), 1.0 / n_patches),
    )


def sample_population(params: CategoricalParams, size: int, rng_for) -> list:
    """Draw ``size`` individuals; ``rng_for(i)`` supplies the generator for
    individual i so the draws do not depend on evaluation order."""
    out = []
    n_max = params.n_max
    for i in range(size):
        rng = rng_for(i)
        n = 1 + int(rng.choice(n_max, p=params.r_n))
        pi = tuple(
            int(rng.choice(params.n_patches, p=params.r_pi[j])) for j in range(n_max - 1)
        )
        out.append(DecisionSet(n=n, patches=pi))
    return out


def update_distribution(
    params: CategoricalParams, elites: list, alpha: float, p_min
) -> CategoricalParams:
    """Smoothed empirical-frequency update with a probability floor.

    ``p_min`` may be a scalar or a (floor_n, floor_pi) pair.  Every slot of the
    elite vectors is counted, matching the fixed-dimension encoding.
    """
    if not elites:
        raise ValueError("elite set must not be empty")
    if np.isscalar(p_min):
        p_min_n = p_min_pi = float(p_min)
    else:
        p_min_n, p_min_pi = (float(v) for v in p_min)
    n_max = params.n_max
    n_patches = params.n_patches
    ne = len(elites)

    freq_n = np.zeros(n_max)
    for e in elites:
        freq_n[e.n - 1] += 1.0
    freq_n /= ne
    r_n = (1.0 - alpha) * params.r_n + alpha * freq_n
    r_n = np.maximum(r_n, p_min_n)
    r_n /= r_n.sum()

    r_pi = np.empty_like(params.r_pi)
    for j in range(n_max - 1):
        freq = np.zeros(n_patches)
        for e in elites:
            freq[e.patches[j]] += 1.0
        freq /= ne
        row = (1.0 - alpha) * params.r_pi[j] + alpha * freq
        row = np.maximum(row, p_min_pi)
        r_pi[j] = row / row.sum()
    return CategoricalParams(r_n=r_n, r_pi=r_pi)


def biased_init(
    start_yz, goal_yz, catalog: PatchCatalog, bias_fraction: float, n_max: int = 6
) -> CategoricalParams:
    """Uniform distributions warped toward the straight start-goal corridor.

    For slot j and every jump count n that uses it, the patch containing the
    point a fraction (j+1)/n along the segment receives extra mass.
    """
    if not (0.0 <= bias_fraction <= 1.0):
        raise ConfigError(f"bias_fraction must be in [0, 1], got {bias_fraction}")
    base = uniform_params(n_max, catalog.n_patches)
    if bias_fraction == 0.0:
        return base
    s = np.asarray(start_yz, dtype=float)
    g = np.asarray(goal_yz, dtype=float)
    r_pi = np.empty_like(base.r_pi)
    for j in range(n_max - 1):
        boost = np.zeros(catalog.n_patches)
        hits = 0
        for n in range(j + 2, n_max + 1):
            t = (j + 1) / n
            p = s + t * (g - s)
            boost[catalog.patch_of(p[0], p[1])] += 1.0
            hits += 1
        if hits:
            boost /= hits
        r_pi[j] = (1.0 - bias_fraction) * base.r_pi[j] + bias_fraction * boost
        r_pi[j] /= r_pi[j].sum()
    return CategoricalParams(r_n=base.r_n, r_pi=r_pi)


# ---------------------------------------------------------------------------
# Fitness evaluation
# ---------------------------------------------------------------------------


GOAL_KEY = -1


def _jump_key(d: DecisionSet, depth: int):
    """Cache key of the cascade prefix ending with the depth-th jump target."""
    seq = d.active_patches()
    if depth < d.n - 1:
        return tuple(seq[: depth + 1])
    return tuple(seq) + (GOAL_KEY,)


def detect_loop(d: DecisionSet, ctx: PlanningContext) -> bool:
    seq = d.active_patches()
    if len(set(seq)) < len(seq):
        return True
    start_patch = ctx.catalog.patch_of(*ctx.start_yz)
    goal_patch = ctx.catalog.patch_of(*ctx.goal_yz)
    return any(p in (start_patch, goal_patch) for p in seq)


def _make_problem(ctx: PlanningContext, x0: np.ndarray, depth: int, d: DecisionSet) -> JumpProblem:
    if depth < d.n - 1:
        pid = d.active_patches()[depth]
        target = PatchTarget(
            centroid=tuple(ctx.catalog.centroids[pid]),
            half_extent=tuple(ctx.catalog.half_extent),
        )
    else:
        target = GoalTarget(point=tuple(ctx.goal_point()), tolerance=ctx.eps_goal)
    return JumpProblem(
        x0=x0,
        target=target,
        terrain=ctx.terrain,
        costmap=ctx.costmap,
        params=ctx.params,
        N=ctx.N,
        n_sub=ctx.n_sub,
        clearance=ctx.clearance,
        w_s=ctx.w_s,
        w_hw=ctx.w_hw,
        w_l=ctx.w_l,
        eps_land=ctx.eps_land,
    )


def _solve_one(ctx: PlanningContext, x0: np.ndarray, depth: int, d: DecisionSet):
    """Solve a single cascade jump; hard failures count as non-convergence."""
    try:
        problem = _make_problem(ctx, x0, depth, d)
        return solve(problem, ctx.solver)
    except WallhopperError:
        return None


def _next_liftoff(ctx: PlanningContext, sol: JumpSolution):
    try:
        q = inverse_kinematics(sol.landing_point, ctx.params)
    except DomainError:
        return None
    return np.concatenate([q, np.zeros(3)])


def _f1(d: DecisionSet, ctx: PlanningContext) -> float:
    return ctx.w_ac * float(sum(ctx.catalog.mean_cost[p] for p in d.active_patches()))


def _assemble_report(d: DecisionSet, ctx: PlanningContext, jumps: list, failed_at: int) -> FitnessReport:
    f1 = _f1(d, ctx)
    if failed_at >= 0:
        return FitnessReport(
            f=f1 + ctx.w_p, f1=f1, f2=ctx.w_p, loop_detected=False, converged=False,
            jumps=jumps, failed_at=failed_at,
        )
    f2 = ctx.w_e * float(sum(s.c_e for s in jumps))
    if ctx.w_lt > 0.0:
        x0 = ctx.start_state()
        lift = ctx.surface_point(*ctx.start_yz)
        for s in jumps:
            f2 += ctx.w_lt * float(np.linalg.norm(s.landing_point - lift))
            lift = s.landing_point
    return FitnessReport(
        f=f1 + f2, f1=f1, f2=f2, loop_detected=False, converged=True, jumps=jumps,
    )


def _loop_report(d: DecisionSet, ctx: PlanningContext) -> FitnessReport:
    f1 = _f1(d, ctx)
    return FitnessReport(
        f=f1 + ctx.w_p, f1=f1, f2=ctx.w_p, loop_detected=True, converged=False
    )


class SolveCounter:
    def __init__(self):
        self.solves = 0
        self.cache_hits = 0


def evaluate_fitness(
    d: DecisionSet, ctx: PlanningContext, cache: dict | None = None,
    counter: SolveCounter | None = None,
) -> FitnessReport:
    """Sequential cascade evaluation of one individual.

    The cache maps cascade-prefix keys to jump solutions, so individuals that
    share a prefix share the solves.
    """
    if detect_loop(d, ctx):
        return _loop_report(d, ctx)
    cache = cache if cache is not None else {}
    x0 = ctx.start_state()
    jumps = []
    for depth in range(d.n):
        key = _jump_key(d, depth)
        if key in cache:
            sol = cache[key]
            if counter:
                counter.cache_hits += 1
        else:
            sol = _solve_one(ctx, x0, depth, d)
            cache[key] = sol
            if counter:
                counter.solves += 1
        if sol is None or not sol.converged:
            return _assemble_report(d, ctx, jumps, failed_at=depth)
        jumps.append(sol)
        if depth < d.n - 1:
            x0 = _next_liftoff(ctx, sol)
            if x0 is None:
                return _assemble_report(d, ctx, jumps, failed_at=depth + 1)
    return _assemble_report(d, ctx, jumps, failed_at=-1)


# ---------------------------------------------------------------------------
# Parallel population evaluation (depth-synchronous over the prefix tree)
# ---------------------------------------------------------------------------

_WORKER_CTX: PlanningContext | None = None


def _pool_init(ctx):
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _pool_solve(task):
    key, x0, depth, d = task
    sol = _solve_one(_WORKER_CTX, x0, depth, d)
    return key, sol


def evaluate_population(
    pop: list, ctx: PlanningContext, cache: dict, counter: SolveCounter,
    pool: ProcessPoolExecutor | None = None,
) -> list:
    """Evaluate a population, batching unique cache-miss solves per depth."""
    reports: list = [None] * len(pop)
    live = []
    for i, d in enumerate(pop):
        if detect_loop(d, ctx):
            reports[i] = _loop_report(d, ctx)
        else:
            live.append(i)
    jumps_of = {i: [] for i in live}
    x0_of = {i: ctx.start_state() for i in live}

    depth = 0
    while live:
        tasks = {}
        for i in live:
            d = pop[i]
            key = _jump_key(d, depth)
            if key not in cache and key not in tasks:
                tasks[key] = (key, x0_of[i], depth, d)
        if tasks:
            items = [tasks[k] for k in sorted(tasks)]
            if pool is not None:
                for key, sol in pool.map(_pool_solve, items, chunksize=1):
                    cache[key] = sol
            else:
                for task in items:
                    key, sol = _pool_solve_local(task, ctx)
                    cache[key] = sol
            counter.solves += len(items)
        still = []
        for i in live:
            d = pop[i]
            key = _jump_key(d, depth)
            sol = cache[key]
            if key not in tasks:
                counter.cache_hits += 1
            if sol is None or not sol.converged:
                reports[i] = _assemble_report(d, ctx, jumps_of[i], failed_at=depth)
                continue
            jumps_of[i].append(sol)
            if depth == d.n - 1:
                reports[i] = _assemble_report(d, ctx, jumps_of[i], failed_at=-1)
            else:
                nxt = _next_liftoff(ctx, sol)
                if nxt is None:
                    reports[i] = _assemble_report(d, ctx, jumps_of[i], failed_at=depth + 1)
                else:
                    x0_of[i] = nxt
                    still.append(i)
        live = still
        depth += 1
    return reports


def _pool_solve_local(task, ctx):
    key, x0, depth, d = task
    return key, _solve_one(ctx, x0, depth, d)


def _worker_count(config: CemConfig) -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, config.threads)


def run(
    config: CemConfig,
    ctx: PlanningContext | None,
    seed: int = 0,
    fitness_fn=None,
    init_params: CategoricalParams | None = None,
    n_patches: int | None = None,
) -> CemResult:
    """Full cross-entropy search; deterministic given (config, context, seed).

    ``fitness_fn`` (DecisionSet -> float) replaces the cascade evaluation when
    given, which keeps synthetic benchmark runs cheap.
    """
    if ctx is not None:
        n_patches = ctx.catalog.n_patches
    if n_patches is None:
        raise ConfigError("need a planning context or an explicit n_patches")
    if init_params is not None:
        params = init_params
    elif ctx is not None and config.bias_fraction > 0:
        params = biased_init(
            ctx.start_yz, ctx.goal_yz, ctx.catalog, config.bias_fraction, config.n_max
        )
    else:
        params = uniform_params(config.n_max, n_patches)
    p_min = (config.p_min_scale / config.n_max, config.p_min_scale / n_patches)
    n_elites = max(1, int(np.ceil(config.elite_frac * config.population)))

    cache: dict = {}
    counter = SolveCounter()
    best: DecisionSet | None = None
    best_report: FitnessReport | None = None
    best_f = np.inf
    trace = []
    since_improved = 0
    it = 0

    pool = None
    workers = _worker_count(config)
    try:
        if fitness_fn is None and ctx is not None and workers > 1:
            pool = ProcessPoolExecutor(max_workers=workers, initializer=_pool_init, initargs=(ctx,))
        for it in range(1, config.max_iters + 1):
            def rng_for(i, _it=it):
                return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(_it, i)))

            pop = sample_population(params, config.population, rng_for)
            if fitness_fn is not None:
                fs = np.array([float(fitness_fn(d)) for d in pop])
                reports = None
            else:
                reports = evaluate_population(pop, ctx, cache, counter, pool)
                fs = np.array([r.f for r in reports])
            order = np.lexsort((np.arange(len(pop)), fs))
            elites = [pop[i] for i in order[:n_elites]]
            ib = int(order[0])
            improved = fs[ib] < best_f - config.stagnation_tol
            if fs[ib] < best_f:
                best_f = float(fs[ib])
                best = pop[ib]
                best_report = reports[ib] if reports is not None else None
            trace.append((it, float(fs[ib]), best_f, pop[ib].n))
            params = update_distribution(params, elites, config.alpha, p_min)
            since_improved = 0 if improved else since_improved + 1
            if since_improved >= config.stagnation_window:
                break
    finally:
        if pool is not None:
            pool.shutdown()

    if best_report is None and fitness_fn is None and best is not None:
        best_report = evaluate_fitness(best, ctx, cache, counter)
    converged = bool(best_report.converged) if best_report is not None else best_f < np.inf
    return CemResult(
        best=best,
        best_report=best_report,
        converged=converged,
        fitness_trace=trace,
        iterations=it,
        solve_count=counter.solves,
        cache_hits=counter.cache_hits,
        final_params=params,
    )
