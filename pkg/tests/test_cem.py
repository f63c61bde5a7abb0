import numpy as np
import pytest

from wallhopper import cem, costmap, terrain
from wallhopper import dynamics as dyn


@pytest.fixture(scope="module")
def flat_ctx():
    hm = terrain.generate_terrain("flat", {}, 0)
    cm = costmap.compose(hm, (1.0, 1.0, 10.0))
    cat = costmap.partition(cm, 10, 20)
    return cem.PlanningContext(
        terrain=hm, costmap=cm, catalog=cat, start_yz=(5.0, -10.0), goal_yz=(5.0, -14.0)
    )


def rng_for_factory(seed, it=1):
    def rng_for(i):
        return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(it, i)))

    return rng_for


def test_sample_population_degenerate_distribution():
    params = cem.uniform_params(6, 200)
    r_n = np.zeros(6)
    r_n[2] = 1.0
    r_pi = np.zeros((5, 200))
    r_pi[:, 17] = 1.0
    params = cem.CategoricalParams(r_n=r_n, r_pi=r_pi)
    pop = cem.sample_population(params, 20, rng_for_factory(0))
    assert all(d.n == 3 and d.patches == (17,) * 5 for d in pop)


def test_sample_population_uniform_frequencies():
    params = cem.uniform_params(6, 200)
    pop = cem.sample_population(params, 2000, rng_for_factory(1))
    counts = np.bincount([d.patches[0] for d in pop], minlength=200)
    # multinomial: mean 10, sigma ~ sqrt(2000 * p (1-p)) ~ 3.15; 4-sigma band
    assert counts.max() <= 10 + 4 * 3.16
    assert counts.min() >= max(0, 10 - 4 * 3.16)
    n_counts = np.bincount([d.n for d in pop], minlength=7)[1:]
    assert abs(n_counts.mean() - 2000 / 6) < 1e-9  # total preserved
    assert n_counts.min() > 2000 / 6 - 4 * np.sqrt(2000 * (1 / 6) * (5 / 6))


def test_sample_population_replay_deterministic():
    params = cem.uniform_params(6, 200)
    a = cem.sample_population(params, 50, rng_for_factory(7))
    b = cem.sample_population(params, 50, rng_for_factory(7))
    assert a == b


def test_update_distribution_pure_frequency():
    params = cem.uniform_params(6, 200)
    elites = [cem.DecisionSet(n=4, patches=(3, 3, 3, 3, 3)) for _ in range(10)]
    out = cem.update_distribution(params, elites, alpha=1.0, p_min=0.0)
    assert out.r_n[3] == pytest.approx(1.0)
    assert out.r_pi[0][3] == pytest.approx(1.0)


def test_update_distribution_alpha_zero_identity():
    params = cem.uniform_params(6, 200)
    elites = [cem.DecisionSet(n=4, patches=(3, 3, 3, 3, 3))]
    out = cem.update_distribution(params, elites, alpha=0.0, p_min=0.0)
    assert np.allclose(out.r_n, params.r_n)
    assert np.allclose(out.r_pi, params.r_pi)


def test_update_distribution_floor_and_normalization():
    params = cem.uniform_params(6, 200)
    elites = [cem.DecisionSet(n=1, patches=(5,) * 5) for _ in range(10)]
    p_min = 0.8 / 200
    out = cem.update_distribution(params, elites, alpha=0.5, p_min=(0.8 / 6, p_min))
    assert out.r_n.sum() == pytest.approx(1.0, abs=1e-12)
    for j in range(5):
        row = out.r_pi[j]
        assert row.sum() == pytest.approx(1.0, abs=1e-12)
        # floored entries stay above p_min up to the renormalization factor
        assert row.min() >= p_min / row_sum_bound(row, p_min) - 1e-15


def row_sum_bound(row, p_min):
    # upper bound of the pre-normalization sum after flooring
    return 1.0 + len(row) * p_min


def test_biased_init_geometry():
    hm = terrain.generate_terrain("flat", {}, 0)
    cm = costmap.compose(hm, (1.0, 1.0, 10.0))
    cat = costmap.partition(cm, 10, 20)
    # vertical start-goal line: boosted patches form a vertical corridor
    params = cem.biased_init((5.0, -18.0), (5.0, -4.0), cat, bias_fraction=0.5, n_max=6)
    for j in range(5):
        boosted = np.where(params.r_pi[j] > 1.5 / 200)[0]
        assert len(boosted) > 0
        for pid in boosted:
            assert cat.centroids[pid][0] == pytest.approx(5.5)  # one column of patches
    # zero bias: uniform
    uni = cem.biased_init((5.0, -18.0), (5.0, -4.0), cat, bias_fraction=0.0, n_max=6)
    assert np.allclose(uni.r_pi, 1.0 / 200)
    # start and goal in the same patch: that patch boosted in every slot
    par2 = cem.biased_init((5.2, -10.2), (5.4, -10.4), cat, bias_fraction=0.5, n_max=6)
    pid = cat.patch_of(5.3, -10.3)
    for j in range(5):
        assert par2.r_pi[j][pid] == par2.r_pi[j].max()


def test_loop_detection_and_penalty(flat_ctx):
    counter = cem.SolveCounter()
    d = cem.DecisionSet(n=3, patches=(7, 7, 0, 0, 0))  # repeated intermediate
    rep = cem.evaluate_fitness(d, flat_ctx, cache={}, counter=counter)
    assert rep.loop_detected
    assert rep.f2 == flat_ctx.w_p == 1e7
    assert rep.f == rep.f1 + rep.f2
    assert counter.solves == 0

    # goal patch as an intermediate counts as a loop
    goal_patch = flat_ctx.catalog.patch_of(*flat_ctx.goal_yz)
    d2 = cem.DecisionSet(n=2, patches=(goal_patch,) * 5)
    rep2 = cem.evaluate_fitness(d2, flat_ctx, cache={}, counter=counter)
    assert rep2.loop_detected and counter.solves == 0

    # start patch revisited counts as a loop
    start_patch = flat_ctx.catalog.patch_of(*flat_ctx.start_yz)
    d3 = cem.DecisionSet(n=2, patches=(start_patch,) * 5)
    rep3 = cem.evaluate_fitness(d3, flat_ctx, cache={}, counter=counter)
    assert rep3.loop_detected and counter.solves == 0


def test_fitness_decomposition_and_cache(flat_ctx):
    cache = {}
    counter = cem.SolveCounter()
    d = cem.DecisionSet(n=1, patches=(0, 0, 0, 0, 0))
    rep = cem.evaluate_fitness(d, flat_ctx, cache, counter)
    assert rep.f == rep.f1 + rep.f2
    assert counter.solves == 1
    if rep.converged:
        assert rep.f2 == pytest.approx(flat_ctx.w_e * sum(s.c_e for s in rep.jumps))
    # same decision again: served from cache
    rep2 = cem.evaluate_fitness(d, flat_ctx, cache, counter)
    assert counter.solves == 1
    assert counter.cache_hits >= 1
    assert rep2.f == rep.f


def test_nonconverging_subjump_penalty(flat_ctx):
    # unreachable upward goal with castrated actuation: exact w_p
    params = dyn.RobotParams(f_r_max=0.0, f_r_min=0.0, f_leg_max=30.0)
    ctx = cem.PlanningContext(
        terrain=flat_ctx.terrain, costmap=flat_ctx.costmap, catalog=flat_ctx.catalog,
        start_yz=(5.0, -10.0), goal_yz=(5.0, -2.0), params=params,
    )
    counter = cem.SolveCounter()
    d = cem.DecisionSet(n=1, patches=(0,) * 5)
    rep = cem.evaluate_fitness(d, ctx, cache={}, counter=counter)
    assert not rep.converged
    assert rep.f2 == 1e7
    assert counter.solves == 1


def test_planted_optimum_run():
    def fitness(d):
        return 0.0 if d.n == 1 else 1e7

    cfg = cem.CemConfig(
        population=200, elite_frac=0.2, max_iters=50, alpha=0.5, p_min_scale=0.06,
        n_max=6, threads=1, bias_fraction=0.0, stagnation_window=60,
    )
    res = cem.run(cfg, None, seed=3, fitness_fn=fitness, n_patches=200)
    assert res.final_params.r_n[0] > 0.9
    best_ever = [t[2] for t in res.fitness_trace]
    assert all(b <= a for a, b in zip(best_ever, best_ever[1:]))
    assert res.best.n == 1


def test_run_real_scenario_small(flat_ctx):
    cfg = cem.CemConfig(
        population=12, elite_frac=0.25, max_iters=3, n_max=2, threads=1,
        bias_fraction=0.3, stagnation_window=2,
    )
    res = cem.run(cfg, flat_ctx, seed=5)
    assert res.best is not None
    assert res.converged
    assert res.best_report.f < 1e7
    # replay determinism
    res2 = cem.run(cfg, flat_ctx, seed=5)
    assert res2.best == res.best
    assert res2.fitness_trace == res.fitness_trace
