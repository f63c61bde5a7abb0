import os
from pathlib import Path

import numpy as np
import pytest

from wallhopper import cem, pipeline
from wallhopper.errors import ConfigError

SCEN_DIR = Path(__file__).resolve().parents[1] / "src" / "wallhopper" / "scenarios"


def small_scenario(tmp_path, seed=0, threads=1):
    text = f"""
[terrain]
kind = flat
seed = 0

[outer]
population = 10
elite_pct = 30
max_iters = 2
n_max = 2
threads = {threads}
bias_fraction = 0.3
stagnation_window = 1

[run]
start = 5.0, -10.0
goal = 5.0, -13.0
seed = {seed}
"""
    path = tmp_path / "scen.cfg"
    path.write_text(text)
    return path


def test_load_scenario_defaults(tmp_path):
    scen = pipeline.load_scenario(small_scenario(tmp_path))
    assert scen.params.m == 5.0
    assert scen.params.f_r_max == 80.0
    assert scen.cem.population == 10
    assert scen.cem.n_max == 2
    assert scen.N == 30
    assert scen.w_l == 1000.0
    assert scen.start == (5.0, -10.0)


def test_load_scenario_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        pipeline.load_scenario(tmp_path / "nope.cfg")
    bad = tmp_path / "bad.cfg"
    bad.write_text("[run]\nstart = 5.0\n")
    with pytest.raises(ConfigError, match="start"):
        pipeline.load_scenario(bad)


def test_build_context_validates_extent(tmp_path):
    path = tmp_path / "scen.cfg"
    path.write_text("[run]\nstart = 50, -10\ngoal = 5, -14\n")
    with pytest.raises(ConfigError, match="outside"):
        pipeline.build_context(pipeline.load_scenario(path))


@pytest.fixture(scope="module")
def flat_artifact(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("artifact")
    scen_path = small_scenario(tmp)
    out = tmp / "out"
    artifact = pipeline.run_scenario(scen_path, out_dir=out)
    return artifact, out


def test_run_scenario_writes_artifact(flat_artifact):
    artifact, out = flat_artifact
    assert artifact.converged
    assert (out / "decision.txt").exists()
    assert (out / "trajectory.csv").exists()
    assert (out / "fitness_trace.csv").exists()
    assert (out / "verification.json").exists()
    assert (out / "manifest.json").exists()
    assert (out / "map.svg").exists()
    assert (out / "fitness.svg").exists()
    # trajectory row count: one row per knot per jump
    rows = (out / "trajectory.csv").read_text().strip().splitlines()[1:]
    n_jumps = len(artifact.jumps)
    assert len(rows) == n_jumps * (artifact.context.N + 1)


def test_verification_refined_rollout(flat_artifact):
    artifact, _ = flat_artifact
    ver = artifact.verification
    assert ver["max_violation"] <= 1e-3
    assert ver["continuity_ok"]
    assert ver["refine"] == 4


def test_verify_flags_tampered_controls(flat_artifact):
    artifact, _ = flat_artifact
    import copy

    bad = copy.deepcopy(artifact)
    bad.result.best_report.jumps[0].U[3:, 0] = -80.0
    ver = pipeline.verify(bad)
    assert ver["max_violation"] > 1e-3


def test_single_jump_continuity_vacuous(flat_artifact):
    artifact, _ = flat_artifact
    if len(artifact.jumps) == 1:
        assert artifact.verification["continuity"] == 0.0


def test_artifact_roundtrip_and_cli_verify(flat_artifact):
    artifact, out = flat_artifact
    loaded = pipeline.load_artifact(out)
    assert loaded.result.best == artifact.result.best
    assert len(loaded.jumps) == len(artifact.jumps)
    np.testing.assert_allclose(loaded.jumps[0].U, artifact.jumps[0].U, atol=1e-12)
    ver = pipeline.verify_artifact_dir(out)
    assert ver["max_violation"] <= 1e-3


def test_determinism_across_worker_counts(tmp_path):
    scen_path = small_scenario(tmp_path, seed=3, threads=1)
    out1 = tmp_path / "a"
    pipeline.run_scenario(scen_path, out_dir=out1)
    os.environ["WALLHOPPER_WORKERS"] = "2"
    try:
        out2 = tmp_path / "b"
        pipeline.run_scenario(scen_path, out_dir=out2)
    finally:
        del os.environ["WALLHOPPER_WORKERS"]
    for name in ("trajectory.csv", "fitness_trace.csv", "decision.txt", "verification.csv"):
        a = (out1 / name).read_bytes()
        b = (out2 / name).read_bytes()
        assert a == b, f"{name} differs between worker counts"


def test_cli_terrain_and_costmap(tmp_path):
    from wallhopper import cli

    hm_path = tmp_path / "map.txt"
    rc = cli.main(["generate-terrain", "--kind", "rocky", "--seed", "3", "--out", str(hm_path)])
    assert rc == 0 and hm_path.exists()
    cost_path = tmp_path / "cost.txt"
    rc = cli.main(
        ["costmap", "--in", str(hm_path), "--weights", "1,1,10", "--patches", "10x20",
         "--out", str(cost_path)]
    )
    assert rc == 0 and cost_path.exists()
    assert cost_path.with_suffix(".patches.csv").exists()


def test_cli_config_error_exit_code(tmp_path):
    from wallhopper import cli

    rc = cli.main(["plan", "--scenario", str(tmp_path / "missing.cfg")])
    assert rc == 1


def test_replan_cascade(flat_artifact):
    artifact, _ = flat_artifact
    jumps = pipeline.replan_cascade(artifact)
    assert len(jumps) == artifact.result.best.n
    assert all(j.converged for j in jumps)
