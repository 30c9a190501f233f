import json
import math

import numpy as np
import pytest

from aeronav import config as config_mod
from aeronav.cli import main
from aeronav.core import Environment, Pillar, Vec3, save_environment
from aeronav.ppo import ConfigError


GOOD_TOML = """
[run]
seed = 7

[env]
v_x_max = 2.0
t_max = 240

[ppo]
horizon = 128
n_envs = 8
fragment_len = 64

[stages]
mode = "hybrid"
privileged_iterations = 3
finetune_iterations = 2
"""


class TestConfig:
    def test_load_and_hash_stable(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text(GOOD_TOML)
        cfg = config_mod.from_toml(p)
        assert cfg.seed == 7 and cfg.v_x_max == 2.0
        assert cfg.ppo.horizon == 128
        assert cfg.config_hash() == config_mod.from_toml(p).config_hash()

    def test_hash_changes_with_content(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text(GOOD_TOML)
        cfg1 = config_mod.from_toml(p)
        p.write_text(GOOD_TOML.replace("seed = 7", "seed = 8"))
        assert config_mod.from_toml(p).config_hash() != cfg1.config_hash()

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[env]\nwarp_speed = 9\n")
        with pytest.raises(ConfigError):
            config_mod.from_toml(p)

    def test_unknown_section_rejected(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[rewards]\nx = 1\n")
        with pytest.raises(ConfigError):
            config_mod.from_toml(p)

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            config_mod.RunConfig(stage_mode="both")
        with pytest.raises(ConfigError):
            config_mod.RunConfig(density=0.5)
        with pytest.raises(ConfigError):
            config_mod.RunConfig(drop_reward_term="survival")

    def test_bad_toml_is_config_error(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[env\nv_x_max = ")
        with pytest.raises(ConfigError):
            config_mod.from_toml(p)


class TestCli:
    def test_gen_writes_env_json(self, tmp_path):
        rc = main(["gen", "--kind", "region1", "--count", "2", "--seed", "3",
                   "--out", str(tmp_path)])
        assert rc == 0
        envs = sorted(tmp_path.glob("env_*.json"))
        assert len(envs) == 2
        data = json.loads(envs[0].read_text())
        assert {"obstacles", "start", "goal"} <= set(data)

    def test_render_writes_pgm_and_svg(self, tmp_path):
        env = Environment([Pillar(0, 5, 0.5, 6)], Vec3(0, -2, 2), Vec3(0, 12, 2))
        env_path = tmp_path / "env.json"
        save_environment(env, env_path)
        rc = main(["render", "--env", str(env_path), "--pose", "0,0,2,0",
                   "--out", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "depth.pgm").exists()
        assert (tmp_path / "depth.svg").exists()

    def test_plan_writes_csv(self, tmp_path):
        env = Environment([Pillar(0.5, 5, 0.4, 6)], Vec3(0, 0, 2), Vec3(0, 10, 2))
        env_path = tmp_path / "env.json"
        save_environment(env, env_path)
        rc = main(["plan", "--env", str(env_path), "--out", str(tmp_path)])
        assert rc == 0
        csv_path = tmp_path / "env_traj.csv"
        assert csv_path.exists()
        header = csv_path.read_text().splitlines()[0]
        assert header == "t,x,y,z"

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.toml"
        bad.write_text("[env]\nnope = 1\n")
        rc = main(["gen", "--config", str(bad), "--out", str(tmp_path)])
        assert rc == 2

    def test_missing_config_file_exit_code(self, tmp_path):
        rc = main(["gen", "--config", str(tmp_path / "absent.toml"),
                   "--out", str(tmp_path)])
        assert rc == 2

    def test_runtime_error_exit_code(self, tmp_path):
        rc = main(["eval", "--policy", str(tmp_path / "nope.anrl"),
                   "--out", str(tmp_path)])
        assert rc in (2, 3)  # missing file surfaces as config error


class TestPoolRoundTrip:
    def test_build_save_load(self, tmp_path):
        from aeronav import envgen, harness

        spec = envgen.RegionSpec(kind=envgen.REGION_PILLAR_CLUSTERS,
                                 area=(24.0, 24.0), spacing_min=5.0,
                                 count_range=(3, 5),
                                 separation_range=(12.0, 18.0))
        pool = harness.PrivilegedPool.build(2, seed=1, spec=spec, v_max=3.0)
        assert len(pool) == 2
        pool.save(tmp_path / "pool")
        loaded = harness.PrivilegedPool.load(tmp_path / "pool")
        assert len(loaded) == 2
        env, traj = loaded(np.random.default_rng(0), 0.0)
        assert traj.total_time > 0
        assert len(env.obstacles) >= 3


class TestWorkerEnv:
    def test_worker_count_env_var(self, monkeypatch):
        from aeronav.rlenv import worker_count

        monkeypatch.setenv("AERONAV_WORKERS", "3")
        assert worker_count() == 3
        monkeypatch.setenv("AERONAV_WORKERS", "junk")
        assert worker_count(2) == 2
        monkeypatch.delenv("AERONAV_WORKERS")
        assert worker_count() == 1
