import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bellharness import digest
from bellharness.harness import (ConfigError, RunConfig, RunLog, generate_settings,
                                 generate_settings_array, replay_verify, run_in_process, trial_line)
from bellharness.model import strategy_names
from bellharness.stats import bell_test, estimate_correlations, success_count


def reference_fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) % 2**64
    return h


# -- config ---------------------------------------------------------------------------

def test_default_config_uses_chsh_angles():
    cfg = RunConfig(N=10)
    g = cfg.grid
    assert [g.degrees(j) for j in cfg.alice_settings] == [90, 0]
    assert [g.degrees(j) for j in cfg.bob_settings] == [45, 135]
    assert cfg.bob == "-sign"


@pytest.mark.parametrize("kwargs", [
    dict(N=0), dict(N=5, setting_mode="random"), dict(N=5, alice="nope"),
    dict(N=5, alice="drift-sign"), dict(N=5, oracle="bohm"), dict(N=5, delta=360),
    dict(N=5, alice_settings=(1, 1)), dict(N=5, bob_settings=(1, 400)), dict(N=5, seed_lambda=-1),
    dict(N=5, transport="carrier-pigeon"),
])
def test_config_rejects(kwargs):
    with pytest.raises(ConfigError):
        RunConfig(**kwargs)


def test_config_dict_round_trip():
    cfg = RunConfig(N=7, setting_mode="fixed-delta", delta=45, alice="halfplane", bob="coin")
    assert RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


# -- settings ---------------------------------------------------------------------------

def test_fixed_delta_zero_gives_equal_settings():
    a, b = generate_settings_array(RunConfig(N=1000, setting_mode="fixed-delta"), np.arange(1, 1001))
    assert np.array_equal(a, b)


def test_fixed_delta_offset():
    cfg = RunConfig(N=500, setting_mode="fixed-delta", delta=90)
    a, b = generate_settings_array(cfg, np.arange(1, 501))
    assert np.all((a - b) % 360 == 90)


def test_fourpoint_frequencies():
    cfg = RunConfig(N=10**6)
    a, b = generate_settings_array(cfg, np.arange(1, cfg.N + 1))
    la, lb = cfg.labels(a, b)
    for x in (1, 2):
        for y in (1, 2):
            assert abs(np.mean((la == x) & (lb == y)) - 0.25) < 3e-3
    assert set(np.unique(a)) == set(cfg.alice_settings)
    assert set(np.unique(b)) == set(cfg.bob_settings)


def test_uniform_settings_cover_grid():
    cfg = RunConfig(N=50000, setting_mode="uniform", M=16)
    a, b = generate_settings_array(cfg, np.arange(1, cfg.N + 1))
    assert set(a.tolist()) == set(b.tolist()) == set(range(16))
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


@given(st.integers(1, 10**6), st.sampled_from(["fourpoint", "fixed-delta", "uniform"]))
@settings(max_examples=50)
def test_settings_deterministic_and_random_access(n, mode):
    cfg = RunConfig(N=10**6, setting_mode=mode, delta=3)
    assert generate_settings(cfg, n) == generate_settings(cfg, n)
    a, b = generate_settings_array(cfg, np.array([1, n]))
    assert generate_settings(cfg, n) == (int(a[1]), int(b[1]))


def test_settings_index_range():
    with pytest.raises(ValueError):
        generate_settings(RunConfig(N=3), 4)


# -- in-process runs -----------------------------------------------------------------------

def test_sign_fixed_delta_zero_all_opposite():
    run = run_in_process(RunConfig(N=2000, setting_mode="fixed-delta"))
    assert np.all(run.y == -run.x)


def test_constant_pair():
    run = run_in_process(RunConfig(N=100, alice="const-plus", bob="const-minus"))
    assert np.all(run.x == 1) and np.all(run.y == -1)


def test_same_config_same_digest():
    cfg = RunConfig(N=3000, alice="halfplane", setting_mode="uniform")
    assert run_in_process(cfg).digest == run_in_process(cfg).digest
    other = run_in_process(replace(cfg, seed_lambda=cfg.seed_lambda + 1))
    assert other.digest != run_in_process(cfg).digest


def test_sign_pair_on_lhv_boundary():
    run = run_in_process(RunConfig(N=200000, seed_lambda=1, seed_settings=2))
    c = estimate_correlations(run)
    assert np.allclose(c.as_tuple(), (-0.5, -0.5, -0.5, 0.5), atol=1e-2)


def test_singlet_oracle_run():
    run = run_in_process(RunConfig(N=20000, oracle="singlet"))
    assert run.nonlocal_source
    assert run.header()["nonlocal"] is True
    v = bell_test(success_count(run, flip_bob=True))
    assert 0.84 <= v.success_rate <= 0.87


def test_memory_mode_runs_and_matches_memoryless_when_history_unused():
    cfg = RunConfig(N=500, memory_mode=True)
    assert run_in_process(cfg).digest == run_in_process(replace(cfg, memory_mode=False)).digest


def test_memory_strategy_stays_under_bound():
    N = 40000
    run = run_in_process(RunConfig(N=N, alice="drift-sign", memory_mode=True, seed_lambda=3, seed_settings=4))
    v = bell_test(success_count(run, flip_bob=True))
    assert v.success_rate <= 0.75 + 5 * math.sqrt(0.75 * 0.25 / N)
    assert v.p_value > 1e-4


# -- digest and log files ----------------------------------------------------------------------

def test_trial_line_format():
    assert trial_line(1, 179, 224, 1, -1) == '{"n":1,"a":179,"b":224,"x":1,"y":-1}\n'


@given(st.binary(max_size=10000))
@settings(max_examples=30)
def test_fnv_matches_reference(data):
    assert digest.fnv1a64(data) == reference_fnv1a64(data)


def test_fnv_known_values():
    assert digest.fnv1a64(b"") == 0xCBF29CE484222325
    assert digest.fnv1a64(b"a") == 0xAF63DC4C8601EC8C


def test_digest_covers_trial_lines(tmp_path):
    run = run_in_process(RunConfig(N=300, setting_mode="uniform"))
    path = tmp_path / "run.jsonl"
    run.save(path)
    lines = path.read_bytes().split(b"\n", 1)
    header = json.loads(lines[0])
    assert header["digest"] == f"{reference_fnv1a64(lines[1]):016x}" == run.digest_hex
    assert header["version"] == "bellharness/1"
    back = RunLog.load(path)
    assert back.digest == run.digest
    assert back.config == run.config
    assert np.array_equal(back.x, run.x)
    back.validate()


def test_validate_catches_bad_logs():
    run = run_in_process(RunConfig(N=10))
    bad = RunLog(run.config, run.n, run.a, run.b, np.zeros(10), run.y)
    with pytest.raises(ValueError):
        bad.validate()
    with pytest.raises(ValueError):
        RunLog(run.config, run.n[:5], run.a[:5], run.b[:5], run.x[:5], run.y[:5]).validate()


# -- replay ------------------------------------------------------------------------------

@pytest.mark.parametrize("name", strategy_names())
@pytest.mark.parametrize("mode", ["fourpoint", "fixed-delta", "uniform"])
def test_replay_every_builtin(name, mode):
    cfg = RunConfig(N=500, alice=name, setting_mode=mode, delta=30, memory_mode=name == "drift-sign")
    assert replay_verify(run_in_process(cfg))


def test_replay_detects_flipped_outcome():
    run = run_in_process(RunConfig(N=400))
    y = run.y.copy()
    y[136] = -y[136]
    res = replay_verify(RunLog(run.config, run.n, run.a, run.b, run.x, y))
    assert not res
    assert res.first_mismatch == 137


def test_replay_detects_other_settings_seed():
    run = run_in_process(RunConfig(N=400))
    forged = RunLog(replace(run.config, seed_settings=run.config.seed_settings + 1),
                    run.n, run.a, run.b, run.x, run.y, digest=run.digest)
    assert not replay_verify(forged)


def test_replay_detects_stale_digest():
    run = run_in_process(RunConfig(N=50))
    forged = RunLog(run.config, run.n, run.a, run.b, run.x, run.y, digest=run.digest ^ 1)
    res = replay_verify(forged)
    assert not res and res.first_mismatch is None


def test_replay_of_singlet_run():
    assert replay_verify(run_in_process(RunConfig(N=1000, oracle="singlet")))
