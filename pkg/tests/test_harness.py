import dataclasses
import json

import numpy as np
import pytest

from adaloc.harness import io
from adaloc.harness.config import (
    SPARSE30,
    ConfigError,
    ExperimentConfig,
    bundled_config_path,
    bundled_configs,
    load,
    loads,
)
from adaloc.harness.experiment import (
    compute_rmse,
    rng_streams,
    run_experiment,
    synthesize_truth_and_obs,
)
from adaloc.harness.sweep import best_per_alpha, sweep, sweep_points

SMALL = """
name = "small"
seed = 3

[model]
kind = "lorenz96"

[observations]
pattern = "sparse30"
variance = 1.0

[filter]
ensemble_size = 10
inflation = 1.02
cycles = 60
spinup = 10

[localization]
mode = "constant"
radius = 4.0
"""


def small(**overrides):
    cfg = loads(SMALL)
    return cfg.replace(**overrides) if overrides else cfg


# -- config -------------------------------------------------------------------------

def test_bundled_configs_load():
    names = bundled_configs()
    assert names == ["lorenz96_adaptive", "lorenz96_constant", "mlorenz96_adaptive_4d", "qg_desk_adaptive"]
    for name in names:
        cfg = load(bundled_config_path(name))
        assert cfg.name == name


def test_sparse30_pattern():
    assert len(SPARSE30) == 30 and len(set(SPARSE30)) == 30
    assert SPARSE30[:3] == (1, 3, 5) and SPARSE30[-1] == 39
    np.testing.assert_array_equal(small().observed_indices(), SPARSE30)


def test_defaults_fill_in():
    cfg = loads("")
    assert cfg.model.kind == "lorenz96" and cfg.filter.ensemble_size == 10
    assert cfg.optimizer.max_iters == 50 and cfg.optimizer.lower_bound == 1e-3


@pytest.mark.parametrize(
    "text,line,fragment",
    [
        ("[model]\nkind = \"lorenz96\"\nbogus = 3\n", 3, "unknown key 'bogus'"),
        ("seed = 1\n[filter]\nensemble_size = 1\n", 3, "ensemble_size"),
        ("seed = 1\n\n[nope]\nx = 1\n", 3, "unknown section"),
        ("seed = \n", 1, "TOML syntax error"),
        ("[filter]\ncycles = \"a\"\n", 2, "integer"),
        ("[filter]\ncycles = 10\nspinup = 10\n", 3, "spinup"),
        ("[localization]\nmode = \"adaptive\"\nprior_mean = 1.0\nprior_var = 4.0\n", 4, "α < 1"),
        ("[localization]\nmode = \"adaptive\"\nmean = \"max\"\n", 3, "differentiable"),
        ("[observations]\npattern = \"indices\"\nindices = [0, 40]\n", None, "observed indices"),
        ("[sweep]\nseed_policy = \"random\"\n", 2, "seed_policy"),
    ],
)
def test_config_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as info:
        loads(text, path="exp.toml")
    msg = str(info.value)
    assert fragment in msg
    assert msg.startswith("exp.toml:")
    if line is not None:
        assert info.value.line == line
        assert msg.startswith(f"exp.toml:{line}:")


def test_config_rejects_unknown_top_level_key():
    with pytest.raises(ConfigError, match="unknown top-level key"):
        loads("seeds = 3\n")


def test_config_round_trip_through_dict():
    cfg = load(bundled_config_path("mlorenz96_adaptive_4d"))
    d = cfg.to_dict()
    json.dumps(d)  # must be serializable
    assert d["localization"]["K"] == 1
    assert cfg.group_mapping().g == 4


def test_config_helpers():
    cfg = small()
    assert cfg.with_seed(9).seed == 9 and cfg.seed == 3
    assert cfg.with_mode("free").localization.mode == "free"
    assert cfg.obs_std == 1.0
    np.testing.assert_array_equal(cfg.radii(), [4.0])


def test_config_is_validated_on_replace():
    with pytest.raises(ConfigError):
        small().replace(filter=dataclasses.replace(small().filter, inflation=0.9))


# -- synthesis ----------------------------------------------------------------------

def test_rng_streams_independent():
    a = rng_streams(5)
    b = rng_streams(5)
    assert a["obs"].standard_normal() == b["obs"].standard_normal()
    # drawing from one stream does not move another
    c = rng_streams(5)
    c["truth"].standard_normal(1000)
    assert c["ensemble"].standard_normal() == rng_streams(5)["ensemble"].standard_normal()


def test_zero_variance_gives_exact_observations():
    cfg = small(observations=dataclasses.replace(small().observations, variance=0.0))
    setup = synthesize_truth_and_obs(cfg)
    np.testing.assert_array_equal(setup.obs_values[1:], setup.truth[1:, setup.H.index_array])


def test_synthesis_is_deterministic():
    a = synthesize_truth_and_obs(small())
    b = synthesize_truth_and_obs(small())
    assert np.array_equal(a.truth, b.truth) and np.array_equal(a.obs_values, b.obs_values)
    assert np.array_equal(a.initial_ensemble, b.initial_ensemble)


def test_observation_noise_variance():
    cfg = small(observations=dataclasses.replace(small().observations, variance=2.5),
                filter=dataclasses.replace(small().filter, cycles=400))
    s = synthesize_truth_and_obs(cfg)
    resid = (s.obs_values - s.truth[:, s.H.index_array]).ravel()
    assert resid.size > 10_000
    assert abs(resid.var() / 2.5 - 1) < 0.05


def test_truth_horizon_covers_future_windows():
    cfg = load(bundled_config_path("mlorenz96_adaptive_4d"))
    s = synthesize_truth_and_obs(cfg)
    assert s.truth.shape[0] == cfg.filter.cycles + cfg.localization.K + 1


# -- RMSE ---------------------------------------------------------------------------

def test_rmse_examples(rng):
    x = rng.standard_normal((5, 4))
    assert compute_rmse(x, x) == 0.0
    assert compute_rmse(x, x + 0.3) == pytest.approx(0.3, rel=1e-12)


def test_rmse_matches_loop(rng):
    t, a = rng.standard_normal((2, 7, 5))
    s = 0.0
    for i in range(2, 6):
        for j in range(5):
            s += (t[i, j] - a[i, j]) ** 2
    assert compute_rmse(t, a, (2, 6)) == pytest.approx(np.sqrt(s / 20), rel=1e-12)


def test_rmse_errors():
    with pytest.raises(ValueError):
        compute_rmse(np.zeros((3, 2)), np.zeros((3, 2)), (2, 2))
    with pytest.raises(ValueError):
        compute_rmse(np.zeros((3, 2)), np.zeros((2, 2)))


# -- experiments --------------------------------------------------------------------

def test_perfect_start_stays_perfect():
    cfg = small(observations=dataclasses.replace(small().observations, pattern="all", variance=0.0),
                filter=dataclasses.replace(small().filter, cycles=8, spinup=1))
    setup = synthesize_truth_and_obs(cfg)
    setup = dataclasses.replace(setup, initial_ensemble=np.repeat(setup.truth[0][:, None], 10, axis=1))
    rec = run_experiment(cfg, setup)
    assert rec.cycles_done == 8
    assert max(rec.rmse_analysis) < 1e-8


def test_constant_run_record():
    rec = run_experiment(small())
    assert rec.cycles_done == 60 and not rec.diverged
    assert rec.header() == ["cycle", "time", "rmse_analysis", "rmse_forecast", "radius_1", "cost", "iters"]
    rows = list(rec.rows())
    assert rows[0][0] == 1 and rows[-1][1] == pytest.approx(3.0)
    assert rec.aggregate_rmse == pytest.approx(
        compute_rmse(np.array(rec.truth), np.array(rec.analysis_mean), (10, 60)), rel=0, abs=1e-12)
    assert rec.aggregate_rmse < 1.0


def test_run_is_bitwise_deterministic():
    a = run_experiment(small())
    b = run_experiment(small())
    assert a.rmse_analysis == b.rmse_analysis
    assert np.array_equal(np.array(a.analysis_mean), np.array(b.analysis_mean))


def test_adaptive_run_records_cost_and_radii():
    cfg = load(bundled_config_path("lorenz96_adaptive"))
    cfg = cfg.replace(filter=dataclasses.replace(cfg.filter, cycles=30, spinup=5))
    rec = run_experiment(cfg)
    assert rec.cycles_done == 30
    assert all(c <= c0 for c, c0 in zip(rec.cost, rec.cost_initial))
    assert all(r[0] >= 1e-3 for r in rec.radii)
    assert all(i >= 0 for i in rec.iters)


def test_adaptive_warm_start_uses_prior_mean():
    cfg = load(bundled_config_path("lorenz96_adaptive"))
    cfg = cfg.replace(filter=dataclasses.replace(cfg.filter, cycles=12, spinup=2),
                      localization=dataclasses.replace(cfg.localization, warm_start_cycles=5))
    rec = run_experiment(cfg)
    assert all(r == [4.0] for r in rec.radii[:5])
    assert all(np.isnan(c) for c in rec.cost[:5])
    assert not np.isnan(rec.cost[5])


def test_free_run_has_no_radii():
    rec = run_experiment(small().with_mode("free"))
    assert rec.g == 0 and rec.header()[-2:] == ["cost", "iters"]
    assert rec.cycles_done == 60


def test_divergence_is_recorded_not_raised():
    cfg = small(filter=dataclasses.replace(small().filter, divergence_factor=0.05, spinup=2))
    rec = run_experiment(cfg)
    assert rec.diverged and "above" in rec.reason
    assert rec.cycles_done == 3  # the partial record is kept


def test_multivariate_4d_run():
    cfg = load(bundled_config_path("mlorenz96_adaptive_4d"))
    cfg = cfg.replace(filter=dataclasses.replace(cfg.filter, cycles=15, spinup=3))
    rec = run_experiment(cfg)
    assert rec.cycles_done == 15 and rec.g == 4
    assert all(len(r) == 4 for r in rec.radii)
    assert all(c <= c0 for c, c0 in zip(rec.cost, rec.cost_initial))


# -- sweeps and persistence ---------------------------------------------------------

def sweep_cfg(**sweep_fields):
    cfg = small(filter=dataclasses.replace(small().filter, cycles=30, spinup=5))
    return cfg.replace(sweep=dataclasses.replace(cfg.sweep, **sweep_fields))


def test_sweep_points_cartesian_product():
    cfg = sweep_cfg(inflation=(1.02, 1.05), radius=(2.0, 3.0, 4.0))
    pts = sweep_points(cfg)
    assert len(pts) == 6
    assert [p.config.seed for p in pts] == [3, 4, 5, 6, 7, 8]
    assert pts[4].config.filter.inflation == 1.05 and pts[4].config.localization.radius == (3.0,)


def test_sweep_prior_offsets():
    cfg = load(bundled_config_path("lorenz96_adaptive"))
    pts = sweep_points(cfg)
    offs, var = cfg.sweep.prior_mean_offset, cfg.sweep.prior_var
    assert len(pts) == len(cfg.sweep.inflation or (cfg.filter.inflation,)) * len(offs) * len(var)
    assert pts[0].config.localization.prior_mean == (4.0 + offs[0],)
    assert all(p.config.seed == cfg.seed for p in pts)  # shared seeds in the bundled config


def test_singleton_sweep_equals_run(tmp_path):
    cfg = sweep_cfg()
    rows = sweep(cfg, tmp_path)
    rec = run_experiment(cfg)
    assert rows == [[1.02, 4.0, 0.0, rec.aggregate_rmse, False]]


def test_sweep_outputs_and_best(tmp_path):
    cfg = sweep_cfg(inflation=(1.02, 1.06), radius=(2.0, 4.0))
    rows = sweep(cfg, tmp_path, workers=2)
    assert len(rows) == 4
    table = io.read_csv(tmp_path / "summary.csv")
    assert [r["aggregate_rmse"] for r in table] == [r[3] for r in rows]
    best = io.read_csv(tmp_path / "best.csv")
    for b in best:
        same = [r for r in table if r["alpha"] == b["alpha"] and not r["diverged"]]
        assert b["aggregate_rmse"] == min(r["aggregate_rmse"] for r in same)
    assert (tmp_path / "run_003" / "cycles.csv").exists()
    assert json.loads((tmp_path / "manifest.json").read_text())["sweep_points"] == 4


def test_parallel_sweep_matches_serial():
    cfg = sweep_cfg(radius=(2.0, 5.0))
    assert sweep(cfg, workers=1) == sweep(cfg, workers=2)


def test_best_per_alpha_manual_scan():
    rows = [[1.02, 2.0, 0.0, 0.5, False], [1.02, 3.0, 0.0, 0.4, False], [1.04, 2.0, 0.0, 0.1, True],
            [1.04, 3.0, 0.0, 0.6, False], [1.02, 4.0, 0.0, 0.4, False]]
    assert best_per_alpha(rows) == [rows[1], rows[3]]


def test_diverged_points_do_not_poison_siblings():
    cfg = sweep_cfg(inflation=(1.02, 1.5), radius=(4.0,))
    rows = sweep(cfg)
    assert rows[0][4] is False and np.isfinite(rows[0][3])


def test_record_round_trip(tmp_path):
    cfg = small()
    rec = run_experiment(cfg)
    io.write_cycles(rec, tmp_path / "cycles.csv")
    io.write_summary(tmp_path / "summary.csv", [io.summary_row(cfg, rec)])
    io.write_traces(tmp_path / "traces.npz", rec)
    rows = io.read_csv(tmp_path / "cycles.csv")
    assert [r["rmse_analysis"] for r in rows] == rec.rmse_analysis
    summary = io.read_csv(tmp_path / "summary.csv")[0]
    assert summary["aggregate_rmse"] == rec.aggregate_rmse
    tr = np.load(tmp_path / "traces.npz")
    assert compute_rmse(tr["truth"], tr["analysis_mean"], (cfg.filter.spinup, rec.cycles_done)) == rec.aggregate_rmse


def test_manifest_echoes_config(tmp_path):
    cfg = small()
    rec = run_experiment(cfg)
    data = json.loads(io.write_manifest(tmp_path / "m.json", cfg, rec).read_text())
    assert data["seed"] == 3 and data["config"]["localization"]["radius"] == [4.0]
    assert data["result"]["cycles_completed"] == 60


def test_summary_value_formats():
    assert io.summary_value([2.0, 2.0]) == 2.0
    assert io.summary_value([1.0, 2.0]) == "1.0;2.0"


def test_default_config_object():
    assert isinstance(ExperimentConfig(), ExperimentConfig)
