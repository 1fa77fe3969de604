import numpy as np
import pytest

from coevgan.coev import Mode
from coevgan.dataset import plan_budget
from coevgan.errors import ConfigError
from coevgan.experiment import (RunConfig, bootstrap_ensembles, config_hash, diet_study, dump_config, execute,
                                load_config, parse_config, read_results, read_scores, run_bootstrap,
                                run_experiment, write_results)
from coevgan.grid import GridConfig
from coevgan.mixture import MixtureEAConfig

from conftest import make_generator

TINY = """
# small enough for unit tests
target.total_samples = 200
net.latent_dim = 2
net.hidden_size = 4
net.hidden_layers = 1
coev.batch_size = 20
coev.initial_learning_rate = 0.001
train.budget = 20
mixture.generations = 20
mixture.eval_sample_count = 200
eval.reference_samples = 500
"""


@pytest.fixture
def tiny():
    return parse_config(TINY)


# -- configuration


def test_defaults_follow_the_reference_setup():
    cfg = RunConfig()
    assert cfg.coev.tournament_size == 2
    assert cfg.coev.initial_learning_rate == 0.0002
    assert cfg.coev.mutation_rate == 0.0001 and cfg.coev.mutation_probability == 0.5
    assert cfg.mixture.mutation_scale == 0.01 and cfg.mixture.generations == 5000


def test_parse_reads_sections_and_comments(tiny):
    assert tiny.target.total_samples == 200
    assert tiny.net_config.hidden_size == 4
    cfg = parse_config("grid.size = 4x4  # comment\nrun.mode = async\nseeds.run = 9\n")
    assert cfg.grid == GridConfig(4, 4) and cfg.run.mode is Mode.ASYNC and cfg.seeds.run == 9
    assert cfg.variant == "Grid-4x4"
    assert RunConfig().variant == "SingleGAN"


@pytest.mark.parametrize("text", ["nonsense", "novalue.x", "foo.bar = 1", "coev.colour = red",
                                  "coev.batch_size = many", "grid.size = 3", "grid.depth = 2"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_and_parse_round_trip(tiny, tmp_path):
    cfg = tiny.override(grid=GridConfig(2, 3), train={"portion": 0.25})
    (tmp_path / "c.cfg").write_text(dump_config(cfg))
    again = load_config(tmp_path / "c.cfg")
    assert again == cfg
    assert config_hash(again) == config_hash(cfg)
    assert config_hash(cfg.override(seeds={"run": 1})) != config_hash(cfg)


# -- pipeline


def test_single_cell_ensemble_is_the_generator(tiny):
    result = run_experiment(tiny)
    assert result.variant == "SingleGAN" and len(result.cells) == 1
    cell = result.cells[0]
    assert cell.weights == (1.0,)
    assert cell.evolved_score == cell.uniform_score
    assert result.grid_best_ensemble_score == cell.evolved_score


def test_grid_run_invariants_and_round_trip(tiny, tmp_path):
    cfg = tiny.override(grid=GridConfig(3, 3), train={"portion": 0.5})
    result = run_experiment(cfg, tmp_path)
    assert len(result.cells) == 9
    for c in result.cells:
        assert c.evolved_score <= c.uniform_score
        assert abs(sum(c.weights) - 1) < 1e-12 and len(c.weights) == 5
    assert result.grid_best_score == min(c.best_score for c in result.cells)
    assert result.grid_best_ensemble_score == min(c.evolved_score for c in result.cells)
    assert read_results(tmp_path) == result
    for name in ("scores.csv", "weights.csv", "telemetry.csv", "manifest.txt", "heatmap_best.csv",
                 "heatmap_best.ppm", "heatmap_ensemble.csv", "heatmap_ensemble.ppm"):
        assert (tmp_path / name).exists(), name
    header = (tmp_path / "scores.csv").read_text().splitlines()[0]
    assert header == ("variant,portion,repeat,cell_row,cell_col,best_score,"
                      "uniform_ensemble_score,evolved_ensemble_score")
    assert config_hash(cfg) in (tmp_path / "manifest.txt").read_text()


def test_repeated_sequential_runs_write_identical_files(tiny, tmp_path):
    cfg = tiny.override(grid=GridConfig(3, 3), train={"portion": 0.5})
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b")
    for name in ("scores.csv", "weights.csv", "telemetry.csv", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_generation_counts_follow_the_budget(tiny):
    gens = {}
    for p in (0.25, 1.0):
        exp = execute(tiny.override(train={"portion": p, "budget": 40}, coev={"batch_size": 10}))
        gens[p] = exp.state.plan.generations
        assert exp.state.plan == plan_budget(200, 10, p, 40)
        assert max(t.generation for t in exp.state.telemetry()) == gens[p]
    assert gens[0.25] == 4 * gens[1.0]


def test_write_results_round_trips_scores(tiny, tmp_path):
    result = run_experiment(tiny.override(grid=GridConfig(2, 2)))
    write_results(result, tmp_path)
    rows = read_scores(tmp_path / "scores.csv")
    assert [r["best_score"] for r in rows] == [c.best_score for c in result.cells]
    assert read_results(tmp_path) == result


# -- bootstrap


CHEAP_ES = MixtureEAConfig(generations=30, eval_sample_count=200)
REF = np.random.default_rng(0).normal(size=(500, 2))


def _pool(n):
    return [make_generator(np.random.default_rng(k)) for k in range(n)]


def test_pool_of_five_always_draws_everyone():
    draws = bootstrap_ensembles(_pool(5), 4, np.random.default_rng(1), REF, CHEAP_ES)
    assert all(sorted(d.members) == [0, 1, 2, 3, 4] for d in draws)
    assert all(d.evolved_score <= d.uniform_score for d in draws)


def test_zero_repeats_and_small_pools():
    assert bootstrap_ensembles(_pool(6), 0, np.random.default_rng(1), REF, CHEAP_ES) == []
    with pytest.raises(ConfigError):
        bootstrap_ensembles(_pool(4), 1, np.random.default_rng(1), REF, CHEAP_ES)


def test_evolved_median_beats_uniform_median():
    draws = bootstrap_ensembles(_pool(30), 30, np.random.default_rng(2), REF, CHEAP_ES)
    assert all(len(set(d.members)) == 5 for d in draws)
    assert np.median([d.evolved_score for d in draws]) <= np.median([d.uniform_score for d in draws])


def test_run_bootstrap_writes_scores(tiny, tmp_path):
    cfg = tiny.override(bootstrap={"pool_size": 5, "repeats": 3})
    pool, draws = run_bootstrap(cfg, tmp_path)
    rows = read_scores(tmp_path / "scores.csv")
    assert [r["variant"] for r in rows].count("SingleGAN") == 5
    assert [r["variant"] for r in rows].count("SingleGAN-Ensemble") == 3
    assert len(pool.scores) == 5 and len(draws) == 3


def test_diet_study_collects_every_group(tiny):
    study = diet_study(tiny, repeats=1, pool_size=5, bootstrap_repeats=2, grid=GridConfig(2, 2))
    for key in [("SingleGAN", 0.25), ("SingleGAN", 1.0), ("SingleGAN-Ensemble", 0.25),
                ("Grid-2x2", 0.25), ("Grid-2x2-Ensemble", 0.25)]:
        assert len(study.per_repeat[key]) == 1, key
    assert len(study.pooled[("SingleGAN", 1.0)]) == 5
    assert np.isfinite(study.delta("SingleGAN", 0.25))
