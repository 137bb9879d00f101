import json

import numpy as np
import pytest

from potflow import nn, problems, trainer
from potflow.trainer import ConfigError, RunConfig


def tiny_cfg(**kw):
    base = dict(problem="gaussian", generator="continuous-pfg", loss="swg",
                lambda_hj=1.0, n_steps=4, hidden_layers=1, hidden_width=8,
                batch_size=32, steps=5, lr=1e-3, num_projections=16,
                train_set_size=256, eval_samples=500, eval_every=0,
                checkpoint_every=0, seed=0)
    base.update(kw)
    return RunConfig(**base)


# -- configuration invariants ----------------------------------------------------


def test_cnf_requires_continuous_generator():
    with pytest.raises(ConfigError, match="cnf"):
        tiny_cfg(loss="cnf", generator="vanilla", lambda_hj=0.0)


def test_lambda_only_with_continuous():
    with pytest.raises(ConfigError, match="residual"):
        tiny_cfg(generator="vanilla", lambda_hj=1.0)


def test_alpha_only_with_vanilla():
    with pytest.raises(ConfigError, match="transport"):
        tiny_cfg(alpha=0.1)


def test_discrete_requires_graph_backend():
    with pytest.raises(ConfigError, match="graph"):
        tiny_cfg(generator="discrete-pfg", lambda_hj=0.0)


def test_unknown_config_key_lists_valid_keys():
    with pytest.raises(ConfigError, match="valid keys"):
        RunConfig.from_dict({"stepz": 5})


def test_config_round_trip():
    cfg = tiny_cfg()
    assert RunConfig.from_dict(cfg.to_dict()) == cfg


# -- training behavior -------------------------------------------------------------


def test_zero_steps_leaves_parameters_at_init(tmp_path):
    cfg = tiny_cfg(steps=0)
    report = trainer.train(cfg, tmp_path)
    assert report.steps_done == 0
    store, state = nn.load_checkpoint(tmp_path / "checkpoint_final.bin")
    fresh = trainer.build_generator(cfg, 2)
    assert np.array_equal(store.theta, fresh.store.theta)
    assert state.t == 0
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["config"]["steps"] == 0
    assert payload["report"]["map_error"] is not None


def test_potential_flow_generators_start_at_identity():
    cfg = tiny_cfg()
    gen = trainer.build_generator(cfg, 2)
    X = np.random.default_rng(0).normal(size=(16, 2))
    Y = trainer.generator_map(gen)(X)
    assert np.array_equal(Y, X)


def test_training_is_bit_reproducible(tmp_path):
    cfg = tiny_cfg(steps=8)
    trainer.train(cfg, tmp_path / "a")
    trainer.train(cfg, tmp_path / "b")
    ra = (tmp_path / "a" / "report.json").read_bytes()
    rb = (tmp_path / "b" / "report.json").read_bytes()
    assert ra == rb
    ca = (tmp_path / "a" / "checkpoint_final.bin").read_bytes()
    cb = (tmp_path / "b" / "checkpoint_final.bin").read_bytes()
    assert ca == cb


def test_seed_changes_the_run(tmp_path):
    r0 = trainer.train(tiny_cfg(steps=6, seed=0), tmp_path / "s0")
    r1 = trainer.train(tiny_cfg(steps=6, seed=1), tmp_path / "s1")
    assert r0.sw_distance != r1.sw_distance


def test_fast_and_graph_backends_agree(tmp_path):
    # identical parameter trajectories through several optimizer steps
    fast = tiny_cfg(steps=4, num_projections=8, batch_size=16, n_steps=3)
    graph = tiny_cfg(steps=4, num_projections=8, batch_size=16, n_steps=3,
                     grad_backend="graph")
    trainer.train(fast, tmp_path / "fast")
    trainer.train(graph, tmp_path / "graph")
    sf, _ = nn.load_checkpoint(tmp_path / "fast" / "checkpoint_final.bin")
    sg, _ = nn.load_checkpoint(tmp_path / "graph" / "checkpoint_final.bin")
    assert np.allclose(sf.theta, sg.theta, rtol=1e-9, atol=1e-12)
    assert not np.array_equal(sf.theta,
                              trainer.build_generator(fast, 2).store.theta)


def test_vanilla_training_with_transport_penalty(tmp_path):
    cfg = tiny_cfg(generator="vanilla", lambda_hj=0.0, alpha=0.1, steps=30,
                   lr=1e-2)
    report = trainer.train(cfg, tmp_path)
    assert report.diverged_at is None
    log = (tmp_path / "log.csv").read_text().strip().splitlines()
    assert log[0].startswith("step,")
    assert float(log[-1].split(",")[4]) > 0.0   # transport component active


def test_wgan_training_runs(tmp_path):
    cfg = tiny_cfg(loss="wgan-gp", steps=6, disc_hidden_layers=1,
                   disc_hidden_width=8, disc_updates=2)
    report = trainer.train(cfg, tmp_path)
    assert report.diverged_at is None
    assert (tmp_path / "disc_checkpoint_final.bin").exists()


def test_cnf_training_runs_and_logs_nll(tmp_path):
    cfg = tiny_cfg(loss="cnf", steps=5, batch_size=16, lr=1e-4,
                   beta1=0.9, beta2=0.999)
    report = trainer.train(cfg, tmp_path)
    assert report.diverged_at is None
    assert report.nll is not None and np.isfinite(report.nll)


def test_cnf_requires_source_density(tmp_path):
    cfg = tiny_cfg(loss="cnf", steps=2, problem="digit")
    prob = problems.ProblemSpec(
        name="digit", dim=2,
        sample_mu=lambda n, rng: rng.normal(size=(n, 2)),
        sample_nu=lambda n, rng: rng.normal(size=(n, 2)))
    with pytest.raises(ConfigError, match="density"):
        trainer.train(cfg, tmp_path, problem=prob)


def test_divergence_aborts_and_keeps_report(tmp_path):
    cfg = tiny_cfg(steps=50, lr=1e150)   # optimizer blows the weights up
    report = trainer.train(cfg, tmp_path)
    assert report.diverged_at is not None
    payload = json.loads((tmp_path / "report.json").read_text())
    assert payload["report"]["diverged_at"] == report.diverged_at
    assert payload["report"]["sw_distance"] is None
    assert "divergence" in payload


# -- evaluation ----------------------------------------------------------------------


def test_evaluate_analytic_map_as_frozen_generator():
    p = problems.gaussian_problem()
    rep = trainer.evaluate_generator(p.analytic_map, p, 10 ** 4, seed=0)
    assert rep.map_error == 0.0
    assert rep.std_axes[0] == pytest.approx(1.0, abs=0.03)
    assert rep.std_axes[1] == pytest.approx(0.5, abs=0.03)


def test_evaluate_identity_on_ring_mean_norm():
    p = problems.ring_problem()
    rep = trainer.evaluate_generator(lambda X: X, p, 10 ** 4, seed=1)
    assert rep.mean_norm == pytest.approx(0.75, abs=0.01)


def test_evaluate_deterministic():
    p = problems.gaussian_problem()
    a = trainer.evaluate_generator(p.analytic_map, p, 2000, seed=3)
    b = trainer.evaluate_generator(p.analytic_map, p, 2000, seed=3)
    assert a.to_json_dict() == b.to_json_dict()


def test_evaluate_checkpoint_round_trip(tmp_path):
    cfg = tiny_cfg(steps=3)
    trainer.train(cfg, tmp_path)
    rep = trainer.evaluate_checkpoint(tmp_path / "checkpoint_final.bin", cfg,
                                      1000, seed=5)
    assert rep.problem == "gaussian"
    assert np.isfinite(rep.sw_distance)


def test_evaluate_checkpoint_dimension_mismatch(tmp_path):
    cfg = tiny_cfg(steps=1)
    trainer.train(cfg, tmp_path)
    bigger = tiny_cfg(hidden_width=16)
    with pytest.raises(ConfigError, match="match"):
        trainer.evaluate_checkpoint(tmp_path / "checkpoint_final.bin", bigger,
                                    100, seed=0)


def test_run_cache_reuses_finished_runs(tmp_path):
    from potflow.runcache import ensure_run, load_report, semantic_key
    cfg = tiny_cfg(steps=4)
    d1 = ensure_run(cfg, tmp_path)
    stamp = (d1 / "report.json").stat().st_mtime_ns
    d2 = ensure_run(cfg, tmp_path)
    assert d1 == d2
    assert (d2 / "report.json").stat().st_mtime_ns == stamp
    # cadence fields do not change the key; semantic fields do
    assert semantic_key(tiny_cfg(steps=4, eval_every=7)) == semantic_key(cfg)
    assert semantic_key(tiny_cfg(steps=5)) != semantic_key(cfg)
    assert load_report(d2)["config"]["steps"] == 4
