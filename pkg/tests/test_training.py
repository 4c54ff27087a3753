import math

import numpy as np
import pytest
from sklearn.base import clone

from polaropt.exceptions import DivergenceDetected
from polaropt.so3.data import make_point_clouds
from polaropt.so3.estimator import SO3Regressor
from polaropt.so3.training import (TrainConfig, TrainResult, make_data, paired_stats,
                                   run_sweep, summarize_sweep, sweep_configs, train)

TINY = dict(hc=4, n_layers=2, n_train=48, n_test=24, n_points=8, batch_size=16,
            warmup_epochs=1, patience=5)


def tiny(**kw):
    return TrainConfig(**{**TINY, **kw})


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.warmup_epochs, cfg.patience, cfg.weight_decay) == (100, 10, 30, 0.0)
    assert (cfg.n_train, cfg.n_test, cfg.n_points, cfg.batch_size) == (2048, 512, 32, 64)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")
    with pytest.raises(ValueError):
        TrainConfig(n_points=2)


def test_epochs_zero_reports_untrained():
    res = train(tiny(epochs=0))
    assert res.history == [] and res.stopped_epoch == 0
    est = SO3Regressor(hidden_channels=4, n_layers=2, random_state=0)
    _, _, x_test, y_test = make_data(tiny())
    pred = _predict_untrained(est, x_test)
    assert res.final_test_mse == pytest.approx(np.mean((pred - y_test) ** 2), rel=1e-12)


def _predict_untrained(est, x):
    from polaropt.so3.model import forward

    return forward(est.init_model(), x)[0]


def test_one_epoch_history():
    res = train(tiny(epochs=1))
    assert len(res.history) == 1
    rec = res.history[0]
    assert set(rec) == {"epoch", "lr", "train_mse", "test_mse"}
    assert rec["lr"] == pytest.approx(1e-3 * 1e-2)


@pytest.mark.parametrize("optimizer, lr", [("adamw", 1e-2), ("muon", 3e-2), ("polaradamw", 3e-2)])
def test_training_reduces_error(optimizer, lr):
    res = train(tiny(epochs=10, warmup_epochs=0, optimizer=optimizer, lr=lr, aux_lr=1e-2))
    untrained = train(tiny(epochs=0, optimizer=optimizer)).final_test_mse
    assert res.final_test_mse < 0.5 * untrained
    assert res.final_test_mse == min(h["test_mse"] for h in res.history)


def test_train_deterministic():
    a = train(tiny(epochs=3, optimizer="muon", seed=4))
    b = train(tiny(epochs=3, optimizer="muon", seed=4))
    assert a.final_test_mse == b.final_test_mse
    assert a.record(include_wall=False) == b.record(include_wall=False)


def test_pairing_contract():
    arms = [tiny(optimizer=o, seed=3) for o in ("adamw", "muon", "polaradamw")]
    data = [make_data(c) for c in arms]
    for d in data[1:]:
        for a, b in zip(data[0], d):
            np.testing.assert_array_equal(a, b)
    inits = [SO3Regressor(hidden_channels=4, n_layers=2, optimizer=c.optimizer,
                          random_state=3).init_model().params for c in arms]
    for p in inits[1:]:
        for k in p:
            np.testing.assert_array_equal(p[k], inits[0][k])
    assert not np.array_equal(make_data(tiny(seed=4))[0], data[0][0])


def test_early_stopping():
    res = train(tiny(epochs=40, patience=2, optimizer="muon", lr=0.3))
    assert res.stopped_epoch < 40
    assert res.stopped_epoch - 1 - res.best_epoch == 2 or res.best_epoch == -1


def test_divergence_detected():
    est = SO3Regressor(hidden_channels=4, n_layers=2, optimizer="adamw", lr=1e200,
                       aux_lr=1e200, epochs=3, warmup_epochs=0, batch_size=16)
    x, y = make_point_clouds(32, 8, np.random.default_rng(0))
    with pytest.raises(DivergenceDetected):
        with np.errstate(all="ignore"):
            est.fit(x * 1e3, y)


def test_estimator_sklearn_api():
    est = SO3Regressor(hidden_channels=4, n_layers=1, epochs=2, batch_size=16)
    assert clone(est).get_params() == est.get_params()
    x, y = make_point_clouds(32, 6, np.random.default_rng(0))
    est.fit(x, y)
    assert est.predict(x).shape == (32,)
    assert est.predict(x[0]).shape == (1,)
    assert np.isfinite(est.score(x, y))
    assert len(est.history_) == 2 and "test_mse" not in est.history_[0]
    with pytest.raises(ValueError):
        SO3Regressor(optimizer="sgd").fit(x, y)
    with pytest.raises(ValueError):
        est.fit(x, y[:-1])


def test_paired_stats():
    st = paired_stats([3.0, 5.0, 4.0], [1.0, 2.0, 2.0])
    d = np.array([2.0, 3.0, 2.0])
    assert st.n == 3 and st.mean_delta == pytest.approx(d.mean())
    assert st.t_stat == pytest.approx(d.mean() / (d.std(ddof=1) / math.sqrt(3)))
    assert st.sign_fraction == 1.0
    assert paired_stats([1.0], [0.5]).t_stat is None
    assert paired_stats([1.0, 2.0], [0.0, 1.0]).t_stat is None


def _fake(opt, seed, mse, hc=16, diverged=False):
    return TrainResult(TrainConfig(hc=hc, optimizer=opt, seed=seed), [], mse, 1, 0, 0.0, diverged)


def test_summarize_sweep_rows():
    results = []
    for s in range(4):
        results += [_fake("adamw", s, 1.0 + s), _fake("muon", s, 0.5 + s),
                    _fake("polaradamw", s, 0.7 + s)]
    rows = summarize_sweep(results)
    assert [r["optimizer"] for r in rows] == ["adamw", "muon", "polaradamw", "polaradamw-muon"]
    assert rows[1]["paired_delta"] == pytest.approx(-0.5)
    assert rows[1]["beats_adamw_fraction"] == 1.0
    assert rows[3]["paired_delta"] == pytest.approx(0.2)
    assert rows[3]["sign_fraction"] == 1.0
    assert rows[3]["paired_t"] is None  # constant differences


def test_summarize_sweep_drops_failed_seed_pairwise():
    results = [_fake("adamw", 0, 1.0), _fake("muon", 0, 0.5), _fake("polaradamw", 0, 0.6),
               _fake("adamw", 1, 1.0), _fake("muon", 1, math.nan, diverged=True),
               _fake("polaradamw", 1, 0.1)]
    rows = summarize_sweep(results)
    assert all(r["n"] == 1 for r in rows)
    assert rows[0]["failed_seeds"] == "1"
    assert rows[2]["mean_mse"] == 0.6


def test_sweep_grid_and_parallel_agree():
    base = tiny(epochs=1)
    configs = sweep_configs(base, [4], ["adamw", "muon"], 2)
    assert [(c.seed, c.optimizer) for c in configs] == [
        (0, "adamw"), (0, "muon"), (1, "adamw"), (1, "muon")]
    serial = run_sweep(base, [4], ["adamw", "muon"], 2, parallel=1)
    par = run_sweep(base, [4], ["adamw", "muon"], 2, parallel=2)
    assert [r.final_test_mse for r in serial] == [r.final_test_mse for r in par]
