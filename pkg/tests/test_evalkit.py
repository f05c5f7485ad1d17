import json
import math

import numpy as np
import pytest

from pshmm import evalkit
from pshmm.errors import IngestionError, InvalidArgumentError, PshmmError, UndefinedMetricError
from pshmm.evalkit import (BenchConfig, MinuteBarSeries, align_returns, annualized_return,
                           bench_timing, daily_strategy_return, ingest_minute_bars, lag_embed,
                           load_market_dir, market_fixture, max_drawdown, r_squared,
                           run_rolling_backtest, sharpe_ratio, simulation_study,
                           write_market_fixture)


# ---------------------------------------------------------------- metrics

def test_r_squared_examples():
    actual = np.array([[1.0], [3.0]])
    assert r_squared(actual, actual) == 1.0
    assert r_squared(np.full_like(actual, 2.0), actual) == 0.0
    # offset c=0.5 on a 2x1 case: 1 - 2 * 0.25 / 2
    assert r_squared(actual + 0.5, actual) == pytest.approx(0.75)
    with pytest.raises(UndefinedMetricError):
        r_squared(actual, np.ones((2, 1)))
    with pytest.raises(InvalidArgumentError):
        r_squared(np.zeros(3), np.zeros(2))


def test_daily_strategy_return_examples():
    assert daily_strategy_return([[0.02, -0.01]], [[0.01, -0.02]]) == pytest.approx(0.03, abs=1e-15)
    Y = [[0.01, -0.02, 0.005], [-0.03, 0.01, 0.0]]
    assert daily_strategy_return(Y, Y) == pytest.approx(np.abs(Y).sum() / 2)
    assert daily_strategy_return([[0.0, 0.0]], [[0.5, -0.1]]) == 0.0
    with pytest.raises(InvalidArgumentError):
        daily_strategy_return([[1.0, 2.0]], [[1.0]])


def test_annualized_return_examples():
    assert annualized_return([0.01] * 4) == pytest.approx(3.65)
    assert annualized_return([0.02, -0.01]) == pytest.approx(1.825)
    with pytest.raises(UndefinedMetricError):
        annualized_return([])


def test_sharpe_examples():
    assert sharpe_ratio([0.01, 0.03]) == pytest.approx(math.sqrt(365) * 0.02 / math.sqrt(2e-4))
    assert sharpe_ratio([0.01, 0.03]) == pytest.approx(27.02, abs=5e-3)
    with pytest.raises(UndefinedMetricError):
        sharpe_ratio([0.01, 0.01, 0.01])
    d = np.array([0.01, -0.004, 0.02, 0.003])
    assert sharpe_ratio(3.7 * d) == pytest.approx(sharpe_ratio(d), rel=1e-13)


def test_max_drawdown_examples():
    assert max_drawdown([0.01, 0.02, 0.03]) == 0.0
    assert max_drawdown([0.1, -0.05, -0.05]) == pytest.approx(0.1 / 1.05, rel=1e-14)
    assert max_drawdown([-0.6, -0.6]) == pytest.approx(3.0)
    with pytest.raises(InvalidArgumentError):
        max_drawdown([0.1])


def test_max_drawdown_matches_pair_enumeration(rng):
    R = rng.normal(0, 0.05, size=12)
    best = 0.0
    for m2 in range(1, 13):
        for m1 in range(1, m2):
            best = max(best, -R[m1 - 1:m2].sum() / (1 + R[:m1].sum()))
    assert max_drawdown(R) == pytest.approx(best, rel=1e-12)


# ---------------------------------------------------------------- ingestion

def _write(path, text):
    path.write_text(text)
    return path


def test_ingest_simple(tmp_path):
    s = ingest_minute_bars(_write(tmp_path / "x.csv", "timestamp,close\n10,100\n11,101\n"))
    assert np.allclose(s.log_returns, [math.log(1.01)])
    assert s.name == "x" and s.gaps.size == 0


def test_ingest_iso_and_gaps(tmp_path):
    text = ("timestamp,close\n2022-01-01T00:00:00Z,1\n2022-01-01T00:01:00Z,2\n"
            "2022-01-01T00:05:00+00:00,3\n")
    s = ingest_minute_bars(_write(tmp_path / "iso.csv", text))
    assert s.timestamps[0] == 1640995200 // 60
    assert np.array_equal(np.diff(s.timestamps), [1, 4])
    assert np.array_equal(s.gaps, [1])


@pytest.mark.parametrize("body, row", [("10,100\n10,101\n", 2), ("10,100\n11,-1\n", 2),
                                       ("10,100\n9,1\n12,1\n", 2), ("10,abc\n11,1\n", 1)])
def test_ingest_rejects_bad_rows(tmp_path, body, row):
    with pytest.raises(IngestionError) as exc:
        ingest_minute_bars(_write(tmp_path / "b.csv", "timestamp,close\n" + body))
    assert exc.value.rows == [row]


def test_ingest_needs_header(tmp_path):
    with pytest.raises(IngestionError):
        ingest_minute_bars(_write(tmp_path / "h.csv", "10,100\n11,101\n"))


def test_fixture_shape_and_roundtrip(tmp_path):
    series = write_market_fixture(tmp_path, seed=3, n_days=45, minutes_per_day=30)
    assert list(series) == list(evalkit.FIXTURE_CURRENCIES)
    loaded = load_market_dir(tmp_path)
    assert sorted(loaded) == sorted(series)
    for name, s in series.items():
        assert s.closes.size == 45 * 30
        assert np.unique(s.timestamps // 1440).size == 45
        assert np.array_equal(loaded[name].timestamps, s.timestamps)
        assert np.array_equal(loaded[name].closes, s.closes)
    assert json.loads((tmp_path / "fixture.json").read_text())["seed"] == 3


def test_fixture_deterministic():
    a, b = market_fixture(seed=5, n_days=3), market_fixture(seed=5, n_days=3)
    assert all(np.array_equal(a[k].closes, b[k].closes) for k in a)
    c = market_fixture(seed=6, n_days=3)
    assert not np.array_equal(a["BTC"].closes, c["BTC"].closes)


def test_align_returns_drops_gap_returns():
    s = market_fixture(n_days=2, minutes_per_day=3)
    names, ts, R = align_returns(s)
    assert names == sorted(s) and R.shape == (4, 5)
    assert np.array_equal(ts % 1440, [1, 2, 1, 2])


def test_lag_embed():
    R = np.arange(6.0).reshape(3, 2)
    assert np.array_equal(lag_embed(R, 2), [[0, 1, 0, 0], [2, 3, 0, 1], [4, 5, 2, 3]])


# ---------------------------------------------------------------- backtest

def _small():
    return market_fixture(seed=7, n_days=8, minutes_per_day=120)


def test_ar_backtest_frozen_report():
    rep = run_rolling_backtest(_small(), "ar", train_days=5)
    assert rep.days == [19005, 19006, 19007] and rep.prediction_counts == [118] * 3
    assert np.allclose(rep.daily_returns, [-0.00719775826495912, -0.011544546324248728,
                                           -0.0015919700662902158], rtol=1e-10, atol=0)
    assert rep.valid and rep.skipped_days == []
    assert (rep.annualized_return, rep.sharpe, rep.max_drawdown) == rep.recompute()


def test_backtest_deterministic_and_json():
    a = run_rolling_backtest(_small(), "pshmm", train_days=5, seed=1)
    b = run_rolling_backtest(_small(), "pshmm", train_days=5, seed=1)
    assert a.to_json() == b.to_json()
    doc = json.loads(a.to_json())
    assert doc["config"]["states"] == 4 and len(doc["daily_returns"]) == 3


@pytest.mark.parametrize("method, online", [("shmm", False), ("em", False), ("pshmm", True)])
def test_backtest_other_methods(method, online):
    rep = run_rolling_backtest(_small(), method, train_days=6, online=online)
    assert rep.valid and len(rep.daily_returns) == 2
    assert all(np.isfinite(rep.daily_returns))


def test_backtest_skipped_days_invalidate(monkeypatch):
    real = evalkit._day_forecasts
    calls = {"n": 0}

    def flaky(*args, **kw):
        calls["n"] += 1
        if calls["n"] == 2:
            raise PshmmError("injected failure")
        return real(*args, **kw)

    monkeypatch.setattr(evalkit, "_day_forecasts", flaky)
    with pytest.warns(UserWarning):
        rep = run_rolling_backtest(_small(), "ar", train_days=5)
    assert rep.skipped_days == [19006] and len(rep.daily_returns) == 2
    assert not rep.valid


def test_backtest_argument_errors():
    with pytest.raises(InvalidArgumentError):
        run_rolling_backtest(_small(), "bogus")
    with pytest.raises(InvalidArgumentError):
        run_rolling_backtest(_small(), "ar", train_days=8)
    with pytest.raises(InvalidArgumentError):
        run_rolling_backtest(_small(), "pshmm", states=6)


# ---------------------------------------------------------------- simulation / bench

def test_simulation_study_structure():
    res = simulation_study(p=6, L_train=300, L_test=50, reps=2, seed=1,
                           methods=("shmm", "pshmm_simplex", "pshmm_online", "strong_oracle"))
    assert set(res) == {"shmm", "pshmm_simplex", "pshmm_online", "strong_oracle"}
    assert all(len(v) == 2 and np.all(np.isfinite(v)) for v in res.values())
    assert res == simulation_study(p=6, L_train=300, L_test=50, reps=2, seed=1,
                                   methods=("shmm", "pshmm_simplex", "pshmm_online",
                                            "strong_oracle"))


def test_bench_small():
    cfg = BenchConfig(p=10, length=220, warmup=200, test_steps=5,
                      methods=("shmm_offline", "shmm_online", "pshmm_simplex_online", "em"))
    out = bench_timing(cfg)
    assert list(out) == list(cfg.methods) and all(v > 0 for v in out.values())
    with pytest.raises(InvalidArgumentError):
        bench_timing(BenchConfig(length=100, warmup=90, test_steps=20))
