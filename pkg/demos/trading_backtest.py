"""Rolling-window trading backtest on the synthetic regime-switching market fixture.

Run with ``python3 demos/trading_backtest.py``.  Five synthetic currencies
share a hidden 4-state regime.  Each method is refitted on the trailing 30
days and trades the sign of its one-minute forecast on the next day.
"""
from pshmm.evalkit import market_fixture, run_rolling_backtest

series = market_fixture(seed=2, n_days=40, minutes_per_day=240)
print(f"{'method':8s} {'Sharpe':>8s} {'annual':>8s} {'drawdown':>9s} days")
for method in ("pshmm", "shmm", "em", "ar"):
    rep = run_rolling_backtest(series, method, train_days=30, states=4)
    print(f"{method:8s} {rep.sharpe:8.2f} {rep.annualized_return:8.3f} "
          f"{rep.max_drawdown:9.3f} {len(rep.days)}{'' if rep.valid else ' (invalid)'}")
