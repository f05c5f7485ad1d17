"""Evaluation: forecast metrics, trading statistics, minute-bar ingestion,
rolling backtests, simulation studies and timing benchmarks."""
from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import baselines
from .errors import (InvalidArgumentError, IngestionError, PshmmError, UndefinedMetricError)
from .model_sim import HmmSpec, make_spec, sample_states, sample_trajectory
from .projection import fit_pshmm, iter_online_pshmm
from .spectral import fit_shmm, iter_online_shmm

MINUTES_PER_DAY = 1440


# --------------------------------------------------------------------------- metrics

def r_squared(pred, actual) -> float:
    """Pooled R^2 with per-dimension means of ``actual`` as the baseline."""
    pred = np.asarray(pred, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if pred.shape != actual.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {actual.shape}")
    if actual.ndim == 1:
        pred, actual = pred[:, None], actual[:, None]
    if actual.shape[0] < 2:
        raise InvalidArgumentError("need at least two rows")
    sst = ((actual - actual.mean(axis=0)) ** 2).sum()
    if sst == 0:
        raise UndefinedMetricError("actual values have zero variance")
    return float(1.0 - ((pred - actual) ** 2).sum() / sst)


def daily_strategy_return(preds, actuals) -> float:
    """Average over currencies of ``sum_t sign(pred) * actual`` for one day.

    ``preds`` and ``actuals`` are sequences (one entry per currency) of
    equally long per-minute arrays.
    """
    if len(preds) != len(actuals) or len(preds) == 0:
        raise InvalidArgumentError("need the same non-zero number of currencies")
    total = 0.0
    for p, a in zip(preds, actuals):
        p = np.asarray(p, dtype=float)
        a = np.asarray(a, dtype=float)
        if p.shape != a.shape:
            raise InvalidArgumentError("predictions and returns are misaligned")
        total += float(np.sum(np.sign(p) * a))
    return total / len(preds)


def annualized_return(daily) -> float:
    daily = np.asarray(daily, dtype=float)
    if daily.size == 0:
        raise UndefinedMetricError("no daily returns")
    return float(365.0 * daily.mean())


def sharpe_ratio(daily) -> float:
    daily = np.asarray(daily, dtype=float)
    if daily.size < 2:
        raise UndefinedMetricError("need at least two daily returns")
    sd = daily.std(ddof=1)
    if sd == 0 or np.allclose(daily, daily[0], rtol=0, atol=1e-15 * max(1.0, abs(daily[0]))):
        raise UndefinedMetricError("daily returns have zero standard deviation")
    return float(math.sqrt(365.0) * daily.mean() / sd)


def max_drawdown(daily) -> float:
    """``max_{m1 < m2} sum_{m=m1}^{m2} (-R_m) / (1 + sum_{m=1}^{m1} R_m)``, floored at 0.

    Both sums include day ``m1`` (1-based), exactly as the formula is stated.
    """
    R = np.asarray(daily, dtype=float)
    M = R.size
    if M < 2:
        raise InvalidArgumentError("need at least two daily returns")
    cs = np.concatenate([[0.0], np.cumsum(R)])       # cs[m] = R_1 + ... + R_m
    m1 = np.arange(1, M + 1)[:, None]
    m2 = np.arange(1, M + 1)[None, :]
    num = -(cs[m2] - cs[m1 - 1])
    den = 1.0 + cs[m1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(m1 < m2, num / den, -np.inf)
    ratio = ratio[np.isfinite(ratio) | (ratio == np.inf)]
    best = float(ratio.max()) if ratio.size else 0.0
    return max(best, 0.0)


# --------------------------------------------------------------------------- market data

@dataclass
class MinuteBarSeries:
    timestamps: np.ndarray
    closes: np.ndarray
    name: str = ""

    @property
    def log_returns(self) -> np.ndarray:
        return np.diff(np.log(self.closes))

    @property
    def return_timestamps(self) -> np.ndarray:
        return self.timestamps[1:]

    @property
    def gaps(self) -> np.ndarray:
        """Indices ``i`` where ``timestamps[i+1] - timestamps[i] > 1`` minute."""
        return np.nonzero(np.diff(self.timestamps) > 1)[0]


def _parse_minute(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() // 60)


def ingest_minute_bars(path) -> MinuteBarSeries:
    """Read a ``timestamp,close`` CSV (epoch minutes or ISO-8601 timestamps)."""
    path = Path(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0][:2]] != ["timestamp", "close"]:
        raise IngestionError(f"{path}: expected header 'timestamp,close'")
    ts, closes, bad = [], [], []
    for i, row in enumerate(rows[1:], start=1):
        try:
            t = _parse_minute(row[0])
            c = float(row[1])
        except (ValueError, IndexError):
            bad.append(i)
            continue
        if not c > 0 or not math.isfinite(c):
            bad.append(i)
        elif ts and t <= ts[-1]:
            bad.append(i)
        ts.append(t)
        closes.append(c)
    if bad:
        raise IngestionError(f"{path}: invalid rows (non-positive close or non-increasing "
                             f"timestamp) at {bad[:20]}", rows=bad)
    if len(ts) < 2:
        raise IngestionError(f"{path}: need at least two bars")
    return MinuteBarSeries(np.asarray(ts, dtype=np.int64), np.asarray(closes), path.stem)


def write_minute_bars(path, series: MinuteBarSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp", "close"])
        for t, c in zip(series.timestamps, series.closes):
            w.writerow([int(t), format(c, ".17g")])


def load_market_dir(directory) -> dict:
    return {p.stem: ingest_minute_bars(p) for p in sorted(Path(directory).glob("*.csv"))}


FIXTURE_CURRENCIES = ("BTC", "ETH", "XRP", "ADA", "MATIC")


def market_fixture(seed: int = 2022, n_days: int = 45, n_currencies: int = 5,
                   start_day: int = 19_000, minutes_per_day: int = MINUTES_PER_DAY,
                   p_stay: float = 0.97, signal: float = 1e-4, noise: float = 1e-3,
                   df: float = 3.0) -> dict:
    """Synthetic regime-switching minute bars driven by a shared hidden 4-state chain.

    The regimes are large/small gains and losses: each has its own drift and
    volatility per currency, and the noise is Student-t with ``df`` degrees of
    freedom scaled to unit variance.  When ``minutes_per_day < 1440`` each
    day holds a session of that many bars starting at UTC midnight.
    """
    if not 2 <= minutes_per_day <= MINUTES_PER_DAY:
        raise InvalidArgumentError("minutes_per_day must lie in [2, 1440]")
    if df <= 2:
        raise InvalidArgumentError("df must exceed 2")
    rng = np.random.default_rng(seed)
    S = 4
    T = np.full((S, S), (1 - p_stay) / (S - 1))
    np.fill_diagonal(T, p_stay)
    ts = ((start_day + np.arange(n_days))[:, None] * MINUTES_PER_DAY
          + np.arange(minutes_per_day)[None, :]).ravel().astype(np.int64)
    L = ts.size
    states = sample_states(np.full(S, 1 / S), T, L, rng)
    drift = np.array([2.0, 0.5, -0.5, -2.0])
    vol = np.array([2.0, 1.0, 1.0, 2.0])
    loads = 1.0 + 0.3 * rng.standard_normal((n_currencies, S))
    means = signal * drift[None, :] * loads
    t_scale = math.sqrt((df - 2) / df)
    names = (FIXTURE_CURRENCIES + tuple(f"C{i}" for i in range(5, n_currencies)))[:n_currencies]
    out = {}
    for c, name in enumerate(names):
        h = states[1:]
        r = means[c, h] + noise * vol[h] * t_scale * rng.standard_t(df, L - 1)
        closes = 100.0 * np.exp(np.concatenate([[0.0], np.cumsum(r)]))
        out[name] = MinuteBarSeries(ts.copy(), closes, name)
    return out


def write_market_fixture(directory, **kw) -> dict:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    series = market_fixture(**kw)
    for name, s in series.items():
        write_minute_bars(directory / f"{name}.csv", s)
    (directory / "fixture.json").write_text(json.dumps(kw or {"seed": 2022}))
    return series


# --------------------------------------------------------------------------- backtest

@dataclass
class BacktestReport:
    method: str
    days: list
    daily_returns: list
    annualized_return: float
    sharpe: float
    max_drawdown: float
    prediction_counts: list
    skipped_days: list = field(default_factory=list)
    valid: bool = True
    config: dict = field(default_factory=dict)

    def recompute(self) -> tuple:
        return (annualized_return(self.daily_returns), _safe_sharpe(self.daily_returns),
                max_drawdown(self.daily_returns))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def _safe_sharpe(daily) -> float:
    try:
        return sharpe_ratio(daily)
    except UndefinedMetricError:
        return float("nan")


def align_returns(series: dict):
    """Common-timestamp matrix of one-minute log returns, one column per currency.

    Returns spanning a gap in the bars are dropped.
    """
    names = sorted(series)
    common = None
    for n in names:
        s = series[n]
        ts = s.return_timestamps[np.diff(s.timestamps) == 1]
        common = ts if common is None else np.intersect1d(common, ts)
    R = np.empty((common.size, len(names)))
    for j, n in enumerate(names):
        s = series[n]
        R[:, j] = s.log_returns[np.searchsorted(s.return_timestamps, common)]
    return names, common, R


def lag_embed(R: np.ndarray, lags: int) -> np.ndarray:
    """Rows ``[r_t, r_{t-1}, ..., r_{t-lags+1}]`` (first ``lags-1`` rows zero-padded)."""
    if lags == 1:
        return R
    n, c = R.shape
    out = np.zeros((n, c * lags))
    for k in range(lags):
        out[k:, k * c:(k + 1) * c] = R[: n - k]
    return out


BACKTEST_METHODS = ("pshmm", "shmm", "em", "ar")


def _day_forecasts(method, X_tr, X_day, ctx, states, seed, em_iters, online, gamma):
    """Forecasts for every row of ``X_day`` from a model trained on ``X_tr``.

    Offline models are frozen and primed on the ``ctx`` rows preceding the
    day.  Online spectral variants start from the training window as warm-up
    and keep updating their moments through the day.
    """
    n = X_day.shape[0]
    if method == "ar":
        coef = baselines.fit_ar1(X_tr)
        return coef.predict(np.vstack([X_tr[-1:], X_day[:-1]]))
    if online and method in ("pshmm", "shmm"):
        X = np.vstack([X_tr, X_day])
        it = (iter_online_pshmm(X, X_tr.shape[0], states, gamma, seed=seed) if method == "pshmm"
              else iter_online_shmm(X, X_tr.shape[0], states, gamma, seed=seed))
        return np.array([s.x_hat for s in it])[:n]
    block = np.vstack([ctx, X_day])
    if method == "shmm":
        pred = fit_shmm(X_tr, states, seed=seed).predict_path(block)[0]
    elif method == "pshmm":
        pred = fit_pshmm(X_tr, states, seed=seed).predict_path(block)[0]
    elif method == "em":
        model = baselines.fit_baum_welch(X_tr, states, max_iters=em_iters, seed=seed, restarts=1)
        pred = baselines.ghmm_predict_path(model, block)
    else:
        raise InvalidArgumentError(f"unknown method {method!r}")
    return pred[ctx.shape[0]: ctx.shape[0] + n]


def run_rolling_backtest(series: dict, method: str = "pshmm", train_days: int = 30, states: int = 4,
                         lags: int = 1, context: int = 60, seed: int = 0, em_iters: int = 30,
                         online: bool = False, gamma: float = 0.0,
                         max_skip_frac: float = 0.10) -> BacktestReport:
    """Rolling-window backtest: refit on the trailing ``train_days`` days, trade each test day.

    All currencies are modelled jointly (one observation vector per minute,
    optionally lag-embedded) on returns standardised by the training-window
    standard deviation.  Offline models are frozen during a test day and
    forecast each minute from the preceding minutes, with ``context`` minutes
    of the training window priming the recursion.  Minutes whose previous
    minute is missing get no trade.
    """
    if method not in BACKTEST_METHODS:
        raise InvalidArgumentError(f"method must be one of {BACKTEST_METHODS}")
    names, ts, R = align_returns(series)
    C = len(names)
    if method != "ar" and states > C * lags:
        raise InvalidArgumentError(f"states={states} exceeds observation dimension {C * lags}; "
                                   "increase lags")
    day = ts // MINUTES_PER_DAY
    all_days = np.unique(day)
    if all_days.size < train_days + 1:
        raise InvalidArgumentError(f"need at least {train_days + 1} days of data")
    X_all = lag_embed(R, lags)
    daily, counts, tested, skipped = [], [], [], []
    for m in all_days[train_days:]:
        train_idx = np.nonzero((day >= m - train_days) & (day < m))[0]
        test_idx = np.nonzero(day == m)[0]
        if train_idx.size < 10 * states or test_idx.size == 0:
            skipped.append(int(m))
            continue
        scale = X_all[train_idx].std(axis=0)
        scale[scale == 0] = 1.0
        ctx_idx = train_idx[-context:] if context > 0 else train_idx[:0]
        try:
            pred = _day_forecasts(method, X_all[train_idx] / scale, X_all[test_idx] / scale,
                                  X_all[ctx_idx] / scale, states, seed, em_iters, online, gamma)
        except PshmmError as exc:
            warnings.warn(f"day {m}: fit failed ({exc}); skipping")
            skipped.append(int(m))
            continue
        pred = pred[:, :C] * scale[:C]
        contiguous = np.ones(test_idx.size, dtype=bool)
        contiguous[1:] = np.diff(ts[test_idx]) == 1
        start = test_idx[0]
        contiguous[0] = start > 0 and ts[start] - ts[start - 1] == 1
        daily.append(daily_strategy_return(list(pred[contiguous].T), list(R[test_idx][contiguous].T)))
        counts.append(int(contiguous.sum()))
        tested.append(int(m))
    n_total = len(tested) + len(skipped)
    valid = len(tested) >= 2 and len(skipped) <= max_skip_frac * n_total
    cfg = {"method": method, "train_days": train_days, "states": states, "lags": lags,
           "context": context, "seed": seed, "online": online, "gamma": gamma,
           "currencies": names}
    if len(daily) < 2:
        return BacktestReport(method, tested, daily, float("nan"), float("nan"), float("nan"),
                              counts, skipped, False, cfg)
    return BacktestReport(method, tested, daily, annualized_return(daily), _safe_sharpe(daily),
                          max_drawdown(daily), counts, skipped, valid, cfg)


# --------------------------------------------------------------------------- simulation study

SIM_METHODS = ("shmm", "pshmm_simplex", "pshmm_polyhedron", "pshmm_online", "em",
               "limited_oracle", "strong_oracle")


def simulation_r2(spec: HmmSpec, L_train: int, L_test: int, seed: int, d: int | None = None,
                  methods=("shmm", "pshmm_simplex", "limited_oracle", "strong_oracle"),
                  warmup_frac: float = 0.1) -> dict:
    """Test-set R^2 of one-step forecasts for one simulated replicate.

    Every method runs its recursion over the full training + test sequence
    and is scored on the last ``L_test`` rows.
    """
    d = spec.S if d is None else d
    traj = sample_trajectory(spec, L_train + L_test, seed)
    X = traj.observations
    X_train, X_test = X[:L_train], X[L_train:]
    out = {}
    for name in methods:
        if name == "shmm":
            pred = fit_shmm(X_train, d, seed=seed).predict_path(X)[0]
        elif name == "pshmm_simplex":
            pred = fit_pshmm(X_train, d, "simplex", seed=seed).predict_path(X)[0]
        elif name == "pshmm_polyhedron":
            pred = fit_pshmm(X_train, d, "polyhedron", seed=seed).predict_path(X)[0]
        elif name == "pshmm_online":
            warm = max(10 * d, int(warmup_frac * L_train))
            steps = list(iter_online_pshmm(X, warm, d, seed=seed))
            pred = np.vstack([np.zeros((warm, X.shape[1]))] + [s.x_hat for s in steps])
        elif name == "em":
            model = baselines.fit_baum_welch(X_train, d, seed=seed)
            pred = baselines.ghmm_predict_path(model, X)
        elif name == "limited_oracle":
            pred = baselines.limited_oracle_path(spec, X)
        elif name == "strong_oracle":
            pred = np.vstack([spec.M @ spec.pi0, baselines.strong_oracle_path(spec, traj.states)])
        else:
            raise InvalidArgumentError(f"unknown method {name!r}")
        out[name] = r_squared(pred[L_train:L_train + L_test], X_test)
    return out


def simulation_study(S=3, p=20, sigma=0.05, p_stay=0.6, L_train=2000, L_test=100, reps=20,
                     seed=0, methods=("shmm", "pshmm_simplex", "limited_oracle", "strong_oracle"),
                     emission_family="gaussian", df=None, d=None) -> dict:
    """Per-method lists of R^2 over ``reps`` independent replicates."""
    spec = make_spec(S, p, sigma, p_stay, emission_family, df)
    res = {m: [] for m in methods}
    for r, ss in enumerate(np.random.SeedSequence(seed).spawn(reps)):
        rep_seed = int(ss.generate_state(1)[0])
        for m, v in simulation_r2(spec, L_train, L_test, rep_seed, d, methods).items():
            res[m].append(v)
    return res


# --------------------------------------------------------------------------- timing

@dataclass
class BenchConfig:
    p: int = 100
    S: int = 3
    sigma: float = 0.05
    p_stay: float = 0.6
    length: int = 2000
    warmup: int = 1000
    test_steps: int = 1000
    repeats: int = 1
    seed: int = 0
    methods: tuple = ("shmm_offline", "shmm_online", "pshmm_simplex_offline",
                      "pshmm_simplex_online", "pshmm_polyhedron_offline",
                      "pshmm_polyhedron_online", "em")


def _offline(X, start, stop, fit):
    """Refit on ``X[:t]`` and forecast ``x_t`` via the full recursion, for each test step."""
    for t in range(start, stop):
        model = fit(X[:t])
        model.predict_path(X[:t])


def _time_method(name, X, cfg: BenchConfig) -> float:
    start, stop = cfg.warmup, cfg.warmup + cfg.test_steps
    d = cfg.S
    t0 = time.perf_counter()
    if name == "shmm_offline":
        _offline(X, start, stop, lambda Z: fit_shmm(Z, d, seed=cfg.seed))
    elif name == "shmm_online":
        for _ in iter_online_shmm(X[:stop], start, d, seed=cfg.seed):
            pass
    elif name.startswith("pshmm_") and name.endswith("_offline"):
        variant = name.split("_")[1]
        _offline(X, start, stop, lambda Z: fit_pshmm(Z, d, variant, seed=cfg.seed))
    elif name.startswith("pshmm_") and name.endswith("_online"):
        variant = name.split("_")[1]
        for _ in iter_online_pshmm(X[:stop], start, d, variant=variant, seed=cfg.seed):
            pass
    elif name == "em":
        model = baselines.fit_baum_welch(X[:start], d, seed=cfg.seed)
        baselines.ghmm_predict_path(model, X[:stop])
    else:
        raise InvalidArgumentError(f"unknown bench method {name!r}")
    return time.perf_counter() - t0


def bench_timing(cfg: BenchConfig | None = None) -> dict:
    """Mean wall-clock seconds per method over ``cfg.repeats`` simulated datasets."""
    cfg = cfg or BenchConfig()
    if cfg.warmup + cfg.test_steps > cfg.length:
        raise InvalidArgumentError("warm-up plus test steps exceed the sequence length")
    spec = make_spec(cfg.S, cfg.p, cfg.sigma, cfg.p_stay)
    totals = {m: 0.0 for m in cfg.methods}
    for r in range(cfg.repeats):
        X = sample_trajectory(spec, cfg.length, cfg.seed + r).observations
        for m in cfg.methods:
            totals[m] += _time_method(m, X, cfg)
    return {m: v / cfg.repeats for m, v in totals.items()}
