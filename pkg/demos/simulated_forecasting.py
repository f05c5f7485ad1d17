"""Fit SHMM and PSHMM on a simulated Gaussian HMM and compare one-step forecasts.

Run with ``python3 demos/simulated_forecasting.py``.  The data come from a
3-state sticky chain with one-hot emission means in 20 dimensions; both
spectral models are fitted on 2000 training steps and scored on the next 100.
"""
import numpy as np

from pshmm.baselines import limited_oracle_path
from pshmm.evalkit import r_squared
from pshmm.model_sim import make_spec, sample_trajectory
from pshmm.projection import fit_pshmm
from pshmm.spectral import fit_shmm

L_TRAIN, L_TEST = 2000, 100

for sigma in (0.05, 0.5):
    spec = make_spec(S=3, p=20, sigma=sigma, p_stay=0.6)
    X = sample_trajectory(spec, L_TRAIN + L_TEST, seed=1).observations
    train, test = X[:L_TRAIN], X[L_TRAIN:]

    shmm = fit_shmm(train, d=3, seed=0)
    pshmm = fit_pshmm(train, 3, "simplex", seed=0)

    # Each recursion runs over the whole sequence; row t forecasts x_t from x_{<t}.
    pred_shmm = shmm.predict_path(X)[0][L_TRAIN:-1]
    out, beliefs, flags = pshmm.predict_path(X)
    pred_pshmm = out[L_TRAIN:-1]
    pred_oracle = limited_oracle_path(spec, X)[L_TRAIN:-1]

    print(f"sigma = {sigma}")
    print(f"  SHMM            R2 = {r_squared(pred_shmm, test):+.4f}")
    print(f"  PSHMM (simplex) R2 = {r_squared(pred_pshmm, test):+.4f}")
    print(f"  limited oracle  R2 = {r_squared(pred_oracle, test):+.4f}")
    print(f"  PSHMM beliefs stay on the simplex: min {beliefs.min():.3f}, "
          f"row sums within {np.abs(beliefs.sum(axis=1) - 1).max():.1e} of 1")
