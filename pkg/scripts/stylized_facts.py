"""Mean reversion, volatility memory and vol-of-vol of long simulated paths.

Prints acf of sigma at lags 1, 3 and 1/(A r0) years and the annualized
vol-of-vol for several seeds.

    python3 scripts/stylized_facts.py --seeds 0 1 2
"""
import argparse

import numpy as np

from voltail.estimators import acf, vol_of_vol
from voltail.model import ModelParams, VolModel
from voltail.sim import SimSpec, simulate_volatility


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=2_000_000)
    args = ap.parse_args()

    p = ModelParams()
    m = VolModel(p)
    for seed in args.seeds:
        spec = SimSpec.default(m, n_paths=1, n_steps=args.steps, seed=seed)
        ens = simulate_volatility(m, spec)
        s = ens.sigma_paths[0, 1:]
        dt = spec.dt_sim * spec.record_every
        lags_y = np.array([1.0, 3.0, 1.0 / (p.A * p.r0)])
        rho = acf(s, np.round(lags_y / dt).astype(int))
        vv = vol_of_vol(s, 1.0, dt)
        print(f"seed {seed}: span {s.size * dt:.0f} yr, acf at {lags_y.tolist()} yr = "
              f"{np.round(rho, 3).tolist()}, vol-of-vol {vv:.1f}%/yr")


if __name__ == "__main__":
    main()
