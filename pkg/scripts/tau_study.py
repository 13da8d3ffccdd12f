"""FedAdaGrad: iterations to reach a 1e-3 relative f-gap as tau shrinks.

The local step is re-derived from the step-size condition at every tau, so it
scales with tau; smaller tau should need more rounds.

    python scripts/tau_study.py --taus 0.1,0.01,0.001 --out runs/tau_study
"""

import argparse
import csv
from pathlib import Path

from savic.engine import FedAdaGradConfig, iterations_to_epsilon, run_fedadagrad
from savic.problems import quadratic_heterogeneous
from savic.theory import fedadagrad_eta_l


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--taus", default="0.1,0.01,0.001")
    ap.add_argument("--eta", type=float, default=16.0)
    ap.add_argument("--G", type=float, default=2.0, help="assumed gradient bound")
    ap.add_argument("--T", type=int, default=40_000)
    ap.add_argument("--v-init", type=float, default=0.01)
    ap.add_argument("--out", default="runs/tau_study")
    args = ap.parse_args()

    suite = quadratic_heterogeneous(2, 2, n_samples=1, mu=0.5, L=1.0, spread=0.0, shift=0.5, opt_radius=1.0, seed=0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for tau in map(float, args.taus.split(",")):
        eta_l = fedadagrad_eta_l(suite.L, args.G, tau, 1, args.T, args.eta)
        cfg = FedAdaGradConfig(eta=args.eta, eta_l=eta_l, tau=tau, T=args.T, v_init=max(args.v_init, tau**2),
                               batch_size=None)
        rec = run_fedadagrad(suite, cfg)
        with open(out / f"tau={tau}.csv", "w", newline="") as fh:
            rec.to_csv(fh)
        its = iterations_to_epsilon(rec, 1e-3 * rec.rows[0].f_gap)
        rows.append((tau, eta_l, its, rec.final.f_gap))
        print(f"tau={tau:<8g} eta_l={eta_l:.3e} iterations={its} final_gap={rec.final.f_gap:.3e}")

    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", "eta_l", "iterations_to_epsilon", "final_f_gap"])
        w.writerows(rows)


if __name__ == "__main__":
    main()
