"""Test error as a function of the number of training pushes.

Each seed's dataset is generated once; the identifier is trained on its first
n pushes and always evaluated on the same held-out pushes.
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from pushid import ident, scen


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--archetype", default="hammer", choices=scen.ARCHETYPES)
    ap.add_argument("--k", type=int, default=9)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sizes", default="1,2,3,4")
    ap.add_argument("--out", default="results/training_size.csv")
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    errors = {n: [] for n in sizes}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "n_train", "test_error"])
        for seed in range(args.seeds):
            sc = scen.make_archetype(args.archetype, args.k, seed=seed, n_train=max(sizes))
            ds = scen.generate_data(sc)
            config = ident.IdentConfig(identify_mass=True, total_mass=sc.total_mass, seed=seed,
                                       eval_every=0)
            for n in sizes:
                report = ident.identify_gradient(sc.grid, ds.train[:n], config, test=ds.test)
                errors[n].append(report.test_error)
                w.writerow([seed, n, repr(report.test_error)])
            print(f"seed={seed} " + " ".join(f"{n}:{errors[n][-1]:.4f}" for n in sizes),
                  flush=True)
    for n in sizes:
        print(f"n_train={n} mean_test_error={np.mean(errors[n]):.4f}")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
