"""Equal-budget comparison of the four identifiers (test error vs simulations).

Writes one CSV with every recorded checkpoint of every method for each seed,
ready for plotting error against simulation count or wall time.
"""
import argparse
import csv
import time
from pathlib import Path

from pushid import cli, ident, scen


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--archetype", default="hammer", choices=scen.ARCHETYPES)
    ap.add_argument("--k", type=int, default=25)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--budget", type=int, default=500)
    ap.add_argument("--eval-every", type=int, default=20)
    ap.add_argument("--out", default="results/compare_methods.csv")
    args = ap.parse_args()

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "method", "epoch", "sim_count", "wall_time", "loss", "test_error"])
        for seed in range(args.seeds):
            sc = scen.make_archetype(args.archetype, args.k, seed=seed)
            ds = scen.generate_data(sc)
            config = ident.IdentConfig(identify_mass=True, total_mass=sc.total_mass, seed=seed,
                                       eval_every=args.eval_every)
            for method in cli.METHODS:
                t0 = time.perf_counter()
                try:
                    report = cli.run_method(method, ds, config, args.budget)
                except ident.IdentificationDiverged as exc:
                    report = exc.report
                for c in report.checkpoints:
                    w.writerow([seed, method, c.epoch, c.sim_count, f"{c.wall_time:.3f}",
                                repr(c.loss), repr(c.test_error)])
                print(f"seed={seed} {method:10s} epochs={report.epochs:4d} "
                      f"sims={report.sim_count:4d} test_error={report.test_error:.4f} "
                      f"({time.perf_counter() - t0:.1f}s)", flush=True)
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
