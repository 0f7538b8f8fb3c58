"""Lorenz-63 coefficient MSE for sparse regression and the bilinear RK models."""

import argparse
from pathlib import Path

from rkbinn.dynamics import generate_dataset, make_system
from rkbinn.evaluation import format_identification_table, parameter_mse, write_identification_csv
from rkbinn.experiments import ModelOptions, fit_model, identification_polynomial


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    system = make_system("lorenz63")
    train, _ = generate_dataset(system, 50_000, 1000, seed=args.seed)
    runs = {"SR": ("sr", ModelOptions()), "SR exact field": ("sr", ModelOptions(sr_exact_field=True)),
            "BiNN(1)": ("binn1", ModelOptions()), "BiNN(4)": ("binn4", ModelOptions())}
    reports = {}
    for label, (kind, opts) in runs.items():
        model, _ = fit_model(kind, "lorenz63", train, opts, seed=args.seed, true_field=system.field)
        reports[label] = parameter_mse(identification_polynomial(model), system)
        write_identification_csv(reports[label], out / f"identification_{kind}{'_exact' if opts.sr_exact_field else ''}.csv")
    print(format_identification_table(reports))


if __name__ == "__main__":
    main()
