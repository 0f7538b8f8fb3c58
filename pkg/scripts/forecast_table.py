"""Forecast RMSE at h, 4h, 8h for every model kind on the benchmark systems."""

import argparse
import logging
from pathlib import Path

from rkbinn.dynamics import generate_dataset, make_system
from rkbinn.evaluation import format_forecast_table, rmse_at_horizons, write_forecast_csv
from rkbinn.experiments import MODEL_KINDS, fit_model


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--systems", nargs="+", default=["lorenz63", "oregonator", "lorenz96"])
    ap.add_argument("--kinds", nargs="+", default=list(MODEL_KINDS), choices=MODEL_KINDS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=50_000)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.systems:
        system = make_system(name)
        train, test = generate_dataset(system, args.n_train, 1000, seed=args.seed)
        reports = []
        for kind in args.kinds:
            model, _ = fit_model(kind, name, train, seed=args.seed, true_field=system.field)
            reports.append(rmse_at_horizons(model.predict, test, model_id=kind))
        write_forecast_csv(reports, out / f"forecast_{name}.csv", test.h)
        print(f"\n{name}\n{format_forecast_table(reports)}", flush=True)


if __name__ == "__main__":
    main()
