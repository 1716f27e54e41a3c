"""F1 as a function of the smoothing balance factor mu."""
import argparse
from pathlib import Path

from relinfill.data_io import SynthSpec, generate_synthetic
from relinfill.evaluation import DEFAULT_MU_GRID, format_table, sweep_mu, write_csv, write_jsonl
from relinfill.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/sweep_mu")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--mu", type=float, nargs="+", default=list(DEFAULT_MU_GRID))
    args = ap.parse_args()

    _, splits = generate_synthetic(SynthSpec(seed=args.seed))
    rows = sweep_mu(splits["train"], splits["test"], args.mu, TrainConfig(seed=args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(rows, out / "sweep_mu.jsonl")
    write_csv(rows, out / "sweep_mu.csv", ["mu", "f1", "precision", "recall"])
    print(format_table(rows, ["mu", "f1", "precision", "recall"]), end="")


if __name__ == "__main__":
    main()
