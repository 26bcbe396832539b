"""Accuracy against shots per class on synthetic data (or any EEGB container).

    python scripts/few_shot_curve.py --out runs/fewshot --classes 2
    python scripts/few_shot_curve.py --out runs/hard --classes 4 --noise 3
    python scripts/few_shot_curve.py --data converted.eegb --subjects 0 1 4 --out runs/iva
"""

import argparse
import logging
from pathlib import Path

from isam_mtl.data import SynthSpec, read_container, synthesize
from isam_mtl.fileio import write_csv
from isam_mtl.pipeline import ExperimentConfig, extract_features, few_shot, quantize, train_stage1


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", default=None, help="EEGB container; synthetic data when omitted")
    ap.add_argument("--classes", type=int, default=2, help="synthetic class count (2 to 4)")
    ap.add_argument("--noise", type=float, default=0.5, help="synthetic noise std")
    ap.add_argument("--out", default="runs/fewshot")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--shots", nargs="+", default=["1", "2", "5", "10", "full"])
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--subjects", type=int, nargs="*", default=None)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    if args.data:
        ts = read_container(args.data)
    else:
        ts = synthesize(SynthSpec(class_freqs=[6.0, 10.0, 15.0, 22.0][:args.classes], noise_std=args.noise), 1)
    shots = [s if s == "full" else int(s) for s in args.shots]
    cfg = ExperimentConfig(epochs=args.epochs, seed=args.seed, repeats=args.repeats,
                           subjects=tuple(args.subjects) if args.subjects else None)
    model = quantize(train_stage1(ts, cfg).model)
    res = few_shot(ts, model, cfg, shots=shots, features=extract_features(model, ts, cfg))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "fewshot.csv", ["shots", "mean", "std", "repeats"],
              [[r["shots"], r["mean"], r["std"], r["repeats"]] for r in res.summary])
    write_csv(out / "fewshot_runs.csv", ["shots", "repeat", "mean_accuracy", "std_accuracy"],
              [[r["shots"], r["repeat"], r["mean_accuracy"], r["std_accuracy"]] for r in res.runs])
    for r in res.summary:
        print(f"{str(r['shots']):>5}  {r['mean']:.3f} +/- {r['std']:.3f}")


if __name__ == "__main__":
    main()
