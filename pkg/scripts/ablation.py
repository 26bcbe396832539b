"""Ablation variants a-d over several master seeds, plus the label-guidance silhouette comparison.

    python scripts/ablation.py --out runs/ablation --seeds 0 1 2
"""

import argparse
import logging
from pathlib import Path

import numpy as np

from isam_mtl.data import SynthSpec, read_container, synthesize
from isam_mtl.fileio import write_csv
from isam_mtl.pipeline import VARIANTS, ExperimentConfig, ablation_run, latent_silhouette, train_stage1


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--data", default=None, help="EEGB container; synthetic data when omitted")
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--noise", type=float, default=1.0, help="synthetic noise; higher separates variants more")
    ap.add_argument("--skip-silhouette", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    ts = read_container(args.data) if args.data else synthesize(SynthSpec(noise_std=args.noise), 1)
    rows, sil_rows = [], []
    for seed in args.seeds:
        cfg = ExperimentConfig(epochs=args.epochs, seed=seed)
        for v, rep in ablation_run(ts, cfg).items():
            rows.append([seed, v, VARIANTS[v], rep.mean, rep.std])
            print(f"seed {seed}  {v} ({VARIANTS[v]}): {rep.mean:.3f} +/- {rep.std:.3f}", flush=True)
        if not args.skip_silhouette:
            for guided in (True, False):
                gcfg = ExperimentConfig(epochs=args.epochs, seed=seed, label_guidance=guided)
                sil = latent_silhouette(train_stage1(ts, gcfg).model, ts.test(), gcfg)
                sil_rows.append([seed, guided, sil])
                print(f"seed {seed}  silhouette guidance={guided}: {sil:.3f}", flush=True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ablation.csv", ["seed", "variant", "description", "mean", "std"], rows)
    summary = []
    for v in VARIANTS:
        accs = [r[3] for r in rows if r[1] == v]
        summary.append([v, VARIANTS[v], float(np.mean(accs)), float(np.std(accs))])
    write_csv(out / "ablation_summary.csv", ["variant", "description", "mean_over_seeds", "std_over_seeds"], summary)
    if sil_rows:
        write_csv(out / "silhouette.csv", ["seed", "label_guidance", "silhouette"], sil_rows)


if __name__ == "__main__":
    main()
