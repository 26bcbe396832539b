"""Command-line entry point: ``isam-mtl <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data/input error, 3 numeric failure.
Every output file is written to a temporary sibling and renamed into place.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import amm as am
from .checkpoint import CheckpointError
from .data import SynthSpec, import_csv, read_container, synthesize, write_container
from .fileio import write_csv, write_json
from .pipeline import (
    VARIANTS, ExperimentConfig, PipelineError, ablation_run, evaluate, export_latents, extract_features,
    few_shot, fit_stage2, load_model, save_model, train_stage1,
)
from .tensor import NumericError

log = logging.getLogger("isam_mtl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


class _Help(argparse.HelpFormatter):
    # show real defaults only; None means "take it from the config"
    def _get_help_string(self, action):
        text = action.help or ""
        if action.default not in (None, False, argparse.SUPPRESS) and not action.required \
                and "%(default)" not in text:
            text += " (default: %(default)s)"
        return text


# -- helpers -------------------------------------------------------------------

def _config(args) -> ExperimentConfig:
    d = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"missing config file: {path}")
        d = json.loads(path.read_text(encoding="utf-8"))
    for key in ("seed", "epochs", "threads"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    return ExperimentConfig.from_dict(d)


def _data(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"missing data file: {path}")
    return read_container(path)


def _amm_paths(directory: Path, subject: int) -> tuple[Path, Path]:
    return directory / f"amm_s{subject}.csv", directory / f"amm_s{subject}.json"


def _load_amms(directory, subjects) -> dict:
    directory = Path(directory)
    out = {}
    for s in subjects:
        csv_path, json_path = _amm_paths(directory, s)
        for p in (csv_path, json_path):
            if not p.exists():
                raise FileNotFoundError(f"missing memory file: {p}")
        out[s] = am.import_amm(csv_path, json_path)
    return out


def _report_rows(report):
    return [[r[0], r[1], r[2]] for r in report.rows()]


# -- subcommands -----------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = SynthSpec()
    if args.spec:
        path = Path(args.spec)
        if not path.exists():
            raise FileNotFoundError(f"missing spec file: {path}")
        spec = SynthSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
    ts = synthesize(spec, args.seed)
    write_container(ts, args.out)
    log.info("wrote %d trials to %s", len(ts), args.out)


def cmd_import(args) -> None:
    ts = import_csv(args.dir, args.manifest)
    write_container(ts, args.out)
    log.info("imported %d trials from %s", len(ts), args.dir)


def cmd_train(args) -> None:
    cfg = _config(args)
    ts = _data(args.data)
    res = train_stage1(ts, cfg)
    save_model(args.out, res.model)
    history = args.history or str(args.out) + ".history.csv"
    write_csv(history, ["epoch", "loss", "recon", "kl"],
              [[r["epoch"], r["loss"], r["recon"], r["kl"]] for r in res.history])
    write_json(str(args.out) + ".config.json", cfg.to_dict())


def cmd_fit(args) -> None:
    cfg = _config(args)
    if cfg.classifier != "amm":
        raise PipelineError("fit exports associative memories; use 'ablate' for the dense classifier")
    model = load_model(args.checkpoint)
    ts = _data(args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s, clf in fit_stage2(ts, model, cfg).items():
        am.export_amm(clf, *_amm_paths(out, s))


def cmd_eval(args) -> None:
    cfg = _config(args)
    model = load_model(args.checkpoint)
    ts = _data(args.data)
    feats = extract_features(model, ts, cfg)
    if args.amm_dir:
        clfs = _load_amms(args.amm_dir, sorted(set(int(s) for s in ts.subjects[ts.split == 1])))
    else:
        clfs = fit_stage2(ts, model, cfg, features=feats)
    report = evaluate(ts, model, clfs, cfg, features=feats)
    write_json(args.out, report.to_dict())
    write_csv(args.csv or str(Path(args.out).with_suffix(".csv")), ["subject", "n_trials", "accuracy"],
              _report_rows(report))
    print(f"mean accuracy {report.mean:.4f} (std {report.std:.4f})")


def _parse_shots(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if tok == "full":
            out.append("full")
        elif tok.isdigit() and int(tok) > 0:
            out.append(int(tok))
        else:
            raise UsageError(f"--shots: expected positive integers or 'full', got {tok!r}")
    return out


def cmd_fewshot(args) -> None:
    cfg = _config(args)
    shots = _parse_shots(args.shots) if args.shots else None
    model = load_model(args.checkpoint)
    ts = _data(args.data)
    res = few_shot(ts, model, cfg, shots=shots, repeats=args.repeats)
    write_csv(args.out, ["shots", "mean", "std", "repeats"],
              [[r["shots"], r["mean"], r["std"], r["repeats"]] for r in res.summary])
    if args.runs:
        write_csv(args.runs, ["shots", "repeat", "mean_accuracy", "std_accuracy"],
                  [[r["shots"], r["repeat"], r["mean_accuracy"], r["std_accuracy"]] for r in res.runs])


def cmd_ablate(args) -> None:
    cfg = _config(args)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"--variants: unknown variant(s) {unknown}; choose from {sorted(VARIANTS)}")
    ts = _data(args.data)
    reports = ablation_run(ts, cfg, variants)
    write_csv(args.out, ["variant", "description", "mean", "std"],
              [[v, VARIANTS[v], reports[v].mean, reports[v].std] for v in variants])
    if args.json:
        write_json(args.json, {v: reports[v].to_dict() for v in variants})


def cmd_export_latents(args) -> None:
    cfg = _config(args)
    model = load_model(args.checkpoint)
    ts = _data(args.data)
    d = model.config.latent_dim
    write_csv(args.out, ["subject", "label", "split"] + [f"mu{i}" for i in range(d)],
              export_latents(ts, model, cfg))
    if args.raster_dir:
        out = Path(args.raster_dir)
        out.mkdir(parents=True, exist_ok=True)
        T = model.config.steps
        for s, clf in fit_stage2(ts, model, cfg).items():
            for c in range(clf.n_classes):
                raster = am.reverse_feature(am.bipolar_onehot(c, clf.n_classes), clf).reshape(-1, T)
                write_csv(out / f"raster_s{s}_c{c}.csv", [f"t{j + 1}" for j in range(T)], raster.tolist())


def cmd_amm_reverse(args) -> None:
    csv_path = Path(args.amm)
    json_path = csv_path.with_suffix(".json")
    for p in (csv_path, json_path):
        if not p.exists():
            raise FileNotFoundError(f"missing memory file: {p}")
    clf = am.import_amm(csv_path, json_path)
    if not 0 <= args.label < clf.n_classes:
        raise UsageError(f"--label must lie in [0, {clf.n_classes})")
    xhat = am.reverse_feature(am.bipolar_onehot(args.label, clf.n_classes), clf)
    if args.checkpoint:
        T = load_model(args.checkpoint).config.steps
    else:
        T = args.steps or clf.dim
    if clf.dim % T:
        raise PipelineError(f"memory width {clf.dim} is not a multiple of {T} timesteps")
    raster = np.asarray(xhat).reshape(-1, T)
    write_csv(args.out, [f"t{j + 1}" for j in range(T)], raster.tolist())


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    fmt = _Help
    p = _Parser(prog="isam-mtl", description="Spiking encoder + associative memory EEG pipeline.",
                formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def command(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        sp.set_defaults(func=fn)
        return sp

    def common(sp, data=True, checkpoint=False, train=False):
        if data:
            sp.add_argument("--data", required=True, help="EEGB trial container")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="stage-1 checkpoint written by 'train'")
        sp.add_argument("--config", default=None, help="flat JSON experiment config; missing keys take defaults")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides config; config default 0)")
        sp.add_argument("--threads", type=int, default=None, help="worker cap for per-subject work (default 1)")
        if train:
            sp.add_argument("--epochs", type=int, default=None, help="stage-1 epochs (overrides config; default 100)")

    sp = command("synth", cmd_synth, "Generate a synthetic EEG trial container.")
    sp.add_argument("--spec", default=None, help="SynthSpec JSON; omitted fields take defaults")
    sp.add_argument("--seed", type=int, default=0, help="generator seed")
    sp.add_argument("--out", required=True, help="output EEGB path")

    sp = command("import", cmd_import, "Convert a directory of per-trial CSVs into a trial container.")
    sp.add_argument("--dir", required=True, help="directory of s<subject>_c<label>_<idx>.csv files")
    sp.add_argument("--manifest", default="manifest.json", help="manifest file name inside --dir")
    sp.add_argument("--out", required=True, help="output EEGB path")

    sp = command("train", cmd_train, "Stage 1: train the cross-subject spiking VAE.")
    common(sp, train=True)
    sp.add_argument("--out", required=True, help="checkpoint path (sidecar <out>.json written alongside)")
    sp.add_argument("--history", default=None, help="per-epoch loss CSV (default <out>.history.csv)")

    sp = command("fit", cmd_fit, "Stage 2: fit one associative memory per subject.")
    common(sp, checkpoint=True)
    sp.add_argument("--out-dir", required=True, help="directory for amm_s<k>.csv/.json")

    sp = command("eval", cmd_eval, "Score the test split and write a report.")
    common(sp, checkpoint=True)
    sp.add_argument("--amm-dir", default=None, help="memories from 'fit' (default: refit in memory)")
    sp.add_argument("--out", required=True, help="report JSON path")
    sp.add_argument("--csv", default=None, help="report CSV path (default: --out with .csv suffix)")

    sp = command("fewshot", cmd_fewshot, "Accuracy versus number of training trials per class.")
    common(sp, checkpoint=True)
    sp.add_argument("--shots", default=None, help="comma list of shot counts or 'full' (default 1,2,5,10,20)")
    sp.add_argument("--repeats", type=int, default=None, help="draws per shot count (default 10)")
    sp.add_argument("--out", required=True, help="summary CSV path")
    sp.add_argument("--runs", default=None, help="optional per-draw CSV path")

    sp = command("ablate", cmd_ablate, "Run ablation variants under one master seed.")
    common(sp, train=True)
    sp.add_argument("--variants", default="a,b,c,d",
                    help="comma list; " + "; ".join(f"{k}: {v}" for k, v in VARIANTS.items()))
    sp.add_argument("--out", required=True, help="comparison CSV path")
    sp.add_argument("--json", default=None, help="optional per-variant report JSON")

    sp = command("export-latents", cmd_export_latents, "Write encoder posterior means per trial.")
    common(sp, checkpoint=True)
    sp.add_argument("--out", required=True, help="latent CSV path")
    sp.add_argument("--raster-dir", default=None, help="also write per-subject, per-class reverse rasters here")

    sp = command("amm-reverse", cmd_amm_reverse, "Characteristic firing raster W^T y of one class.")
    sp.add_argument("--amm", required=True, help="memory CSV from 'fit' (JSON sidecar beside it)")
    sp.add_argument("--label", type=int, required=True, help="class index")
    sp.add_argument("--checkpoint", default=None, help="checkpoint used to recover the timestep count")
    sp.add_argument("--steps", type=int, default=None, help="timesteps per neuron when no checkpoint is given")
    sp.add_argument("--out", required=True, help="raster CSV path (rows neurons, columns timesteps)")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        args.func(args)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except UsageError as e:
        print(str(e).rstrip(), file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, CheckpointError, PipelineError, ValueError, TypeError, KeyError,
            json.JSONDecodeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
