"""Two-stage orchestration: cross-subject encoder training, per-subject memories,
evaluation, few-shot sampling and ablations."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import amm as am
from .checkpoint import load_checkpoint, save_checkpoint
from .data import TrialSet, zscore
from .fileio import write_json
from .inference import elbo
from .model import EncoderConfig, SpikingVAE
from .optim import Adam
from .spiking import LIFParams
from .tensor import Tensor, backward

log = logging.getLogger(__name__)

VARIANTS = {
    "a": "full model",
    "b": "no label-guided inference",
    "c": "dense gradient-descent classifier",
    "d": "tanh instead of LIF",
}


class PipelineError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    # architecture
    conv_channels: tuple[int, int] = (32, 32)
    n_neurons: int = 16
    tau: float = 0.5
    v_th: float = 1.0
    hard_reset: bool = False
    latent_dim: int = 16
    decoder_channels: int = 32
    soft_k: float = 5.0
    # stage-1 training
    epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    dtype: str = "float32"
    zscore: bool = True
    stage1_mode: str = "pooled"
    # ablation switches
    label_guidance: bool = True
    posterior: str = "product"
    classifier: str = "amm"
    neuron: str = "lif"
    # dense-classifier ablation
    dense_steps: int = 200
    dense_lr: float = 1e-2
    # few-shot
    shots: tuple = (1, 2, 5, 10, 20)
    repeats: int = 10
    subjects: tuple | None = None
    # misc
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        self.conv_channels = tuple(self.conv_channels)
        self.shots = tuple(self.shots)
        if self.subjects is not None:
            self.subjects = tuple(self.subjects)
        if self.stage1_mode not in ("pooled", "loso"):
            raise ValueError(f"stage1_mode must be 'pooled' or 'loso', got {self.stage1_mode!r}")
        if self.classifier not in ("amm", "dense"):
            raise ValueError(f"classifier must be 'amm' or 'dense', got {self.classifier!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def encoder_config(self, ts: TrialSet) -> EncoderConfig:
        return EncoderConfig(
            in_channels=ts.n_channels,
            trial_length=ts.n_samples,
            conv_channels=self.conv_channels,
            lif=LIFParams(self.tau, self.v_th, self.n_neurons, self.hard_reset),
            latent_dim=self.latent_dim,
            decoder_channels=self.decoder_channels,
            n_classes=ts.n_classes,
            neuron=self.neuron,
            soft_k=self.soft_k,
        )


def prepare(ts: TrialSet, cfg: ExperimentConfig) -> TrialSet:
    return zscore(ts) if cfg.zscore else ts


# stage 1 -------------------------------------------------------------------

@dataclass
class Stage1Result:
    model: SpikingVAE
    history: list[dict]


def _trial_eps(seed: int, epoch: int, idx: np.ndarray, dim: int, dtype) -> np.ndarray:
    # one stream per (seed, epoch, trial) keeps the draw independent of batching
    return np.stack([np.random.default_rng([seed, 2, epoch, int(i)]).standard_normal(dim) for i in idx]).astype(dtype)


def train_stage1(trials: TrialSet, cfg: ExperimentConfig,
                 on_epoch: Callable[[dict], None] | None = None) -> Stage1Result:
    """Pooled cross-subject ELBO training on every training-split trial."""
    train = prepare(trials, cfg).train()
    if len(train) == 0:
        raise PipelineError("no training trials available for stage 1")
    dtype = np.dtype(cfg.dtype)
    model = SpikingVAE(cfg.encoder_config(trials), seed=cfg.seed, dtype=dtype)
    params = list(model.parameters().values())
    opt = Adam(params, lr=cfg.lr)
    X = train.data.astype(dtype)
    y = train.labels
    n = len(train)
    history = []
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(n)
        tot = rec = kl = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            eps = _trial_eps(cfg.seed, epoch, idx, cfg.latent_dim, dtype)
            terms = elbo(model, X[idx], y[idx], label_guidance=cfg.label_guidance,
                         posterior=cfg.posterior, eps=eps)
            opt.zero_grad()
            backward(terms.loss, params)
            opt.step()
            tot += float(terms.loss.data) * len(idx)
            rec += float(terms.recon.data) * len(idx)
            kl += float(terms.kl.data) * len(idx)
        row = {"epoch": epoch + 1, "loss": tot / n, "recon": rec / n, "kl": kl / n}
        history.append(row)
        log.info("epoch %d loss %.4f recon %.4f kl %.4f", row["epoch"], row["loss"], row["recon"], row["kl"])
        if on_epoch is not None:
            on_epoch(row)
    return Stage1Result(model, history)


def save_model(path, model: SpikingVAE) -> None:
    save_checkpoint(path, model.state_dict())
    write_json(str(path) + ".json", {"encoder": model.config.to_dict(), "dtype": str(model.conv1.weight.dtype)})


def load_model(path) -> SpikingVAE:
    path = Path(path)
    sidecar = Path(str(path) + ".json")
    for p in (path, sidecar):
        if not p.exists():
            raise FileNotFoundError(f"missing checkpoint file: {p}")
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    model = SpikingVAE(EncoderConfig.from_dict(meta["encoder"]), dtype=np.dtype(meta.get("dtype", "float32")))
    model.load_state_dict(load_checkpoint(path))
    return model


def quantize(model: SpikingVAE) -> SpikingVAE:
    """Round parameters through float32 so in-memory results match a saved checkpoint."""
    model.load_state_dict({k: v.astype(np.float32) for k, v in model.state_dict().items()})
    return model


def param_checksum(model: SpikingVAE) -> str:
    h = hashlib.sha256()
    for name, arr in model.state_dict().items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


# stage 2 -------------------------------------------------------------------

def extract_features(model: SpikingVAE, trials: TrialSet, cfg: ExperimentConfig) -> np.ndarray:
    """Frozen-encoder features for every trial, ``[N, n * T']``."""
    return model.encode_batch(prepare(trials, cfg).data)


@dataclass
class DenseClassifier:
    """Softmax-regression stand-in for the memory (ablation c)."""

    weight: np.ndarray
    bias: np.ndarray
    subject_id: int = 0

    @property
    def n_classes(self) -> int:
        return self.weight.shape[0]


def fit_dense(features: np.ndarray, labels: np.ndarray, n_classes: int, steps: int, lr: float,
              subject_id: int = 0) -> DenseClassifier:
    X = np.asarray(features, dtype=np.float64)
    Y = np.eye(n_classes)[labels]
    W = np.zeros((n_classes, X.shape[1]))
    b = np.zeros(n_classes)
    for _ in range(steps):
        logits = X @ W.T + b
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        g = (p - Y) / len(X)
        W -= lr * g.T @ X
        b -= lr * g.sum(axis=0)
    return DenseClassifier(W, b, subject_id)


def predict(clf, features: np.ndarray) -> np.ndarray:
    if isinstance(clf, DenseClassifier):
        return np.argmax(np.asarray(features, dtype=np.float64) @ clf.weight.T + clf.bias, axis=1)
    return np.atleast_1d(am.classify(am.to_patterns(features), clf))


def fit_stage2(trials: TrialSet, model: SpikingVAE, cfg: ExperimentConfig,
               features: np.ndarray | None = None, subjects: Sequence[int] | None = None) -> dict:
    """One classifier per subject from its training-split trials; the encoder stays frozen."""
    if features is None:
        features = extract_features(model, trials, cfg)
    train_mask = trials.split == 0
    subjects = trials.subject_ids() if subjects is None else list(subjects)

    def fit_one(s: int):
        mask = train_mask & (trials.subjects == s)
        if not mask.any():
            raise PipelineError(f"subject {s} has no training trials")
        if cfg.classifier == "dense":
            return fit_dense(features[mask], trials.labels[mask], trials.n_classes,
                             cfg.dense_steps, cfg.dense_lr, s)
        rows = np.flatnonzero(mask)
        return am.hebbian_fit_features(features, rows, trials.labels[rows], trials.n_classes, s)

    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        fitted = list(pool.map(fit_one, subjects))
    return dict(zip(subjects, fitted))


# evaluation ----------------------------------------------------------------

@dataclass
class EvalReport:
    per_subject: dict[int, float]
    confusion: dict[int, list[list[int]]]
    counts: dict[int, int] = field(default_factory=dict)

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([self.per_subject[s] for s in sorted(self.per_subject)], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))  # population std (ddof=0)

    def to_dict(self) -> dict:
        return {
            "per_subject": {str(s): self.per_subject[s] for s in sorted(self.per_subject)},
            "n_trials": {str(s): self.counts.get(s, 0) for s in sorted(self.per_subject)},
            "mean": self.mean,
            "std": self.std,
            "confusion": {str(s): self.confusion[s] for s in sorted(self.confusion)},
        }

    def rows(self) -> list[list]:
        out = [[s, self.counts.get(s, 0), self.per_subject[s]] for s in sorted(self.per_subject)]
        out.append(["mean", sum(self.counts.values()), self.mean])
        out.append(["std", "", self.std])
        return out


def report_from_predictions(subjects: np.ndarray, labels: np.ndarray, preds: np.ndarray,
                            n_classes: int) -> EvalReport:
    per, conf, counts = {}, {}, {}
    for s in sorted(int(v) for v in np.unique(subjects)):
        m = subjects == s
        cm = np.zeros((n_classes, n_classes), dtype=np.int64)
        np.add.at(cm, (labels[m], preds[m]), 1)
        per[s] = float(np.trace(cm) / m.sum())
        conf[s] = cm.tolist()
        counts[s] = int(m.sum())
    return EvalReport(per, conf, counts)


def evaluate(trials: TrialSet, model: SpikingVAE, classifiers: Mapping, cfg: ExperimentConfig,
             features: np.ndarray | None = None) -> EvalReport:
    """Score every test-split trial with its subject's classifier."""
    if features is None:
        features = extract_features(model, trials, cfg)
    test = trials.split == 1
    if not test.any():
        raise PipelineError("no test trials to evaluate")
    missing = sorted(set(int(s) for s in trials.subjects[test]) - set(classifiers))
    if missing:
        raise PipelineError(f"no fitted classifier for test subject(s) {missing}")
    preds = np.empty(len(trials), dtype=np.int64)
    for s in sorted(set(int(v) for v in trials.subjects[test])):
        m = test & (trials.subjects == s)
        preds[m] = predict(classifiers[s], features[m])
    return report_from_predictions(trials.subjects[test], trials.labels[test], preds[test], trials.n_classes)


@dataclass
class PipelineResult:
    models: dict  # subject -> model for loso, {None: model} for pooled
    classifiers: dict
    report: EvalReport
    histories: dict


def run_pipeline(trials: TrialSet, cfg: ExperimentConfig, model: SpikingVAE | None = None) -> PipelineResult:
    """Stage 1 (unless ``model`` is given), stage 2 and evaluation."""
    if cfg.stage1_mode == "loso" and model is None:
        return _run_loso(trials, cfg)
    history = []
    if model is None:
        res = train_stage1(trials, cfg)
        model, history = quantize(res.model), res.history
    feats = extract_features(model, trials, cfg)
    clfs = fit_stage2(trials, model, cfg, features=feats)
    report = evaluate(trials, model, clfs, cfg, features=feats)
    return PipelineResult({None: model}, clfs, report, {None: history})


def _run_loso(trials: TrialSet, cfg: ExperimentConfig) -> PipelineResult:
    models, clfs, hist = {}, {}, {}
    subj_all, lab_all, pred_all = [], [], []
    for s in trials.subject_ids():
        others = trials.subset(trials.subjects != s)
        if len(others.train()) == 0:
            raise PipelineError(f"leave-one-subject-out needs training trials besides subject {s}")
        res = train_stage1(others, cfg)
        model = quantize(res.model)
        own = trials.subset(trials.subjects == s)
        feats = extract_features(model, own, cfg)
        clf = fit_stage2(own, model, cfg, features=feats)[s]
        test = own.split == 1
        models[s], clfs[s], hist[s] = model, clf, res.history
        subj_all.append(own.subjects[test])
        lab_all.append(own.labels[test])
        pred_all.append(predict(clf, feats[test]))
    report = report_from_predictions(np.concatenate(subj_all), np.concatenate(lab_all),
                                     np.concatenate(pred_all), trials.n_classes)
    return PipelineResult(models, clfs, report, hist)


# few-shot ------------------------------------------------------------------

@dataclass
class FewShotResult:
    runs: list[dict]  # one row per (shots, repeat)
    summary: list[dict]  # one row per shots: mean/std over repeats


def sample_shots(trials: TrialSet, shots: int, rng: np.random.Generator,
                 subjects: Sequence[int]) -> np.ndarray:
    """Indices of ``shots`` training trials per class per subject, without replacement."""
    chosen = []
    short = []
    for s in subjects:
        for c in range(trials.n_classes):
            pool = np.flatnonzero((trials.split == 0) & (trials.subjects == s) & (trials.labels == c))
            if len(pool) == 0:
                continue
            if len(pool) < shots:
                short.append(f"subject {s} class {c} ({len(pool)} < {shots})")
                continue
            chosen.append(np.sort(rng.choice(pool, size=shots, replace=False)))
    if short:
        raise PipelineError("insufficient training pool: " + "; ".join(short))
    return np.sort(np.concatenate(chosen))


def few_shot(trials: TrialSet, model: SpikingVAE, cfg: ExperimentConfig,
             shots: Sequence | None = None, repeats: int | None = None,
             features: np.ndarray | None = None) -> FewShotResult:
    """Fit memories on ``n`` trials per class (``"full"`` = whole pool), score on the full test split."""
    shots = cfg.shots if shots is None else shots
    repeats = cfg.repeats if repeats is None else repeats
    subjects = list(cfg.subjects) if cfg.subjects else trials.subject_ids()
    keep = np.isin(trials.subjects, subjects)
    trials = trials.subset(keep)
    if features is None:
        features = extract_features(model, trials, cfg)
    else:
        features = features[keep]
    test = trials.split == 1
    runs, summary = [], []
    for n in shots:
        accs = []
        reps = 1 if n == "full" else repeats
        for r in range(reps):
            if n == "full":
                idx = np.flatnonzero(trials.split == 0)
            else:
                idx = sample_shots(trials, int(n), np.random.default_rng([cfg.seed, int(n), r]), subjects)
            fit_mask = np.zeros(len(trials), dtype=bool)
            fit_mask[idx] = True
            sub = trials.subset(fit_mask | test)
            clfs = fit_stage2(sub, model, cfg, features=features[fit_mask | test], subjects=subjects)
            rep = evaluate(sub, model, clfs, cfg, features=features[fit_mask | test])
            accs.append(rep.mean)
            runs.append({"shots": n, "repeat": r, "mean_accuracy": rep.mean, "std_accuracy": rep.std})
        summary.append({"shots": n, "mean": float(np.mean(accs)), "std": float(np.std(accs)), "repeats": reps})
    return FewShotResult(runs, summary)


# ablations -----------------------------------------------------------------

def variant_config(cfg: ExperimentConfig, variant: str) -> ExperimentConfig:
    if variant == "a":
        return cfg
    if variant == "b":
        return replace(cfg, label_guidance=False)
    if variant == "c":
        return replace(cfg, classifier="dense")
    if variant == "d":
        return replace(cfg, neuron="tanh")
    raise PipelineError(f"unknown ablation variant {variant!r}; choose from {sorted(VARIANTS)}")


def ablation_run(trials: TrialSet, cfg: ExperimentConfig,
                 variants: Sequence[str] = ("a", "b", "c", "d")) -> dict[str, EvalReport]:
    """Full pipeline per variant under one master seed. Variant c reuses the stage-1 encoder of a."""
    configs = {v: variant_config(cfg, v) for v in variants}
    reports: dict[str, EvalReport] = {}
    shared: SpikingVAE | None = None
    for v in variants:
        vcfg = configs[v]
        reuse = v in ("a", "c") and shared is not None and vcfg.stage1_mode == "pooled"
        result = run_pipeline(trials, vcfg, model=shared if reuse else None)
        if v in ("a", "c") and vcfg.stage1_mode == "pooled":
            shared = result.models[None]
        reports[v] = result.report
    return reports


# latent export ---------------------------------------------------------------

def export_latents(trials: TrialSet, model: SpikingVAE, cfg: ExperimentConfig) -> list[list]:
    """Rows of ``[subject, label, split, mu_0 .. mu_{d-1}]`` using the encoder posterior ``q(z|x)``."""
    mu = model.posterior(Tensor(extract_features(model, trials, cfg))).mean.data
    return [[int(s), int(l), int(sp)] + [float(v) for v in row]
            for s, l, sp, row in zip(trials.subjects, trials.labels, trials.split, mu)]


def reverse_raster(clf: am.AMMatrix, label: int, model_config: EncoderConfig) -> np.ndarray:
    """Characteristic firing profile ``W^T y`` of one class, unflattened to ``[n, T']``."""
    y = am.bipolar_onehot(label, clf.n_classes)
    return am.reverse_feature(y, clf).reshape(model_config.lif.n, model_config.steps)


def latent_silhouette(model: SpikingVAE, trials: TrialSet, cfg: ExperimentConfig) -> float:
    from sklearn.metrics import silhouette_score

    mu = model.posterior(Tensor(extract_features(model, trials, cfg))).mean.data
    return float(silhouette_score(mu, trials.labels))
