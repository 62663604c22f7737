"""SGD training, the two-step schedule, and subject-level cross-validation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .data.phantom import CardiacSequence
from .data.preprocess import (
    AREA_COLS,
    DIM_COLS,
    PHASE_COL,
    RWT_COLS,
    augment_crop,
    crop_offsets,
    denormalize_targets,
    normalize_targets,
    preprocess_sequence,
)
from .errors import ConfigError, LVQuantError
from .metrics import MetricsReport, compute_report
from .model import (
    ArchConfig,
    ModelParams,
    PHASE_BRANCH,
    Predictions,
    cnn_embed,
    estimate_heads,
    init_params,
    rnn_forward,
)
from .numerics import Tensor, no_grad
from .objective import ObjectiveBreakdown, ObjectiveConfig, breakdown, loss_phase, objective_terms

log = logging.getLogger(__name__)

STEP1_TRAINABLE = ("cnn.", "rnn1.", "heads.w_area", "heads.b_area", "heads.w_dim", "heads.b_dim",
                   "heads.w_rwt", "heads.b_rwt")
STEP2_TRAINABLE = PHASE_BRANCH
GROUP_LASSO_WEIGHTS = ("heads.w_area", "heads.w_dim", "heads.w_rwt")


@dataclass(frozen=True)
class TrainConfig:
    lr_step1: float = 0.01
    lr_step2: float = 0.01
    lr_decay: float = 0.1
    lr_decay_at: float = 2.0 / 3.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    epochs_step1: int = 50
    epochs_step2: int = 30
    batch_subjects: int = 4
    seed: int = 0
    fold_count: int = 5
    inter_in_step1: bool = True
    intra_update: str = "prox"
    roi_size: float = 72.0
    precision: int = 32
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)

    def __post_init__(self):
        if not (self.lr_step1 > 0 and self.lr_step2 > 0):
            raise ConfigError("learning rates must be positive")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.fold_count < 2:
            raise ConfigError("fold_count must be >= 2")
        if self.batch_subjects < 1:
            raise ConfigError("batch_subjects must be >= 1")
        if self.epochs_step1 < 0 or self.epochs_step2 < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if self.intra_update not in ("prox", "subgradient"):
            raise ConfigError(f"intra_update must be 'prox' or 'subgradient', got {self.intra_update!r}")

    def with_lambdas(self, lambda1: float, lambda2: float) -> "TrainConfig":
        return replace(self, objective=replace(self.objective, lambda1=lambda1, lambda2=lambda2))


# -- config files ---------------------------------------------------------------

_OBJECTIVE_KEYS = {f.name for f in fields(ObjectiveConfig)}


def _parse_value(key, raw, current):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        return tuple(v.strip() for v in raw.split(",") if v.strip())
    try:
        return type(current)(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(current).__name__}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` comments) into a TrainConfig.

    Keys are TrainConfig field names plus the ObjectiveConfig fields
    (``lambda1``, ``lambda2``, ``temporal_boundary``, ``enabled_tasks``).
    """
    base = base or TrainConfig()
    top, obj = {}, {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in _OBJECTIVE_KEYS:
            obj[key] = _parse_value(key, raw, getattr(base.objective, key))
        elif key in {f.name for f in fields(TrainConfig)} and key != "objective":
            top[key] = _parse_value(key, raw, getattr(base, key))
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return replace(base, objective=replace(base.objective, **obj), **top)


def load_config(path) -> TrainConfig:
    path = Path(path)
    if not path.is_file():
        from .errors import MissingFileError
        raise MissingFileError(f"{path}: config file not found")
    return parse_config(path.read_text())


def dump_config(config: TrainConfig) -> str:
    lines = []
    for k, v in asdict(config).items():
        if k == "objective":
            for ok, ov in v.items():
                lines.append(f"{ok} = {','.join(ov) if isinstance(ov, (tuple, list)) else ov}")
        else:
            lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


# -- data preparation -----------------------------------------------------------

@dataclass
class PreparedSubject:
    subject_id: str
    frames: np.ndarray  # (F, 80, 80) standardized float32
    spacing: float  # mm per pixel of the 80x80 image
    labels_mm: np.ndarray  # (F, 12)
    targets: np.ndarray  # (F, 11) normalized regression targets
    phase: np.ndarray  # (F,)


def prepare_subject(seq: CardiacSequence, roi_size: float = 72.0) -> PreparedSubject:
    roi = seq.roi_center
    if roi is None:
        h, w = seq.frames.shape[1:]
        roi = ((w - 1) / 2.0, (h - 1) / 2.0)
    frames, spacing, _ = preprocess_sequence(seq.frames, roi, seq.pixel_spacing, roi_size)
    labels = seq.label_matrix()
    return PreparedSubject(seq.subject_id, frames, spacing, labels,
                           normalize_targets(labels[:, :11], spacing), labels[:, PHASE_COL].astype(np.int64))


def prepare_dataset(sequences, roi_size: float = 72.0) -> list[PreparedSubject]:
    return [s if isinstance(s, PreparedSubject) else prepare_subject(s, roi_size) for s in sequences]


def target_stats(data, dtype=np.float32):
    """Per-output mean and std of the normalized targets over every training frame."""
    t = np.concatenate([s.targets for s in data])
    std = t.std(axis=0)
    return t.mean(axis=0).astype(dtype), np.where(std > 0, std, 1.0).astype(dtype)


def standardize_targets(targets, params: ModelParams):
    mean, std = params.buffers["targets.mean"], params.buffers["targets.std"]
    return (np.asarray(targets, dtype=np.float64) - mean) / std


def destandardize_targets(values, params: ModelParams):
    mean, std = params.buffers["targets.mean"], params.buffers["targets.std"]
    return np.asarray(values, dtype=np.float64) * std + mean


def _batch_targets(batch, dtype, params):
    t = standardize_targets(np.stack([s.targets for s in batch]), params).astype(dtype)
    return {"area": t[..., AREA_COLS], "dim": t[..., DIM_COLS], "rwt": t[..., RWT_COLS],
            "phase": np.stack([s.phase for s in batch])}


# -- folds ----------------------------------------------------------------------

@dataclass
class FoldPlan:
    assignments: dict  # subject id -> fold index
    k: int

    def test_ids(self, fold: int) -> list:
        return [s for s, f in self.assignments.items() if f == fold]

    def train_ids(self, fold: int) -> list:
        return [s for s, f in self.assignments.items() if f != fold]

    def sizes(self) -> list:
        return [len(self.test_ids(i)) for i in range(self.k)]


def make_folds(subject_ids, k: int = 5, seed: int = 0) -> FoldPlan:
    ids = list(subject_ids)
    if len(set(ids)) != len(ids):
        raise ValueError("subject ids must be unique")
    if k > len(ids):
        raise ValueError(f"cannot split {len(ids)} subjects into {k} folds")
    if k < 2:
        raise ValueError("need at least 2 folds")
    order = np.random.default_rng(seed).permutation(len(ids))
    return FoldPlan({ids[j]: int(pos % k) for pos, j in enumerate(order)}, k)


# -- optimizer ------------------------------------------------------------------

def sgd_step(params: dict, grads: dict, lr: float, momentum: float = 0.0, weight_decay: float = 0.0,
             velocity: dict | None = None):
    """Momentum SGD: v <- m*v - lr*(g + wd*theta); theta <- theta + v.

    Only names present in ``grads`` move; returns ``(new_params, new_velocity)``.
    """
    velocity = dict(velocity or {})
    new = dict(params)
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"{name}: gradient {g.shape} vs parameter {theta.shape}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(theta)
        step = g + weight_decay * theta if weight_decay else g
        v = momentum * v - lr * step
        velocity[name] = v.astype(theta.dtype, copy=False)
        new[name] = (theta + v).astype(theta.dtype, copy=False)
    return new, velocity


def prox_group_lasso(w: np.ndarray, threshold: float) -> np.ndarray:
    """Block soft-thresholding of each column of ``w``."""
    norms = np.sqrt((w.astype(np.float64) ** 2).sum(axis=0))
    scale = np.where(norms > threshold, 1.0 - threshold / np.where(norms > 0, norms, 1.0), 0.0)
    return (w * scale[None, :]).astype(w.dtype)


def _apply_prox(arrays, old, velocity, names, threshold):
    for name in names:
        w = prox_group_lasso(arrays[name], threshold)
        arrays[name] = w
        # momentum tracks the realized displacement so pruned columns stay pruned
        velocity[name] = (w - old[name]).astype(w.dtype)


def _mean_breakdown(items) -> ObjectiveBreakdown:
    total_w = sum(w for _, w in items)
    vals = {f.name: sum(getattr(b, f.name) * w for b, w in items) / total_w for f in fields(ObjectiveBreakdown)}
    return ObjectiveBreakdown(**vals)


@dataclass
class TrainLog:
    step: int
    epochs: list = field(default_factory=list)  # ObjectiveBreakdown per epoch
    subjects_seen: set = field(default_factory=set)

    def csv(self) -> str:
        return "\n".join([ObjectiveBreakdown.CSV_HEADER]
                         + [b.csv_row(i + 1) for i, b in enumerate(self.epochs)]) + "\n"


def _epoch_batches(n, batch, rng):
    order = rng.permutation(n)
    return [order[i:i + batch] for i in range(0, n, batch)]


def _crop_batch(batch, offsets):
    return np.stack([augment_crop(s.frames, offset=o) for s, o in zip(batch, offsets)])


def train_step1(dataset, config: TrainConfig, params: ModelParams | None = None,
                arch: ArchConfig = ArchConfig()):
    """Train CNN, rnn1 and the three regression heads; phase branch untouched.

    Returns ``(params, TrainLog)``.
    """
    data = prepare_dataset(dataset, config.roi_size)
    if not data:
        raise LVQuantError("empty training set")
    if params is None:
        dtype = np.float64 if config.precision == 64 else np.float32
        params = init_params(config.seed, arch, dtype=dtype)
        params.buffers["targets.mean"], params.buffers["targets.std"] = target_stats(data, dtype)
    else:
        params = params.copy()
    obj = config.objective
    if not config.inter_in_step1:
        obj = replace(obj, lambda2=0.0)
    obj = replace(obj, enabled_tasks=("area", "dim", "rwt"))
    use_prox = config.intra_update == "prox" and obj.lambda1 > 0
    rng = np.random.default_rng([config.seed, 1])
    offsets = crop_offsets()
    velocity = {}
    tlog = TrainLog(step=1)
    dtype = next(iter(params.arrays.values())).dtype
    n_decay = int(round(config.epochs_step1 * config.lr_decay_at))
    for epoch in range(config.epochs_step1):
        lr = config.lr_step1 * (config.lr_decay if epoch >= n_decay else 1.0)
        items = []
        for idx in _epoch_batches(len(data), config.batch_subjects, rng):
            batch = [data[i] for i in idx]
            tlog.subjects_seen.update(s.subject_id for s in batch)
            crops = [offsets[k] for k in rng.integers(len(offsets), size=len(batch))]
            x = _crop_batch(batch, crops)
            B, F = x.shape[:2]
            bound = params.bind(STEP1_TRAINABLE)
            emb = cnn_embed(x.reshape(B * F, *x.shape[2:]), bound, "train", seed=rng)
            h1 = rnn_forward("rnn1", emb.reshape(B, F, -1), bound)
            preds = estimate_heads(h1, h1, bound)  # phase outputs unused in this step
            weights = {k.split(".")[1]: bound[k] for k in GROUP_LASSO_WEIGHTS}
            terms = objective_terms(preds, _batch_targets(batch, dtype, params), weights, obj)
            target = terms["total"]
            if use_prox:
                target = target - terms["r_intra"] * obj.lambda1
            target.backward()
            grads = {k: t.grad for k, t in bound.tensors.items() if t.requires_grad and t.grad is not None}
            old = params.arrays
            new, velocity = sgd_step(old, grads, lr, config.momentum, config.weight_decay, velocity)
            if use_prox:
                _apply_prox(new, old, velocity, GROUP_LASSO_WEIGHTS, lr * obj.lambda1)
            params = ModelParams(params.arch, new, params.buffers)
            items.append((breakdown(terms), len(batch)))
        tlog.epochs.append(_mean_breakdown(items))
        log.info("step1 epoch %d/%d total %.5f", epoch + 1, config.epochs_step1, tlog.epochs[-1].total)
    return params, tlog


class _EmbeddingCache:
    """Frozen-CNN embeddings keyed by (subject, crop offset)."""

    def __init__(self, params: ModelParams):
        self.params = params
        self.store = {}

    def get(self, subject: PreparedSubject, offset) -> np.ndarray:
        key = (subject.subject_id, tuple(offset))
        if key not in self.store:
            with no_grad():
                self.store[key] = cnn_embed(augment_crop(subject.frames, offset=offset), self.params, "eval").data
        return self.store[key]


def train_step2(dataset, config: TrainConfig, frozen: ModelParams):
    """Train rnn2 and the phase head on the cross-entropy loss alone.

    The CNN runs in eval mode with its running statistics, so every other
    parameter and buffer is left bit-identical. Returns ``(params, TrainLog)``.
    """
    data = prepare_dataset(dataset, config.roi_size)
    if not data:
        raise LVQuantError("empty training set")
    params = frozen.copy()
    rng = np.random.default_rng([config.seed, 2])
    offsets = crop_offsets()
    cache = _EmbeddingCache(frozen)
    velocity = {}
    tlog = TrainLog(step=2)
    zero = 0.0
    for epoch in range(config.epochs_step2):
        items = []
        for idx in _epoch_batches(len(data), config.batch_subjects, rng):
            batch = [data[i] for i in idx]
            tlog.subjects_seen.update(s.subject_id for s in batch)
            crops = [offsets[k] for k in rng.integers(len(offsets), size=len(batch))]
            emb = np.stack([cache.get(s, o) for s, o in zip(batch, crops)])
            bound = params.bind(STEP2_TRAINABLE)
            h2 = rnn_forward("rnn2", Tensor(emb), bound)
            logit = h2 @ bound["heads.w_phase"].T + bound["heads.b_phase"]
            p_dia = (-(logit.reshape(logit.shape[:-1]))).sigmoid()
            loss = loss_phase(p_dia, np.stack([s.phase for s in batch]))
            loss.backward()
            grads = {k: t.grad for k, t in bound.tensors.items() if t.requires_grad and t.grad is not None}
            new, velocity = sgd_step(params.arrays, grads, config.lr_step2, config.momentum,
                                     config.weight_decay, velocity)
            params = ModelParams(params.arch, new, params.buffers)
            v = float(loss.data)
            items.append((ObjectiveBreakdown(zero, zero, zero, v, zero, zero, zero, zero, v), len(batch)))
        tlog.epochs.append(_mean_breakdown(items))
        log.info("step2 epoch %d/%d phase loss %.5f", epoch + 1, config.epochs_step2, tlog.epochs[-1].total)
    return params, tlog


def train_two_step(dataset, config: TrainConfig, arch: ArchConfig = ArchConfig(), params=None):
    data = prepare_dataset(dataset, config.roi_size)
    p1, log1 = train_step1(data, config, params=params, arch=arch)
    p2, log2 = train_step2(data, config, p1)
    return p2, (log1, log2)


# -- evaluation -----------------------------------------------------------------

def predict(params: ModelParams, dataset, roi_size: float = 72.0, batch_subjects: int = 16):
    """Eval-mode predictions in label layout and physical units.

    Returns a list of (F, 12) arrays; the last column is P(diastole).
    """
    data = prepare_dataset(dataset, roi_size)
    out = []
    with no_grad():
        for i in range(0, len(data), batch_subjects):
            batch = data[i:i + batch_subjects]
            x = np.stack([augment_crop(s.frames, "eval") for s in batch])
            B, F = x.shape[:2]
            emb = cnn_embed(x.reshape(B * F, *x.shape[2:]), params, "eval").reshape(B, F, -1)
            preds = estimate_heads(rnn_forward("rnn1", emb, params), rnn_forward("rnn2", emb, params), params)
            arr = destandardize_targets(preds.as_array()[..., :11], params)
            p_dia = preds.p_diastole.data
            for j, s in enumerate(batch):
                mm = denormalize_targets(arr[j], s.spacing)
                out.append(np.concatenate([mm, p_dia[j][:, None]], axis=1))
    return out


def evaluate(params: ModelParams, dataset, label: str = "intra/inter", roi_size: float = 72.0) -> MetricsReport:
    data = prepare_dataset(dataset, roi_size)
    preds = predict(params, data, roi_size)
    return compute_report(np.concatenate(preds)[:, :11], np.concatenate([s.labels_mm for s in data]),
                          np.concatenate([p[:, 11] for p in preds]),
                          np.concatenate([s.phase for s in data]), label)


# -- cross-validation -------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    train_ids: list
    test_ids: list
    seen_ids: set
    params: ModelParams
    logs: tuple
    predictions: dict  # subject id -> (F, 12)
    report: MetricsReport


@dataclass
class ExperimentResult:
    config: TrainConfig
    plan: FoldPlan
    folds: list
    report: MetricsReport

    def pooled(self, data):
        by_id = {s.subject_id: s for s in data}
        ids = [sid for f in self.folds for sid in f.test_ids]
        preds = np.concatenate([f.predictions[sid] for f in self.folds for sid in f.test_ids])
        labels = np.concatenate([by_id[sid].labels_mm for sid in ids])
        return preds, labels


def run_experiment(dataset, config: TrainConfig, arch: ArchConfig = ArchConfig(), label: str | None = None,
                   plan: FoldPlan | None = None, out_dir=None) -> ExperimentResult:
    """k-fold subject-level cross-validation of the two-step training."""
    from .checkpoint import save_checkpoint

    data = prepare_dataset(dataset, config.roi_size)
    if len(data) < config.fold_count:
        raise LVQuantError(f"{len(data)} subjects cannot fill {config.fold_count} folds")
    label = label or config.objective.label
    by_id = {s.subject_id: s for s in data}
    plan = plan or make_folds([s.subject_id for s in data], config.fold_count, config.seed)
    folds = []
    for k in range(plan.k):
        train = [by_id[i] for i in plan.train_ids(k)]
        test = [by_id[i] for i in plan.test_ids(k)]
        fold_cfg = replace(config, seed=config.seed + k)
        log.info("[%s] fold %d/%d: %d train, %d test", label, k + 1, plan.k, len(train), len(test))
        params, logs = train_two_step(train, fold_cfg, arch)
        preds = predict(params, test, config.roi_size)
        report = compute_report(np.concatenate(preds)[:, :11], np.concatenate([s.labels_mm for s in test]),
                                np.concatenate([p[:, 11] for p in preds]),
                                np.concatenate([s.phase for s in test]), label)
        folds.append(FoldResult(k, [s.subject_id for s in train], [s.subject_id for s in test],
                                logs[0].subjects_seen | logs[1].subjects_seen, params, logs,
                                {s.subject_id: p for s, p in zip(test, preds)}, report))
        if out_dir is not None:
            d = Path(out_dir)
            d.mkdir(parents=True, exist_ok=True)
            tag = label.replace("/", "_")
            save_checkpoint(params, d / f"{tag}_fold{k}.lvqm")
            (d / f"{tag}_fold{k}_step1.csv").write_text(logs[0].csv())
            (d / f"{tag}_fold{k}_step2.csv").write_text(logs[1].csv())

    ids = [sid for f in folds for sid in f.test_ids]
    preds = np.concatenate([f.predictions[sid] for f in folds for sid in f.test_ids])
    labels = np.concatenate([by_id[sid].labels_mm for sid in ids])
    report = compute_report(preds[:, :11], labels[:, :11], preds[:, 11], labels[:, PHASE_COL], label)
    return ExperimentResult(config, plan, folds, report)


ABLATIONS = ("N/N", "intra/N", "intra/inter")


def ablation_configs(config: TrainConfig) -> dict:
    lam1 = config.objective.lambda1 or ObjectiveConfig().lambda1
    lam2 = config.objective.lambda2 or ObjectiveConfig().lambda2
    return {
        "N/N": config.with_lambdas(0.0, 0.0),
        "intra/N": config.with_lambdas(lam1, 0.0),
        "intra/inter": config.with_lambdas(lam1, lam2),
    }


def run_ablation(dataset, config: TrainConfig, arch: ArchConfig = ArchConfig(), out_dir=None) -> dict:
    """Run the three regularization settings over one shared fold plan."""
    data = prepare_dataset(dataset, config.roi_size)
    plan = make_folds([s.subject_id for s in data], config.fold_count, config.seed)
    return {lab: run_experiment(data, cfg, arch, label=lab, plan=plan, out_dir=out_dir)
            for lab, cfg in ablation_configs(config).items()}


# -- linear multitask regression with the group-lasso penalty ---------------------

def fit_group_lasso_heads(features, targets: dict, lambda1: float, lr: float = 0.05, momentum: float = 0.9,
                          epochs: int = 2000, seed: int = 0, intra_update: str = "prox"):
    """Fit linear heads y_t = W_t x + b_t on fixed features (full batch).

    Minimizes the mean squared-error losses plus ``lambda1`` times the
    column-norm penalty, with the same optimizer the network uses. Returns
    a dict of head weights and biases.
    """
    from .objective import loss_regression, reg_group_lasso

    X = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(seed)
    arrays = {}
    for task, Y in targets.items():
        k = Y.shape[1]
        lim = np.sqrt(6.0 / (X.shape[1] + k))
        arrays[f"w_{task}"] = rng.uniform(-lim, lim, size=(k, X.shape[1]))
        arrays[f"b_{task}"] = np.zeros(k)
    wnames = [f"w_{t}" for t in targets]
    velocity = {}
    use_prox = intra_update == "prox" and lambda1 > 0
    Xt = Tensor(X)
    for _ in range(epochs):
        ts = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
        loss = None
        for task, Y in targets.items():
            pred = Xt @ ts[f"w_{task}"].T + ts[f"b_{task}"]
            term = loss_regression(pred, Y)
            loss = term if loss is None else loss + term
        if lambda1 > 0 and not use_prox:
            loss = loss + reg_group_lasso(*[ts[n] for n in wnames]) * lambda1
        loss.backward()
        grads = {k: t.grad for k, t in ts.items()}
        old = arrays
        arrays, velocity = sgd_step(old, grads, lr, momentum, 0.0, velocity)
        if use_prox:
            _apply_prox(arrays, old, velocity, wnames, lr * lambda1)
    return arrays
