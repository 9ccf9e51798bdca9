"""Stage trainers, evaluation and cross-validation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..braindata import Dataset, kfold_split, stratified_holdout
from ..config import RunConfig
from ..errors import NonFiniteError, StageError, TrainingDivergedError
from ..losses import (
    cmbp_contrast,
    cross_entropy,
    disentangle_loss,
    distill_loss,
    stage2_loss,
    stage3_loss,
)
from ..moe import KINDS, balance_loss, cv_squared
from ..numcore import Adam, add, no_grad, scale
from .checkpoint import Checkpoint
from .metrics import Metrics, aggregate, confusion_metrics
from .models import (
    Stage1Model,
    Stage2Model,
    Stage3Model,
    iter_batches,
    predict_proba,
)

log = logging.getLogger(__name__)

ARCH_KEYS = ("n_regions", "gcn_layers", "gcn_hidden", "embed_dim")
# Norm floor for the cosine similarities inside the training objectives: a
# relu encoder can legitimately emit an all-zero pooled vector for a sample.
NORM_EPS = 1e-12

STAGE_COLUMNS = {
    1: ("ce",),
    2: ("ce", "distill", "contrast"),
    3: ("ce", "moe", "disen", "fusion_cv2", "fusion_min_share"),
}


def _rng(seed: int, stage: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stage, stream])


def split_validation(train: Dataset, cfg: RunConfig, seed: int):
    rest, val = stratified_holdout(train.labels, cfg.val_fraction, seed)
    return train.subset(rest), train.subset(val)


def _fit(stage, model, params, step, predict, train, val, cfg, rng, tag=""):
    """Shared epoch loop with early stopping on validation accuracy.

    Ties in accuracy are broken by validation cross-entropy. The best
    weights are restored at the end.
    """
    opt = Adam(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    history = []
    best_key, best_state, stale = None, None, 0
    val_labels = val.labels
    for epoch in range(1, cfg.max_epochs + 1):
        sums, n_seen = {}, 0
        extras = []
        try:
            for batch in iter_batches(train, cfg.batch_size, rng.permutation(len(train))):
                opt.zero_grad()
                loss, terms, extra = step(batch)
                loss.backward()
                opt.step()
                for key, value in terms.items():
                    sums[key] = sums.get(key, 0.0) + value * batch.size
                n_seen += batch.size
                if extra is not None:
                    extras.append(extra)
            probs = predict(val)
        except NonFiniteError as exc:
            raise TrainingDivergedError(stage, epoch, str(exc)) from None
        if any(not math.isfinite(v) for v in sums.values()):
            raise TrainingDivergedError(stage, epoch, "NaN loss")
        row = {"epoch": epoch}
        if tag:
            row["modality"] = tag
        row["loss"] = sums.pop("loss") / n_seen
        row["val_acc"] = float(np.mean(probs.argmax(axis=1) == val_labels))
        row.update({k: v / n_seen for k, v in sums.items()})
        if extras:
            row["fusion_cv2"], row["fusion_min_share"] = _fusion_balance(extras)
        history.append(row)

        val_ce = float(-np.mean(np.log(np.clip(probs[np.arange(len(val_labels)), val_labels], 1e-300, None))))
        key = (row["val_acc"], -val_ce)
        if best_key is None or key > best_key:
            best_key, best_state, stale = key, model.state_dict(), 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.load_state_dict(best_state)
    return history


def _fusion_balance(extras) -> tuple[float, float]:
    """Fusion-MoE importance over one epoch: CV^2 averaged over layers, and
    the smallest share of total importance any expert of any layer got."""
    per_layer = np.sum(extras, axis=0)
    cv2 = float(np.mean([cv_squared(v) for v in per_layer]))
    share = float(np.min(per_layer / per_layer.sum(axis=1, keepdims=True)))
    return cv2, share


# -- stage 1 -----------------------------------------------------------------

def train_stage1(train: Dataset, cfg: RunConfig, seed: int = 0, val: Dataset | None = None) -> Checkpoint:
    """Train the SC and FC encoder + head pairs independently with cross-entropy."""
    if val is None:
        train, val = split_validation(train, cfg, seed)
    model = Stage1Model(cfg, _rng(seed, 1, 0))
    history = []
    for m, modality in enumerate(("SC", "FC")):
        branch = model.branch(modality)
        rng = _rng(seed, 1, 1 + m)

        def step(batch, modality=modality):
            ce = cross_entropy(model.logits(batch, modality), batch.labels)
            return ce, {"loss": ce.item(), "ce": ce.item()}, None

        def predict(data, modality=modality):
            return predict_proba(model, data, modality=modality)

        history += _fit(1, branch, list(branch.named_parameters()), step, predict,
                        train, val, cfg, rng, tag=modality)
    return Checkpoint.from_module(1, model, cfg.model_dict(), history)


# -- stage 2 -----------------------------------------------------------------

def _check_arch(ckpt: Checkpoint, cfg: RunConfig, keys=ARCH_KEYS):
    for key in keys:
        theirs = ckpt.config.get(key)
        if theirs is not None and theirs != getattr(cfg, key):
            raise StageError(
                f"incompatible stage-{ckpt.stage} checkpoint: {key}={theirs}, config has {getattr(cfg, key)}"
            )


def load_stage1(ckpt: Checkpoint, cfg: RunConfig) -> Stage1Model:
    ckpt.require_stage(1)
    _check_arch(ckpt, cfg)
    model = Stage1Model(cfg, _rng(0, 1, 0))
    try:
        model.load_state_dict(ckpt.tensors)
    except ValueError as exc:
        raise StageError(f"incompatible stage-1 checkpoint: {exc}") from None
    return model


def train_stage2(train: Dataset, stage1: Checkpoint, cfg: RunConfig, seed: int = 0,
                 val: Dataset | None = None) -> Checkpoint:
    """Single-expert fusion pretraining guided by frozen stage-1 teachers."""
    if val is None:
        train, val = split_validation(train, cfg, seed)
    teacher = load_stage1(stage1, cfg).freeze()
    model = Stage2Model(cfg, _rng(seed, 2, 0))
    if cfg.warm_start:
        model.enc_sc.load_state_dict(teacher.sc.encoder.state_dict())
        model.enc_fc.load_state_dict(teacher.fc.encoder.state_dict())
    losses = cfg.loss_config()
    rng = _rng(seed, 2, 1)

    def step(batch):
        out = model(batch)
        with no_grad():
            _, t_sc = teacher.sc(batch.ops_sc, batch.x_sc)
            _, t_fc = teacher.fc(batch.ops_fc, batch.x_fc)
        ce = cross_entropy(out.logits, batch.labels)
        distill = distill_loss(out.pooled_sc, out.pooled_fc, t_sc, t_fc, losses.tau,
                               teacher_first=losses.kl_teacher_first)
        contrast = cmbp_contrast(out.pooled_sc, out.pooled_fc, losses.tau_c, NORM_EPS)
        total = stage2_loss(ce, distill, contrast, losses.beta)
        terms = {"loss": total.item(), "ce": ce.item(), "distill": distill.item(),
                 "contrast": contrast.item()}
        return total, terms, None

    history = _fit(2, model, list(model.named_parameters()), step,
                   lambda data: predict_proba(model, data), train, val, cfg, rng)
    return Checkpoint.from_module(2, model, cfg.model_dict(), history)


# -- stage 3 -----------------------------------------------------------------

def load_stage2(ckpt: Checkpoint, cfg: RunConfig) -> Stage2Model:
    ckpt.require_stage(2)
    _check_arch(ckpt, cfg, ARCH_KEYS + ("token_dim", "moe_depth"))
    model = Stage2Model(cfg, _rng(0, 2, 0))
    for kind in KINDS:
        for layer in range(cfg.moe_depth):
            name = f"experts.{kind}.{layer}.fc1.weight"
            if name not in ckpt.tensors:
                raise StageError(f"stage-2 checkpoint lacks expert weights {name!r}")
    try:
        model.load_state_dict(ckpt.tensors)
    except ValueError as exc:
        raise StageError(f"incompatible stage-2 checkpoint: {exc}") from None
    return model


def build_stage3(stage2: Checkpoint, cfg: RunConfig, seed: int = 0) -> Stage3Model:
    """Stage-3 model with experts cloned from ``stage2`` and the trunk frozen."""
    if not 2 <= cfg.n_experts <= 6:
        log.warning("n_experts=%d lies outside the recommended range [2, 6]", cfg.n_experts)
    source = load_stage2(stage2, cfg)
    rng = _rng(seed, 3, 0)
    model = Stage3Model(cfg, rng)
    model.init_from_stage2(source, rng)
    return model


def frozen_snapshot(model) -> dict:
    return {n: p.data.tobytes() for n, p in model.named_parameters() if p.frozen}


def stage3_objective(model: Stage3Model, batch, cfg: RunConfig, rng):
    """Forward pass plus stage-3 loss; returns (total, terms, fusion importance per layer)."""
    out = model(batch, train=True, rng=rng)
    ce = cross_entropy(out.logits, batch.labels)
    moe = None
    for kind in KINDS:
        term = balance_loss(out.records[kind])
        moe = term if moe is None else add(moe, term)
    disen = disentangle_loss(out.z["SC"], out.z["FC"], out.z["Fusion"], out.anchor, cfg.tau_d, NORM_EPS)
    if cfg.moe_loss:
        total = stage3_loss(ce, moe, disen, cfg.alpha)
    else:
        total = add(ce, scale(disen, 1.0 - cfg.alpha))
    terms = {"loss": total.item(), "ce": ce.item(), "moe": moe.item(), "disen": disen.item()}
    importance = [r.importance for r in out.records["Fusion"]]
    return total, terms, importance


def train_stage3(train: Dataset, stage2: Checkpoint, cfg: RunConfig, seed: int = 0,
                 val: Dataset | None = None) -> Checkpoint:
    """MoE fine-tuning with encoders, projections and FFN frozen."""
    if val is None:
        train, val = split_validation(train, cfg, seed)
    model = build_stage3(stage2, cfg, seed)
    before = frozen_snapshot(model)
    rng = _rng(seed, 3, 1)
    history = _fit(3, model, list(model.named_parameters()),
                   lambda batch: stage3_objective(model, batch, cfg, rng),
                   lambda data: predict_proba(model, data), train, val, cfg, rng)
    if frozen_snapshot(model) != before:
        raise StageError("frozen stage-3 parameters changed during training")
    return Checkpoint.from_module(3, model, cfg.model_dict(), history)


def load_stage3(ckpt: Checkpoint, cfg: RunConfig | None = None) -> Stage3Model:
    ckpt.require_stage(3)
    cfg = cfg or config_from_checkpoint(ckpt)
    model = Stage3Model(cfg, _rng(0, 3, 0))
    try:
        model.load_state_dict(ckpt.tensors)
    except ValueError as exc:
        raise StageError(f"incompatible stage-3 checkpoint: {exc}") from None
    for name, p in model.named_parameters():
        if ckpt.frozen.get(name):
            p.freeze()
    return model


def config_from_checkpoint(ckpt: Checkpoint, base: RunConfig | None = None) -> RunConfig:
    base = base or RunConfig()
    known = {k: v for k, v in ckpt.config.items() if hasattr(base, k)}
    return base.replace(**known)


def load_model(ckpt: Checkpoint, cfg: RunConfig | None = None):
    cfg = cfg or config_from_checkpoint(ckpt)
    if ckpt.stage == 1:
        return load_stage1(ckpt, cfg)
    if ckpt.stage == 2:
        return load_stage2(ckpt, cfg)
    return load_stage3(ckpt, cfg)


# -- evaluation and protocol ----------------------------------------------

def evaluate(model, data: Dataset, modality: str | None = None) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty set")
    probs = predict_proba(model, data, modality=modality)
    return confusion_metrics(data.labels, probs.argmax(axis=1), probs[:, 1])


@dataclass
class PipelineResult:
    stage1: Checkpoint
    stage2: Checkpoint
    stage3: Checkpoint
    model: Stage3Model


def run_pipeline(train: Dataset, cfg: RunConfig, seed: int = 0, val: Dataset | None = None) -> PipelineResult:
    """Stages 1 to 3 on one training split, sharing one validation split."""
    if val is None:
        train, val = split_validation(train, cfg, seed)
    c1 = train_stage1(train, cfg, seed, val)
    c2 = train_stage2(train, c1, cfg, seed, val)
    c3 = train_stage3(train, c2, cfg, seed, val)
    return PipelineResult(c1, c2, c3, load_stage3(c3, cfg))


def _cv_task(args):
    data, cfg, train_idx, test_idx, run_seed = args
    result = run_pipeline(data.subset(train_idx), cfg, run_seed)
    return evaluate(result.model, data.subset(test_idx))


def run_cv(data: Dataset, cfg: RunConfig, k: int = 10, n_repeats: int = 10, seed: int = 0):
    """Repeated stratified k-fold; every fold retrains all three stages.

    Returns
    -------
    summary : dict
        ``{metric: (mean, std)}`` across all ``k * n_repeats`` runs.
    runs : list of Metrics
    """
    tasks = []
    for r in range(n_repeats):
        for f, (tr, te) in enumerate(kfold_split(len(data), k, data.labels, seed + r)):
            tasks.append((data, cfg, tr, te, seed * 100003 + r * k + f))
    if cfg.n_jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            runs = list(pool.map(_cv_task, tasks))
    else:
        runs = [_cv_task(t) for t in tasks]
    return aggregate(runs), runs
