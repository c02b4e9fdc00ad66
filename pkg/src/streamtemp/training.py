"""Multi-task pretraining, transfer protocols, and RMSE reporting.

Pretraining loops over source task windows (tasks interleaved
round-robin, one window per optimizer step) minimizing masked RMSE.
A pretrained bundle can then be applied to unseen tasks zero-shot, or
adapted with one of three strategies that differ only in which
parameter groups stay frozen:

    complete     everything trains
    geo-related  only the characteristics MLP trains
    geo-focus    the network is frozen; only the task embedding z,
                 seeded from the embedding pipeline, is optimized

The climatology baseline (day-of-year means from a sibling task of the
same watershed, else a linear air-temperature regression fit on source
observations) is the reference predictor for the acceptance
experiments.
"""

import copy
import datetime
import json
from dataclasses import dataclass, field

import numpy as np

from . import dataset as ds
from . import gated_stgnn, geo_embedding
from . import numerics as nm
from .errors import DataError, NumericError
from .stream_graph import adjacency_from_distances, build_distance_stats


@dataclass
class TrainingConfig:
    lr_pretrain: float = 0.1
    lr_finetune: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    epochs_pretrain: int = 200
    epochs_finetune: int = 50
    patience: int = 20
    min_improve: float = 1e-3
    window_days: int = 90
    window_stride: int = 90
    train_frac: float = 0.7
    test_frac: float = 0.25


@dataclass
class ExperimentPlan:
    name: str
    source_tasks: list
    target_tasks: list

    def __post_init__(self):
        overlap = set(self.source_tasks) & set(self.target_tasks)
        if overlap:
            raise DataError(f"plan {self.name}: tasks {sorted(overlap)} are both source and target")
        if not self.source_tasks:
            raise DataError(f"plan {self.name}: no source tasks")


def load_plan(path):
    with open(path) as fh:
        raw = json.load(fh)
    return ExperimentPlan(name=raw["name"], source_tasks=list(raw["source_tasks"]),
                          target_tasks=list(raw["target_tasks"]))


class FinetuneStrategy:
    """Which parameter groups a fine-tuning run may update."""

    KINDS = ("complete", "geo-related", "geo-focus")

    def __init__(self, kind):
        if kind not in self.KINDS:
            raise DataError(f"unknown fine-tuning strategy {kind!r}")
        self.kind = kind

    def trainable_groups(self):
        if self.kind == "complete":
            return {"encoder", "characteristics_mlp", "gate", "pooling", "head"}
        if self.kind == "geo-related":
            return {"characteristics_mlp"}
        return {"embedding_z"}

    @property
    def tunes_embedding(self):
        return self.kind == "geo-focus"


@dataclass
class EvalReport:
    task_id: str
    method: str
    rmse: float
    n_obs: int
    per_segment: dict
    seed: int
    fingerprint: str = ""


def masked_rmse(pred, y, mask):
    """sqrt(mean((pred - y)^2)) over the masked entries."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DataError("masked_rmse: empty mask")
    diff = np.asarray(pred)[mask] - np.asarray(y)[mask]
    return float(np.sqrt(np.mean(diff * diff)))


def rmse_loss(yhat, y, mask):
    """Differentiable masked RMSE (the training loss)."""
    count = int(mask.sum())
    if count == 0:
        raise DataError("rmse_loss: empty mask")
    diff = nm.sub(yhat, nm.Tensor(y))
    masked = nm.mul(diff, nm.Tensor(mask.astype(np.float64)))
    mse = nm.mul(nm.tsum(nm.mul(masked, masked)), 1.0 / count)
    return nm.sqrt(mse)


@dataclass
class TrainedBundle:
    """A pretrained model plus the frozen preprocessing state it needs."""

    model: gated_stgnn.Model
    norm_stats: ds.NormStats
    dist_stats: object            # DistanceStats, or None under per-network stats
    curve: list = field(default_factory=list)
    train_config: TrainingConfig = field(default_factory=TrainingConfig)
    seed: int = 0
    fingerprint: str = ""

    def adjacency_for(self, network):
        stats = self.dist_stats
        if stats is None:
            stats = build_distance_stats([network])
        return adjacency_from_distances(network, stats)


def _copy_model(model):
    clone = gated_stgnn.Model(model.config, model.ablation, seed=0)
    for name, t in model.params.items():
        clone.params[name].data = t.data.copy()
    return clone


def _window_list(task_norm, tc):
    length = min(tc.window_days, task_norm.n_days)
    wins = ds.window(task_norm, length, tc.window_stride)
    keep = []
    for w in wins:
        m = w.y_mask.copy()
        m[:, 0] = False
        if m.any():
            keep.append(w)
    return keep


def _train_step(model, win, adj, groups, state, z_free=None):
    yhat, valid = gated_stgnn.forward(model, win, adj, z=z_free)
    mask = win.y_mask & valid
    loss = rmse_loss(yhat, win.y, mask)
    if not np.isfinite(loss.data):
        raise NumericError("loss", f"diverged on task {win.task_id!r}")
    params = nm.collect_params(groups).values()
    grads = nm.backward(loss, params=params)
    nm.adam_step(groups, grads, state)
    return float(loss.data)


def _run_epochs(model, windows_per_task, adjs, groups, state, epochs, tc, rng,
                z_free=None, context=""):
    """Round-robin optimization with plateau early stopping; returns loss curve."""
    curve = []
    best = np.inf
    streak = 0
    task_ids = sorted(windows_per_task)
    for epoch in range(epochs):
        order = list(task_ids)
        rng.shuffle(order)
        losses = []
        depth = max(len(windows_per_task[t]) for t in order)
        for wi in range(depth):
            for tid in order:
                wins = windows_per_task[tid]
                if wi < len(wins):
                    losses.append(_train_step(model, wins[wi], adjs[tid], groups,
                                              state, z_free=z_free))
        if not losses:
            raise DataError(f"{context}: no trainable windows")
        mean_loss = float(np.mean(losses))
        curve.append(mean_loss)
        if mean_loss < best - tc.min_improve:
            best = mean_loss
            streak = 0
        else:
            streak += 1
            if streak >= tc.patience:
                break
    return curve


def pretrain(plan, tasks, model_config, ablation, tc, seed, fingerprint=""):
    """Train a fresh model on the plan's source tasks; returns a TrainedBundle.

    Normalization and distance stats are frozen from the source tasks
    before any window is seen (per-network distance stats when the
    unified-preprocessing ablation is off).
    """
    missing = [t for t in plan.source_tasks if t not in tasks]
    if missing:
        raise DataError(f"plan references unknown tasks {missing}")
    source = [tasks[t] for t in plan.source_tasks]
    if ablation.unified_preprocessing:
        dist_stats = build_distance_stats([t.network for t in source])
    else:
        dist_stats = None

    train_slices = []
    for t in source:
        tr, _ = ds.train_test_split(t, tc.train_frac, tc.test_frac)
        train_slices.append(tr)
    norm_stats = ds.build_norm_stats(train_slices)

    model = gated_stgnn.Model(model_config, ablation, seed=seed)
    bundle = TrainedBundle(model=model, norm_stats=norm_stats, dist_stats=dist_stats,
                           train_config=tc, seed=seed, fingerprint=fingerprint)

    windows = {}
    adjs = {}
    for raw, tr in zip(source, train_slices):
        tr_norm = ds.normalize(tr, norm_stats)
        wins = _window_list(tr_norm, tc)
        if wins:
            windows[raw.task_id] = wins
            adjs[raw.task_id] = bundle.adjacency_for(raw.network)
    if not windows:
        raise DataError("no source windows with observations")

    groups = model.param_groups()
    state = nm.AdamState(groups, lr=tc.lr_pretrain, beta1=tc.beta1, beta2=tc.beta2,
                         eps=tc.eps, clip_norm=tc.clip_norm)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E]))
    bundle.curve = _run_epochs(model, windows, adjs, groups, state,
                               tc.epochs_pretrain, tc, rng,
                               context=f"pretrain[{plan.name}]")
    return bundle


def _eval_slice(bundle, task_raw, z=None, model=None):
    """Normalized test slice, its adjacency, and predictions on it."""
    model = model or bundle.model
    tc = bundle.train_config
    norm = ds.normalize(task_raw, bundle.norm_stats)
    _, test = ds.train_test_split(norm, tc.train_frac, tc.test_frac)
    adj = bundle.adjacency_for(task_raw.network)
    stripped = test.strip_labels()
    yhat, valid = gated_stgnn.forward(model, stripped, adj, z=z)
    return test, yhat.data, valid


def _report(task, pred, valid, method, seed, fingerprint):
    mask = task.y_mask & valid
    per_segment = {}
    for i, sid in enumerate(task.network.segment_ids):
        if mask[i].any():
            per_segment[sid] = {
                "rmse": masked_rmse(pred[i], task.y[i], mask[i]),
                "n_obs": int(mask[i].sum()),
            }
    return EvalReport(task_id=task.task_id, method=method,
                      rmse=masked_rmse(pred, task.y, mask),
                      n_obs=int(mask.sum()), per_segment=per_segment,
                      seed=seed, fingerprint=fingerprint)


def zero_shot_eval(bundle, task_raw, method="zero_shot"):
    """Score the pretrained model on a task using inputs only.

    The model sees a label-stripped copy; observations appear solely in
    the RMSE at the end.
    """
    test, pred, valid = _eval_slice(bundle, task_raw)
    return _report(test, pred, valid, method, bundle.seed, bundle.fingerprint)


def finetune(bundle, task_raw, strategy, sparsity, seed, method=None):
    """Adapt to a target task from subsampled observations.

    Only the strategy's trainable groups change; everything else stays
    bit-identical. Returns (model_or_embedding, EvalReport).
    """
    tc = bundle.train_config
    model = _copy_model(bundle.model)
    norm = ds.normalize(task_raw, bundle.norm_stats)
    train, _ = ds.train_test_split(norm, tc.train_frac, tc.test_frac)
    train = ds.subsample_observations(train, sparsity, seed)
    adj = bundle.adjacency_for(task_raw.network)

    windows = _window_list(train, tc)
    if not windows:
        raise DataError(f"no observations left on {task_raw.task_id!r} after subsampling")

    groups = model.param_groups()
    z_free = None
    if strategy.tunes_embedding:
        emb = geo_embedding.compute_geo_embedding(model, train.strip_labels(), adj)
        z_free = nm.Tensor(emb.z.data.copy(), requires_grad=True, name="embedding_z.z")
        groups = groups + [nm.ParamGroup("embedding_z", {"embedding_z.z": z_free})]
    frozen = {g.name for g in groups} - strategy.trainable_groups()
    state = nm.AdamState(groups, lr=tc.lr_finetune, beta1=tc.beta1, beta2=tc.beta2,
                         eps=tc.eps, clip_norm=tc.clip_norm, frozen=frozen)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF7]))
    _run_epochs(model, {task_raw.task_id: windows}, {task_raw.task_id: adj},
                groups, state, tc.epochs_finetune, tc, rng, z_free=z_free,
                context=f"finetune[{strategy.kind}]")

    method = method or strategy.kind.replace("-", "_")
    test, pred, valid = _eval_slice(bundle, task_raw, z=z_free, model=model)
    report = _report(test, pred, valid, method, seed, bundle.fingerprint)
    return model, z_free, report


# ---------------------------------------------------------------------------
# Climatology baseline

def _day_of_year(task):
    d0 = datetime.date.fromisoformat(task.start_date)
    offs = task.day_offset + np.arange(task.n_days)
    return np.array([(d0 + datetime.timedelta(days=int(o))).timetuple().tm_yday
                     for o in offs], dtype=np.int64)


def _smooth_circular(values, counts, half_width=7):
    """Moving average over day-of-year with wraparound; empty days borrow neighbors."""
    n = values.shape[0]
    out = np.zeros(n)
    for d in range(n):
        idx = (np.arange(d - half_width, d + half_width + 1)) % n
        c = counts[idx].sum()
        out[d] = values[idx].sum() / c if c > 0 else np.nan
    return out


def climatology_predict(source_raw, target_raw, tc):
    """Label-free-for-the-target baseline prediction on the target test slice.

    Uses per-day-of-year mean temperature from source tasks of the same
    watershed (any scale), pooled over segments and smoothed; without a
    sibling, falls back to a linear regression on air temperature fit
    on all source observations.
    """
    _, test = ds.train_test_split(target_raw, tc.train_frac, tc.test_frac)
    siblings = [s for s in source_raw if s.network.watershed == target_raw.network.watershed]
    doy_test = _day_of_year(test)
    if siblings:
        sums = np.zeros(367)
        counts = np.zeros(367)
        for s in siblings:
            train, _ = ds.train_test_split(s, tc.train_frac, tc.test_frac)
            doy = _day_of_year(train)
            for i in range(train.n_segments):
                m = train.y_mask[i]
                np.add.at(sums, doy[m], train.y[i, m])
                np.add.at(counts, doy[m], 1.0)
        curve = _smooth_circular(sums[1:367], counts[1:367], half_width=7)
        overall = sums.sum() / max(counts.sum(), 1.0)
        curve = np.where(np.isfinite(curve), curve, overall)
        pred_row = curve[doy_test - 1]
        return np.tile(pred_row, (test.n_segments, 1)), test
    # air-temperature regression fallback on pooled source observations
    airs, ys = [], []
    for s in source_raw:
        train, _ = ds.train_test_split(s, tc.train_frac, tc.test_frac)
        m = train.y_mask
        airs.append(train.x[:, :, 0][m])
        ys.append(train.y[m])
    air = np.concatenate(airs)
    yy = np.concatenate(ys)
    design = np.stack([air, np.ones_like(air)], axis=1)
    coef, *_ = np.linalg.lstsq(design, yy, rcond=None)
    pred = coef[0] * test.x[:, :, 0] + coef[1]
    return pred, test


def climatology_eval(source_raw, target_raw, tc, seed=0, fingerprint=""):
    pred, test = climatology_predict(source_raw, target_raw, tc)
    valid = np.ones_like(test.y_mask)
    valid[:, 0] = False
    return _report(test, pred, valid, "climatology", seed, fingerprint)


# ---------------------------------------------------------------------------
# Experiment orchestration

PROTOCOLS = ("zero_shot", "few_shot", "missing_chars")


@dataclass
class ExperimentResult:
    plan: str
    protocol: str
    seeds: list
    rmse: dict          # method -> target -> {seed: rmse}
    curves: dict        # seed -> loss curve
    fingerprint: str = ""

    def median(self, method, target):
        vals = sorted(self.rmse[method][target].values())
        return float(np.median(vals))

    def methods(self):
        return sorted(self.rmse)


def run_experiment(plan, tasks, model_config, ablation, tc, protocol, seeds,
                   fingerprint="", sparsity=0.001, mask_keep=10):
    """Pretrain once per seed and evaluate every target under a protocol.

    Protocols: zero_shot (model vs climatology), few_shot (all three
    fine-tuning strategies at the given sparsity, plus zero-shot and
    climatology), missing_chars (targets keep mask_keep characteristic
    columns; zero-shot and prompt-style tuning, masked and unmasked).
    """
    if protocol not in PROTOCOLS:
        raise DataError(f"unknown protocol {protocol!r}")
    rmse = {}
    curves = {}

    def record(report, method, target_id, seed):
        rmse.setdefault(method, {}).setdefault(target_id, {})[seed] = report.rmse

    source_raw = [tasks[t] for t in plan.source_tasks]
    for seed in seeds:
        bundle = pretrain(plan, tasks, model_config, ablation, tc, seed, fingerprint)
        curves[seed] = bundle.curve
        for tid in plan.target_tasks:
            target = tasks[tid]
            if protocol in ("zero_shot", "few_shot"):
                record(climatology_eval(source_raw, target, tc, seed, fingerprint),
                       "climatology", tid, seed)
                record(zero_shot_eval(bundle, target), "zero_shot", tid, seed)
            if protocol == "few_shot":
                for kind in FinetuneStrategy.KINDS:
                    strat = FinetuneStrategy(kind)
                    _, _, rep = finetune(bundle, target, strat, sparsity, seed)
                    record(rep, rep.method, tid, seed)
            if protocol == "missing_chars":
                masked = ds.mask_characteristics(target, mask_keep, seed)
                record(zero_shot_eval(bundle, masked, method="zero_shot_masked"),
                       "zero_shot_masked", tid, seed)
                _, _, rep = finetune(bundle, target, FinetuneStrategy("geo-focus"),
                                     sparsity, seed)
                record(rep, "geo_focus", tid, seed)
                _, _, rep_m = finetune(bundle, masked, FinetuneStrategy("geo-focus"),
                                       sparsity, seed, method="geo_focus_masked")
                record(rep_m, "geo_focus_masked", tid, seed)
    return ExperimentResult(plan=plan.name, protocol=protocol, seeds=list(seeds),
                            rmse=rmse, curves=curves, fingerprint=fingerprint)
