"""Training loop, held-out evaluation, and leave-one-out orchestration.

The optimizer is plain SGD with momentum; none of the hyperparameter
defaults below are claims about how the networks *must* be trained, they are
reproducible defaults that get echoed into every report.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import data, models, nn
from .geometry import angle_euclidean, angular_error
from .imaging import AugmentConfig
from .reporting import FoldReport, RunReport

INPUT_MODES = ("dual", "left-only", "right-only", "both-with-flip")


@dataclass
class TrainConfig:
    architecture: str = "hw-3x3"
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 30
    lr_decay_factor: float = 0.1   # applied from 2/3 of the epochs onward
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    input_mode: str = "dual"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.momentum < 0 or self.batch_size < 1:
            raise ValueError("learning rate, momentum, and batch size must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.input_mode not in INPUT_MODES:
            raise ValueError(f"unknown input mode '{self.input_mode}'")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig.from_dict(self.augment)

    @property
    def channels(self) -> int:
        return 2 if self.input_mode == "dual" else 1

    def decay_epoch(self) -> int:
        return (2 * self.epochs) // 3

    def to_dict(self) -> dict:
        return {
            "architecture": self.architecture,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "lr_decay_factor": self.lr_decay_factor,
            "seed": self.seed,
            "augment": self.augment.to_dict(),
            "input_mode": self.input_mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def spec_for(config: TrainConfig) -> models.NetworkSpec:
    spec = models.build_arch(config.architecture)
    if spec.in_channels != config.channels:
        raise ValueError(
            f"architecture '{config.architecture}' takes {spec.in_channels} channel(s) "
            f"but input mode '{config.input_mode}' provides {config.channels}")
    return spec


def _assemble(frames, mode: str):
    if mode == "dual":
        return data.assemble_dual(frames)
    return data.assemble_single(frames, mode)


def train_fold(train_frames, config: TrainConfig):
    """Train one network on the given frames.

    Returns (params, log) where log is a list of per-epoch
    (epoch, mean loss, train angular error in degrees) rows.  Deterministic
    for a fixed config and frame list.
    """
    spec = spec_for(config)
    rng = np.random.default_rng(config.seed)
    params = models.init_params(spec, seed=config.seed)
    velocity: dict = {}
    log = []
    augmenting = config.augment.degrade_probability > 0.0
    if not augmenting:
        static = data.stack_samples(_assemble(train_frames, config.input_mode))
    decay_at = config.decay_epoch()

    for epoch in range(config.epochs):
        lr = config.learning_rate * (config.lr_decay_factor if epoch >= decay_at else 1.0)
        if augmenting:
            frames = data.augment_frames(train_frames, config.augment, rng)
            x_all, pose_all, target_all = data.stack_samples(_assemble(frames, config.input_mode))
        else:
            x_all, pose_all, target_all = static
        order = rng.permutation(x_all.shape[0])
        loss_sum = 0.0
        err_sum = 0.0
        for lo in range(0, order.size, config.batch_size):
            idx = order[lo : lo + config.batch_size]
            loss, pred, grads = models.forward_backward(
                spec, params, x_all[idx], pose_all[idx], target_all[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged at epoch {epoch + 1} (loss {loss}); "
                    "lower the learning rate")
            nn.sgd_step(params, grads, velocity, lr, config.momentum)
            loss_sum += loss * idx.size
            err_sum += float(np.sum(angular_error(pred.astype(np.float64),
                                                  target_all[idx].astype(np.float64))))
        n = order.size
        log.append((epoch + 1, loss_sum / n, err_sum / n))
    return params, log


def evaluate(test_frames, spec: models.NetworkSpec, params: dict, mode: str,
             degrade_target=None, filt: str = "lanczos3", chunk: int = 256) -> dict:
    """Mean angular and euclidean error (degrees) on held-out frames.

    `degrade_target` (w, h) simulates camera distance by degrading every eye
    image with `filt` before normalization.
    """
    frames = test_frames
    condition = "native"
    if degrade_target is not None:
        frames = data.degrade_frames(frames, tuple(degrade_target), filt)
        condition = f"{degrade_target[0]}x{degrade_target[1]}:{filt}"
    x, pose, target = data.stack_samples(_assemble(frames, mode))
    preds = np.concatenate([
        models.forward(spec, params, x[lo : lo + chunk], pose[lo : lo + chunk])
        for lo in range(0, x.shape[0], chunk)
    ])
    nn.check_finite(preds, "evaluation predictions")
    t64 = target.astype(np.float64)
    p64 = preds.astype(np.float64)
    return {
        "condition": condition,
        "count": int(x.shape[0]),
        "mean_angular_error_deg": float(np.mean(angular_error(p64, t64))),
        "mean_euclidean_error_deg": float(np.mean(angle_euclidean(p64, t64))),
    }


def constant_predictor_error(train_frames, test_frames, mode: str) -> float:
    """Mean angular error (degrees) of always predicting the training-set
    mean gaze; the floor any trained model must beat."""
    _, _, train_targets = data.stack_samples(_assemble(train_frames, mode))
    _, _, test_targets = data.stack_samples(_assemble(test_frames, mode))
    mean = train_targets.astype(np.float64).mean(axis=0)
    errs = angular_error(np.broadcast_to(mean, test_targets.shape),
                         test_targets.astype(np.float64))
    return float(np.mean(errs))


# ---------------------------------------------------------------------------
# Leave-one-out orchestration
# ---------------------------------------------------------------------------

_POOL_STATE: dict = {}


def _init_pool(frames, config, conditions, with_baseline):
    _POOL_STATE.update(frames=frames, config=config, conditions=conditions,
                       with_baseline=with_baseline)


def _run_fold_job(args):
    fold_index, held_out = args
    return run_fold(_POOL_STATE["frames"], _POOL_STATE["config"], fold_index, held_out,
                    _POOL_STATE["conditions"], _POOL_STATE["with_baseline"])


def run_fold(frames, config: TrainConfig, fold_index: int, held_out: str,
             conditions, with_baseline: bool = False):
    """Train with one person held out, then evaluate every condition.

    The fold seed is config.seed + fold_index, so results do not depend on
    whether folds execute serially or concurrently.
    """
    train_frames, test_frames = data.split_frames(frames, held_out)
    fold_config = replace(config, seed=config.seed + fold_index)
    start = time.perf_counter()
    params, log = train_fold(train_frames, fold_config)
    spec = spec_for(config)
    results = []
    for cond in conditions:
        target, filt = cond if cond is not None else (None, "lanczos3")
        ev = evaluate(test_frames, spec, params, config.input_mode, target, filt)
        results.append(FoldReport(
            held_out=held_out,
            count=ev["count"],
            mean_angular_error_deg=ev["mean_angular_error_deg"],
            mean_euclidean_error_deg=ev["mean_euclidean_error_deg"],
            condition=ev["condition"],
            wall_seconds=time.perf_counter() - start,
        ))
    baseline = (constant_predictor_error(train_frames, test_frames, config.input_mode)
                if with_baseline else None)
    return fold_index, results, baseline, log


def run_loocv(frames, config: TrainConfig, conditions=(None,), jobs: int = 1,
              with_baseline: bool = False):
    """Person-exclusive leave-one-out cross-validation.

    Returns (reports, baselines): one RunReport per requested evaluation
    condition (each aggregating all folds), and the per-fold constant
    predictor errors when `with_baseline` is set.
    """
    plan = data.loocv_split(frames)
    spec_for(config)  # arch/mode mismatch must fail before any training starts
    jobs_args = [(i, fold.held_out) for i, fold in enumerate(plan)]
    outcomes = {}
    if jobs > 1:
        with ProcessPoolExecutor(
                max_workers=jobs, initializer=_init_pool,
                initargs=(frames, config, tuple(conditions), with_baseline)) as pool:
            for fold_index, results, baseline, _ in pool.map(_run_fold_job, jobs_args):
                outcomes[fold_index] = (results, baseline)
    else:
        for args in jobs_args:
            fold_index, results, baseline, _ = run_fold(
                frames, config, args[0], args[1], tuple(conditions), with_baseline)
            outcomes[fold_index] = (results, baseline)

    reports = []
    for c, _cond in enumerate(conditions):
        folds = [outcomes[i][0][c] for i in range(len(plan))]
        reports.append(RunReport.build(config.to_dict(), config.seed, folds))
    baselines = [outcomes[i][1] for i in range(len(plan))] if with_baseline else None
    return reports, baselines
