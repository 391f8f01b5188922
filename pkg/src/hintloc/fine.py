"""Fine stage: matching-free position regression inside candidate submaps.

Training pairs each query with its ground-truth submap, optionally swapped
per epoch for a map clone: an overlapping submap whose center stays within
alpha of the original and within beta of the target (planar infinity norms,
strict bounds), and which misses at most max_mismatch hinted instances. The
regressor never sees coarse retrieval output during training. Evaluation
regresses one position per retrieved candidate and scores the localization
recall grid over (k, epsilon).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .engine import ops
from .engine.checkpoint import load_state, save_state
from .engine.optim import Adam, step_decay_lr
from .engine.tensor import Tape, Tensor
from .errors import ConfigError, DataFormatError, InvalidValueError, ShapeError
from .models import FineModel
from .seeding import STREAM_EPOCH_FINE, STREAM_INIT_FINE, STREAM_PMC, rng_for

CHECKPOINT_KIND = "fine-model"
MATCH_RADIUS = 1.0  # meters: hinted instance counts as present within this


@dataclass(frozen=True)
class PmcConfig:
    alpha: float = 15.0
    beta: float = 12.0
    max_mismatch: int = 1

    def validate(self) -> None:
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError(f"alpha/beta must be positive, got {self.alpha}/{self.beta}")
        if self.max_mismatch < 0:
            raise ConfigError(f"max_mismatch must be >= 0, got {self.max_mismatch}")


@dataclass(frozen=True)
class FineTrainConfig:
    batch_size: int = 32
    epochs: int = 35
    base_lr: float = 3e-4
    lr_decay: float = 0.4
    decay_every: int = 7
    embed_dim: int = 128
    ccat_count: int = 2
    seed: int = 0
    use_pmc: bool = True
    use_number_encoder: bool = True
    pmc: PmcConfig = field(default_factory=PmcConfig)

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.ccat_count not in (0, 1, 2, 3):
            raise ConfigError(f"ccat_count must be 0..3, got {self.ccat_count}")
        self.pmc.validate()


def pmc_candidates(submaps: list, gt_submap, target_xy: np.ndarray,
                   cfg: PmcConfig) -> list:
    """Clone candidates: centers within alpha of the gt center and within
    beta of the target, both strict planar infinity norms."""
    centers = np.ascontiguousarray(
        np.array([sm.center[:2] for sm in submaps], dtype=np.float64))
    mask = kernels.pmc_mask(centers,
                            np.ascontiguousarray(gt_submap.center[:2]),
                            np.ascontiguousarray(np.asarray(target_xy, dtype=np.float64)),
                            cfg.alpha, cfg.beta)
    return [sm for sm, keep in zip(submaps, mask) if keep]


def mismatch_count(scene, submap, hint_instance_ids) -> int:
    """Hinted instances with no same-class instance within MATCH_RADIUS of
    the hinted instance's planar center inside the submap."""
    missing = 0
    for hid in hint_instance_ids:
        hinted = scene[hid]
        found = False
        for iid in submap.instance_ids:
            cand = scene[iid]
            if cand.class_id != hinted.class_id:
                continue
            if np.hypot(*(cand.center[:2] - hinted.center[:2])) <= MATCH_RADIUS:
                found = True
                break
        if found:
            continue
        missing += 1
    return missing


def pmc_filter_and_sample(candidates: list, scene, query, gt_submap,
                          cfg: PmcConfig, rng) -> object:
    """Uniform choice over candidates with tolerable mismatch; gt fallback."""
    eligible = [sm for sm in candidates
                if mismatch_count(scene, sm, query.hint_instance_ids) <= cfg.max_mismatch]
    if not eligible:
        return gt_submap
    return eligible[int(rng.integers(len(eligible)))]


def mse_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Mean over the batch of squared planar distance, (1/B)·Σ‖pred−gt‖²."""
    target = np.asarray(gt, dtype=np.float64)
    if pred.shape != target.shape or pred.shape[-1] != 2:
        raise ShapeError(f"prediction {pred.shape} vs target {target.shape}")
    d = ops.sub(pred, Tensor(target))
    return ops.scale(ops.mean_all(ops.mul(d, d)), 2.0)


@dataclass
class FineTrainState:
    """Everything needed to continue training where a run stopped."""
    model: FineModel
    optimizer: Adam
    trace: list[float]
    epochs_done: int


def train_fine(dataset, config: FineTrainConfig,
               log: Optional[Callable[[str], None]] = None,
               resume: Optional[FineTrainState] = None) -> FineTrainState:
    """Train the regressor on gt-paired (optionally clone-swapped) submaps,
    or continue a resumed run up to config.epochs. Epoch rng streams are
    keyed by (seed, epoch), so resumed runs replay uninterrupted ones."""
    config.validate()
    queries = dataset.train_queries
    if len(queries) < 1:
        raise InvalidValueError("fine training needs at least one query")
    if resume is None:
        model = FineModel(rng_for(config.seed, STREAM_INIT_FINE),
                          vocab_size=len(dataset.vocab),
                          embed_dim=config.embed_dim,
                          ccat_count=config.ccat_count,
                          use_number_encoder=config.use_number_encoder)
        opt = Adam()
        start = 0
        trace: list[float] = []
    else:
        model, opt = resume.model, resume.optimizer
        if (model.embed_dim != config.embed_dim
                or model.ccat_count != config.ccat_count
                or (model.instances.num_mlp is not None) != config.use_number_encoder):
            raise ConfigError("resumed model does not match the config's architecture")
        if resume.epochs_done >= config.epochs:
            raise ConfigError(
                f"resumed run already has {resume.epochs_done} epochs, "
                f"config asks for {config.epochs}")
        start = resume.epochs_done
        trace = list(resume.trace)
    named = list(model.named_tensors())
    by_id = {sm.id: sm for sm in dataset.submaps}

    # candidate geometry and mismatch filtering never change across epochs;
    # only the uniform pick is resampled
    eligible: list[list] = []
    for q in queries:
        gt = by_id[q.gt_submap_id]
        cands = pmc_candidates(dataset.submaps, gt, q.target, config.pmc)
        eligible.append([sm for sm in cands
                         if mismatch_count(dataset.scene, sm, q.hint_instance_ids)
                         <= config.pmc.max_mismatch])

    for epoch in range(start, config.epochs):
        rng = rng_for(config.seed, STREAM_EPOCH_FINE, epoch)
        pmc_rng = rng_for(config.seed, STREAM_PMC, epoch)
        if config.use_pmc:
            paired = [pool[int(pmc_rng.integers(len(pool)))] if pool
                      else by_id[q.gt_submap_id]
                      for q, pool in zip(queries, eligible)]
        else:
            paired = [by_id[q.gt_submap_id] for q in queries]
        lr = step_decay_lr(config.base_lr, epoch, config.lr_decay, config.decay_every)
        order = rng.permutation(len(queries))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            batch_q = [queries[i] for i in idx]
            batch_sm = [paired[i] for i in idx]
            targets = np.array([q.target for q in batch_q])
            with Tape() as tape:
                pred = model.forward_batch(batch_q, dataset.scene, batch_sm)
                loss = mse_loss(pred, targets)
                tape.backward(loss)
            opt.step(named, lr)
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
        if log is not None:
            log(f"fine epoch {epoch:3d}  loss {trace[-1]:.4f}  lr {lr:.2e}")
    return FineTrainState(model=model, optimizer=opt, trace=trace,
                          epochs_done=config.epochs)


def save_fine_checkpoint(path: str, state: FineTrainState,
                         config: FineTrainConfig) -> None:
    arrays = {name: t.data for name, t in state.model.named_tensors()}
    arrays.update(state.optimizer.state_arrays())
    arrays["adam.step"] = np.float64(state.optimizer.step_count)
    meta = {"kind": CHECKPOINT_KIND,
            "vocab_size": state.model.vocab_size,
            "config": dataclasses.asdict(config),
            "loss_trace": state.trace,
            "epochs_done": state.epochs_done}
    save_state(path, arrays, meta)


def load_fine_checkpoint(path: str) -> tuple[FineTrainState, FineTrainConfig, dict]:
    arrays, meta = load_state(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise DataFormatError(
            f"{path} holds {meta.get('kind')!r}, expected {CHECKPOINT_KIND!r}")
    try:
        fields = dict(meta["config"])
        fields["pmc"] = PmcConfig(**fields["pmc"])
        config = FineTrainConfig(**fields)
    except (KeyError, TypeError) as e:
        raise DataFormatError(f"{path} has an invalid config block: {e}") from e
    model = FineModel(np.random.default_rng(0),
                      vocab_size=int(meta["vocab_size"]),
                      embed_dim=config.embed_dim,
                      ccat_count=config.ccat_count,
                      use_number_encoder=config.use_number_encoder)
    named = dict(model.named_tensors())
    stored = {k for k in arrays if not k.startswith("adam.")}
    if stored != set(named):
        missing = sorted(set(named) - stored)[:3]
        extra = sorted(stored - set(named))[:3]
        raise DataFormatError(
            f"{path} does not match the model architecture "
            f"(missing {missing}, unexpected {extra})")
    for name, tensor in named.items():
        tensor._assign(arrays[name])
    opt = Adam()
    opt.load_state_arrays(arrays, int(arrays.get("adam.step", 0.0)))
    state = FineTrainState(model=model, optimizer=opt,
                           trace=list(meta.get("loss_trace", [])),
                           epochs_done=int(meta.get("epochs_done", 0)))
    return state, config, meta


@dataclass(frozen=True)
class LocalizationResult:
    """Per-candidate regressed world positions and their errors, in the
    candidate order given to localize (coarse rank order)."""
    candidate_ids: np.ndarray
    positions: np.ndarray
    errors: np.ndarray


def _result(query, candidates: list, positions: np.ndarray) -> LocalizationResult:
    errors = np.linalg.norm(positions - np.asarray(query.target), axis=1)
    return LocalizationResult(
        candidate_ids=np.array([sm.id for sm in candidates], dtype=np.int64),
        positions=positions, errors=errors)


def localize(model: FineModel, query, scene, candidates: list) -> LocalizationResult:
    """One regressed position per candidate submap, errors to the gt target."""
    if len(candidates) < 1:
        raise InvalidValueError("localization needs at least one candidate")
    preds = model.forward_batch([query] * len(candidates), scene, candidates)
    return _result(query, candidates, preds.data)


def center_baseline(query, candidates: list) -> LocalizationResult:
    """Zero-regressor reference: every candidate predicts its own center."""
    if len(candidates) < 1:
        raise InvalidValueError("localization needs at least one candidate")
    positions = np.array([sm.center[:2] for sm in candidates], dtype=np.float64)
    return _result(query, candidates, positions)


def localization_recall(results: list, ks: tuple = (1, 5, 10),
                        eps: tuple = (5.0, 10.0, 15.0)) -> dict:
    """Grid of success fractions: a query counts at (k, eps) when any of its
    top-k candidates landed strictly within eps meters."""
    if len(results) == 0:
        raise InvalidValueError("recall over zero results is undefined")
    for r in results:
        if r.errors.size < max(ks):
            raise InvalidValueError(
                f"results carry {r.errors.size} candidates, need {max(ks)}")
    grid = {k: {} for k in ks}
    for k in ks:
        best = np.array([r.errors[:k].min() for r in results])
        for e in eps:
            grid[k][e] = float(np.mean(best < e))
    return grid
