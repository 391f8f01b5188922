"""Coarse stage: text-to-submap retrieval.

A text branch and a submap branch are trained jointly with a symmetric
contrastive objective over in-batch pairs: each direction applies a
softmax over scaled descriptor dot products and penalizes the matched
pair's negative log-likelihood. Batches are sampled so no two queries in
a batch share a ground-truth submap — a shared submap would be punished
as a false negative. Retrieval is an exhaustive dot-product scan over a
prebuilt descriptor index (databases here are tiny).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .engine import ops
from .engine.checkpoint import load_state, save_state
from .engine.optim import Adam, step_decay_lr
from .engine.tensor import Tape, Tensor
from .errors import ConfigError, DataFormatError, InvalidValueError, ShapeError
from .models import SubmapBranch, TextBranch
from .seeding import STREAM_EPOCH_COARSE, STREAM_INIT_COARSE, rng_for

UNIT_NORM_TOL = 1e-6
CHECKPOINT_KIND = "coarse-model"


@dataclass(frozen=True)
class CoarseTrainConfig:
    batch_size: int = 64
    epochs: int = 20
    base_lr: float = 5e-4
    lr_decay: float = 0.4
    decay_every: int = 7
    tau: float = 0.1
    embed_dim: int = 256
    seed: int = 0
    use_htm: bool = True
    use_number_encoder: bool = True
    loss: str = "contrastive"
    margin: float = 0.5

    def validate(self) -> None:
        if self.batch_size < 2:
            raise ConfigError(f"contrastive batches need >= 2 pairs, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.base_lr <= 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if self.tau <= 0:
            raise ConfigError(f"temperature must be positive, got {self.tau}")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be positive, got {self.embed_dim}")
        if self.loss not in ("contrastive", "pairwise"):
            raise ConfigError(f"unknown loss kind {self.loss!r}")


class CoarseModel:
    """Paired text and submap encoders sharing one embedding space."""

    def __init__(self, rng, vocab_size: int, embed_dim: int = 256,
                 use_htm: bool = True, use_number_encoder: bool = True):
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.text = TextBranch(rng, vocab_size, embed_dim=embed_dim, use_htm=use_htm)
        self.submap = SubmapBranch(rng, embed_dim=embed_dim,
                                   use_number_encoder=use_number_encoder)

    def named_tensors(self):
        yield from self.text.named_tensors("text.")
        yield from self.submap.named_tensors("submap.")


def _check_batches(text_mat: Tensor, submap_mat: Tensor) -> int:
    if text_mat.ndim != 2 or text_mat.shape != submap_mat.shape:
        raise ShapeError(
            f"descriptor batches must be matching (N, C) matrices, "
            f"got {text_mat.shape} and {submap_mat.shape}")
    n = text_mat.shape[0]
    if n < 2:
        raise InvalidValueError(f"contrastive loss needs >= 2 pairs, got {n}")
    for mat in (text_mat, submap_mat):
        norms = np.linalg.norm(mat.data, axis=1)
        if np.abs(norms - 1.0).max() > UNIT_NORM_TOL:
            raise InvalidValueError("descriptor rows must be unit-norm")
    return n


def _matched_pair_loglikes(text_mat: Tensor, submap_mat: Tensor, tau: float) -> Tensor:
    """Per-pair sum of both softmax directions' matched log-likelihoods, (N,)."""
    if tau <= 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    _check_batches(text_mat, submap_mat)
    logits = ops.scale(ops.matmul(text_mat, ops.transpose(submap_mat)), 1.0 / tau)
    t2s = ops.diag(ops.log_softmax_rows(logits))
    s2t = ops.diag(ops.log_softmax_rows(ops.transpose(logits)))
    return ops.add(t2s, s2t)


def contrastive_pair_loss(i: int, text_mat: Tensor, submap_mat: Tensor,
                          tau: float = 0.1) -> Tensor:
    """Two-direction InfoNCE term for matched pair i against in-batch rivals."""
    loglikes = _matched_pair_loglikes(text_mat, submap_mat, tau)
    n = loglikes.shape[0]
    if not 0 <= i < n:
        raise InvalidValueError(f"pair index {i} outside batch of {n}")
    pick = np.zeros(n)
    pick[i] = 1.0
    return ops.scale(ops.sum_all(ops.mul(loglikes, Tensor(pick))), -1.0)


def batch_contrastive_loss(text_mat: Tensor, submap_mat: Tensor,
                           tau: float = 0.1) -> Tensor:
    """Mean of contrastive_pair_loss over all matched pairs in the batch."""
    return ops.scale(ops.mean_all(_matched_pair_loglikes(text_mat, submap_mat, tau)), -1.0)


def pairwise_margin_loss(text_mat: Tensor, submap_mat: Tensor,
                         margin: float = 0.5) -> Tensor:
    """Max-margin ranking alternative: hinge on matched-minus-rival similarity
    in both directions, averaged over the off-diagonal cells."""
    if margin <= 0:
        raise ConfigError(f"margin must be positive, got {margin}")
    n = _check_batches(text_mat, submap_mat)
    sims = ops.matmul(text_mat, ops.transpose(submap_mat))
    neg_diag = ops.scale(ops.diag(sims), -1.0)
    off = Tensor(1.0 - np.eye(n))
    total = None
    for mat in (sims, ops.transpose(sims)):
        viol = ops.relu(ops.add_scalar(ops.add_colvec(mat, neg_diag), margin))
        term = ops.sum_all(ops.mul(viol, off))
        total = term if total is None else ops.add(total, term)
    return ops.scale(total, 1.0 / (2 * n * (n - 1)))


def _epoch_batches(queries: list, batch_size: int, rng) -> list[list[int]]:
    """Index batches with pairwise-distinct ground-truth submaps.

    Queries are pooled per gt submap; each step drains one query from each
    of batch_size distinct pools, preferring the fullest pools so uneven
    groups still get consumed.
    """
    pools: dict[int, list[int]] = {}
    for qi, q in enumerate(queries):
        pools.setdefault(q.gt_submap_id, []).append(qi)
    if len(pools) < batch_size:
        raise InvalidValueError(
            f"need {batch_size} distinct gt submaps per batch, "
            f"dataset covers only {len(pools)}")
    for gid in sorted(pools):
        rng.shuffle(pools[gid])
    batches = []
    while True:
        live = sorted(g for g, p in pools.items() if p)
        if len(live) < batch_size:
            return batches
        order = np.argsort([-len(pools[g]) for g in live], kind="stable")
        chosen = [live[i] for i in order[:batch_size]]
        rng.shuffle(chosen)
        batches.append([pools[g].pop() for g in chosen])


@dataclass
class CoarseTrainState:
    """Everything needed to continue training where a run stopped."""
    model: CoarseModel
    optimizer: Adam
    trace: list[float]
    epochs_done: int


def train_coarse(dataset, config: CoarseTrainConfig,
                 log: Optional[Callable[[str], None]] = None,
                 resume: Optional[CoarseTrainState] = None) -> CoarseTrainState:
    """Train both branches, or continue a resumed run up to config.epochs.

    Epoch-level rng streams are keyed by (seed, epoch), so a resumed run
    replays the exact batches an uninterrupted run would have seen.
    """
    config.validate()
    if resume is None:
        model = CoarseModel(rng_for(config.seed, STREAM_INIT_COARSE),
                            vocab_size=len(dataset.vocab),
                            embed_dim=config.embed_dim,
                            use_htm=config.use_htm,
                            use_number_encoder=config.use_number_encoder)
        opt = Adam()
        start = 0
        trace: list[float] = []
    else:
        model, opt = resume.model, resume.optimizer
        if (model.embed_dim != config.embed_dim
                or model.text.use_htm != config.use_htm
                or (model.submap.instance_encoder.num_mlp is not None)
                != config.use_number_encoder):
            raise ConfigError("resumed model does not match the config's architecture")
        if resume.epochs_done >= config.epochs:
            raise ConfigError(
                f"resumed run already has {resume.epochs_done} epochs, "
                f"config asks for {config.epochs}")
        start = resume.epochs_done
        trace = list(resume.trace)
    named = list(model.named_tensors())
    by_id = {sm.id: sm for sm in dataset.submaps}
    for epoch in range(start, config.epochs):
        rng = rng_for(config.seed, STREAM_EPOCH_COARSE, epoch)
        lr = step_decay_lr(config.base_lr, epoch, config.lr_decay, config.decay_every)
        losses = []
        for batch in _epoch_batches(dataset.train_queries, config.batch_size, rng):
            queries = [dataset.train_queries[i] for i in batch]
            submaps = [by_id[q.gt_submap_id] for q in queries]
            with Tape() as tape:
                text_mat = model.text.encode_batch(queries)
                sub_mat = model.submap.encode_batch(dataset.scene, submaps)
                if config.loss == "contrastive":
                    loss = batch_contrastive_loss(text_mat, sub_mat, config.tau)
                else:
                    loss = pairwise_margin_loss(text_mat, sub_mat, config.margin)
                tape.backward(loss)
            opt.step(named, lr)
            losses.append(loss.item())
        trace.append(float(np.mean(losses)))
        if log is not None:
            log(f"coarse epoch {epoch:3d}  loss {trace[-1]:.4f}  lr {lr:.2e}")
    return CoarseTrainState(model=model, optimizer=opt, trace=trace,
                            epochs_done=config.epochs)


def save_coarse_checkpoint(path: str, state: CoarseTrainState,
                           config: CoarseTrainConfig) -> None:
    arrays = {name: t.data for name, t in state.model.named_tensors()}
    arrays.update(state.optimizer.state_arrays())
    arrays["adam.step"] = np.float64(state.optimizer.step_count)
    meta = {"kind": CHECKPOINT_KIND,
            "vocab_size": state.model.vocab_size,
            "config": dataclasses.asdict(config),
            "loss_trace": state.trace,
            "epochs_done": state.epochs_done}
    save_state(path, arrays, meta)


def load_coarse_checkpoint(path: str) -> tuple[CoarseTrainState, CoarseTrainConfig, dict]:
    arrays, meta = load_state(path)
    if meta.get("kind") != CHECKPOINT_KIND:
        raise DataFormatError(
            f"{path} holds {meta.get('kind')!r}, expected {CHECKPOINT_KIND!r}")
    try:
        config = CoarseTrainConfig(**meta["config"])
    except (KeyError, TypeError) as e:
        raise DataFormatError(f"{path} has an invalid config block: {e}") from e
    model = CoarseModel(np.random.default_rng(0),
                        vocab_size=int(meta["vocab_size"]),
                        embed_dim=config.embed_dim,
                        use_htm=config.use_htm,
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
    state = CoarseTrainState(model=model, optimizer=opt,
                             trace=list(meta.get("loss_trace", [])),
                             epochs_done=int(meta.get("epochs_done", 0)))
    return state, config, meta


@dataclass(frozen=True)
class RetrievalIndex:
    """Unit-norm submap descriptors with their submap ids."""
    ids: np.ndarray
    matrix: np.ndarray

    def __post_init__(self):
        if self.matrix.ndim != 2 or self.ids.shape != (self.matrix.shape[0],):
            raise ShapeError(
                f"ids {self.ids.shape} do not label matrix {self.matrix.shape}")
        if len(set(self.ids.tolist())) != self.ids.size:
            raise InvalidValueError("index submap ids must be unique")

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass(frozen=True)
class RetrievalResult:
    ids: np.ndarray
    scores: np.ndarray


def build_index(model: CoarseModel, scene, submaps: list) -> RetrievalIndex:
    if len(submaps) == 0:
        raise InvalidValueError("cannot index zero submaps")
    matrix = model.submap.encode_batch(scene, submaps).data
    ids = np.array([sm.id for sm in submaps], dtype=np.int64)
    return RetrievalIndex(ids=ids, matrix=matrix)


def retrieve_topk(descriptor: np.ndarray, index: RetrievalIndex, k: int) -> RetrievalResult:
    """Top-k submaps by dot product; score ties go to the lower submap id."""
    if len(index) == 0:
        raise InvalidValueError("cannot retrieve from an empty index")
    if not 1 <= k <= len(index):
        raise InvalidValueError(f"k={k} outside 1..{len(index)}")
    desc = np.asarray(descriptor, dtype=np.float64)
    if desc.shape != (index.matrix.shape[1],):
        raise ShapeError(
            f"descriptor {desc.shape} does not match index dim {index.matrix.shape[1]}")
    scores = index.matrix @ desc
    order = np.lexsort((index.ids, -scores))[:k]
    return RetrievalResult(ids=index.ids[order], scores=scores[order])


def retrieval_recall(model: CoarseModel, queries: list, index: RetrievalIndex,
                     ks: tuple = (1, 3, 5)) -> dict[int, float]:
    """Fraction of queries whose gt submap appears in the top-k retrieval."""
    if len(queries) == 0:
        raise InvalidValueError("recall over zero queries is undefined")
    kmax = max(ks)
    hits = {k: 0 for k in ks}
    for q in queries:
        desc = model.text.encode(q.hints).data
        result = retrieve_topk(desc, index, kmax)
        where = np.flatnonzero(result.ids == q.gt_submap_id)
        rank = int(where[0]) if where.size else kmax
        for k in ks:
            hits[k] += rank < k
    return {k: hits[k] / len(queries) for k in ks}
