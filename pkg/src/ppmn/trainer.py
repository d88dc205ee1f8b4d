"""Cross-entropy pair training with momentum SGD, polynomial decay and hard negative mining."""
import csv
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import data as data_mod
from .checkpoint import save_checkpoint
from .errors import ConfigError, DatasetError, NumericalError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 100
    max_iters: int = 500
    base_lr: float = 0.01
    lr_power: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 0.0002
    negative_ratio: float = 3.0
    augment: bool = True
    hnm_enabled: bool = False
    hnm_retain_fraction: float = 0.25
    hnm_iters: int = 200
    hnm_base_lr: float = 0.001
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 0
    threads: int = 1

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be > 0, got {self.base_lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.hnm_retain_fraction <= 1:
            raise ConfigError(f"hnm retain_fraction must be in (0, 1], got {self.hnm_retain_fraction}")
        if self.batch_size < 1 or self.max_iters < 1:
            raise ConfigError("batch_size and max_iters must be >= 1")


# -- objective -----------------------------------------------------------------------


def _as_logits(scores):
    logits = getattr(scores, "logits", scores)
    return np.asarray(logits, dtype=np.float64).reshape(-1, 2)


def pair_loss_and_grad(scores, labels):
    """Mean binary cross-entropy over pairs and its gradient w.r.t. the (s0, s1) logits.

    Per pair: ``logsumexp(s0, s1) - s_label``, which equals ``-log p`` or
    ``-log(1 - p)`` without ever forming log(0).
    """
    s = _as_logits(scores)
    labels = np.asarray(labels).reshape(-1)
    n = len(labels)
    if n == 0 or len(s) == 0:
        raise ShapeError("pair_loss needs a non-empty batch")
    if len(s) != n:
        raise ShapeError(f"{len(s)} scores but {n} labels")
    m = s.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(s - m).sum(axis=1))
    target = np.where(labels == 1, s[:, 1], s[:, 0])
    loss = float(np.mean(lse - target))
    probs = np.exp(s - lse[:, None])
    onehot = np.stack([1 - labels, labels], axis=1)
    return loss, (probs - onehot) / n


def pair_loss(scores, labels):
    return pair_loss_and_grad(scores, labels)[0]


def poly_lr(iteration, max_iters, base_lr=0.01, power=0.5):
    if not 0 <= iteration <= max_iters:
        raise ConfigError(f"iteration {iteration} outside [0, {max_iters}]")
    return base_lr * (1.0 - iteration / max_iters) ** power


def sgd_step(store, lr, momentum=0.9, weight_decay=0.0002):
    """In place: g = grad + decay*value; m = momentum*m + lr*g; value -= m; grads zeroed."""
    for name, p in store.items():
        if not (p.value.shape == p.grad.shape == p.momentum.shape):
            raise ShapeError(f"parameter {name!r}: value/grad/momentum shapes drifted")
        g = p.grad + p.value.dtype.type(weight_decay) * p.value
        p.momentum *= p.value.dtype.type(momentum)
        p.momentum += p.value.dtype.type(lr) * g
        p.value -= p.momentum
        p.grad.fill(0)


# -- training loop ---------------------------------------------------------------------


@dataclass
class TrainResult:
    trace: list = field(default_factory=list)  # (iter, lr, loss) per iteration
    checkpoints: list = field(default_factory=list)

    @property
    def initial_loss(self):
        return self.trace[0][2]

    def final_loss(self, window=20):
        """Mean loss over the last ``window`` iterations (single batches are noisy)."""
        return float(np.mean([t[2] for t in self.trace[-window:]]))


class _Augmenter:
    """Original plus 5 seeded translated variants per image, drawn uniformly per use."""

    def __init__(self, seed, enabled, size):
        self.seed = seed
        self.enabled = enabled
        self.max_shift = data_mod.max_shift_for(size)
        self._offsets = {}

    def offsets(self, key):
        if key not in self._offsets:
            rng = np.random.default_rng([self.seed, 7, *key])
            self._offsets[key] = data_mod.sample_offsets(rng, data_mod.N_AUGMENTED, self.max_shift)
        return self._offsets[key]

    def __call__(self, image, key, rng):
        if not self.enabled:
            return image
        v = int(rng.integers(data_mod.N_AUGMENTED + 1))
        if v == 0 or key is None:
            return image
        dy, dx = self.offsets(key)[v - 1]
        return data_mod.translate(image, int(dy), int(dx))


def write_loss_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "lr", "loss"])
        for it, lr, loss in trace:
            w.writerow([it, repr(float(lr)), repr(float(loss))])


def train(model, dataset, config, epochs=None, max_iters=None, base_lr=None, out_dir=None, tag="stage1"):
    """Run ``max_iters`` SGD steps over shuffled pair epochs.

    ``epochs(e) -> list[PairSample]`` supplies the pairs of epoch ``e``; by default
    positives plus freshly sampled negatives from ``dataset``. Deterministic given
    ``config.seed``. Raises NumericalError if the loss becomes NaN/Inf.
    """
    max_iters = max_iters or config.max_iters
    base_lr = config.base_lr if base_lr is None else base_lr
    if epochs is None:
        if len(dataset) < 2:
            raise DatasetError("training needs at least 2 identities")
        epochs = lambda e: data_mod.generate_pairs(dataset, config.negative_ratio, [config.seed, e])
    rng = np.random.default_rng([config.seed, 1])
    augment = _Augmenter(config.seed, config.augment, model.config.input_size)
    store = model.store
    store.zero_grads()
    result = TrainResult()
    epoch, queue = 0, []

    for it in range(max_iters):
        batch = []
        while len(batch) < config.batch_size:
            if not queue:
                queue = list(epochs(epoch))
                epoch += 1
                if not queue:
                    raise DatasetError("empty training epoch")
            batch.append(queue.pop(0))
        img_a = np.stack([augment(s.image_a, s.key_a, rng) for s in batch])
        img_b = np.stack([augment(s.image_b, s.key_b, rng) for s in batch])
        labels = np.array([s.label for s in batch])
        lr = poly_lr(it, max_iters, base_lr, config.lr_power)

        scores = model.forward_pair(img_a, img_b)
        loss, grad = pair_loss_and_grad(scores, labels)
        if not np.isfinite(loss):
            raise NumericalError(f"{tag}: loss became {loss} at iteration {it}")
        model.backward_logits(grad)
        sgd_step(store, lr, config.momentum, config.weight_decay)
        result.trace.append((it, lr, loss))
        if config.log_every and it % config.log_every == 0:
            log.info("%s iter %d lr %.6f loss %.5f", tag, it, lr, loss)
        if out_dir and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
            path = os.path.join(out_dir, f"{tag}_iter{it + 1}.ckpt")
            save_checkpoint(path, store.values())
            result.checkpoints.append(path)
    if out_dir:
        path = os.path.join(out_dir, f"{tag}.ckpt")
        save_checkpoint(path, store.values())
        result.checkpoints.append(path)
        write_loss_csv(os.path.join(out_dir, f"{tag}_loss.csv"), result.trace)
    return result


# -- hard negative mining --------------------------------------------------------------

# Above this many negatives, a uniform pre-sample of this size is scored.
MAX_MINING_CANDIDATES = 10**6


@dataclass
class MiningResult:
    retained: list
    retained_scores: np.ndarray
    discarded_scores: np.ndarray


def _score_pairs(model, reps, keys, dataset_index, threads, chunk=256):
    """Score (key_a, key_b) pairs from cached reps; fixed chunks keep results thread-count independent."""
    pos = np.array([[dataset_index[ka], dataset_index[kb]] for ka, kb in keys], dtype=np.int64).reshape(-1, 2)
    starts = list(range(0, len(pos), chunk))

    def work(start):
        return model.score_rep_pairs(reps, reps, pos[start:start + chunk], batch_size=64)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(work, starts))
    else:
        parts = [work(s) for s in starts]
    return np.concatenate(parts) if parts else np.empty(0)


def mine_hard_negatives(model, dataset, retain_fraction=0.25, seed=0, threads=1,
                        max_candidates=MAX_MINING_CANDIDATES):
    """Score every cross-camera negative pair; keep the top ``retain_fraction`` by p.

    Highest p on a negative pair means most confidently wrong. Sorting is stable
    on (-p, candidate index).
    """
    if not 0 < retain_fraction <= 1:
        raise ConfigError(f"retain_fraction must be in (0, 1], got {retain_fraction}")
    keys = data_mod.negative_keys(dataset)
    if not keys:
        raise DatasetError("no negative pairs to mine")
    if len(keys) > max_candidates:
        pick = np.sort(np.random.default_rng(seed).choice(len(keys), max_candidates, replace=False))
        keys = [keys[i] for i in pick]
    flat_keys = [(i, j) for i, ident in enumerate(dataset.identities) for j in range(len(ident.images))]
    index = {k: n for n, k in enumerate(flat_keys)}
    reps = model.represent_all([dataset.identities[i].images[j].image for i, j in flat_keys])
    scores = _score_pairs(model, reps, keys, index, threads)
    order = np.lexsort((np.arange(len(scores)), -scores))
    n_keep = max(1, int(np.ceil(retain_fraction * len(keys))))
    keep, drop = order[:n_keep], order[n_keep:]
    retained = [data_mod.make_pair(dataset, *keys[i]) for i in keep]
    return MiningResult(retained, scores[keep], scores[drop])


def finetune_hard_negatives(model, dataset, config, out_dir=None):
    """Mine with the current weights, then train on positives + retained negatives.

    Momentum is reset; the schedule restarts at ``hnm_base_lr`` over ``hnm_iters``.
    Returns (mining result, stage-2 result).
    """
    mined = mine_hard_negatives(model, dataset, config.hnm_retain_fraction, config.seed, config.threads)
    pairs = data_mod.positive_pairs(dataset) + mined.retained
    for _, p in model.store.items():
        p.momentum.fill(0)
    stage2 = train(model, dataset, config, epochs=data_mod.fixed_pairs_epochs(pairs, config.seed + 1),
                   max_iters=config.hnm_iters, base_lr=config.hnm_base_lr, out_dir=out_dir, tag="stage2")
    return mined, stage2


def train_with_hnm(model, dataset, config, out_dir=None):
    """Stage 1 on sampled negatives, then finetune on positives + mined hard negatives.

    Returns (stage-1 result, mining result, stage-2 result).
    """
    stage1 = train(model, dataset, config, out_dir=out_dir, tag="stage1")
    mined, stage2 = finetune_hard_negatives(model, dataset, config, out_dir)
    return stage1, mined, stage2
