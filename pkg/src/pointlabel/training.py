"""Optimization loop: stratified block-level validation split, class
balancing by repetition, Adam with a linearly decaying learning rate,
per-epoch validation with best-checkpoint tracking and early stopping.

A batch is a fixed number of blocks run through the network as one
segmented forward/backward pass: normalization statistics cover every
point in the batch (pooling stays per block), the loss is the mean
cross-entropy over the batch's points, and blocks are assembled in a
fixed order, so training is deterministic for a given seed.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import network

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_initial: float = 0.001
    beta1: float = 0.9          # first-moment decay ("momentum")
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32        # blocks per optimizer step
    epoch_total: int = 30
    patience: int = 3           # non-improving epochs before stopping
    val_fraction: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must be in (0,1), got {self.val_fraction}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.lr_initial <= 0:
            raise ValueError(f"lr_initial must be > 0, got {self.lr_initial}")


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)   # first moments, by tensor name
    v: dict = field(default_factory=dict)   # second moments
    t: int = 0

    @classmethod
    def for_params(cls, params):
        state = cls()
        for name, arr in network.iter_tensors(params):
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def lr_at(epoch_current, config):
    """Linear decay: lr_initial * (1 - epoch_current / epoch_total)."""
    if not 0 <= epoch_current < config.epoch_total:
        raise ValueError(f"epoch {epoch_current} outside 0..{config.epoch_total - 1}")
    return config.lr_initial * (1.0 - epoch_current / config.epoch_total)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, in place on params.

    Rejects the whole step (no tensor touched) if any gradient is
    non-finite, naming the offending tensor.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for tensor {name}")
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, arr in network.iter_tensors(params):
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - beta1) * (g - m)
        v += (1.0 - beta2) * (g * g - v)
        arr -= (lr / c1) * m / (np.sqrt(v / c2) + eps)
    return params, state


# ---------------------------------------------------------------------------
# block-set preparation

def stratified_split(blocks, val_fraction, seed):
    """Split blocks into (train, val) preserving dominant-class strata.

    Per stratum, ceil(val_fraction * count) blocks go to validation;
    single-block strata stay in training with a warning. Input order is
    preserved inside each output list.
    """
    classes = [b.dominant_class() for b in blocks]
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x5B17)))
    val_idx = set()
    for cls in sorted(set(classes)):
        members = [i for i, c in enumerate(classes) if c == cls]
        if len(members) == 1:
            log.warning("stratum %d has a single block; keeping it in training", cls)
            continue
        k = math.ceil(val_fraction * len(members))
        picks = rng.permutation(len(members))[:k]
        val_idx.update(members[p] for p in picks)
    train = [b for i, b in enumerate(blocks) if i not in val_idx]
    val = [b for i, b in enumerate(blocks) if i in val_idx]
    if not train or not val:
        raise ValueError(f"degenerate split: {len(train)} train / {len(val)} val")
    return train, val


def balance_classes(blocks):
    """Repeat blocks of under-represented dominant classes (round-robin
    over that class's originals) until every class matches the largest."""
    if not blocks:
        return []
    by_class = {}
    for b in blocks:
        by_class.setdefault(b.dominant_class(), []).append(b)
    target = max(len(v) for v in by_class.values())
    out = list(blocks)
    for cls in sorted(by_class):
        members = by_class[cls]
        for i in range(target - len(members)):
            out.append(members[i % len(members)])
    return out


# ---------------------------------------------------------------------------
# the loop

@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class FitResult:
    params: "network.NetworkParams"   # best-validation-loss weights
    history: list
    best_epoch: int
    diverged: bool = False

    def history_csv(self):
        lines = ["epoch,lr,train_loss,train_acc,val_loss,val_acc"]
        for h in self.history:
            lines.append(f"{h.epoch},{h.lr:.10g},{h.train_loss:.8f},"
                         f"{h.train_acc:.6f},{h.val_loss:.8f},{h.val_acc:.6f}")
        return "\n".join(lines) + "\n"


def _block_xy(block, feature_columns):
    x = block.features
    if feature_columns is not None:
        x = x[:, feature_columns]
    return x, block.labels


def evaluate_blocks(blocks, params, feature_columns=None):
    """Point-weighted mean loss and accuracy over labeled blocks (eval
    mode)."""
    total_nll = 0.0
    correct = 0
    count = 0
    for block in blocks:
        x, y = _block_xy(block, feature_columns)
        q = network.forward(x, params, "eval").q
        total_nll += network.cross_entropy(q, y) * len(q)
        correct += int((q.argmax(axis=1) == y).sum())
        count += len(q)
    return total_nll / count, correct / count


def fit(train_blocks, val_blocks, config, params=None, encoder_specs=None,
        head_specs=None, feature_columns=None, n_classes=9):
    """Train until epoch_total or until validation loss stalls.

    Every epoch shuffles the training blocks into batches of batch_size,
    averages block gradients within a batch, applies one Adam step per
    batch at that epoch's learning rate, then scores the validation set.
    Weights are snapshotted whenever the validation loss improves; after
    `patience` non-improving epochs training stops and the best snapshot
    is returned. A non-finite training loss aborts with the last good
    snapshot flagged as diverged.
    """
    if not train_blocks or not val_blocks:
        raise ValueError("need non-empty train and validation block sets")
    ss = np.random.SeedSequence(config.seed)
    init_rng, shuffle_rng = (np.random.default_rng(c) for c in ss.spawn(2))
    if params is None:
        if encoder_specs is None or head_specs is None:
            in_width = (len(feature_columns) if feature_columns is not None
                        else train_blocks[0].features.shape[1])
            encoder_specs, head_specs = network.default_architecture(
                in_width, n_classes)
        params = network.init_params(encoder_specs, head_specs, init_rng)
    state = AdamState.for_params(params)

    best = network.copy_params(params)
    best_loss = np.inf
    best_epoch = -1
    bad_epochs = 0
    history = []

    for epoch in range(config.epoch_total):
        lr = lr_at(epoch, config)
        order = shuffle_rng.permutation(len(train_blocks))
        nll_sum = 0.0
        correct = 0
        seen = 0
        diverged = False
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            xs, ys = [], []
            for bi in batch:
                x, y = _block_xy(train_blocks[bi], feature_columns)
                xs.append(x)
                ys.append(y)
            bx = np.concatenate(xs, axis=0)
            by = np.concatenate(ys, axis=0)
            trace = network.forward(bx, params, "train",
                                    segments=[len(x) for x in xs])
            grads = network.backward(trace, by, params)
            nll_sum += network.cross_entropy(trace.q, by) * len(bx)
            correct += int((trace.q.argmax(axis=1) == by).sum())
            seen += len(bx)
            if not math.isfinite(nll_sum):
                diverged = True
                break
            adam_step(params, grads, state, lr, config.beta1, config.beta2,
                      config.epsilon)
        if diverged:
            log.error("training loss diverged at epoch %d; keeping last good "
                      "checkpoint", epoch)
            return FitResult(best, history, best_epoch, diverged=True)
        train_loss = nll_sum / seen
        train_acc = correct / seen
        val_loss, val_acc = evaluate_blocks(val_blocks, params, feature_columns)
        history.append(EpochStats(epoch, lr, train_loss, train_acc,
                                  val_loss, val_acc))
        if val_loss < best_loss:
            best_loss = val_loss
            best = network.copy_params(params)
            best_epoch = epoch
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                break
    return FitResult(best, history, best_epoch)
