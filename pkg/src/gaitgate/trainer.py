"""Contrastive training of the spectrogram encoder.

Batches hold 2N windows forming N positive pairs: two non-overlapping,
independently augmented windows from one session of one user, a different
user per pair. The NT-Xent loss pulls each pair together and pushes every
other window in the batch away, scaled by a temperature. Training is plain
Adam over the analytic gradient; everything is driven by one seeded PRNG so
a run is reproducible end to end.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from . import signal
from .dataio import SessionWindows, WindowedDataset
from .encoder import (
    EncoderConfig,
    ParameterSet,
    backward_batch,
    cosine_similarity,  # noqa: F401  (re-exported: similarity belongs to this API too)
    forward_batch_cached,
    init_params,
)
from .evaluation import EvalConfig, FoldSpec, sweep_thresholds, threshold_grid, trials_from_windows
from .rng import Xoshiro256StarStar
from .signal import AugmentConfig, Spectrogram

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Training produced a non-finite quantity."""


@dataclass(frozen=True)
class TrainConfig:
    temperature: float = 0.1
    pairs_per_batch: int = 16
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 50
    batches_per_epoch: int = 100
    dropout_p: float = 0.1
    window_sec: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.pairs_per_batch < 2:
            raise ValueError("a batch needs at least 2 pairs (one real negative)")
        if self.epochs < 1 or self.batches_per_epoch < 1:
            raise ValueError("epochs and batches_per_epoch must be >= 1")
        if not 0.0 <= self.dropout_p <= 1.0:
            raise ValueError("dropout_p must be in [0, 1]")


@dataclass(frozen=True)
class ContrastiveBatch:
    """2N augmented windows with their positive pairing.

    pairs[m] = (i, j) are indices into x; sources[i] = (user_id, session_id);
    intervals[i] = window (start, end) seconds within its session.
    """

    x: np.ndarray
    pairs: tuple[tuple[int, int], ...]
    sources: tuple[tuple[str, str], ...]
    intervals: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(map(tuple, self.pairs)))
        object.__setattr__(self, "sources", tuple(map(tuple, self.sources)))
        n2 = self.x.shape[0]
        flat = [i for pair in self.pairs for i in pair]
        if sorted(flat) != list(range(n2)):
            raise ValueError("pairs must partition the batch indices")
        users = []
        for i, j in self.pairs:
            if self.sources[i][1] != self.sources[j][1] or self.sources[i][0] != self.sources[j][0]:
                raise ValueError(f"pair ({i}, {j}) spans different sessions")
            users.append(self.sources[i][0])
            a, b = self.intervals[i], self.intervals[j]
            if not (a[1] <= b[0] or b[1] <= a[0]):
                raise ValueError(f"pair ({i}, {j}) windows overlap in time")
        if len(set(users)) != len(users):
            raise ValueError("no two pairs may come from the same user")

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def partner(self) -> np.ndarray:
        out = np.empty(self.x.shape[0], dtype=np.int64)
        for i, j in self.pairs:
            out[i], out[j] = j, i
        return out


def _pairable(sess: SessionWindows) -> bool:
    # Windows are in start order; a disjoint pair exists iff the last window
    # starts at or after the first one ends.
    if sess.n_windows < 2:
        return False
    return sess.intervals[-1, 0] >= sess.intervals[0, 1]


def eligible_users(dataset: WindowedDataset) -> list[str]:
    """Users owning at least one session with two non-overlapping windows."""
    return [
        u
        for u in dataset.users
        if any(_pairable(s) for s in dataset.sessions_for(u))
    ]


def sample_batch(
    dataset: WindowedDataset, cfg: TrainConfig, rng: Xoshiro256StarStar
) -> ContrastiveBatch:
    """Draw one contrastive batch: N users, one session and two windows each."""
    users = eligible_users(dataset)
    n = cfg.pairs_per_batch
    if len(users) < n:
        raise ValueError(
            f"batch needs {n} users with a pairable session, dataset has {len(users)}"
        )
    chosen = [users[i] for i in rng.sample_indices(len(users), n)]
    xs, pairs, sources, intervals = [], [], [], []
    for user_id in chosen:
        candidates = [s for s in dataset.sessions_for(user_id) if _pairable(s)]
        sess = candidates[rng.randint(len(candidates))]
        iv = sess.intervals
        # windows that have at least one disjoint partner
        firsts = [
            i
            for i in range(sess.n_windows)
            if ((iv[:, 0] >= iv[i, 1]) | (iv[:, 1] <= iv[i, 0])).any()
        ]
        i = firsts[rng.randint(len(firsts))]
        partners = np.flatnonzero((iv[:, 0] >= iv[i, 1]) | (iv[:, 1] <= iv[i, 0]))
        j = int(partners[rng.randint(len(partners))])
        for w in (i, j):
            aug = signal.pixel_dropout(
                Spectrogram(sess.specs[w]),
                AugmentConfig(dropout_p=cfg.dropout_p, rng_seed=rng.next_u64()),
            )
            xs.append(aug.data)
            sources.append((user_id, sess.session_id))
            intervals.append(iv[w])
        pairs.append((len(xs) - 2, len(xs) - 1))
    return ContrastiveBatch(
        x=np.stack(xs),
        pairs=tuple(pairs),
        sources=tuple(sources),
        intervals=np.array(intervals),
    )


def nt_xent_loss(z: np.ndarray, pairs, temperature: float) -> float:
    """Mean NT-Xent over all 2N ordered positive terms.

    Each term is -log of the softmax (over the other 2N-1 samples, positive
    included in the denominator) assigned to the sample's positive partner.
    """
    loss, _ = _nt_xent(z, pairs, temperature, want_grad=False)
    return loss


def nt_xent_grad(z: np.ndarray, pairs, temperature: float) -> tuple[float, np.ndarray]:
    """Loss and its gradient with respect to the unit embeddings."""
    return _nt_xent(z, pairs, temperature, want_grad=True)


def _nt_xent(z, pairs, temperature, want_grad):
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if len(pairs) < 2:
        raise ValueError("NT-Xent needs at least 2 pairs; a lone pair has no negatives")
    z = np.asarray(z, dtype=np.float64)
    n2 = z.shape[0]
    norms = np.linalg.norm(z, axis=1)
    if (norms == 0).any():
        raise ValueError("zero embedding in batch")
    zn = z / norms[:, None]
    partner = np.empty(n2, dtype=np.int64)
    for i, j in pairs:
        partner[i], partner[j] = j, i
    sim = zn @ zn.T
    logits = sim / temperature
    np.fill_diagonal(logits, -np.inf)
    m = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - m)
    denom = exp.sum(axis=1)
    lse = m[:, 0] + np.log(denom)
    pos = logits[np.arange(n2), partner]
    loss = float(np.mean(lse - pos))
    if not want_grad:
        return loss, None
    softmax = exp / denom[:, None]
    g = softmax
    g[np.arange(n2), partner] -= 1.0
    g /= temperature * n2
    dz = (g + g.T) @ zn
    return loss, dz


def loss_gradients(
    params: ParameterSet, batch: ContrastiveBatch, cfg: TrainConfig
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward, loss and full backward pass for one batch."""
    z, cache = forward_batch_cached(params, batch.x)
    loss, dz = nt_xent_grad(z, batch.pairs, cfg.temperature)
    if not np.isfinite(loss):
        raise NumericalError("non-finite loss")
    grads = backward_batch(params, cache, dz.astype(z.dtype))
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericalError(f"non-finite gradient in tensor {name!r}")
    return loss, grads


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: ParameterSet) -> "AdamState":
        return cls(
            m={k: np.zeros_like(t) for k, t in params.items()},
            v={k: np.zeros_like(t) for k, t in params.items()},
        )


def optimizer_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    state: AdamState,
    cfg: TrainConfig,
) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    t = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match {name} {p.shape}"
            )
        m = cfg.beta1 * state.m[name] + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * state.v[name] + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        new_params[name] = (
            p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
        ).astype(p.dtype)
        new_m[name], new_v[name] = m.astype(p.dtype), v.astype(p.dtype)
    return ParameterSet(new_params), AdamState(m=new_m, v=new_v, step=t)


@dataclass
class FitResult:
    params: ParameterSet
    log: list[dict]
    best_epoch: int
    best_val_f1: float


def fit(
    dataset: WindowedDataset,
    fold: FoldSpec,
    cfg: TrainConfig,
    enc_cfg: EncoderConfig,
    eval_cfg: EvalConfig | None = None,
) -> FitResult:
    """Train on the fold's train users, keep the epoch best on validation F1.

    Each epoch runs a fixed number of batches, then scores the validation
    users with the per-user F1 protocol (trial counts clamped to what the
    validation data can supply). The returned params are from the best
    validation epoch, not the last.
    """
    train_users = [u for u in fold.train if u in dataset.users]
    val_users = [u for u in fold.val if u in dataset.users]
    if not train_users or not val_users:
        raise ValueError("fold needs nonempty train and val user sets in the dataset")
    train_set = dataset.restrict(train_users)
    if eval_cfg is None:
        eval_cfg = EvalConfig(window_sec=cfg.window_sec, rng_seed=cfg.rng_seed)

    n_eligible = len(eligible_users(train_set))
    if n_eligible < 2:
        raise ValueError("need at least 2 train users with pairable sessions")
    batch_cfg = cfg
    if n_eligible < cfg.pairs_per_batch:
        log.warning(
            "clamping pairs_per_batch from %d to the %d eligible train users",
            cfg.pairs_per_batch,
            n_eligible,
        )
        batch_cfg = replace(cfg, pairs_per_batch=n_eligible)

    rng = Xoshiro256StarStar(cfg.rng_seed)
    params = init_params(enc_cfg)
    state = AdamState.zeros_like(params)
    best_params, best_f1, best_epoch = params, -1.0, -1
    fit_log: list[dict] = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        losses = np.empty(cfg.batches_per_epoch)
        for b in range(cfg.batches_per_epoch):
            batch = sample_batch(train_set, batch_cfg, rng)
            loss, grads = loss_gradients(params, batch, cfg)
            params, state = optimizer_step(params, grads, state, cfg)
            losses[b] = loss
        trials = trials_from_windows(
            params, dataset, val_users, eval_cfg, clamp_counts=True
        )
        sweep = sweep_thresholds(trials, threshold_grid(trials, eval_cfg.threshold_step))
        wall_ms = int(round((time.perf_counter() - t0) * 1000))
        entry = {
            "epoch": epoch,
            "mean_loss": float(losses.mean()),
            "val_f1": sweep.mean_f1,
            "wall_ms": wall_ms,
        }
        fit_log.append(entry)
        log.info(
            "epoch %d: loss %.4f val_f1 %.4f (%d ms)",
            epoch,
            entry["mean_loss"],
            entry["val_f1"],
            wall_ms,
        )
        if sweep.mean_f1 > best_f1:
            best_params, best_f1, best_epoch = params, sweep.mean_f1, epoch
    return FitResult(
        params=best_params, log=fit_log, best_epoch=best_epoch, best_val_f1=best_f1
    )
