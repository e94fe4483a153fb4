"""Per-user verification protocol, threshold sweep and error-rate metrics.

Protocol per enrolled user: the first ten 50%-overlap windows of their first
session form the enrollment template; genuine probes are seeded random draws
from their remaining windows; impostor probes are a fixed seeded set of
windows from every other user. Accepting means probe distance <= theta, so
FAR rises and FRR falls as theta grows; F1 and the equal error rate are read
off a threshold sweep, averaging per user before averaging across users.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import identity
from .encoder import GaitModel, ParameterSet, forward_batch, cosine_distance
from .dataio import WindowedDataset
from .identity import IdentityStore
from .rng import Xoshiro256StarStar, combine_seeds, fnv1a64
from .signal import AccelSeries

log = logging.getLogger(__name__)

N_FOLDS = 6


@dataclass(frozen=True)
class EvalConfig:
    enroll_windows: int = 10
    enroll_overlap: float = 0.5
    genuine_trials: int = 40
    impostor_per_user: int = 15
    threshold_step: float = 0.005
    window_sec: float = 10.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.enroll_windows < 1 or self.genuine_trials < 1 or self.impostor_per_user < 1:
            raise ValueError("enrollment window and trial counts must be >= 1")
        if not 0.0 <= self.enroll_overlap < 1.0:
            raise ValueError("enroll_overlap must be in [0, 1)")
        if self.threshold_step <= 0:
            raise ValueError("threshold_step must be positive")


@dataclass(frozen=True)
class UserTrials:
    """All verification trials targeting one enrolled user.

    Distances are against the user's template set at build time; embeddings
    are kept so trials can be re-scored after the template set changes.
    """

    user_id: str
    genuine_dist: np.ndarray
    impostor_dist: np.ndarray
    impostor_sources: tuple[str, ...]
    genuine_emb: np.ndarray | None = None
    impostor_emb: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "genuine_dist", np.asarray(self.genuine_dist, dtype=np.float64)
        )
        object.__setattr__(
            self, "impostor_dist", np.asarray(self.impostor_dist, dtype=np.float64)
        )
        object.__setattr__(self, "impostor_sources", tuple(self.impostor_sources))
        for arr, what in ((self.genuine_dist, "genuine"), (self.impostor_dist, "impostor")):
            if arr.ndim != 1 or not np.isfinite(arr).all() or (arr < 0).any():
                raise ValueError(f"{what} distances must be finite nonnegative 1-D")
        if len(self.impostor_sources) != self.impostor_dist.size:
            raise ValueError("impostor_sources length must match impostor_dist")


TrialSet = list[UserTrials]


def threshold_grid(trial_set: TrialSet, step: float = 0.005) -> np.ndarray:
    """Thresholds 0..1 inclusive; extended to 2 if any distance exceeds 1."""
    top = 1.0
    for t in trial_set:
        dists = np.concatenate([t.genuine_dist, t.impostor_dist])
        if dists.size and dists.max() > 1.0:
            top = 2.0
            break
    n = int(round(top / step))
    return np.linspace(0.0, top, n + 1)


def f1_at_threshold(trials: UserTrials, theta: float) -> float:
    """F1 of accept-iff-distance<=theta for one user; 0 when nothing accepted."""
    if trials.genuine_dist.size == 0 and trials.impostor_dist.size == 0:
        raise ValueError("empty trial set")
    tp = int((trials.genuine_dist <= theta).sum())
    fp = int((trials.impostor_dist <= theta).sum())
    fn = trials.genuine_dist.size - tp
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass(frozen=True)
class SweepResult:
    best_theta: float
    mean_f1: float
    per_user_f1: dict[str, float]


def sweep_thresholds(trial_set: TrialSet, grid: np.ndarray) -> SweepResult:
    """Mean-over-users F1 at each threshold; ties go to the smallest theta."""
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ValueError("empty threshold grid")
    f1s = np.empty((len(trial_set), grid.size))
    for ui, trials in enumerate(trial_set):
        tp = (trials.genuine_dist[:, None] <= grid[None, :]).sum(axis=0)
        fp = (trials.impostor_dist[:, None] <= grid[None, :]).sum(axis=0)
        fn = trials.genuine_dist.size - tp
        denom = 2.0 * tp + fp + fn
        f1s[ui] = np.where(tp > 0, 2.0 * tp / np.maximum(denom, 1), 0.0)
    mean = f1s.mean(axis=0)
    best = int(np.argmax(mean))  # argmax returns the first, i.e. smallest theta
    return SweepResult(
        best_theta=float(grid[best]),
        mean_f1=float(mean[best]),
        per_user_f1={t.user_id: float(f1s[ui, best]) for ui, t in enumerate(trial_set)},
    )


@dataclass(frozen=True)
class ErrorRates:
    grid: np.ndarray
    far_curve: np.ndarray
    frr_curve: np.ndarray
    eer: float
    eer_theta: float
    crossed: bool


def far_frr_eer(trial_set: TrialSet, grid: np.ndarray) -> ErrorRates:
    """Per-user-averaged FAR/FRR curves and the interpolated equal error rate.

    FAR and FRR are computed per user then averaged, mirroring the per-user
    F1 protocol. The EER is read at the first sign change of FAR - FRR via
    linear interpolation; if the curves never cross on the grid the closest
    point is reported with crossed=False.
    """
    grid = np.asarray(grid, dtype=np.float64)
    for trials in trial_set:
        if trials.genuine_dist.size == 0 or trials.impostor_dist.size == 0:
            raise ValueError(
                f"user {trials.user_id!r} needs both genuine and impostor trials"
            )
    far = np.mean(
        [(t.impostor_dist[:, None] <= grid[None, :]).mean(axis=0) for t in trial_set],
        axis=0,
    )
    frr = np.mean(
        [(t.genuine_dist[:, None] > grid[None, :]).mean(axis=0) for t in trial_set],
        axis=0,
    )
    diff = far - frr
    above = np.flatnonzero(diff >= 0.0)
    if above.size == 0:
        idx = int(np.argmin(np.abs(diff)))
        log.warning("FAR and FRR never cross on the grid; reporting closest point")
        return ErrorRates(
            grid, far, frr, float((far[idx] + frr[idx]) / 2.0), float(grid[idx]), False
        )
    idx = int(above[0])
    if diff[idx] == 0.0:
        return ErrorRates(grid, far, frr, float(far[idx]), float(grid[idx]), True)
    if idx == 0:
        log.warning("FAR already exceeds FRR at the grid start")
        return ErrorRates(
            grid, far, frr, float((far[0] + frr[0]) / 2.0), float(grid[0]), False
        )
    alpha = -diff[idx - 1] / (diff[idx] - diff[idx - 1])
    theta = grid[idx - 1] + alpha * (grid[idx] - grid[idx - 1])
    eer = far[idx - 1] + alpha * (far[idx] - far[idx - 1])
    return ErrorRates(grid, far, frr, float(eer), float(theta), True)


def _enroll_span_sec(cfg: EvalConfig) -> float:
    stride = cfg.window_sec * (1.0 - cfg.enroll_overlap)
    return (cfg.enroll_windows - 1) * stride + cfg.window_sec


def _user_rng(seed: int, purpose: str, user_id: str) -> Xoshiro256StarStar:
    return Xoshiro256StarStar(
        combine_seeds(seed, fnv1a64(f"{purpose}:{user_id}".encode()))
    )


def build_trials(
    model: GaitModel,
    sessions: dict[str, list[AccelSeries]],
    cfg: EvalConfig,
    store: IdentityStore | None = None,
) -> TrialSet:
    """Enroll every user and assemble their genuine and impostor trials.

    Enrollment takes the first `enroll_windows` overlapping windows of each
    user's first session; probes come from windows that start after the
    enrollment span (any session). Each user contributes one fixed seeded
    draw of `impostor_per_user` windows, reused against every other user.
    """
    if store is None:
        store = IdentityStore()
    users = list(sessions)
    if len(users) < 2:
        raise ValueError("need at least 2 users for impostor trials")
    span = _enroll_span_sec(cfg)

    pools: dict[str, np.ndarray] = {}
    for user_id in users:
        user_sessions = sessions[user_id]
        if not user_sessions:
            raise ValueError(f"user {user_id!r} has no sessions")
        first = user_sessions[0]
        n_enroll = int(round(span * first.fs))
        if len(first) < n_enroll:
            raise ValueError(
                f"user {user_id!r}: enrollment needs {span:g} s in the first "
                f"session, got {first.duration:g} s"
            )
        sub = AccelSeries(first.t[:n_enroll], first.xyz[:n_enroll], first.fs)
        identity.enroll(
            model, sub, user_id, "primary", cfg.window_sec, store,
            overlap_frac=cfg.enroll_overlap,
        )
        chunks = []
        for si, series in enumerate(user_sessions):
            emb, intervals = model.embed_series(
                series, cfg.window_sec, cfg.enroll_overlap
            )
            keep = (
                intervals[:, 0] >= span - 1e-9 if si == 0
                else np.ones(len(intervals), dtype=bool)
            )
            if keep.any():
                chunks.append(emb[keep])
        pool = np.concatenate(chunks) if chunks else np.empty((0, 0))
        pools[user_id] = pool

    impostor_draws: dict[str, np.ndarray] = {}
    for user_id in users:
        pool = pools[user_id]
        if pool.shape[0] < cfg.impostor_per_user:
            raise ValueError(
                f"user {user_id!r} has {pool.shape[0]} probe windows, "
                f"needs {cfg.impostor_per_user} for impostor duty"
            )
        rng = _user_rng(cfg.rng_seed, "impostor", user_id)
        idx = rng.sample_indices(pool.shape[0], cfg.impostor_per_user)
        impostor_draws[user_id] = pool[idx]

    trial_set: TrialSet = []
    for user_id in users:
        pool = pools[user_id]
        if pool.shape[0] < cfg.genuine_trials:
            raise ValueError(
                f"user {user_id!r} has {pool.shape[0]} probe windows, "
                f"needs {cfg.genuine_trials} genuine trials"
            )
        rng = _user_rng(cfg.rng_seed, "genuine", user_id)
        idx = rng.sample_indices(pool.shape[0], cfg.genuine_trials)
        genuine_emb = pool[idx]
        imp_embs, imp_sources = [], []
        for other in users:
            if other == user_id:
                continue
            imp_embs.append(impostor_draws[other])
            imp_sources.extend([other] * cfg.impostor_per_user)
        impostor_emb = np.concatenate(imp_embs)
        trial_set.append(
            UserTrials(
                user_id=user_id,
                genuine_dist=_distances(store, user_id, genuine_emb),
                impostor_dist=_distances(store, user_id, impostor_emb),
                impostor_sources=tuple(imp_sources),
                genuine_emb=genuine_emb,
                impostor_emb=impostor_emb,
            )
        )
    return trial_set


def _distances(store: IdentityStore, user_id: str, embs: np.ndarray) -> np.ndarray:
    return np.array(
        [identity.verify(store, user_id, e, 1.0).distance for e in embs]
    )


def score_trials(store: IdentityStore, trial_set: TrialSet) -> TrialSet:
    """Re-score a trial set against a (possibly updated) template store."""
    out = []
    for trials in trial_set:
        if trials.genuine_emb is None or trials.impostor_emb is None:
            raise ValueError("trial set was built without embeddings")
        out.append(
            UserTrials(
                user_id=trials.user_id,
                genuine_dist=_distances(store, trials.user_id, trials.genuine_emb),
                impostor_dist=_distances(store, trials.user_id, trials.impostor_emb),
                impostor_sources=trials.impostor_sources,
                genuine_emb=trials.genuine_emb,
                impostor_emb=trials.impostor_emb,
            )
        )
    return out


def trials_from_windows(
    params: ParameterSet,
    dataset: WindowedDataset,
    users: Sequence[str],
    cfg: EvalConfig,
    clamp_counts: bool = False,
) -> TrialSet:
    """The same protocol computed from a pre-windowed dataset.

    Used during training to score validation users each epoch without
    re-deriving spectrograms. With clamp_counts the genuine/impostor counts
    shrink to what a small dataset can supply instead of erroring.
    """
    if len(users) < 2:
        raise ValueError(
            f"per-user trials need at least 2 users (impostors come from the "
            f"same split), got {len(users)}"
        )
    embeddings: dict[str, list[np.ndarray]] = {}
    templates: dict[str, np.ndarray] = {}
    pools: dict[str, np.ndarray] = {}
    for user_id in users:
        user_sessions = dataset.sessions_for(user_id)
        first = user_sessions[0]
        if first.n_windows < cfg.enroll_windows:
            raise ValueError(
                f"user {user_id!r}: first session has {first.n_windows} windows, "
                f"enrollment needs {cfg.enroll_windows}"
            )
        emb0 = forward_batch(params, first.specs)
        template = emb0[: cfg.enroll_windows].mean(axis=0)
        norm = np.linalg.norm(template)
        if norm == 0.0:
            raise ValueError(f"user {user_id!r}: degenerate enrollment template")
        templates[user_id] = template / norm
        span_end = first.intervals[cfg.enroll_windows - 1, 1]
        chunks = [emb0[first.intervals[:, 0] >= span_end - 1e-9]]
        for sess in user_sessions[1:]:
            chunks.append(forward_batch(params, sess.specs))
        pools[user_id] = np.concatenate(chunks)

    def pick(user_id: str, purpose: str, count: int) -> np.ndarray:
        pool = pools[user_id]
        if pool.shape[0] < count:
            if not clamp_counts:
                raise ValueError(
                    f"user {user_id!r} has {pool.shape[0]} probe windows, needs {count}"
                )
            count = pool.shape[0]
        if count == 0:
            raise ValueError(f"user {user_id!r} has no probe windows")
        rng = _user_rng(cfg.rng_seed, purpose, user_id)
        return pool[rng.sample_indices(pool.shape[0], count)]

    draws = {u: pick(u, "impostor", cfg.impostor_per_user) for u in users}
    trial_set: TrialSet = []
    for user_id in users:
        genuine = pick(user_id, "genuine", cfg.genuine_trials)
        template = templates[user_id]
        imp_embs, imp_sources = [], []
        for other in users:
            if other == user_id:
                continue
            imp_embs.append(draws[other])
            imp_sources.extend([other] * draws[other].shape[0])
        impostor = np.concatenate(imp_embs)
        trial_set.append(
            UserTrials(
                user_id=user_id,
                genuine_dist=np.array([cosine_distance(e, template) for e in genuine]),
                impostor_dist=np.array([cosine_distance(e, template) for e in impostor]),
                impostor_sources=tuple(imp_sources),
                genuine_emb=genuine,
                impostor_emb=impostor,
            )
        )
    return trial_set


@dataclass(frozen=True)
class FoldSpec:
    """One train/validation/test user split."""

    index: int
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    val_wrapped: bool = False

    def __post_init__(self):
        object.__setattr__(self, "train", tuple(self.train))
        object.__setattr__(self, "val", tuple(self.val))
        object.__setattr__(self, "test", tuple(self.test))
        groups = (set(self.train), set(self.val), set(self.test))
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise ValueError("train/val/test user sets must be disjoint")
        if not self.train or not self.val:
            raise ValueError("train and val sets must be nonempty")


def kfold_splits(
    user_ids: Sequence[str], seed: int, fold_size: int = 8
) -> list[FoldSpec]:
    """Six disjoint test folds with wrap-around validation assignment.

    Users are shuffled by the seed; the first 6*fold_size fill folds t0..t5
    and any remainder is excluded from every experiment. Experiment k tests
    on t_k and validates on t_{k-1}; k=0 wraps to t5 and is flagged.
    """
    user_ids = list(user_ids)
    needed = N_FOLDS * fold_size + 2
    if len(user_ids) < needed:
        raise ValueError(
            f"k-fold needs at least {needed} users for fold_size {fold_size}, "
            f"got {len(user_ids)}"
        )
    perm = Xoshiro256StarStar(seed).permutation(len(user_ids))
    shuffled = [user_ids[i] for i in perm]
    folds = [
        tuple(shuffled[k * fold_size : (k + 1) * fold_size]) for k in range(N_FOLDS)
    ]
    specs = []
    for k in range(N_FOLDS):
        val_k = (k - 1) % N_FOLDS
        train = tuple(
            u
            for fk, fold in enumerate(folds)
            if fk not in (k, val_k)
            for u in fold
        )
        specs.append(
            FoldSpec(
                index=k,
                train=train,
                val=folds[val_k],
                test=folds[k],
                val_wrapped=(k == 0),
            )
        )
    return specs


def single_split(user_ids: Sequence[str], seed: int, val_frac: float = 0.2) -> FoldSpec:
    """One shuffled train/val split for corpora too small for k-fold."""
    user_ids = list(user_ids)
    if len(user_ids) < 2:
        raise ValueError("need at least 2 users to split")
    perm = Xoshiro256StarStar(seed).permutation(len(user_ids))
    shuffled = [user_ids[i] for i in perm]
    n_val = max(1, int(round(val_frac * len(user_ids))))
    if n_val >= len(user_ids):
        n_val = len(user_ids) - 1
    return FoldSpec(index=0, train=tuple(shuffled[n_val:]), val=tuple(shuffled[:n_val]), test=())


EVAL_REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "mean_f1",
        "best_theta",
        "eer",
        "eer_theta",
        "per_user",
        "far_curve",
        "frr_curve",
        "config",
    ],
    "properties": {
        "mean_f1": {"type": "number", "minimum": 0, "maximum": 1},
        "best_theta": {"type": "number"},
        "eer": {"type": "number", "minimum": 0, "maximum": 1},
        "eer_theta": {"type": "number"},
        "eer_crossed": {"type": "boolean"},
        "thetas": {"type": "array", "items": {"type": "number"}},
        "far_curve": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "frr_curve": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "per_user": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["user_id", "f1", "genuine_trials", "impostor_trials"],
                "properties": {
                    "user_id": {"type": "string"},
                    "f1": {"type": "number", "minimum": 0, "maximum": 1},
                    "genuine_trials": {"type": "integer", "minimum": 0},
                    "impostor_trials": {"type": "integer", "minimum": 0},
                },
            },
        },
        "config": {"type": "object"},
    },
}


def build_report(trial_set: TrialSet, cfg: EvalConfig) -> dict:
    """Sweep, rate curves and bookkeeping in the JSON report layout."""
    grid = threshold_grid(trial_set, cfg.threshold_step)
    sweep = sweep_thresholds(trial_set, grid)
    rates = far_frr_eer(trial_set, grid)
    return {
        "mean_f1": sweep.mean_f1,
        "best_theta": sweep.best_theta,
        "eer": rates.eer,
        "eer_theta": rates.eer_theta,
        "eer_crossed": rates.crossed,
        "per_user": [
            {
                "user_id": t.user_id,
                "f1": sweep.per_user_f1[t.user_id],
                "genuine_trials": int(t.genuine_dist.size),
                "impostor_trials": int(t.impostor_dist.size),
            }
            for t in trial_set
        ],
        "thetas": [float(v) for v in grid],
        "far_curve": [float(v) for v in rates.far_curve],
        "frr_curve": [float(v) for v in rates.frr_curve],
        "config": {
            "enroll_windows": cfg.enroll_windows,
            "enroll_overlap": cfg.enroll_overlap,
            "genuine_trials": cfg.genuine_trials,
            "impostor_per_user": cfg.impostor_per_user,
            "threshold_step": cfg.threshold_step,
            "window_sec": cfg.window_sec,
            "rng_seed": cfg.rng_seed,
            "n_users": len(trial_set),
        },
    }


def evaluate_model(
    model: GaitModel,
    sessions: dict[str, list[AccelSeries]],
    cfg: EvalConfig,
    store: IdentityStore | None = None,
) -> tuple[dict, TrialSet]:
    trial_set = build_trials(model, sessions, cfg, store=store)
    return build_report(trial_set, cfg), trial_set


def export_embeddings(
    model: GaitModel,
    sessions: list[tuple[str, str, AccelSeries]],
    path: Path,
    window_sec: float = 10.0,
    overlap_frac: float = 0.5,
) -> None:
    """CSV of one embedding row per window, with lossless float formatting."""
    dim = model.enc_cfg.embedding_dim
    lines = ["user_id,session_id,window_index," + ",".join(f"e{i}" for i in range(dim))]
    for user_id, session_id, series in sessions:
        emb, _ = model.embed_series(series, window_sec, overlap_frac)
        for wi in range(emb.shape[0]):
            values = ",".join(repr(float(v)) for v in emb[wi])
            lines.append(f"{user_id},{session_id},{wi},{values}")
    Path(path).write_text("\n".join(lines) + "\n", newline="\n")
