"""Enrollment, verification and adaptive template management.

A user is represented by one or more templates, each the re-normalized mean
of window embeddings captured under one appearance (a particular shoe, a
surface, a drifted condition picked up automatically). Verification accepts
a probe iff its cosine distance to the nearest template is at most the
threshold; more templates can therefore only widen what a user matches,
never narrow it.

The adaptive state machine watches a stream of verified windows: when the
wearer's distance stays above the trigger threshold for M consecutive
in-ear windows, the most self-consistent buffered window becomes a new
template for that user.
"""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .encoder import GaitModel, assert_unit_norm, cosine_distance
from .signal import AccelSeries

log = logging.getLogger(__name__)

STORE_VERSION = 1
MIN_ENROLL_SEC = 10.0


class UnknownUserError(KeyError):
    """Raised when an operation names a user_id absent from the store."""


def _utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class Template:
    """One appearance of one user.

    ``embedding`` is the unit-norm float32 vector used for matching.
    ``raw`` is the running un-normalized mean that refinement updates; it is
    not persisted, so after a store round-trip refinement continues from the
    normalized embedding instead (recorded behavior of the store format).
    """

    appearance_id: str
    embedding: np.ndarray
    sample_count: int
    created_at: str
    raw: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        emb = np.asarray(self.embedding, dtype=np.float64)
        norm = np.linalg.norm(emb)
        if norm == 0.0:
            raise ValueError("template embedding must be nonzero")
        emb = (emb / norm).astype(np.float32)
        assert_unit_norm(emb, what=f"template {self.appearance_id!r}")
        self.embedding = emb
        if self.raw is None:
            self.raw = emb.astype(np.float64)
        else:
            self.raw = np.asarray(self.raw, dtype=np.float64)
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")


@dataclass
class IdentityRecord:
    user_id: str
    templates: list[Template]

    def __post_init__(self):
        if not self.templates:
            raise ValueError(f"user {self.user_id!r} needs at least one template")
        ids = [t.appearance_id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate appearance_id for user {self.user_id!r}")

    def template(self, appearance_id: str) -> Template:
        for t in self.templates:
            if t.appearance_id == appearance_id:
                return t
        raise KeyError(f"user {self.user_id!r} has no appearance {appearance_id!r}")


class IdentityStore:
    """All enrolled users; persisted as a JSON document."""

    def __init__(self):
        self.version = STORE_VERSION
        self.records: dict[str, IdentityRecord] = {}

    def record(self, user_id: str) -> IdentityRecord:
        if user_id not in self.records:
            raise UnknownUserError(f"user {user_id!r} is not enrolled")
        return self.records[user_id]

    def upsert_template(self, user_id: str, template: Template) -> None:
        """Add or replace the template with this appearance_id."""
        if user_id in self.records:
            rec = self.records[user_id]
            rec.templates = [
                t for t in rec.templates if t.appearance_id != template.appearance_id
            ]
            rec.templates.append(template)
        else:
            self.records[user_id] = IdentityRecord(user_id, [template])

    def save(self, path: Path) -> None:
        doc = {
            "version": self.version,
            "users": [
                {
                    "user_id": rec.user_id,
                    "templates": [
                        {
                            "appearance_id": t.appearance_id,
                            "embedding": [float(v) for v in t.embedding],
                            "sample_count": t.sample_count,
                            "created_at": t.created_at,
                        }
                        for t in rec.templates
                    ],
                }
                for rec in self.records.values()
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", newline="\n")

    @classmethod
    def load(cls, path: Path) -> "IdentityStore":
        doc = json.loads(Path(path).read_text())
        if not isinstance(doc, dict) or "users" not in doc:
            raise ValueError(f"{path}: not an identity store document")
        if doc.get("version") != STORE_VERSION:
            raise ValueError(
                f"{path}: store version {doc.get('version')} unsupported "
                f"(expected {STORE_VERSION})"
            )
        store = cls()
        for user in doc["users"]:
            templates = [
                Template(
                    appearance_id=t["appearance_id"],
                    embedding=np.asarray(t["embedding"], dtype=np.float64),
                    sample_count=int(t["sample_count"]),
                    created_at=t["created_at"],
                )
                for t in user["templates"]
            ]
            store.records[user["user_id"]] = IdentityRecord(user["user_id"], templates)
        return store


class VerifyResult(NamedTuple):
    accept: bool
    distance: float
    matched_appearance: str


def enroll(
    model: GaitModel,
    session: AccelSeries,
    user_id: str,
    appearance_id: str,
    window_sec: float,
    store: IdentityStore,
    overlap_frac: float = 0.5,
    created_at: str | None = None,
) -> Template:
    """Capture a reference template from one walking session.

    Windows the session at the given overlap, embeds every window, stores
    the re-normalized mean embedding under (user_id, appearance_id). An
    existing template with that appearance_id is replaced.
    """
    required = max(window_sec, MIN_ENROLL_SEC)
    if session.duration < required:
        raise ValueError(
            f"enrollment requires at least {required:g} s of walking, "
            f"got {session.duration:g} s"
        )
    emb, _ = model.embed_series(session, window_sec, overlap_frac)
    template = Template(
        appearance_id=appearance_id,
        embedding=emb.mean(axis=0),
        sample_count=emb.shape[0],
        created_at=created_at if created_at is not None else _utc_now_iso(),
    )
    store.upsert_template(user_id, template)
    log.info(
        "enrolled %s/%s from %d windows", user_id, appearance_id, emb.shape[0]
    )
    return template


def verify(
    store: IdentityStore, user_id: str, probe: np.ndarray, threshold: float
) -> VerifyResult:
    """Match a probe embedding against a user's nearest template."""
    rec = store.record(user_id)
    distances = [cosine_distance(probe, t.embedding) for t in rec.templates]
    best = int(np.argmin(distances))
    dist = distances[best]
    return VerifyResult(
        accept=dist <= threshold,
        distance=dist,
        matched_appearance=rec.templates[best].appearance_id,
    )


def refine_template(
    store: IdentityStore,
    user_id: str,
    appearance_id: str,
    new_embedding: np.ndarray,
    verify_threshold: float = 0.24,
) -> Template:
    """Fold an accepted probe into a template's running mean.

    The probe must itself verify against this template within
    verify_threshold; anything farther is rejected to keep a stray accept
    from dragging the template (template poisoning).
    """
    rec = store.record(user_id)
    template = rec.template(appearance_id)
    dist = cosine_distance(new_embedding, template.embedding)
    if dist > verify_threshold:
        raise ValueError(
            f"refinement rejected: probe at distance {dist:.4f} exceeds "
            f"verify threshold {verify_threshold}"
        )
    probe = np.asarray(new_embedding, dtype=np.float64)
    probe = probe / np.linalg.norm(probe)
    n = template.sample_count
    template.raw = (template.raw * n + probe) / (n + 1)
    norm = np.linalg.norm(template.raw)
    if norm == 0.0:
        raise ValueError("refinement produced a zero template")
    template.embedding = (template.raw / norm).astype(np.float32)
    template.sample_count = n + 1
    return template


@dataclass(frozen=True)
class AdaptiveConfig:
    trigger_threshold: float = 0.3
    verify_threshold: float = 0.24
    consecutive_windows: int = 3
    stability_span: int = 5

    def __post_init__(self):
        if not 0 < self.verify_threshold <= self.trigger_threshold < 2:
            raise ValueError(
                "need 0 < verify_threshold <= trigger_threshold < 2, got "
                f"verify={self.verify_threshold} trigger={self.trigger_threshold}"
            )
        if self.consecutive_windows < 1:
            raise ValueError("consecutive_windows must be >= 1")
        if self.stability_span < 1:
            raise ValueError("stability_span must be >= 1")


class AdaptiveState:
    """Per-session stream state for adaptive enrollment."""

    def __init__(self, cfg: AdaptiveConfig):
        self.consecutive_above = 0
        self.buffer: deque[tuple[np.ndarray, float]] = deque(maxlen=cfg.stability_span)
        self.added: list[str] = []


class AdaptiveEvent(NamedTuple):
    event: str  # "none" | "counted" | "enrolled"
    distance: float


def _most_stable(buffer: deque) -> np.ndarray:
    """The buffered embedding minimizing mean cosine distance to the others."""
    embs = [e for e, _ in buffer]
    if len(embs) == 1:
        return embs[0]
    best_idx, best_mean = 0, np.inf
    for i, e in enumerate(embs):
        mean = np.mean([cosine_distance(e, o) for j, o in enumerate(embs) if j != i])
        if mean < best_mean:
            best_idx, best_mean = i, mean
    return embs[best_idx]


def adaptive_step(
    state: AdaptiveState,
    store: IdentityStore,
    user_id: str,
    window_embedding: np.ndarray,
    in_ear: bool,
    cfg: AdaptiveConfig,
    now: str | None = None,
) -> AdaptiveEvent:
    """Advance the adaptive state machine by one window.

    Windows must arrive in temporal order. Out-of-ear windows never count
    toward enrollment (the wearer's identity is only trusted while the
    device stays in the ear), but the distance is still reported.
    """
    result = verify(store, user_id, window_embedding, cfg.verify_threshold)
    if not in_ear:
        state.consecutive_above = 0
        return AdaptiveEvent("none", result.distance)
    if result.distance > cfg.trigger_threshold:
        state.consecutive_above += 1
        state.buffer.append((np.asarray(window_embedding, dtype=np.float64), result.distance))
        if state.consecutive_above >= cfg.consecutive_windows:
            stable = _most_stable(state.buffer)
            stamp = now if now is not None else _utc_now_iso()
            appearance_id = f"adaptive-{stamp}-{len(state.added)}"
            template = Template(
                appearance_id=appearance_id,
                embedding=stable,
                sample_count=1,
                created_at=stamp,
            )
            store.upsert_template(user_id, template)
            state.added.append(appearance_id)
            state.consecutive_above = 0
            log.info("adaptive enrollment for %s: %s", user_id, appearance_id)
            return AdaptiveEvent("enrolled", result.distance)
        return AdaptiveEvent("counted", result.distance)
    state.consecutive_above = 0
    state.buffer.clear()
    return AdaptiveEvent("none", result.distance)
