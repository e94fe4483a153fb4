"""Deterministic synthetic gait corpus generator.

Real head-worn gait recordings are not redistributable, so tests and demos
run on a parametric surrogate: each user is a harmonic-sum walking signal
with a per-user step frequency, per-axis harmonic amplitude pattern, phase
offsets, gravity baseline and noise floor. Condition modifiers (shoes,
surfaces) perturb those parameters the way a change of footwear or floor
plausibly would: shoes reshape the harmonic amplitude ratios (up to 25%),
surfaces mostly rescale the noise floor and the high harmonics (up to 10%).

Everything is a pure function of its seeds, generated through the portable
PRNG in :mod:`gaitgate.rng`, so regenerating a corpus yields byte-identical
files on any platform.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .rng import Xoshiro256StarStar, combine_seeds, fnv1a64
from .signal import AccelSeries

log = logging.getLogger(__name__)

N_HARMONICS = 5
RAMP_SEC = 1.0
F0_MIN, F0_MAX = 1.5, 2.3
F0_HARD_MIN, F0_HARD_MAX = 1.0, 3.0


@dataclass(frozen=True)
class GaitProfile:
    """Per-user walking signal parameters.

    ``amps`` and ``phases`` are (3, 5) arrays: row = axis (x, y, z),
    column = harmonic index k-1 for harmonics k = 1..5 of ``f0``.
    """

    user_seed: int
    f0: float
    amps: np.ndarray
    phases: np.ndarray
    noise_sigma: float
    gravity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amps", np.asarray(self.amps, dtype=np.float64))
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=np.float64))
        object.__setattr__(self, "gravity", np.asarray(self.gravity, dtype=np.float64))
        if not F0_MIN <= self.f0 <= F0_MAX:
            raise ValueError(f"f0 {self.f0} outside [{F0_MIN}, {F0_MAX}]")
        if self.amps.shape != (3, N_HARMONICS) or self.phases.shape != (3, N_HARMONICS):
            raise ValueError("amps and phases must have shape (3, 5)")
        if (self.amps < 0).any():
            raise ValueError("harmonic amplitudes must be nonnegative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.gravity.shape != (3,):
            raise ValueError("gravity must be a 3-vector")


@dataclass(frozen=True)
class ConditionModifier:
    """Multiplicative/additive tweak applied to a profile for one condition.

    ``amp_scale`` has one multiplier per harmonic, applied on every axis.
    ``shoe_id`` and ``surface`` feed the dataset manifest; "none" means the
    modifier does not represent that kind of condition.
    """

    label: str
    amp_scale: np.ndarray = field(default_factory=lambda: np.ones(N_HARMONICS))
    f0_offset: float = 0.0
    noise_scale: float = 1.0
    shoe_id: str = "none"
    surface: str = "none"

    def __post_init__(self):
        object.__setattr__(
            self, "amp_scale", np.asarray(self.amp_scale, dtype=np.float64)
        )
        if self.amp_scale.shape != (N_HARMONICS,):
            raise ValueError(f"amp_scale must have shape ({N_HARMONICS},)")
        if (self.amp_scale < 0).any():
            raise ValueError("amp_scale entries must be nonnegative")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be nonnegative")


@dataclass(frozen=True)
class JourneySpec:
    """An ordered walk through several conditions, with per-segment durations."""

    segments: tuple[tuple[ConditionModifier, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if len(self.segments) == 0:
            raise ValueError("journey needs at least one segment")
        if any(d <= 0 for _, d in self.segments):
            raise ValueError("segment durations must be positive")

    @property
    def total_duration(self) -> float:
        return sum(d for _, d in self.segments)


class SegmentAnnotation(NamedTuple):
    """Start time and condition label of one journey segment."""

    t_start: float
    label: str


def neutral_modifier() -> ConditionModifier:
    return ConditionModifier(label="neutral")


def shoe_modifier(shoe_id: str, strength: float = 0.25) -> ConditionModifier:
    """A fixed, named shoe: per-harmonic amplitude multipliers in 1 +- strength.

    The multipliers are derived from the shoe_id alone, so "shoe A" means the
    same perturbation for every user and every session.
    """
    rng = Xoshiro256StarStar(fnv1a64(f"shoe:{shoe_id}".encode()))
    scale = 1.0 + strength * (2.0 * rng.uniforms(N_HARMONICS) - 1.0)
    return ConditionModifier(
        label=f"shoe:{shoe_id}", amp_scale=scale, shoe_id=shoe_id
    )


def surface_modifier(surface: str, strength: float = 0.10) -> ConditionModifier:
    """A fixed, named surface: rescales the noise floor and harmonics 4..5."""
    rng = Xoshiro256StarStar(fnv1a64(f"surface:{surface}".encode()))
    scale = np.ones(N_HARMONICS)
    scale[3:] = 1.0 + strength * (2.0 * rng.uniforms(2) - 1.0)
    noise = 1.0 + strength * (2.0 * rng.uniform() - 1.0)
    return ConditionModifier(
        label=f"surface:{surface}", amp_scale=scale, noise_scale=noise, surface=surface
    )


def mild_modifier(tag: str, amp_strength: float = 0.08, f0_shift: float = 0.04) -> ConditionModifier:
    """A small session-to-session variation that should not break identity."""
    rng = Xoshiro256StarStar(fnv1a64(f"mild:{tag}".encode()))
    scale = 1.0 + amp_strength * (2.0 * rng.uniforms(N_HARMONICS) - 1.0)
    offset = f0_shift * (2.0 * rng.uniform() - 1.0)
    noise = 1.0 + 0.05 * (2.0 * rng.uniform() - 1.0)
    return ConditionModifier(
        label=f"mild:{tag}", amp_scale=scale, f0_offset=offset, noise_scale=noise
    )


def compose_modifiers(a: ConditionModifier, b: ConditionModifier) -> ConditionModifier:
    """Stack two modifiers: scales multiply, frequency offsets add."""
    return ConditionModifier(
        label=f"{a.label}+{b.label}",
        amp_scale=a.amp_scale * b.amp_scale,
        f0_offset=a.f0_offset + b.f0_offset,
        noise_scale=a.noise_scale * b.noise_scale,
        shoe_id=a.shoe_id if a.shoe_id != "none" else b.shoe_id,
        surface=a.surface if a.surface != "none" else b.surface,
    )


_SHOES = ("A", "B")
_SURFACES = ("carpet", "tile", "grass", "asphalt")


def standard_conditions(n: int) -> list[ConditionModifier]:
    """The first n cells of the shoe x surface grid (2 shoes, 4 surfaces)."""
    if not 1 <= n <= len(_SHOES) * len(_SURFACES):
        raise ValueError(f"condition count must be in 1..{len(_SHOES) * len(_SURFACES)}")
    return [
        compose_modifiers(
            shoe_modifier(_SHOES[i % len(_SHOES)]),
            surface_modifier(_SURFACES[i // len(_SHOES)]),
        )
        for i in range(n)
    ]


def generate_profile(user_seed: int) -> GaitProfile:
    """Draw one user's gait parameters from fixed distributions.

    Draw order (one uniform each unless noted): f0 in [1.5, 2.3]; gravity
    x, y in [-0.3, 0.3] and z in [0.95, 1.05] g; 15 amplitudes, axis-major,
    harmonic k getting (0.02 + 0.18 u)/k g; 15 phases in [0, 2 pi); noise
    sigma in [0.01, 0.05] g. The order is part of the corpus format: any
    reimplementation must draw in the same sequence to reproduce a corpus.
    """
    rng = Xoshiro256StarStar(user_seed)
    f0 = F0_MIN + (F0_MAX - F0_MIN) * rng.uniform()
    gravity = np.array(
        [
            0.6 * rng.uniform() - 0.3,
            0.6 * rng.uniform() - 0.3,
            0.95 + 0.10 * rng.uniform(),
        ]
    )
    k = np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    amps = (0.02 + 0.18 * rng.uniforms(3 * N_HARMONICS).reshape(3, N_HARMONICS)) / k
    phases = 2.0 * np.pi * rng.uniforms(3 * N_HARMONICS).reshape(3, N_HARMONICS)
    sigma = 0.01 + 0.04 * rng.uniform()
    return GaitProfile(
        user_seed=user_seed,
        f0=f0,
        amps=amps,
        phases=phases,
        noise_sigma=sigma,
        gravity=gravity,
    )


def _effective_params(
    profile: GaitProfile, modifier: ConditionModifier
) -> tuple[float, np.ndarray, float]:
    f0 = profile.f0 + modifier.f0_offset
    if not F0_HARD_MIN <= f0 <= F0_HARD_MAX:
        raise ValueError(
            f"modified step frequency {f0:.3f} Hz outside [{F0_HARD_MIN}, {F0_HARD_MAX}]"
        )
    amps = profile.amps * modifier.amp_scale[None, :]
    sigma = profile.noise_sigma * modifier.noise_scale
    return f0, amps, sigma


def synth_session(
    profile: GaitProfile,
    modifier: ConditionModifier,
    duration_sec: float,
    fs: float = 100.0,
    session_seed: int = 0,
) -> AccelSeries:
    """One walking session under a single fixed condition.

    Per axis: gravity + sum over harmonics k of a'[k] sin(2 pi k f0' t +
    phase[k]) + Gaussian noise of std sigma', where primes are the
    modifier-perturbed parameters. The noise stream is seeded by
    (user_seed, session_seed), so sessions are independent but reproducible.
    """
    if duration_sec < 1.0:
        raise ValueError(f"session duration must be >= 1 s, got {duration_sec}")
    f0, amps, sigma = _effective_params(profile, modifier)
    n = int(round(duration_sec * fs))
    t = np.arange(n) / fs
    k = np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    base = 2.0 * np.pi * f0 * t[:, None] * k[None, :]
    rng = Xoshiro256StarStar(combine_seeds(profile.user_seed, session_seed))
    noise = sigma * rng.gaussians(3 * n).reshape(3, n)
    xyz = np.empty((n, 3))
    for ax in range(3):
        osc = (amps[ax][None, :] * np.sin(base + profile.phases[ax][None, :])).sum(axis=1)
        xyz[:, ax] = profile.gravity[ax] + osc + noise[ax]
    return AccelSeries(t=t, xyz=xyz, fs=fs)


def synth_journey(
    profile: GaitProfile,
    journey: JourneySpec,
    fs: float = 100.0,
    seed: int = 0,
) -> tuple[AccelSeries, list[SegmentAnnotation]]:
    """A multi-condition walk with smooth parameter transitions.

    Each annotation marks the instant its segment's parameters begin to take
    effect; from there the effective parameters ramp linearly from the
    previous segment's over RAMP_SEC. Oscillator phase accumulates the
    instantaneous frequency, so nothing jumps at a boundary. A one-segment
    journey is exactly synth_session.
    """
    if len(journey.segments) == 1:
        mod, dur = journey.segments[0]
        return synth_session(profile, mod, dur, fs, seed), [
            SegmentAnnotation(0.0, mod.label)
        ]

    params = [_effective_params(profile, mod) for mod, _ in journey.segments]
    seg_lens = [int(round(dur * fs)) for _, dur in journey.segments]
    n = sum(seg_lens)
    offsets = np.concatenate([[0], np.cumsum(seg_lens)])

    f0_t = np.empty(n)
    amps_t = np.empty((n, 3, N_HARMONICS))
    sigma_t = np.empty(n)
    ramp_n = RAMP_SEC * fs
    for s, (f0, amps, sigma) in enumerate(params):
        lo, hi = offsets[s], offsets[s + 1]
        if s == 0:
            w = np.ones(hi - lo)
        else:
            w = np.minimum(np.arange(hi - lo) / ramp_n, 1.0)
        f0_prev, amps_prev, sigma_prev = params[s - 1] if s > 0 else (f0, amps, sigma)
        f0_t[lo:hi] = (1.0 - w) * f0_prev + w * f0
        amps_t[lo:hi] = (1.0 - w)[:, None, None] * amps_prev + w[:, None, None] * amps
        sigma_t[lo:hi] = (1.0 - w) * sigma_prev + w * sigma

    # Left-Riemann cumulative phase; reduces to 2 pi k f0 t when f0 is constant.
    cycles = np.concatenate([[0.0], np.cumsum(f0_t[:-1])]) / fs
    k = np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    base = 2.0 * np.pi * cycles[:, None] * k[None, :]
    rng = Xoshiro256StarStar(combine_seeds(profile.user_seed, seed))
    noise = rng.gaussians(3 * n).reshape(3, n)
    xyz = np.empty((n, 3))
    for ax in range(3):
        osc = (amps_t[:, ax, :] * np.sin(base + profile.phases[ax][None, :])).sum(axis=1)
        xyz[:, ax] = profile.gravity[ax] + osc + sigma_t * noise[ax]
    t = np.arange(n) / fs
    annotations = [
        SegmentAnnotation(float(offsets[s] / fs), mod.label)
        for s, (mod, _) in enumerate(journey.segments)
    ]
    return AccelSeries(t=t, xyz=xyz, fs=fs), annotations


def write_session_csv(series: AccelSeries, path: Path) -> None:
    """Write one session as `t,x,y,z` CSV with shortest round-trip decimals."""
    lines = ["t,x,y,z"]
    for i in range(len(series)):
        x, y, z = series.xyz[i]
        lines.append(f"{float(series.t[i])!r},{float(x)!r},{float(y)!r},{float(z)!r}")
    path.write_text("\n".join(lines) + "\n", newline="\n")


def generate_dataset(
    n_users: int,
    sessions_per_user: int,
    conditions: list[ConditionModifier],
    duration_sec: float,
    master_seed: int,
    out_dir: Path,
) -> list[dict]:
    """Write a corpus of per-session CSVs plus a manifest.json.

    User u gets seed master_seed + u; the session under condition c,
    repetition r gets session_seed c * sessions_per_user + r. Output is
    byte-identical across reruns with the same arguments.
    """
    if n_users < 1 or sessions_per_user < 1 or not conditions:
        raise ValueError("need at least one user, session and condition")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for u in range(n_users):
        user_id = f"user{u:03d}"
        profile = generate_profile(master_seed + u)
        for ci, mod in enumerate(conditions):
            for r in range(sessions_per_user):
                session_seed = ci * sessions_per_user + r
                series = synth_session(
                    profile, mod, duration_sec, session_seed=session_seed
                )
                name = f"{user_id}_c{ci}_r{r}.csv"
                write_session_csv(series, out_dir / name)
                manifest.append(
                    {
                        "user_id": user_id,
                        "session_id": f"{user_id}_c{ci}_r{r}",
                        "sensor_position": "head",
                        "shoe_id": mod.shoe_id,
                        "surface": mod.surface,
                        "fs": series.fs,
                        "path": name,
                    }
                )
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", newline="\n")
    log.info("wrote %d sessions to %s", len(manifest), out_dir)
    return manifest
