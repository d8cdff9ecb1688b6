"""Stopped-car-ahead kinematics: one-dimensional point-mass braking analysis.

The ego vehicle starts ``x_sc = v_init² / (2 a_comf) + standstill`` metres
behind a stopped car and brakes comfortably.  A braking interruption of
duration ``t`` starts somewhere along that profile; during it the ego
accelerates at ``a_max`` (capped at ``v_max``), or coasts.  The
interruption is hazardous once the remaining gap is smaller than the
emergency stopping distance ``v² / (2 a_emerg)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

ACCELERATE = "accelerate"
COAST = "coast"


@dataclass(frozen=True)
class ScaParams:
    v_init: float = 11.11
    v_max: float = 11.11
    a_comf: float = 2.01
    a_emerg: float = 2.86
    a_max: float = 3.02
    frame_rate: float = 10.0
    n_trk: int = 9
    standstill: float = 4.0

    def problems(self) -> list:
        out = []
        if not 0 < self.a_comf < self.a_emerg:
            out.append("need 0 < a_comf < a_emerg")
        if self.a_max < 0:
            out.append("a_max must be >= 0")
        if self.frame_rate <= 0:
            out.append("frame_rate must be positive")
        if self.v_init < 0 or self.v_init > self.v_max:
            out.append("need 0 <= v_init <= v_max")
        if self.n_trk < 0:
            out.append("n_trk must be >= 0")
        if self.standstill < 0:
            out.append("standstill distance must be >= 0")
        return out

    def check(self) -> "ScaParams":
        bad = self.problems()
        if bad:
            raise ValueError("invalid SCA parameters: " + "; ".join(bad))
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ScaParams":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown SCA parameters: {sorted(unknown)}")
        return cls(**d).check()


@dataclass(frozen=True)
class InterruptionResult:
    t_crash: float
    # distance the ego has travelled from the drive start when braking stops
    start_distance: float
    # gap to the stopped car at that moment
    start_gap: float
    start_speed: float
    interruption_frames: int
    n_crash: int
    n_max_frames: int

    def as_dict(self) -> dict:
        return asdict(self)


def standstill_distance(p: ScaParams) -> float:
    return p.v_init ** 2 / (2.0 * p.a_comf) + p.standstill


def min_braking_distance(v: float, a_emerg: float) -> float:
    if v < 0:
        raise ValueError("speed must be >= 0")
    return v * v / (2.0 * a_emerg)


def max_drive_frames(p: ScaParams) -> int:
    """Frames in a full comfortable stop from ``v_init``, rounded down."""
    return math.floor(p.v_init / p.a_comf * p.frame_rate + 1e-9)


def _advance(v, t, a, v_max):
    """Distance and end speed after accelerating at ``a`` for ``t``, capped."""
    if a <= 0:
        return v * t, np.broadcast_to(v, np.shape(v * t)).astype(float)
    t1 = np.clip((v_max - v) / a, 0.0, t)
    d = v * t1 + 0.5 * a * t1 * t1 + np.minimum(v + a * t1, v_max) * (t - t1)
    return d, np.minimum(v + a * t, v_max)


def frames_for(t: float, frame_rate: float) -> int:
    return math.ceil(t * frame_rate - 1e-9)


def worst_case_interruption(p: ScaParams, ds: float = 0.01, dt: float = 0.01,
                            adversary: str = ACCELERATE,
                            t_limit: float = 120.0) -> Optional[InterruptionResult]:
    """Shortest hazardous braking interruption over all start points.

    Start gaps are gridded every ``ds`` metres from the standstill point
    up to ``x_sc`` and durations every ``dt`` seconds.  The first duration
    at which any start is hazardous is ``t_crash``.  Among the starts
    hazardous at that duration the one with the largest deficit wins,
    remaining ties going to the smallest gap.  Returns None when
    ``v_init == 0`` (no scenario to interrupt).
    """
    p.check()
    if adversary not in (ACCELERATE, COAST):
        raise ValueError(f"unknown adversary {adversary!r}")
    if p.v_init == 0:
        return None
    a = p.a_max if adversary == ACCELERATE else 0.0
    x_sc = standstill_distance(p)
    n = int(math.floor((x_sc - p.standstill) / ds + 1e-9))
    gaps = p.standstill + ds * np.arange(n + 1)
    speeds = np.sqrt(np.maximum(2.0 * p.a_comf * (gaps - p.standstill), 0.0))
    # starts at standstill can only be hazardous if the adversary can move
    k = 0
    while k * dt <= t_limit:
        t = k * dt
        d, vt = _advance(speeds, t, a, p.v_max)
        deficit = vt * vt / (2.0 * p.a_emerg) - (gaps - d)
        hazard = deficit > 0.0
        if hazard.any():
            idx = np.flatnonzero(hazard)
            best = idx[np.argmax(deficit[idx])]
            g = float(gaps[best])
            frames = frames_for(t, p.frame_rate)
            return InterruptionResult(
                t_crash=round(t, 10),
                start_distance=x_sc - g,
                start_gap=g,
                start_speed=float(speeds[best]),
                interruption_frames=frames,
                n_crash=frames + p.n_trk,
                n_max_frames=max_drive_frames(p),
            )
        k += 1
    raise RuntimeError(f"no hazardous interruption within {t_limit} s")
