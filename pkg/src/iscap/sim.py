"""Monte-Carlo drives through the stopped-car-ahead scenario.

Each trial starts ``x_sc`` behind a stopped car at ``v_init``.  Every
frame the detector misses the car (an FNA) with probability ``p_fna``.
The tracker keeps the object through up to ``n_trk`` consecutive misses;
while it is tracked the ego brakes with the deceleration needed to stop
at the standstill point (at most ``a_emerg``), while it is lost the ego
accelerates at ``a_max`` up to ``v_max``.  Motion within a frame is
integrated exactly.  A trial crashes when the gap reaches zero.

Random numbers come from a Philox counter-based generator keyed by the
seed, with one counter block per trial index, so any split of the trial
range gives the same per-trial draws.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .sca import ScaParams, standstill_distance, worst_case_interruption

INDEPENDENT = "independent"
ALL_OR_NOTHING = "all-or-nothing"
AS_NEEDED = "as-needed"
EMERGENCY = "emergency"

_BLOCK = 128


@dataclass(frozen=True)
class SimConfig:
    sca: ScaParams = field(default_factory=ScaParams)
    p_fna: float = 0.0
    correlation: str = INDEPENDENT
    trials: int = 10_000
    seed: int = 0
    # None: derive from the worst-case interruption analysis
    n_crash: Optional[int] = None
    rebrake: str = AS_NEEDED
    max_frames: int = 2000

    def check(self) -> "SimConfig":
        self.sca.check()
        if not 0.0 <= self.p_fna <= 1.0:
            raise ValueError(f"p_fna must be in [0, 1], got {self.p_fna}")
        if self.trials < 1:
            raise ValueError(f"trials must be >= 1, got {self.trials}")
        if self.correlation not in (INDEPENDENT, ALL_OR_NOTHING):
            raise ValueError(f"unknown correlation mode {self.correlation!r}")
        if self.rebrake not in (AS_NEEDED, EMERGENCY):
            raise ValueError(f"unknown rebrake policy {self.rebrake!r}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        sca = ScaParams.from_dict(d.pop("sca", {}))
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown simulation settings: {sorted(unknown)}")
        return cls(sca=sca, **d).check()

    def resolved_n_crash(self) -> int:
        if self.n_crash is not None:
            return self.n_crash
        r = worst_case_interruption(self.sca)
        return r.n_crash if r is not None else 0


@dataclass(frozen=True)
class SimResult:
    trials: int
    crash_count: int
    mp_satisfied_count: int
    n_crash: int
    # per-trial arrays, filled only when requested
    crashed: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    fna_counts: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    frames: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    @property
    def crash_rate(self) -> float:
        return self.crash_count / self.trials

    def summary(self) -> dict:
        return {"trials": self.trials, "crash_count": self.crash_count,
                "crash_rate": self.crash_rate, "mp_satisfied_count": self.mp_satisfied_count,
                "n_crash": self.n_crash}


def trial_uniforms(seed: int, start: int, stop: int, n: int, offset: int = 0) -> np.ndarray:
    """Uniform draws ``[offset, offset + n)`` of trials ``start..stop-1``."""
    out = np.empty((stop - start, n))
    for row, i in enumerate(range(start, stop)):
        g = np.random.Generator(np.random.Philox(key=seed, counter=[0, i, 0, 0]))
        if offset:
            g.random(offset)
        out[row] = g.random(n)
    return out


def _brake(v, b, dt):
    t_stop = np.where(b > 0, v / np.where(b > 0, b, 1.0), np.inf)
    stops = t_stop <= dt
    d = np.where(stops, v * v / (2.0 * np.where(b > 0, b, 1.0)), v * dt - 0.5 * b * dt * dt)
    return d, np.where(stops, 0.0, v - b * dt)


def _accelerate(v, a, v_max, dt):
    if a <= 0:
        return v * dt, v.copy()
    t1 = np.clip((v_max - v) / a, 0.0, dt)
    d = v * t1 + 0.5 * a * t1 * t1 + np.minimum(v + a * t1, v_max) * (dt - t1)
    return d, np.minimum(v + a * dt, v_max)


def _run_chunk(cfg: SimConfig, start: int, stop: int):
    p = cfg.sca
    n = stop - start
    dt = 1.0 / p.frame_rate
    x = np.full(n, standstill_distance(p))
    v = np.full(n, float(p.v_init))
    consec = np.zeros(n, dtype=np.int64)
    fna = np.zeros(n, dtype=np.int64)
    frames = np.zeros(n, dtype=np.int64)
    was_lost = np.zeros(n, dtype=bool)
    crashed = np.zeros(n, dtype=bool)
    active = v > 0

    if cfg.correlation == ALL_OR_NOTHING:
        always = trial_uniforms(cfg.seed, start, stop, 1)[:, 0] < cfg.p_fna
    u = None
    for f in range(cfg.max_frames):
        if not active.any():
            break
        if cfg.correlation == INDEPENDENT:
            col = f % _BLOCK
            if col == 0:
                u = trial_uniforms(cfg.seed, start, stop, _BLOCK, offset=f)
            miss = u[:, col] < cfg.p_fna
        else:
            miss = always.copy()
        miss &= active
        consec = np.where(miss, consec + 1, 0)
        fna += miss
        frames += active
        tracked = consec <= p.n_trk

        room = x - p.standstill
        need = np.where(room > 0, v * v / (2.0 * np.where(room > 0, room, 1.0)), p.a_emerg)
        b = np.minimum(need, p.a_emerg)
        if cfg.rebrake == EMERGENCY:
            b = np.where(was_lost, p.a_emerg, b)
        d_b, v_b = _brake(v, b, dt)
        d_a, v_a = _accelerate(v, p.a_max, p.v_max, dt)
        d = np.where(tracked, d_b, d_a)
        v_new = np.where(tracked, v_b, v_a)
        was_lost |= ~tracked & active

        hit = active & (d >= x)
        crashed |= hit
        x = np.where(active, x - d, x)
        v = np.where(active, v_new, v)
        active &= ~hit & ~(tracked & (v <= 0.0))
    return crashed, fna, frames


def simulate(cfg: SimConfig, workers: Optional[int] = None, keep_trials: bool = False,
             chunk: int = 25_000) -> SimResult:
    """Run ``cfg.trials`` seeded drives.

    A drive counts as satisfying the misperception pattern when it
    contains at least ``n_crash`` FNA frames.  Chunks of trials run on
    ``workers`` threads; the result is the same for any chunking.
    """
    cfg.check()
    n_crash = cfg.resolved_n_crash()
    bounds = [(s, min(s + chunk, cfg.trials)) for s in range(0, cfg.trials, chunk)]
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(lambda b: _run_chunk(cfg, *b), bounds))
    else:
        parts = [_run_chunk(cfg, *b) for b in bounds]
    crashed = np.concatenate([c for c, _, _ in parts])
    fna = np.concatenate([f for _, f, _ in parts])
    frames = np.concatenate([fr for _, _, fr in parts])
    return SimResult(
        trials=cfg.trials,
        crash_count=int(crashed.sum()),
        mp_satisfied_count=int((fna >= n_crash).sum()),
        n_crash=n_crash,
        crashed=crashed if keep_trials else None,
        fna_counts=fna if keep_trials else None,
        frames=frames if keep_trials else None,
    )


@dataclass(frozen=True)
class NecessityReport:
    trials: int
    crashes: int
    n_crash: int
    counterexamples: tuple   # trial indices of crashes with too few FNAs
    min_fna_in_crash: Optional[int]

    @property
    def ok(self) -> bool:
        return not self.counterexamples


def check_necessity(cfg: SimConfig, workers: Optional[int] = None) -> NecessityReport:
    """Every simulated crash must contain at least ``n_crash`` FNA frames."""
    r = simulate(cfg, workers=workers, keep_trials=True)
    bad = np.flatnonzero(r.crashed & (r.fna_counts < r.n_crash))
    in_crash = r.fna_counts[r.crashed]
    return NecessityReport(
        trials=r.trials,
        crashes=r.crash_count,
        n_crash=r.n_crash,
        counterexamples=tuple(int(i) for i in bad),
        min_fna_in_crash=int(in_crash.min()) if in_crash.size else None,
    )


def sampling_sigma(rate: float, trials: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / trials)


def with_p(cfg: SimConfig, p: float) -> SimConfig:
    return replace(cfg, p_fna=p)
