"""Traffic generation: arrival schedules and request payloads.

Everything here is a pure function of (spec, seed). The PRNG is numpy's
counter-based Philox keyed through SeedSequence, recorded in run logs as
PRNG_ALGORITHM so schedules replay across machines.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import SpecValidationError
from .jobspec import WorkloadSpec

PRNG_ALGORITHM = "numpy-philox4x64"


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for (seed, stream...); stable across processes."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


@dataclass(frozen=True)
class ArrivalSchedule:
    offsets: tuple[float, ...]  # seconds from job start, monotone non-decreasing
    seed: int
    pattern: str

    def __post_init__(self):
        if any(b < a for a, b in zip(self.offsets, self.offsets[1:])):
            raise ValueError("arrival offsets must be monotone non-decreasing")

    def __len__(self) -> int:
        return len(self.offsets)


def _poisson_offsets(rng: np.random.Generator, rate: float, *, n: int | None,
                     duration: float | None) -> np.ndarray:
    if n is not None:
        gaps = rng.exponential(1.0 / rate, size=n)
        return np.cumsum(gaps)
    # duration-bounded: draw in chunks until past the horizon, keep t < duration
    chunk = max(16, int(rate * duration * 1.2) + 16)
    offsets = np.cumsum(rng.exponential(1.0 / rate, size=chunk))
    while offsets[-1] < duration:
        more = np.cumsum(rng.exponential(1.0 / rate, size=chunk)) + offsets[-1]
        offsets = np.concatenate([offsets, more])
    return offsets[offsets < duration]


def _burst_offsets(rng: np.random.Generator, spec, *, n: int | None,
                   duration: float | None) -> list[float]:
    """Two-level modulated poisson: each period opens at peak_rate for
    duty*period seconds, then drops to base_rate."""
    peak_len = spec.duty * spec.period
    out: list[float] = []
    t = 0.0
    horizon = duration if duration is not None else math.inf
    # Unit-rate exponential "work" carries across rate segments.
    work = rng.exponential(1.0)
    while t < horizon and (n is None or len(out) < n):
        phase = t % spec.period
        in_peak = phase < peak_len
        rate = spec.peak_rate if in_peak else spec.base_rate
        seg_end = (t - phase) + (peak_len if in_peak else spec.period)
        if rate <= 0.0:
            t = seg_end
            continue
        dt = work / rate
        if t + dt < seg_end:
            t += dt
            if t >= horizon:
                break
            out.append(t)
            work = rng.exponential(1.0)
        else:
            work -= (seg_end - t) * rate
            t = seg_end
    return out


def gen_arrivals(w: WorkloadSpec) -> ArrivalSchedule:
    """Materialize the arrival process as offsets from job start.

    constant: exact 1/rate spacing starting at 0. poisson: iid exponential
    inter-arrivals with mean 1/rate. burst: piecewise-constant-rate poisson.
    Deterministic for a fixed seed. Closed-loop workloads have no schedule
    (sends are triggered by completions) and are rejected here.
    """
    if w.replay_file is not None:
        return load_schedule(w.replay_file, seed=w.seed)
    if w.pattern == "closed_loop":
        raise SpecValidationError("workload.pattern",
                                  "closed_loop has no arrival schedule; drive it from completions")
    rng = rng_for(w.seed, 0)
    if w.pattern == "constant":
        n = w.num_requests if w.num_requests is not None else math.ceil(w.rate * w.duration)
        offsets = [i / w.rate for i in range(n)]
    elif w.pattern == "poisson":
        offsets = [float(t) for t in _poisson_offsets(
            rng, w.rate, n=w.num_requests, duration=w.duration)]
    elif w.pattern == "burst":
        offsets = _burst_offsets(rng, w.burst, n=w.num_requests, duration=w.duration)
    else:
        raise SpecValidationError("workload.pattern", f"unknown pattern {w.pattern!r}")
    return ArrivalSchedule(tuple(offsets), w.seed, w.pattern)


def gen_payload(w: WorkloadSpec, i: int) -> tuple[bytes, str]:
    """Payload bytes and id for request i; a pure function of (spec.seed, i)."""
    if w.payload.dataset_dir is not None:
        files = sorted(p for p in Path(w.payload.dataset_dir).iterdir() if p.is_file())
        if not files:
            raise SpecValidationError("workload.payload.dataset_dir",
                                      f"no files in {w.payload.dataset_dir}")
        chosen = files[i % len(files)]
        return chosen.read_bytes(), chosen.name
    size = w.payload.synthetic_bytes
    rng = rng_for(w.seed, 1, i)
    return rng.bytes(size), f"synthetic-{i}"


def payload_size(w: WorkloadSpec, i: int) -> int:
    """Byte count of request i's payload without materializing synthetic bytes."""
    if w.payload.dataset_dir is None:
        return w.payload.synthetic_bytes
    files = sorted(p for p in Path(w.payload.dataset_dir).iterdir() if p.is_file())
    if not files:
        raise SpecValidationError("workload.payload.dataset_dir",
                                  f"no files in {w.payload.dataset_dir}")
    return files[i % len(files)].stat().st_size


def export_schedule(schedule: ArrivalSchedule, path: str | Path):
    """One offset per line, full float precision, for audit or replay."""
    with open(path, "w") as f:
        for t in schedule.offsets:
            f.write(f"{t!r}\n")


def load_schedule(path: str | Path, seed: int = 0) -> ArrivalSchedule:
    offsets = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                offsets.append(float(line))
            except ValueError:
                raise SpecValidationError(f"{path}:{lineno}", f"not a number: {line!r}") from None
    return ArrivalSchedule(tuple(offsets), seed, "replay")
