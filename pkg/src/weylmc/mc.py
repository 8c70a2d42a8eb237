"""Monte Carlo plumbing: configs, the estimate record, deterministic streams.

Seeding contract: work is split into fixed-size chunks; chunk c of a run with
seed s draws from Philox keyed by (s, c).  Results are reduced in chunk order,
so estimates are bit-identical for a given (seed, cfg) regardless of how many
threads execute the chunks.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

CHUNK_SIZE = 4096


@dataclass
class SimConfig:
    dt: float = 1e-3
    wall_refine: float = 8.0
    t_max: float = 40.0
    n_samples: int = 10000
    seed: int = 0
    bridge_correction: bool = True

    def __post_init__(self):
        if self.dt <= 0 or self.t_max <= 0 or self.n_samples < 1:
            raise ValueError("dt > 0, t_max > 0 and n_samples >= 1 required")


@dataclass
class MCEstimate:
    mean: float
    stderr: float
    n: int
    seed: int
    truncation_bound: float = 0.0

    def to_json(self) -> str:
        return json.dumps(
            {
                "mean": self.mean,
                "stderr": self.stderr,
                "n": self.n,
                "seed": self.seed,
                "truncation_bound": self.truncation_bound,
            }
        )

    def agrees_with(self, target: float, n_sigma: float = 3.0) -> bool:
        return abs(self.mean - target) <= n_sigma * max(self.stderr, 1e-300)


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Independent generator for a (seed, chunk index) pair."""
    return np.random.Generator(np.random.Philox(key=(np.uint64(seed) << np.uint64(20)) + np.uint64(index)))


def chunk_sizes(n: int, chunk: int = CHUNK_SIZE):
    return [min(chunk, n - k) for k in range(0, n, chunk)]


def mc_run(sample_chunk, n: int, seed: int, threads: int = 1,
           chunk: int = CHUNK_SIZE, truncation_bound: float = 0.0) -> MCEstimate:
    """Estimate E[f] with f sampled by sample_chunk(rng, m) -> (m,) array.

    Deterministic for fixed (seed, chunk) whatever the thread count.
    """
    sizes = chunk_sizes(n, chunk)

    def work(c):
        vals = np.asarray(sample_chunk(stream(seed, c), sizes[c]), dtype=float)
        return float(vals.sum()), float((vals * vals).sum()), len(vals)

    if threads > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(work, range(len(sizes))))
    else:
        parts = [work(c) for c in range(len(sizes))]
    s = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    m = sum(p[2] for p in parts)
    mean = s / m
    var = max(s2 / m - mean * mean, 0.0)
    return MCEstimate(mean=mean, stderr=math.sqrt(var / m), n=m, seed=seed,
                      truncation_bound=truncation_bound)


def combine_mean(values: np.ndarray, seed: int, truncation_bound: float = 0.0) -> MCEstimate:
    values = np.asarray(values, dtype=float)
    n = len(values)
    mean = float(values.mean())
    sd = float(values.std(ddof=1)) if n > 1 else 0.0
    return MCEstimate(mean=mean, stderr=sd / math.sqrt(n), n=n, seed=seed,
                      truncation_bound=truncation_bound)


@dataclass
class PathSample:
    """A simulated trajectory with wall-hit events and segment labels."""

    times: np.ndarray
    positions: np.ndarray  # (n_times, r)
    events: list = field(default_factory=list)  # (wall index, time, location)
    segment_labels: np.ndarray | None = None

    def to_csv(self, path):
        r = self.positions.shape[1]
        labels = self.segment_labels
        if labels is None:
            labels = np.zeros(len(self.times), dtype=int)
        header = "t," + ",".join(f"x{i + 1}" for i in range(r)) + ",segment"
        data = np.column_stack([self.times, self.positions, labels])
        np.savetxt(path, data, delimiter=",", header=header, comments="")
