"""
Equal-weight particle ensembles.

Particles carry no weights; flows move them instead. Ensembles serialize to CSV
(header ``x0,x1,...``, one row per particle, 17 significant digits) and to
JSONL snapshot records.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, TextIO

import numpy as np

from taylorflow.errors import ConfigError
from taylorflow.flows.base import GaussianPrior
from taylorflow.numerics import PRIOR, RngStream, gaussian_draw, symmetrize

CSV_FORMAT = "%.17g"


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """N x n array of particle states."""

    states: np.ndarray

    def __post_init__(self) -> None:
        states = np.array(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1:
            raise ConfigError(f"Ensemble states must be (N, n), got {states.shape}")
        if not np.all(np.isfinite(states)):
            raise ConfigError("Ensemble states must be finite")
        states.flags.writeable = False
        object.__setattr__(self, "states", states)

    @property
    def size(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def __len__(self) -> int:
        return self.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParticleEnsemble):
            return NotImplemented
        return bool(np.array_equal(self.states, other.states))

    def __hash__(self) -> int:
        return hash(self.states.tobytes())

    def deviations(self, center: np.ndarray) -> np.ndarray:
        """x_i - center for every particle."""
        return self.states - np.asarray(center, dtype=float)[None, :]

    def stats(self) -> tuple[np.ndarray, np.ndarray]:
        return ensemble_stats(self)

    def to_csv(self, path: str | Path) -> None:
        write_csv(self, path)

    @classmethod
    def from_csv(cls, path: str | Path) -> ParticleEnsemble:
        return read_csv(path)


def sample_prior(prior: GaussianPrior, n: int, seed: int) -> ParticleEnsemble:
    """N independent draws from the prior, deterministic under ``seed``."""
    if int(n) != n or n < 1:
        raise ConfigError(f"Particle count must be a positive integer, got {n}")
    stream = RngStream(seed=seed, purpose=PRIOR)
    return ParticleEnsemble(gaussian_draw(stream, prior.mean, prior.cov, size=int(n)))


def ensemble_stats(e: ParticleEnsemble) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and unbiased (N - 1) sample covariance."""
    if e.size < 2:
        raise ConfigError("Ensemble statistics need at least two particles")
    mean = e.states.mean(axis=0)
    centered = e.states - mean[None, :]
    cov = centered.T @ centered / (e.size - 1)
    return mean, symmetrize(cov)


def write_csv(e: ParticleEnsemble, path: str | Path) -> None:
    header = ",".join(f"x{i}" for i in range(e.dim))
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(header + "\n")
        for row in e.states:
            f.write(",".join(CSV_FORMAT % v for v in row) + "\n")


def read_csv(path: str | Path) -> ParticleEnsemble:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration as e:
            raise ConfigError(f"Empty ensemble file: {path}") from e
        rows = [[float(v) for v in row] for row in reader if row]
    if not rows:
        raise ConfigError(f"Ensemble file has no particles: {path}")
    if any(len(r) != len(header) for r in rows):
        raise ConfigError(f"Ragged rows in ensemble file: {path}")
    return ParticleEnsemble(np.asarray(rows))


def snapshot_record(
    lam: float, states: np.ndarray, diagnostics: dict[str, Any] | None = None
) -> dict[str, Any]:
    return {
        "lambda": float(lam),
        "states": np.asarray(states, dtype=float).tolist(),
        "diagnostics": diagnostics or {},
    }


def write_jsonl(records: list[dict[str, Any]], f: TextIO) -> None:
    """One JSON object per line; keys sorted so output bytes are stable."""
    for record in records:
        f.write(json.dumps(record, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
