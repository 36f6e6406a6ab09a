"""Tabu-inspired selection of a starting latent vector.

Candidates are always encoded training samples. The user rates each one
Good, So-so, or Bad: Good accepts it, So-so hops to a nearby different
candidate, Bad jumps far away. Rated-and-rejected points enter a FIFO tabu
list whose entries forbid a radius around themselves, forcing exploration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Rating(enum.Enum):
    GOOD = "good"
    SOSO = "soso"
    BAD = "bad"


@dataclass(frozen=True)
class InitConfig:
    """Distances are in units of the latent space.

    ``step`` defaults to one eighth of the average pairwise distance of the
    index; the tabu radius equals one step. So-so hops stay within
    (0.5 * step, 2 * step); Bad jumps go beyond 2 * step.
    """

    dis_avg: float
    tabu_capacity: int = 5
    max_attempts: int = 200

    def __post_init__(self):
        if self.dis_avg <= 0:
            raise ValueError("dis_avg must be positive")
        if self.tabu_capacity < 1:
            raise ValueError("tabu_capacity must be >= 1")

    @property
    def step(self) -> float:
        return self.dis_avg / 8.0

    @property
    def tabu_radius(self) -> float:
        return self.step

    @property
    def soso_band(self) -> tuple[float, float]:
        return 0.5 * self.step, 2.0 * self.step

    @property
    def bad_min(self) -> float:
        return 2.0 * self.step


class TabuList:
    """FIFO of (point, radius) exclusion balls, oldest evicted first."""

    def __init__(self, capacity: int = 5):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.entries: list[tuple[np.ndarray, float]] = []

    def __len__(self) -> int:
        return len(self.entries)

    def push(self, z: np.ndarray, radius: float) -> None:
        self.entries.append((np.asarray(z, dtype=np.float64).copy(), float(radius)))
        if len(self.entries) > self.capacity:
            self.entries.pop(0)

    def covers(self, z: np.ndarray) -> bool:
        return any(
            np.linalg.norm(z - center) <= radius for center, radius in self.entries
        )

    def clear(self) -> None:
        self.entries.clear()


@dataclass
class LatentIndex:
    """Encoded training segments with their class labels."""

    z: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.z) == 0:
            raise ValueError("empty latent index")
        if len(self.z) != len(self.labels):
            raise ValueError("encodings and labels must align")

    def __len__(self) -> int:
        return len(self.z)


def index_from_dataset(model, dataset, batch: int = 256) -> LatentIndex:
    """Encode every dataset segment through the model."""
    chunks = [
        model.encode(dataset.segments[i : i + batch])
        for i in range(0, len(dataset.segments), batch)
    ]
    return LatentIndex(z=np.concatenate(chunks, axis=0), labels=dataset.labels.copy())


@dataclass(frozen=True)
class Candidate:
    z: np.ndarray
    label: int
    index_pos: int


@dataclass(frozen=True)
class AdvanceResult:
    accepted: bool
    candidate: Candidate
    used_fallback: bool = False
    tabu_cleared: bool = False


def estimate_avg_distance(
    index: LatentIndex, n_pairs: int = 10000, rng: np.random.Generator | None = None
) -> float:
    """Mean Euclidean distance over sampled distinct index pairs."""
    if len(index) < 2:
        raise ValueError("need at least 2 index entries")
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = rng or np.random.default_rng(0)
    n = len(index)
    i = rng.integers(0, n, size=n_pairs)
    j = rng.integers(0, n - 1, size=n_pairs)
    j = np.where(j >= i, j + 1, j)
    return float(np.linalg.norm(index.z[i] - index.z[j], axis=1).mean())


def _candidate(index: LatentIndex, pos: int) -> Candidate:
    return Candidate(z=index.z[pos].copy(), label=int(index.labels[pos]), index_pos=pos)


def propose_initial(
    index: LatentIndex,
    tabu: TabuList,
    rng: np.random.Generator,
    max_attempts: int = 200,
) -> tuple[Candidate, bool]:
    """Uniform draw from the index avoiding tabu balls.

    If every attempt lands in a tabu ball the neighborhood is exhausted:
    the tabu list is cleared and the next draw returned. The second return
    value reports whether that happened.
    """
    for _ in range(max_attempts):
        pos = int(rng.integers(0, len(index)))
        if not tabu.covers(index.z[pos]):
            return _candidate(index, pos), False
    tabu.clear()
    return _candidate(index, int(rng.integers(0, len(index)))), True


def advance(
    current: Candidate,
    rating: Rating,
    tabu: TabuList,
    index: LatentIndex,
    cfg: InitConfig,
    rng: np.random.Generator,
) -> AdvanceResult:
    """Apply one rating: accept on Good, otherwise hop per the band rules.

    The rejected current point joins the tabu FIFO. If no index entry falls
    in the required distance band, the nearest entry outside all tabu balls
    is used instead (reported via ``used_fallback``).
    """
    if rating is Rating.GOOD:
        return AdvanceResult(accepted=True, candidate=current)

    tabu.push(current.z, cfg.tabu_radius)
    dists = np.linalg.norm(index.z - current.z, axis=1)
    if rating is Rating.SOSO:
        lo, hi = cfg.soso_band
        in_band = (dists > lo) & (dists < hi)
    else:
        in_band = dists > cfg.bad_min

    covered = np.array([tabu.covers(z) for z in index.z])
    admissible = np.flatnonzero(in_band & ~covered)
    if len(admissible):
        pos = int(rng.choice(admissible))
        return AdvanceResult(accepted=False, candidate=_candidate(index, pos))

    free = np.flatnonzero(~covered)
    cleared = False
    if len(free) == 0:
        # every entry is inside some tabu ball: start the neighborhood over
        tabu.clear()
        free = np.arange(len(index))
        cleared = True
    pos = int(free[np.argmin(dists[free])])
    return AdvanceResult(
        accepted=False,
        candidate=_candidate(index, pos),
        used_fallback=True,
        tabu_cleared=cleared,
    )
