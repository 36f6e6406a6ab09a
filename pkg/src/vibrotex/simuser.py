"""Simulated oracle user: rates candidates and picks slider positions by
spectral distance to a target, standing in for a human judge so full
search sessions can run unattended."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import dss, tabu
from .dsp import Spectrogram
from .model import TextureGan
from .tabu import InitConfig, LatentIndex, Rating, TabuList


def grid_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized Frobenius distance between two equally-shaped grids."""
    num = np.linalg.norm(a - b)
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return float(num / max(den, 1e-12))


@dataclass(frozen=True)
class OracleUser:
    """Deterministic stand-in for the human: thresholds on spectral distance.

    ``target`` is a normalized magnitude grid. Distances below
    ``tau_good`` rate Good, below ``tau_soso`` So-so, anything else Bad
    (strict inequalities: a distance exactly at a threshold falls to the
    weaker rating).
    """

    target: np.ndarray
    tau_good: float = 0.35
    tau_soso: float = 0.6
    grid_points: int = 21
    selection_noise: float = 0.0

    def __post_init__(self):
        target = self.target.magnitudes if isinstance(self.target, Spectrogram) else self.target
        object.__setattr__(self, "target", np.asarray(target, dtype=np.float64))
        if not 0 < self.tau_good < self.tau_soso:
            raise ValueError("need 0 < tau_good < tau_soso")
        if self.grid_points < 3:
            raise ValueError("grid_points must be >= 3")
        if self.selection_noise < 0:
            raise ValueError("selection_noise must be nonnegative")


def rate(user: OracleUser, model: TextureGan, z: np.ndarray, label: int, generator=None) -> Rating:
    gen = generator or model.generate
    d = grid_distance(np.asarray(gen(z, label), dtype=np.float64), user.target)
    return rating_for_distance(user, d)


def rating_for_distance(user: OracleUser, d: float) -> Rating:
    if d < user.tau_good:
        return Rating.GOOD
    if d < user.tau_soso:
        return Rating.SOSO
    return Rating.BAD


def pick_slider(
    user: OracleUser,
    model: TextureGan,
    state: dss.DssState,
    cfg: dss.DssConfig = dss.DssConfig(),
    rng: np.random.Generator | None = None,
    generator=None,
) -> float:
    """Best grid position by spectral distance, with optional seeded jitter."""
    gen = generator or model.generate
    grid = np.linspace(cfg.slider_min, cfg.slider_max, user.grid_points)
    dists = [
        grid_distance(
            np.asarray(gen(dss.slider_position_to_latent(state.subspace, w, cfg), state.label)),
            user.target,
        )
        for w in grid
    ]
    w = float(grid[int(np.argmin(dists))])
    if user.selection_noise > 0:
        if rng is None:
            raise ValueError("selection_noise > 0 needs an rng")
        w += float(rng.normal(0.0, user.selection_noise))
        w = float(np.clip(w, cfg.slider_min, cfg.slider_max))
    return w


@dataclass
class SessionTrace:
    """Everything one automated session did, serializable for reports."""

    seed: int
    label: int = -1
    init_attempts: int = 0
    init_exhausted: bool = False
    init_distance: float = float("nan")
    distances: list[float] = field(default_factory=list)
    slider_positions: list[float] = field(default_factory=list)
    final_z: np.ndarray | None = None
    converged: bool = False

    @property
    def final_distance(self) -> float:
        return self.distances[-1] if self.distances else self.init_distance

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "label": self.label,
            "init_attempts": self.init_attempts,
            "init_exhausted": self.init_exhausted,
            "init_distance": self.init_distance,
            "distances": list(self.distances),
            "slider_positions": list(self.slider_positions),
            "final_z": None if self.final_z is None else self.final_z.tolist(),
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionTrace":
        trace = cls(seed=d["seed"], label=d["label"])
        trace.init_attempts = d["init_attempts"]
        trace.init_exhausted = d["init_exhausted"]
        trace.init_distance = d["init_distance"]
        trace.distances = list(d["distances"])
        trace.slider_positions = list(d["slider_positions"])
        trace.final_z = None if d["final_z"] is None else np.asarray(d["final_z"])
        trace.converged = d["converged"]
        return trace


def run_session(
    user: OracleUser,
    model: TextureGan,
    index: LatentIndex,
    init_cfg: InitConfig,
    max_iters: int = 20,
    seed: int = 0,
    dss_cfg: dss.DssConfig = dss.DssConfig(),
    init_attempt_cap: int = 50,
    generator=None,
) -> SessionTrace:
    """Full automated loop: tabu initialization, then slider iterations.

    Initialization proposes, rates, and advances until a Good rating or the
    attempt cap; if the cap is hit the best candidate seen so far is used
    and the trace marks the exhaustion. Slider iterations stop early once
    the distance falls below half of tau_good.
    """
    rng = np.random.default_rng(seed)
    gen = generator or model.generate
    trace = SessionTrace(seed=seed)

    tabu_list = TabuList(init_cfg.tabu_capacity)
    candidate, _ = tabu.propose_initial(index, tabu_list, rng)
    best = None
    for attempt in range(1, init_attempt_cap + 1):
        trace.init_attempts = attempt
        d = grid_distance(np.asarray(gen(candidate.z, candidate.label)), user.target)
        if best is None or d < best[0]:
            best = (d, candidate)
        rating = rating_for_distance(user, d)
        result = tabu.advance(candidate, rating, tabu_list, index, init_cfg, rng)
        if result.accepted:
            break
        candidate = result.candidate
    else:
        trace.init_exhausted = True
        candidate = best[1]

    trace.label = candidate.label
    trace.init_distance = grid_distance(
        np.asarray(gen(candidate.z, candidate.label)), user.target
    )

    state = dss.start_session(model, candidate.z, candidate.label, dss_cfg, generator)
    for _ in range(max_iters):
        w = pick_slider(user, model, state, dss_cfg, rng, generator)
        state = dss.commit(state, w, model, dss_cfg, generator)
        d = grid_distance(np.asarray(gen(state.subspace.base_z, state.label)), user.target)
        trace.slider_positions.append(w)
        trace.distances.append(d)
        if d < user.tau_good / 2.0:
            trace.converged = True
            break

    trace.final_z = state.subspace.base_z.copy()
    return trace
