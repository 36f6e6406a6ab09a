"""Differential subspace search over the generator's latent space.

The generator Jacobian at the current latent point is decomposed by SVD;
its top right-singular vector spans the one-dimensional slice a slider
exposes. Moving the slider picks a point z(w) = base + w * scale * v1, and
committing a choice re-anchors the subspace there and recomputes the
direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import TextureGan

_SIGN_EPS = 1e-12


@dataclass(frozen=True)
class DssConfig:
    """Slider geometry and Jacobian evaluation choices."""

    step_scale: float | None = None
    jacobian_method: str = "finite_difference"
    fd_step: float = 1e-4
    slider_min: float = -1.0
    slider_max: float = 1.0

    def __post_init__(self):
        if self.step_scale is not None and self.step_scale <= 0:
            raise ValueError("step_scale must be positive")
        if self.jacobian_method not in ("analytic", "finite_difference"):
            raise ValueError(f"unknown jacobian method {self.jacobian_method!r}")
        if not self.slider_min < self.slider_max:
            raise ValueError("slider range is empty")

    def scale_for(self, latent_dim: int) -> float:
        if self.step_scale is not None:
            return self.step_scale
        return 0.25 * float(np.sqrt(latent_dim))


@dataclass(frozen=True)
class SubspaceMap:
    """One slider's worth of latent space: base point, direction, scale."""

    base_z: np.ndarray
    direction: np.ndarray
    scale: float

    def __post_init__(self):
        norm = np.linalg.norm(self.direction)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ValueError(f"direction must be unit length, got {norm}")


@dataclass
class DssState:
    """Progress of one slider-search session."""

    subspace: SubspaceMap
    label: int
    iteration: int = 0
    history: list[tuple[int, float, np.ndarray]] = field(default_factory=list)


def jacobian(
    model: TextureGan,
    z: np.ndarray,
    label: int,
    method: str = "finite_difference",
    fd_step: float = 1e-4,
    generator=None,
) -> np.ndarray:
    """Jacobian of the flattened generator output at ``z``.

    ``generator`` overrides the model's generator with any callable
    (z, label) -> array, in which case only finite differences apply.
    """
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("latent point contains non-finite entries")
    d = z.shape[0]

    if generator is None and method == "analytic":
        J = _jacobian_analytic(model, z, label)
    else:
        gen = generator or (lambda zz, ll: model.generate(zz, ll))
        J = _jacobian_fd(gen, z, label, fd_step)
    if not np.all(np.isfinite(J)):
        raise ValueError("Jacobian contains non-finite entries")
    if J.shape[1] != d:
        raise AssertionError("jacobian column count mismatch")
    return J


def _jacobian_fd(gen, z, label, h):
    probes = np.repeat(z[None, :], 2 * z.shape[0], axis=0)
    for j in range(z.shape[0]):
        probes[2 * j, j] += h
        probes[2 * j + 1, j] -= h
    outs = np.stack([np.asarray(gen(p, label), dtype=np.float64).ravel() for p in probes])
    return ((outs[0::2] - outs[1::2]) / (2.0 * h)).T


def _jacobian_analytic(model: TextureGan, z, label, chunk: int = 256):
    """Backward passes against one-hot output grads, chunked over outputs."""
    nets = model.networks
    mcfg = model.config
    out_dim = mcfg.seg_shape[0] * mcfg.seg_shape[1]
    one_hot = model._one_hot(np.atleast_1d(label))
    rows = []
    for start in range(0, out_dim, chunk):
        n = min(chunk, out_dim - start)
        zb = np.repeat(z[None, :], n, axis=0)
        feat, head_caches = nets["gen_head"].forward(zb)
        plane_out, _ = nets["gen_label_embed"].forward(np.repeat(one_hot, n, axis=0))
        plane = plane_out.reshape(n, 1, *mcfg.base_shape)
        x, body_caches = nets["gen_body"].forward(np.concatenate([feat, plane], axis=1))
        gout = np.zeros((n,) + x.shape[1:])
        flat = gout.reshape(n, -1)
        flat[np.arange(n), start + np.arange(n)] = 1.0
        g_body_in, _ = nets["gen_body"].backward(body_caches, gout)
        g_feat = g_body_in[:, : mcfg.gen_ch]
        gz, _ = nets["gen_head"].backward(head_caches, g_feat)
        rows.append(gz)
    return np.concatenate(rows, axis=0)


def principal_direction(J: np.ndarray) -> np.ndarray:
    """Top right-singular vector, sign-canonicalized.

    The sign flips so the first component with magnitude above 1e-12 is
    positive, making the result a function of the matrix alone.
    """
    J = np.asarray(J, dtype=np.float64)
    if not np.any(J):
        raise ValueError("zero Jacobian: generator is flat at this point")
    _, _, vt = np.linalg.svd(J, full_matrices=False)
    v1 = vt[0]
    nonzero = np.flatnonzero(np.abs(v1) > _SIGN_EPS)
    anchor = nonzero[0] if len(nonzero) else int(np.argmax(np.abs(v1)))
    if v1[anchor] < 0:
        v1 = -v1
    return v1 / np.linalg.norm(v1)


def make_subspace(
    model: TextureGan,
    z: np.ndarray,
    label: int,
    cfg: DssConfig = DssConfig(),
    generator=None,
) -> SubspaceMap:
    J = jacobian(model, z, label, cfg.jacobian_method, cfg.fd_step, generator)
    v1 = principal_direction(J)
    d = np.asarray(z).shape[0]
    return SubspaceMap(
        base_z=np.asarray(z, dtype=np.float64).copy(),
        direction=v1,
        scale=cfg.scale_for(d),
    )


def slider_position_to_latent(subspace: SubspaceMap, w: float, cfg: DssConfig = DssConfig()) -> np.ndarray:
    """z(w) = base + w * scale * direction, w within the slider range."""
    if not cfg.slider_min <= w <= cfg.slider_max:
        raise ValueError(
            f"slider position {w} outside [{cfg.slider_min}, {cfg.slider_max}]"
        )
    return subspace.base_z + w * subspace.scale * subspace.direction


def start_session(
    model: TextureGan,
    z0: np.ndarray,
    label: int,
    cfg: DssConfig = DssConfig(),
    generator=None,
) -> DssState:
    return DssState(subspace=make_subspace(model, z0, label, cfg, generator), label=label)


def commit(
    state: DssState,
    w_chosen: float,
    model: TextureGan,
    cfg: DssConfig = DssConfig(),
    generator=None,
) -> DssState:
    """Accept a slider position: re-anchor, recompute the direction."""
    new_base = slider_position_to_latent(state.subspace, w_chosen, cfg)
    subspace = make_subspace(model, new_base, state.label, cfg, generator)
    history = state.history + [(state.iteration, float(w_chosen), new_base.copy())]
    return DssState(
        subspace=subspace,
        label=state.label,
        iteration=state.iteration + 1,
        history=history,
    )
