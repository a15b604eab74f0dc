"""Interactive steering of the inverse projection.

A control spec pulls the latent code at 2D points toward a chosen target
sample: z(p) += alpha * K_sigma(p, p_s) * (Enc(x_t) - z(p_s)), with a
Gaussian kernel K centered on the source point. Multiple specs add linearly
in z-space before decoding. sigma is measured in standardized projection
units so its meaning does not depend on the projection's scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import LcipModel, decode, encode
from .nn import as_matrix
from .zfield import ZField, query_many


@dataclass
class ControlSpec:
    source: np.ndarray  # (2,) raw projection coords
    target_x: np.ndarray  # (n,) raw data-space vector
    alpha: float = 0.0
    sigma: float = 0.5  # kernel radius, standardized projection units
    target_index: int | None = None

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float32).reshape(2)
        self.target_x = np.asarray(self.target_x, dtype=np.float32).ravel()
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")


def delta_z(model: LcipModel, field: ZField, p_s, x_t) -> np.ndarray:
    """Enc(x_t) - z(p_s): what must change at the source to become the target."""
    zt = encode(model, np.asarray(x_t, dtype=np.float32).reshape(1, -1))[0]
    zs = query_many(field, np.asarray(p_s, dtype=np.float64).reshape(1, 2))[0]
    return zt - zs


def gaussian_weight(dist: np.ndarray, sigma: float) -> np.ndarray:
    """exp(-d^2 / (2 sigma^2)) for standardized distances d."""
    d = np.asarray(dist, dtype=np.float64)
    return np.exp(-(d * d) / (2.0 * sigma * sigma))


@dataclass
class ControlSession:
    """Model + z-field + active control specs with cached delta-z vectors."""
    model: LcipModel
    zfield: ZField
    specs: list[ControlSpec] = field(default_factory=list)
    _deltas: list[np.ndarray] = field(default_factory=list, repr=False)

    def set_specs(self, specs: list[ControlSpec]) -> None:
        self.specs = list(specs)
        self._deltas = [delta_z(self.model, self.zfield, s.source, s.target_x)
                        for s in self.specs]

    def add_spec(self, spec: ControlSpec) -> None:
        self.set_specs(self.specs + [spec])

    def clear(self) -> None:
        self.set_specs([])

    def cached_delta_z(self, i: int = 0) -> np.ndarray:
        return self._deltas[i]

    def state_dict(self) -> dict:
        return {"specs": [{"source": [float(s.source[0]), float(s.source[1])],
                           "target_index": s.target_index,
                           "alpha": float(s.alpha), "sigma": float(s.sigma)}
                          for s in self.specs]}


def _kernel_distances(session: ControlSession, points: np.ndarray,
                      spec: ControlSpec) -> np.ndarray:
    std = np.asarray(session.model.y_std, dtype=np.float64)
    d = (np.asarray(points, dtype=np.float64) - np.asarray(spec.source, np.float64)) / std
    return np.sqrt((d * d).sum(axis=1))


def controlled_z(session: ControlSession, points: np.ndarray) -> np.ndarray:
    """Interpolated z at each point plus all active control offsets."""
    points = as_matrix(points, "points", cols=2)
    z = query_many(session.zfield, points)
    for spec, dz in zip(session.specs, session._deltas):
        if spec.alpha == 0.0:
            continue  # exact identity: z untouched bitwise
        k = gaussian_weight(_kernel_distances(session, points, spec), spec.sigma)
        z = z + (spec.alpha * k[:, None] * dz).astype(np.float32)
    return z


def invert_controlled(session: ControlSession, points: np.ndarray) -> np.ndarray:
    """Controlled inverse projection of a batch of 2D points."""
    points = as_matrix(points, "points", cols=2)
    return decode(session.model, points, controlled_z(session, points))


def sweep(session: ControlSession, point, alphas) -> np.ndarray:
    """invert_controlled at one point for each pull factor; (len(alphas), n).

    All specs' alphas are replaced by each sweep value in turn; the kernel
    weights and delta-z vectors are computed once.
    """
    p = np.asarray(point, dtype=np.float32).reshape(1, 2)
    outs = [_swept_batch(session, p, float(a)) for a in alphas]
    return np.vstack(outs)


def sweep_grid(session: ControlSession, points: np.ndarray, alphas):
    """Yield (alpha, inverted batch) for each pull factor over many points."""
    points = as_matrix(points, "points", cols=2)
    for a in alphas:
        yield float(a), _swept_batch(session, points, float(a))


def _swept_batch(session: ControlSession, points: np.ndarray, alpha: float) -> np.ndarray:
    z = query_many(session.zfield, points)
    if alpha != 0.0:
        for spec, dz in zip(session.specs, session._deltas):
            k = gaussian_weight(_kernel_distances(session, points, spec), spec.sigma)
            z = z + (alpha * k[:, None] * dz).astype(np.float32)
    return decode(session.model, points, z)
