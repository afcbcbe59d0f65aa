"""Zeroth-, first- and second-order certificates on ``max f`` over a region.

For an l2 ball of radius ``eps`` around ``x_c``:

    bound0 = f + L_f eps
    bound1 = f + |grad f|_2 eps + L_grad eps^2 / 2
    bound2 = f + |grad f|_2 eps + (lambda_max(H))_+ eps^2 / 2 + L_hess eps^3 / 6

For a box ``{x_c + delta : |D^{-1} delta|_inf <= 1}`` with ``D = diag(radii)``:

    bound0 = f + L_f |D|_F
    bound1 = f + |D grad f|_1 + L_grad |D|_F^2 / 2
    bound2 = f + |D grad f|_1 + n (lambda_max(D H D))_+ / 2 + L_hess |D|_F^3 / 6

The combined certificate is the minimum of the three.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from hitab.errors import InputError, NumericError
from hitab.lipzoo import LipschitzBundle
from hitab.net import LocalModel

SYMMETRY_RTOL = 1e-10
EIG_MARGIN = 1e-9


@dataclass(frozen=True)
class BallSpec:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise InputError(f"radius must be positive and finite, got {self.radius}")


@dataclass(frozen=True)
class BoxSpec:
    """Axis-aligned box ``center + D nu`` with ``|nu|_inf <= 1`` and ``D = diag(radii)``."""

    center: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float).reshape(-1)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        if c.shape != r.shape:
            raise InputError(f"radii length {r.shape[0]} does not match center length {c.shape[0]}")
        if not np.all(np.isfinite(r)) or np.any(r <= 0):
            raise InputError("all radii must be positive and finite")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radii", r)

    @property
    def lower(self) -> np.ndarray:
        return self.center - self.radii

    @property
    def upper(self) -> np.ndarray:
        return self.center + self.radii

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.all(np.abs(x - self.center) <= self.radii * (1 + tol), axis=-1)


Region = Union[BallSpec, BoxSpec]


@dataclass(frozen=True)
class Certificate:
    bound0: float
    bound1: float
    bound2: float
    combined: float
    lambda_max_term: float
    center: np.ndarray
    region: Region

    def to_dict(self) -> dict:
        return {
            "bound0": self.bound0,
            "bound1": self.bound1,
            "bound2": self.bound2,
            "combined": self.combined,
            "lambda_max": self.lambda_max_term,
        }


def _gershgorin_max(m: np.ndarray) -> np.ndarray:
    diag = np.diagonal(m, axis1=-2, axis2=-1)
    off = np.abs(m).sum(axis=-1) - np.abs(diag)
    return (diag + off).max(axis=-1)


def lambda_max_scaled(hessian, radii) -> float:
    """Upper bound on ``lambda_max(D H D)`` with ``D = diag(radii)``.

    A relative safety margin covers rounding in the eigensolver.
    """
    h = np.asarray(hessian, dtype=float)
    r = np.asarray(radii, dtype=float).reshape(-1)
    if h.ndim != 2 or h.shape[0] != h.shape[1]:
        raise InputError(f"hessian must be square, got shape {h.shape}")
    if r.shape[0] != h.shape[0]:
        raise InputError(f"radii length {r.shape[0]} does not match hessian size {h.shape[0]}")
    if np.linalg.norm(h - h.T) > SYMMETRY_RTOL * (1.0 + np.linalg.norm(h)):
        raise InputError("hessian is not symmetric")
    return float(_lambda_max_batch(h[None], r[None])[0])


def _lambda_max_batch(h: np.ndarray, r: np.ndarray) -> np.ndarray:
    m = r[:, :, None] * h * r[:, None, :]
    m = 0.5 * (m + np.swapaxes(m, -1, -2))
    margin = EIG_MARGIN * (1.0 + np.linalg.norm(m, axis=(-2, -1)))
    try:
        lam = np.linalg.eigvalsh(m)[:, -1]
    except np.linalg.LinAlgError:
        # d_max^2 * lambda_max(H), with lambda_max(H) itself bounded by Gershgorin discs
        lam = r.max(axis=-1) ** 2 * np.maximum(_gershgorin_max(h), 0.0)
    return lam + margin


def box_bounds(
    values: np.ndarray,
    grads: np.ndarray,
    hessians: np.ndarray,
    radii: np.ndarray,
    lip: LipschitzBundle,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised box certificates for a batch of local models.

    Returns ``(bound0, bound1, bound2, lambda)`` as arrays over the batch.
    """
    n = grads.shape[-1]
    fro = np.linalg.norm(radii, axis=-1)
    lin = np.abs(radii * grads).sum(axis=-1)
    lam = _lambda_max_batch(hessians, radii)
    b0 = values + lip.lip_f * fro
    b1 = values + lin + 0.5 * lip.lip_grad * fro**2
    b2 = values + lin + 0.5 * n * np.maximum(lam, 0.0) + lip.lip_hess / 6.0 * fro**3
    return b0, b1, b2, lam


def _check_model(model: LocalModel, dim: int) -> None:
    if model.gradient.shape[0] != dim or model.hessian.shape != (dim, dim):
        raise InputError(f"local model has dimension {model.gradient.shape[0]}, region has dimension {dim}")
    if not (math.isfinite(model.value) and np.all(np.isfinite(model.gradient)) and np.all(np.isfinite(model.hessian))):
        raise NumericError("local model has non-finite entries")


def bound_ball(model: LocalModel, lip: LipschitzBundle, spec: BallSpec) -> Certificate:
    _check_model(model, spec.center.shape[0])
    eps = spec.radius
    f = model.value
    g = float(np.linalg.norm(model.gradient))
    lam = lambda_max_scaled(model.hessian, np.ones_like(spec.center))
    b0 = f + lip.lip_f * eps
    b1 = f + g * eps + 0.5 * lip.lip_grad * eps**2
    b2 = f + g * eps + 0.5 * max(lam, 0.0) * eps**2 + lip.lip_hess / 6.0 * eps**3
    return Certificate(b0, b1, b2, min(b0, b1, b2), lam, model.center, spec)


def bound_box(model: LocalModel, lip: LipschitzBundle, spec: BoxSpec) -> Certificate:
    _check_model(model, spec.center.shape[0])
    b0, b1, b2, lam = box_bounds(
        np.array([model.value]), model.gradient[None], model.hessian[None], spec.radii[None], lip
    )
    b0, b1, b2 = float(b0[0]), float(b1[0]), float(b2[0])
    return Certificate(b0, b1, b2, min(b0, b1, b2), float(lam[0]), model.center, spec)


def crossover_thresholds(model: LocalModel, lip: LipschitzBundle) -> tuple[float, float]:
    """Ball radii below which the next-higher-order certificate is no worse.

    ``eps01``: for ``eps <= eps01`` the first-order bound beats the zeroth.
    ``eps12``: for ``eps <= eps12`` the second-order bound beats the first.
    """
    g = float(np.linalg.norm(model.gradient))
    lam = max(lambda_max_scaled(model.hessian, np.ones(model.gradient.shape[0])), 0.0)
    eps01 = math.inf if lip.lip_grad <= 0 else max(0.0, 2.0 * (lip.lip_f - g) / lip.lip_grad)
    eps12 = math.inf if lip.lip_hess <= 0 else max(0.0, 3.0 * (lip.lip_grad - lam) / lip.lip_hess)
    return eps01, eps12


def pointwise_bounds(model: LocalModel, lip: LipschitzBundle, delta) -> tuple[float, float, float]:
    """Majorizers of ``f(x_c + delta)`` for one perturbation ``delta``.

    Returns the zeroth-, first- and second-order Taylor models with their
    certified remainders.
    """
    d = np.asarray(delta, dtype=float)
    r = float(np.linalg.norm(d))
    lin = float(model.gradient @ d)
    f0 = model.value + lip.lip_f * r
    f1 = model.value + lin + 0.5 * lip.lip_grad * r**2
    f2 = model.value + lin + 0.5 * float(d @ model.hessian @ d) + lip.lip_hess / 6.0 * r**3
    return f0, f1, f2
