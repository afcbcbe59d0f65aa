"""Closed-loop reachability of LTI systems driven by a network controller.

One step maps a set ``X`` to an outer approximation of

    { A x + B u(x) + d : x in X },    u = controller network output,

as a rotated rectangle. Each support value ``max r^T x+`` is certified by
branch and bound on the unit box after folding the input parameterisation
``x = center + R^T diag(radii) nu`` into the controller's first layer.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib.resources import files

import numpy as np
from scipy.linalg import hadamard

from hitab import bab
from hitab.bab import BabConfig, BabResult
from hitab.certify import BoxSpec
from hitab.errors import InputError
from hitab.io import network_from_dict
from hitab.lipzoo import bundle as compute_bundle
from hitab.net import Network, fold_input_map

MIN_SET_RADIUS = 1e-12
ROTATION_MAX_CONDITION = 1e12


@dataclass(frozen=True)
class LtiSystem:
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    d_vector: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a_matrix, dtype=float))
        b = np.atleast_2d(np.asarray(self.b_matrix, dtype=float))
        d = np.asarray(self.d_vector, dtype=float).reshape(-1)
        n = a.shape[0]
        if a.shape != (n, n):
            raise InputError(f"A must be square, got shape {a.shape}")
        if b.shape[0] != n:
            raise InputError(f"B must have {n} rows, got shape {b.shape}")
        if d.shape[0] != n:
            raise InputError(f"d must have length {n}, got {d.shape[0]}")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)
        object.__setattr__(self, "d_vector", d)

    @property
    def state_dim(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def control_dim(self) -> int:
        return self.b_matrix.shape[1]

    def check_controller(self, net: Network) -> None:
        if net.input_dim != self.state_dim or net.output_dim != self.control_dim:
            raise InputError(
                f"controller maps {net.input_dim} -> {net.output_dim}, "
                f"system needs {self.state_dim} -> {self.control_dim}"
            )

    def step(self, net: Network, x: np.ndarray) -> np.ndarray:
        """Closed-loop successor of each row of ``x``."""
        x = np.atleast_2d(x)
        return x @ self.a_matrix.T + net.outputs(x) @ self.b_matrix.T + self.d_vector


@dataclass(frozen=True)
class RotatedRect:
    """``{x : |diag(radii)^{-1} R (x - center)|_inf <= 1}`` for orthogonal ``R``."""

    rotation: np.ndarray
    center: np.ndarray
    radii: np.ndarray

    def __post_init__(self):
        r = np.atleast_2d(np.asarray(self.rotation, dtype=float))
        c = np.asarray(self.center, dtype=float).reshape(-1)
        rad = np.asarray(self.radii, dtype=float).reshape(-1)
        n = c.shape[0]
        if r.shape != (n, n) or rad.shape[0] != n:
            raise InputError("rotation, center and radii dimensions disagree")
        if np.linalg.norm(r.T @ r - np.eye(n)) > 1e-8:
            raise InputError("rotation matrix is not orthogonal")
        if not np.all(np.isfinite(rad)) or np.any(rad <= 0):
            raise InputError("radii must be positive and finite")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "radii", rad)

    @classmethod
    def axis_aligned(cls, center, radii) -> RotatedRect:
        c = np.asarray(center, dtype=float)
        return cls(np.eye(c.shape[0]), c, radii)

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    @property
    def generator(self) -> np.ndarray:
        """Matrix ``M`` with ``x = center + M nu`` for ``nu`` in the unit box."""
        return self.rotation.T * self.radii

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        x = np.atleast_2d(x)
        scaled = (x - self.center) @ self.rotation.T / self.radii
        return np.all(np.abs(scaled) <= 1.0 + tol, axis=-1)

    def support(self, direction) -> float:
        """``max_{x in set} direction^T x``."""
        u = np.asarray(direction, dtype=float)
        return float(u @ self.center + np.sum(self.radii * np.abs(self.rotation @ u)))

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        nu = rng.uniform(-1.0, 1.0, size=(count, self.dim))
        return self.center + nu @ self.generator.T

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "center": self.center.tolist(),
            "radii": self.radii.tolist(),
        }


@dataclass(frozen=True)
class ReachConfig:
    steps: int = 10
    bab: BabConfig = field(default_factory=lambda: BabConfig(tolerance=1e-2, batch_size=16))
    sample_count: int = 1000
    seed: int = 0
    threads: int = 1
    # "polar": rotation factor of a sampled linear fit; "pca": covariance axes
    rotation_fit: str = "polar"

    def __post_init__(self):
        if self.rotation_fit not in ("polar", "pca"):
            raise InputError(f"unknown rotation_fit {self.rotation_fit!r}")
        if self.steps < 1:
            raise InputError("steps must be at least 1")
        if self.sample_count < 1:
            raise InputError("sample_count must be positive")
        if self.threads < 1:
            raise InputError("threads must be at least 1")


@dataclass
class ReachStep:
    region: RotatedRect
    upper_supports: np.ndarray
    lower_supports: np.ndarray
    results: list[BabResult]
    elapsed: float

    @property
    def nodes(self) -> int:
        return sum(r.nodes_expanded for r in self.results)

    @property
    def converged(self) -> bool:
        return all(r.status is bab.Status.CONVERGED for r in self.results)

    @property
    def max_gap(self) -> float:
        return max(r.gap for r in self.results)


def quadrotor_system(dt: float = 0.1, g: float = 9.81) -> LtiSystem:
    """Discretised 6D quadrotor with state (position, velocity) and input (tan theta, tan phi, tau)."""
    if not dt > 0:
        raise InputError("dt must be positive")
    a = np.eye(6)
    a[:3, 3:] += dt * np.eye(3)
    b = np.zeros((6, 3))
    b[3:, :] = dt * np.diag([g, -g, 1.0])
    d = dt * np.array([0.0, 0.0, 0.0, 0.0, 0.0, -g])
    return LtiSystem(a, b, d)


def closed_loop_objective(sys: LtiSystem, net: Network, c) -> tuple[Network, np.ndarray, float]:
    """Split ``c^T (A x + B u(x) + d)`` into a network part and an affine part.

    Returns ``(net with out_vector B^T c, A^T c, c^T d)``.
    """
    sys.check_controller(net)
    c = np.asarray(c, dtype=float).reshape(-1)
    if c.shape[0] != sys.state_dim:
        raise InputError(f"direction has length {c.shape[0]}, state dimension is {sys.state_dim}")
    return net.with_out_vector(sys.b_matrix.T @ c), sys.a_matrix.T @ c, float(c @ sys.d_vector)


def _symmetric_unit_samples(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples of the unit box, sign-balanced with Hadamard columns.

    Each base sample is repeated with the sign patterns of ``dim`` non-constant
    Hadamard columns, which makes the empirical mean zero and the empirical
    covariance exactly diagonal.
    """
    order = 1
    while order <= dim:
        order *= 2
    signs = hadamard(order)[:, 1 : dim + 1].astype(float)
    base = rng.uniform(-1.0, 1.0, size=(max(1, -(-count // order)), dim))
    return (base[:, None, :] * signs[None, :, :]).reshape(-1, dim)


def fit_rotation(points: np.ndarray) -> np.ndarray:
    """Principal axes of a point cloud as the rows of an orthogonal matrix.

    Falls back to the identity when the covariance is near singular.
    """
    n = points.shape[1]
    cov = np.cov(points, rowvar=False).reshape(n, n)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 0 or evals[-1] / evals[0] > ROTATION_MAX_CONDITION:
        return np.eye(n)
    rot = evecs[:, ::-1].T
    # deterministic sign: largest-magnitude entry of each axis is positive
    idx = np.argmax(np.abs(rot), axis=1)
    rot = rot * np.sign(rot[np.arange(n), idx])[:, None]
    return rot


def fit_rotation_polar(nu: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Rotation aligned with the least-squares linear fit ``points ~ m + L nu``.

    With ``L = U S V^T`` the returned ``R = V U^T`` makes ``R L`` symmetric
    positive semidefinite, so boxes are not re-wrapped into an unrelated frame
    when ``L`` is close to a multiple of a rotation.
    """
    n = points.shape[1]
    design = np.hstack([np.ones((nu.shape[0], 1)), nu])
    coef, *_ = np.linalg.lstsq(design, points, rcond=None)
    lin = coef[1:].T
    u, sv, vt = np.linalg.svd(lin)
    if sv[-1] <= 0 or sv[0] / sv[-1] > ROTATION_MAX_CONDITION:
        return np.eye(n)
    return vt.T @ u.T


def _support_bab(sys: LtiSystem, folded: Network, shift, generator, c, config: BabConfig) -> BabResult:
    net_c, lin, const = closed_loop_objective(sys, folded, c)
    # folded network input is nu; x = shift + generator @ nu
    lin_nu = generator.T @ lin
    const_nu = const + float(lin @ shift)
    n = folded.input_dim
    root = BoxSpec(np.zeros(n), np.ones(n))
    return bab.run(net_c, root, config, affine=(lin_nu, const_nu), lip=compute_bundle(net_c))


def reach_step(sys: LtiSystem, net: Network, region: RotatedRect, cfg: ReachConfig, rng=None) -> ReachStep:
    """One-step outer approximation with per-direction diagnostics."""
    start = time.perf_counter()
    sys.check_controller(net)
    if region.dim != sys.state_dim:
        raise InputError("input set dimension does not match the system")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    gen = region.generator
    folded = fold_input_map(net, region.center, gen)

    nu = _symmetric_unit_samples(cfg.sample_count, region.dim, rng)
    successors = sys.step(net, region.center + nu @ gen.T)
    if cfg.rotation_fit == "pca":
        rot = fit_rotation(successors)
    else:
        rot = fit_rotation_polar(nu, successors)

    directions = [rot[k] for k in range(region.dim)] + [-rot[k] for k in range(region.dim)]

    def solve(c):
        return _support_bab(sys, folded, region.center, gen, c, cfg.bab)

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(solve, directions))
    else:
        results = [solve(c) for c in directions]

    n = region.dim
    upper = np.array([r.upper for r in results[:n]])
    lower = -np.array([r.upper for r in results[n:]])
    center_rot = 0.5 * (upper + lower)
    radii = np.maximum(0.5 * (upper - lower), MIN_SET_RADIUS)
    out = RotatedRect(rot, rot.T @ center_rot, radii)
    return ReachStep(out, upper, lower, results, time.perf_counter() - start)


def step_reach(sys: LtiSystem, net: Network, region: RotatedRect, cfg: ReachConfig) -> RotatedRect:
    return reach_step(sys, net, region, cfg).region


def run_reach(sys: LtiSystem, net: Network, init: RotatedRect, cfg: ReachConfig) -> list[ReachStep]:
    rng = np.random.default_rng(cfg.seed)
    steps = []
    region = init
    for _ in range(cfg.steps):
        step = reach_step(sys, net, region, cfg, rng)
        steps.append(step)
        region = step.region
    return steps


def multi_step(sys: LtiSystem, net: Network, init: RotatedRect, cfg: ReachConfig) -> list[RotatedRect]:
    return [s.region for s in run_reach(sys, net, init, cfg)]


def simulate(sys: LtiSystem, net: Network, init: RotatedRect, count: int, steps: int, rng) -> np.ndarray:
    """Closed-loop trajectories from uniform samples of ``init``; shape ``(count, steps + 1, n)``."""
    x = init.sample(count, rng)
    traj = [x]
    for _ in range(steps):
        x = sys.step(net, x)
        traj.append(x)
    return np.stack(traj, axis=1)


def containment(steps: list[RotatedRect], traj: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Boolean matrix ``[trajectory, step]``: is state ``k + 1`` inside set ``k``."""
    return np.stack([s.contains(traj[:, k + 1], tol) for k, s in enumerate(steps)], axis=1)


def obstacle_safe(region: RotatedRect, center, radius: float) -> bool:
    """True if a separating hyperplane certifies the set misses the ball.

    The ball lives in the leading ``len(center)`` state coordinates. Candidate
    normals are the direction from the set center to the obstacle and the
    set's own axes; each is checked with the rectangle's support function.
    """
    o = np.asarray(center, dtype=float)
    k = o.shape[0]
    cands = []
    toward = o - region.center[:k]
    if np.linalg.norm(toward) > 0:
        cands.append(toward)
    for row in region.rotation:
        if np.linalg.norm(row[:k]) > 0:
            cands.extend([row[:k], -row[:k]])
    for u in cands:
        u = u / np.linalg.norm(u)
        full = np.zeros(region.dim)
        full[:k] = u
        if region.support(full) < float(u @ o) - radius:
            return True
    return False


def bundled_controller() -> Network:
    """The packaged 6x32x32x3 tanh quadrotor controller (fixed-seed random weights)."""
    doc = json.loads(files("hitab").joinpath("data/quadrotor_controller.json").read_text())
    return network_from_dict(doc)
