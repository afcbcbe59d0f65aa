"""Certified Lipschitz constants of a network, its gradient and its Hessian.

Constants are propagated layer by layer. For layer ``I`` with map
``F^I(x) = sigma(W^I x + b^I)`` we track

* ``lip_value``     -- Lipschitz constant of ``a^I``,
* ``lip_jac``       -- Lipschitz constant of the Jacobian ``Da^I``,
* ``lip_jac_rows``  -- Lipschitz constants of each ``grad a_j^I``,
* ``lip_hess_rows`` -- Lipschitz constants of each ``Hess a_j^I``.

The Hessian rows follow the composition rule

    L_hess(a_j^I) = L_hess(F_j) L_a^3 + 2 L_Da L_a L_grad(F_j)
                    + sum_i ( L(d_i F_j) L_a L_Da_i + L_hess(a_i^{I-1}) sup|d_i F_j| ).

The last two layers can be merged into the scalar map
``F_hat(x) = c^T W^L sigma(W^{L-1} x + b^{L-1}) + c^T b^L`` which usually
gives a tighter end-to-end constant; :func:`bundle` evaluates both routes
and keeps the smaller Hessian constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse.linalg import svds

from hitab.errors import InputError
from hitab.net import IDENTITY, Layer, Network

DENSE_SVD_LIMIT = 512


def spectral_norm(w: np.ndarray, margin: float = 1e-6) -> float:
    """Largest singular value of ``w``, rounded up for soundness.

    A dense SVD is used whenever the smaller side is at most 512; its cost
    scales with that side. Larger matrices use a Lanczos solver run to
    machine precision, with an absolute ``margin`` plus a small relative
    slack added to the estimate.
    """
    w = np.asarray(w, dtype=float)
    if w.size == 0:
        return 0.0
    if min(w.shape) <= DENSE_SVD_LIMIT:
        return float(np.linalg.norm(w, 2))
    v0 = np.random.default_rng(0).normal(size=min(w.shape))
    sigma = float(svds(w, k=1, tol=0, v0=v0, return_singular_vectors=False)[0])
    return sigma * (1.0 + 1e-10) + margin


@dataclass(frozen=True)
class LayerConstants:
    lip_value: float
    lip_jac: float
    lip_jac_rows: np.ndarray
    lip_hess_rows: np.ndarray

    @classmethod
    def input_layer(cls, dim: int) -> LayerConstants:
        """Base case ``a^0(x) = x``."""
        return cls(1.0, 0.0, np.zeros(dim), np.zeros(dim))

    @property
    def width(self) -> int:
        return self.lip_jac_rows.shape[0]


@dataclass(frozen=True)
class TailCoupling:
    """Constants of the merged final two layers ``F_hat``."""

    matrix_a: np.ndarray
    sup_partials: np.ndarray
    lip_partials: np.ndarray
    lip_grad_tail: float
    lip_hess_tail: float
    sup_grad_norm: float


@dataclass(frozen=True)
class LipschitzBundle:
    """End-to-end constants ``L_f``, ``L_grad f``, ``L_hess f`` plus per-layer intermediates.

    ``per_layer[I]`` holds the constants of ``a^I`` for ``I = 0 .. L-2``.
    """

    per_layer: tuple[LayerConstants, ...]
    lip_f: float
    lip_grad: float
    lip_hess: float
    lip_hess_tail: float = float("nan")
    lip_hess_chain: float = float("nan")

    def with_affine(self, linear) -> LipschitzBundle:
        """Constants of ``f(x) + linear^T x + const``; only ``L_f`` changes."""
        extra = float(np.linalg.norm(np.asarray(linear, dtype=float)))
        return LipschitzBundle(
            self.per_layer, self.lip_f + extra, self.lip_grad, self.lip_hess, self.lip_hess_tail, self.lip_hess_chain
        )

    def to_dict(self) -> dict:
        return {
            "lip_f": self.lip_f,
            "lip_grad": self.lip_grad,
            "lip_hess": self.lip_hess,
            "lip_hess_tail": self.lip_hess_tail,
            "lip_hess_chain": self.lip_hess_chain,
            "per_layer": [
                {
                    "lip_value": c.lip_value,
                    "lip_jac": c.lip_jac,
                    "lip_jac_rows": c.lip_jac_rows.tolist(),
                    "lip_hess_rows": c.lip_hess_rows.tolist(),
                }
                for c in self.per_layer
            ],
        }


def layer_local_constants(layer: Layer, j: int) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Constants of the coordinate map ``F_j(x) = sigma(W_j x + b_j)``.

    Returns ``(sup|d_i F_j|, L(d_i F_j), L(grad F_j), L(hess F_j))`` where
    the first two are vectors over the input index ``i``.
    """
    w = layer.weights
    if not 0 <= j < w.shape[0]:
        raise InputError(f"neuron index {j} out of range for layer with {w.shape[0]} neurons")
    act = layer.activation
    row = w[j]
    abs_row = np.abs(row)
    norm = float(np.linalg.norm(row))
    return (
        act.lip_value * abs_row,
        act.lip_deriv1 * norm * abs_row,
        act.lip_deriv1 * norm**2,
        act.lip_deriv2 * norm**3,
    )


def _hessian_rule(
    prev: LayerConstants,
    lip_hess_f: np.ndarray,
    lip_grad_f: np.ndarray,
    lip_partials: np.ndarray,
    sup_partials: np.ndarray,
) -> np.ndarray:
    """Hessian-Lipschitz constants of ``F_j o a^{I-1}`` for every output ``j``.

    ``lip_partials`` and ``sup_partials`` are matrices indexed ``[j, i]``.
    """
    la = prev.lip_value
    return (
        lip_hess_f * la**3
        + 2.0 * prev.lip_jac * la * lip_grad_f
        + la * (lip_partials @ prev.lip_jac_rows)
        + sup_partials @ prev.lip_hess_rows
    )


def propagate_layer(prev: LayerConstants, layer: Layer, lip_value: float | None = None) -> LayerConstants:
    """Constants of ``a^I = F^I o a^{I-1}`` from those of ``a^{I-1}``.

    ``lip_value`` overrides the spectral-product estimate of ``L_{a^I}``
    when a tighter certified value is available.
    """
    w = layer.weights
    if prev.width != w.shape[1]:
        raise InputError(f"layer expects input width {w.shape[1]}, constants have width {prev.width}")
    act = layer.activation
    abs_w = np.abs(w)
    rows = np.linalg.norm(w, axis=1)
    s = spectral_norm(w)
    la = prev.lip_value

    value = act.lip_value * s * la if lip_value is None else float(lip_value)
    jac = act.lip_deriv1 * s**2 * la**2 + act.lip_value * s * prev.lip_jac
    jac_rows = act.lip_deriv1 * rows**2 * la**2 + act.lip_value * rows * prev.lip_jac
    hess_rows = _hessian_rule(
        prev,
        lip_hess_f=act.lip_deriv2 * rows**3,
        lip_grad_f=act.lip_deriv1 * rows**2,
        lip_partials=act.lip_deriv1 * rows[:, None] * abs_w,
        sup_partials=act.lip_value * abs_w,
    )
    return LayerConstants(float(value), float(jac), jac_rows, hess_rows)


def tail_constants(net: Network) -> TailCoupling:
    """Constants of ``F_hat(x) = c^T W^L sigma(W^{L-1} x + b^{L-1}) + c^T b^L``."""
    if len(net.layers) < 2:
        raise InputError("tail construction needs at least two layers")
    penult, last = net.layers[-2], net.layers[-1]
    act = penult.activation
    w = penult.weights
    u = last.weights.T @ net.out_vector
    a = w.T * u  # (W^{L-1})^T Diag(c^T W^L)
    abs_a = np.abs(a)
    rows = np.linalg.norm(w, axis=1)
    norm_a = spectral_norm(a)
    norm_w = spectral_norm(w)
    max_row = float(rows.max()) if rows.size else 0.0
    return TailCoupling(
        matrix_a=a,
        sup_partials=act.lip_value * abs_a.sum(axis=1),
        lip_partials=act.lip_deriv1 * (abs_a @ rows),
        lip_grad_tail=act.lip_deriv1 * norm_a * norm_w,
        lip_hess_tail=act.lip_deriv2 * norm_a * norm_w * max_row,
        sup_grad_norm=act.lip_value * norm_w * float(np.linalg.norm(u)),
    )


def bundle(net: Network, lip_values: Sequence[float] | None = None) -> LipschitzBundle:
    """Assemble the end-to-end constants of ``f``.

    ``lip_values`` optionally supplies certified ``L_{a^I}`` for the hidden
    layers ``I = 1 .. L-1`` (e.g. from a tighter external estimator).
    """
    hidden = net.layers[:-1]
    if lip_values is not None and len(lip_values) != len(hidden):
        raise InputError(f"expected {len(hidden)} per-layer Lipschitz overrides, got {len(lip_values)}")
    consts = [LayerConstants.input_layer(net.input_dim)]
    for k, layer in enumerate(hidden):
        override = None if lip_values is None else lip_values[k]
        consts.append(propagate_layer(consts[-1], layer, override))
    before_tail = consts[-2]  # a^{L-2}
    last_hidden = consts[-1]  # a^{L-1}

    u = net.layers[-1].weights.T @ net.out_vector
    lip_f = float(np.linalg.norm(u)) * last_hidden.lip_value

    tail = tail_constants(net)
    la = before_tail.lip_value
    lip_grad = tail.lip_grad_tail * la**2 + tail.sup_grad_norm * before_tail.lip_jac
    hess_tail = float(
        _hessian_rule(
            before_tail,
            lip_hess_f=np.array([tail.lip_hess_tail]),
            lip_grad_f=np.array([tail.lip_grad_tail]),
            lip_partials=tail.lip_partials[None, :],
            sup_partials=tail.sup_partials[None, :],
        )[0]
    )
    folded = Layer(u[None, :], np.zeros(1), IDENTITY)
    hess_chain = float(propagate_layer(last_hidden, folded).lip_hess_rows[0])

    return LipschitzBundle(
        per_layer=tuple(consts[:-1]),
        lip_f=lip_f,
        lip_grad=float(lip_grad),
        lip_hess=min(hess_tail, hess_chain),
        lip_hess_tail=hess_tail,
        lip_hess_chain=hess_chain,
    )
