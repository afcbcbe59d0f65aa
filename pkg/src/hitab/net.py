"""Smooth fully connected networks and their exact local derivatives.

A :class:`Network` represents ``f(x) = c^T z^L(x)`` where

    z^I = W^I a^{I-1} + b^I,    a^I = sigma(z^I),    a^0 = x,

and the final layer is affine. Gradients and Hessians are propagated
forward through the layers with the chain rule, so they are exact up to
floating-point rounding.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from hitab.errors import InputError, NumericError


class ActivationKind(str, enum.Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


def _tanh_derivs(z: np.ndarray, order: int) -> list[np.ndarray]:
    t = np.tanh(z)
    out = [t]
    if order >= 1:
        d1 = 1.0 - t * t
        out.append(d1)
    if order >= 2:
        out.append(-2.0 * t * d1)
    if order >= 3:
        out.append(-2.0 * d1 * (1.0 - 3.0 * t * t))
    return out


def _sigmoid_derivs(z: np.ndarray, order: int) -> list[np.ndarray]:
    # exp(-|z|) form avoids overflow for large negative z
    e = np.exp(-np.abs(z))
    s = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = [s]
    if order >= 1:
        d1 = s * (1.0 - s)
        out.append(d1)
    if order >= 2:
        out.append(d1 * (1.0 - 2.0 * s))
    if order >= 3:
        out.append(d1 * (1.0 - 6.0 * s + 6.0 * s * s))
    return out


def _identity_derivs(z: np.ndarray, order: int) -> list[np.ndarray]:
    out = [np.array(z, dtype=float, copy=True)]
    if order >= 1:
        out.append(np.ones_like(z, dtype=float))
    for _ in range(2, order + 1):
        out.append(np.zeros_like(z, dtype=float))
    return out


@dataclass(frozen=True)
class ActivationProfile:
    """An elementwise activation with certified Lipschitz constants.

    ``lip_value``, ``lip_deriv1`` and ``lip_deriv2`` are upper bounds on
    ``sup|sigma'|``, ``sup|sigma''|`` and ``sup|sigma'''|``, i.e. the
    Lipschitz constants of sigma, sigma' and sigma''.
    """

    kind: ActivationKind
    lip_value: float
    lip_deriv1: float
    lip_deriv2: float
    _derivs: Callable[[np.ndarray, int], list[np.ndarray]] = field(repr=False, compare=False)

    def derivatives(self, z: np.ndarray, order: int = 2) -> list[np.ndarray]:
        """Return ``[sigma(z), sigma'(z), ..., sigma^(order)(z)]`` for ``order <= 3``."""
        return self._derivs(np.asarray(z, dtype=float), order)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.derivatives(z, 0)[0]


TANH = ActivationProfile(
    ActivationKind.TANH,
    lip_value=1.0,
    lip_deriv1=4.0 / (3.0 * math.sqrt(3.0)),
    lip_deriv2=2.0,
    _derivs=_tanh_derivs,
)
# sup|sigma''| = sqrt(3)/18 and sup|sigma'''| = 1/8, rounded up at the 6th decimal
SIGMOID = ActivationProfile(
    ActivationKind.SIGMOID,
    lip_value=0.25,
    lip_deriv1=0.096226,
    lip_deriv2=0.125,
    _derivs=_sigmoid_derivs,
)
IDENTITY = ActivationProfile(
    ActivationKind.IDENTITY,
    lip_value=1.0,
    lip_deriv1=0.0,
    lip_deriv2=0.0,
    _derivs=_identity_derivs,
)

_PROFILES = {p.kind: p for p in (TANH, SIGMOID, IDENTITY)}


def activation(kind: str | ActivationKind) -> ActivationProfile:
    """Look up the profile for an activation name such as ``"tanh"``."""
    try:
        return _PROFILES[ActivationKind(kind)]
    except ValueError:
        raise InputError(f"unknown activation {kind!r}; expected one of tanh, sigmoid, identity") from None


@dataclass(frozen=True)
class Layer:
    weights: np.ndarray
    bias: np.ndarray
    activation: ActivationProfile = TANH

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        b = np.array(self.bias, dtype=float).reshape(-1)
        if w.ndim != 2:
            raise InputError(f"weights must be a matrix, got shape {w.shape}")
        if b.shape[0] != w.shape[0]:
            raise InputError(f"bias length {b.shape[0]} does not match weight rows {w.shape[0]}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise InputError("layer contains non-finite entries")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class Network:
    """Scalar network ``f(x) = out_vector^T z^L(x)``.

    The last layer must use the identity activation and at least one hidden
    layer is required.
    """

    layers: tuple[Layer, ...]
    out_vector: np.ndarray

    def __post_init__(self):
        layers = tuple(self.layers)
        if len(layers) < 2:
            raise InputError("network needs at least one hidden layer and a final affine layer")
        for k in range(1, len(layers)):
            if layers[k].in_dim != layers[k - 1].out_dim:
                raise InputError(
                    f"layer {k} expects input width {layers[k].in_dim}, "
                    f"previous layer has width {layers[k - 1].out_dim}"
                )
        if layers[-1].activation.kind is not ActivationKind.IDENTITY:
            raise InputError("final layer must use the identity activation")
        c = np.array(self.out_vector, dtype=float).reshape(-1)
        if c.shape[0] != layers[-1].out_dim:
            raise InputError(f"out_vector length {c.shape[0]} does not match output width {layers[-1].out_dim}")
        if not np.all(np.isfinite(c)):
            raise InputError("out_vector contains non-finite entries")
        c.setflags(write=False)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "out_vector", c)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    def with_out_vector(self, c: np.ndarray) -> Network:
        return Network(self.layers, c)

    def _check_points(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        xs = np.atleast_2d(x)
        if xs.ndim != 2 or xs.shape[1] != self.input_dim:
            raise InputError(f"expected input of width {self.input_dim}, got shape {x.shape}")
        return xs, single

    def outputs(self, x) -> np.ndarray:
        """Vector output ``z^L(x)``; accepts a point or a batch of rows."""
        xs, single = self._check_points(x)
        a = xs
        for layer in self.layers:
            a = layer.activation(a @ layer.weights.T + layer.bias)
        return a[0] if single else a

    def __call__(self, x):
        """Scalar output ``c^T z^L(x)``; accepts a point or a batch of rows."""
        out = self.outputs(x) @ self.out_vector
        return float(out) if np.ndim(out) == 0 else out

    def derivatives(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched value, gradient and Hessian of ``f`` at the rows of ``x``."""
        xs, _ = self._check_points(x)
        batch, n = xs.shape
        a = xs
        jac = None  # da/dx, shape (B, width, n); None means identity
        hess = None  # d2a/dx2, shape (B, width, n, n); None means zero
        for layer in self.layers[:-1]:
            w = layer.weights
            z = a @ w.T + layer.bias
            if jac is None:
                jz = np.broadcast_to(w, (batch,) + w.shape)
            else:
                jz = np.einsum("ji,bin->bjn", w, jac)
            hz = None if hess is None else np.einsum("ji,bimn->bjmn", w, hess)
            s0, s1, s2 = layer.activation.derivatives(z, 2)
            a = s0
            new_hess = s2[..., None, None] * jz[..., :, None] * jz[..., None, :]
            if hz is not None:
                new_hess = new_hess + s1[..., None, None] * hz
            jac = s1[..., None] * jz
            hess = new_hess
        last = self.layers[-1]
        u = last.weights.T @ self.out_vector
        value = a @ u + float(last.bias @ self.out_vector)
        grad = np.einsum("j,bjn->bn", u, jac)
        h = np.einsum("j,bjmn->bmn", u, hess)
        h = 0.5 * (h + np.swapaxes(h, -1, -2))
        if not (np.all(np.isfinite(value)) and np.all(np.isfinite(grad)) and np.all(np.isfinite(h))):
            raise NumericError("non-finite value in network derivatives")
        return value, grad, h


@dataclass(frozen=True)
class LocalModel:
    """Value, gradient and Hessian of ``f`` at ``center``."""

    center: np.ndarray
    value: float
    gradient: np.ndarray
    hessian: np.ndarray

    def shifted(self, linear: np.ndarray, offset: float) -> LocalModel:
        """Model of ``f(x) + linear^T x + offset`` at the same center."""
        linear = np.asarray(linear, dtype=float)
        return LocalModel(
            self.center,
            self.value + float(linear @ self.center) + offset,
            self.gradient + linear,
            self.hessian,
        )


def local_model(net: Network, x_c) -> LocalModel:
    x_c = np.asarray(x_c, dtype=float)
    if x_c.ndim != 1:
        raise InputError("center must be a vector")
    value, grad, hess = net.derivatives(x_c[None, :])
    return LocalModel(x_c.copy(), float(value[0]), grad[0], hess[0])


def fold_input_map(net: Network, shift, linear) -> Network:
    """Return ``g`` with ``g(y) = f(shift + linear @ y)``."""
    shift = np.asarray(shift, dtype=float).reshape(-1)
    linear = np.atleast_2d(np.asarray(linear, dtype=float))
    first = net.layers[0]
    if shift.shape[0] != net.input_dim or linear.shape[0] != net.input_dim:
        raise InputError(
            f"fold expects shift of length {net.input_dim} and a matrix with {net.input_dim} rows, "
            f"got {shift.shape} and {linear.shape}"
        )
    folded = Layer(first.weights @ linear, first.weights @ shift + first.bias, first.activation)
    return Network((folded,) + net.layers[1:], net.out_vector)


def random_network(
    widths: Sequence[int],
    rng: np.random.Generator,
    act: ActivationProfile = TANH,
    scale: float = 1.0,
    out_vector=None,
) -> Network:
    """Gaussian-initialised network with layer widths ``widths[0] -> ... -> widths[-1]``.

    Weights are drawn with standard deviation ``scale / sqrt(fan_in)``.
    """
    layers = []
    for k in range(len(widths) - 1):
        fan_in, fan_out = widths[k], widths[k + 1]
        w = rng.normal(scale=scale / math.sqrt(fan_in), size=(fan_out, fan_in))
        b = rng.normal(scale=0.1 * scale, size=fan_out)
        layers.append(Layer(w, b, act if k < len(widths) - 2 else IDENTITY))
    c = np.ones(widths[-1]) if out_vector is None else out_vector
    return Network(tuple(layers), c)
