"""Certified reachability bounds for smooth fully connected networks.

The toolkit bounds ``max f(x)`` over l2 balls and axis-aligned boxes using
zeroth-, first- and second-order Taylor certificates, where the cubic
remainder is controlled by a compositional bound on the Lipschitz constant
of the network Hessian.
"""

from hitab.errors import HitabError, InputError, NumericError
from hitab.net import (
    IDENTITY,
    SIGMOID,
    TANH,
    ActivationKind,
    ActivationProfile,
    Layer,
    LocalModel,
    Network,
    fold_input_map,
    local_model,
)
from hitab.lipzoo import LayerConstants, LipschitzBundle, TailCoupling, bundle
from hitab.certify import BallSpec, BoxSpec, Certificate, bound_ball, bound_box
from hitab.bab import BabConfig, BabResult, run as run_bab
from hitab.reach import LtiSystem, ReachConfig, RotatedRect, multi_step, quadrotor_system

__version__ = "0.1.0"

__all__ = [
    "HitabError",
    "InputError",
    "NumericError",
    "ActivationKind",
    "ActivationProfile",
    "TANH",
    "SIGMOID",
    "IDENTITY",
    "Layer",
    "Network",
    "LocalModel",
    "local_model",
    "fold_input_map",
    "LayerConstants",
    "LipschitzBundle",
    "TailCoupling",
    "bundle",
    "BallSpec",
    "BoxSpec",
    "Certificate",
    "bound_ball",
    "bound_box",
    "BabConfig",
    "BabResult",
    "run_bab",
    "LtiSystem",
    "ReachConfig",
    "RotatedRect",
    "multi_step",
    "quadrotor_system",
]
