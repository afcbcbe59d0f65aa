"""Branch and bound over boxes using the combined Taylor certificate.

The frontier is a max-heap keyed by node upper bound. Each iteration pops
the most promising nodes, bisects them along their widest axis and bounds
the children. The certified global upper bound is the largest bound among
live and retired nodes; the lower bound is the best objective value seen at
a feasible point (node centers and linearised maximisers).
"""

from __future__ import annotations

import enum
import heapq
import json
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from hitab.certify import BoxSpec, box_bounds
from hitab.errors import InputError
from hitab.lipzoo import LipschitzBundle, bundle as compute_bundle
from hitab.net import Network

MIN_RADIUS = 1e-9


class BoundMode(str, enum.Enum):
    COMBINED = "combined"
    ZEROTH = "zeroth"
    FIRST = "first"
    SECOND = "second"


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    NODE_BUDGET = "NodeBudget"
    TIME_BUDGET = "TimeBudget"
    # every live box hit the minimum radius before the gap closed
    RESOLUTION_LIMIT = "ResolutionLimit"


@dataclass(frozen=True)
class BabConfig:
    tolerance: float = 1e-3
    max_nodes: int = 1_000_000
    max_seconds: float = 3600.0
    bound_mode: BoundMode = BoundMode.COMBINED
    # nodes popped per iteration; children are bounded in one vectorised call
    batch_size: int = 1

    def __post_init__(self):
        if not self.tolerance > 0:
            raise InputError("tolerance must be positive")
        if self.max_nodes < 1:
            raise InputError("max_nodes must be at least 1")
        if not self.max_seconds > 0:
            raise InputError("max_seconds must be positive")
        if self.batch_size < 1:
            raise InputError("batch_size must be at least 1")
        object.__setattr__(self, "bound_mode", BoundMode(self.bound_mode))


@dataclass
class BabNode:
    region: BoxSpec
    upper: float
    lower_witness: float = -np.inf
    depth: int = 0


@dataclass
class BabResult:
    upper: float
    lower: float
    gap: float
    nodes_expanded: int
    elapsed: float
    status: Status
    argmax: np.ndarray = field(repr=False, default=None)
    iterations: int = 0

    def to_dict(self, timing: bool = False) -> dict:
        out = {
            "status": self.status.value,
            "upper": self.upper,
            "lower": self.lower,
            "gap": self.gap,
            "nodes_expanded": self.nodes_expanded,
            "iterations": self.iterations,
            "argmax": None if self.argmax is None else self.argmax.tolist(),
        }
        if timing:
            out["elapsed"] = self.elapsed
        return out


def split(node: BabNode) -> tuple[BabNode, BabNode]:
    """Bisect along the widest axis (lowest index on ties).

    Children inherit the parent's upper bound, which stays valid on each half.
    """
    box = node.region
    axis = int(np.argmax(box.radii))
    radii = box.radii.copy()
    radii[axis] *= 0.5
    offset = np.zeros_like(radii)
    offset[axis] = radii[axis]
    return (
        BabNode(BoxSpec(box.center - offset, radii), node.upper, depth=node.depth + 1),
        BabNode(BoxSpec(box.center + offset, radii), node.upper, depth=node.depth + 1),
    )


class _Objective:
    """``f(x) = net(x) + linear^T x + offset`` evaluated in batches."""

    def __init__(self, net: Network, linear=None, offset: float = 0.0):
        self.net = net
        self.linear = np.zeros(net.input_dim) if linear is None else np.asarray(linear, dtype=float)
        self.offset = float(offset)

    def values(self, xs: np.ndarray) -> np.ndarray:
        return self.net(xs) + xs @ self.linear + self.offset

    def derivatives(self, xs: np.ndarray):
        v, g, h = self.net.derivatives(xs)
        return v + xs @ self.linear + self.offset, g + self.linear, h


def _select(mode: BoundMode, b0, b1, b2) -> np.ndarray:
    if mode is BoundMode.ZEROTH:
        return b0
    if mode is BoundMode.FIRST:
        return b1
    if mode is BoundMode.SECOND:
        return b2
    return np.minimum(np.minimum(b0, b1), b2)


def run(
    net: Network,
    root: BoxSpec,
    config: BabConfig = BabConfig(),
    affine: Optional[tuple[Sequence[float], float]] = None,
    lip: Optional[LipschitzBundle] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> BabResult:
    """Certify ``max f`` over ``root`` to within ``config.tolerance``.

    ``affine = (g, k)`` adds ``g^T x + k`` to the network output. ``lip``
    may supply precomputed constants for the network part; they are
    computed once here otherwise. ``progress`` receives one record per
    iteration.
    """
    start = time.perf_counter()
    if root.center.shape[0] != net.input_dim:
        raise InputError(f"root box has dimension {root.center.shape[0]}, network expects {net.input_dim}")
    linear, offset = (None, 0.0) if affine is None else affine
    obj = _Objective(net, linear, offset)
    lip = compute_bundle(net) if lip is None else lip
    if affine is not None:
        lip = lip.with_affine(obj.linear)
    tol = config.tolerance
    mode = config.bound_mode

    best = {"value": -np.inf, "point": None}

    def bound_nodes(nodes: list[BabNode]) -> None:
        centers = np.stack([nd.region.center for nd in nodes])
        radii = np.stack([nd.region.radii for nd in nodes])
        values, grads, hess = obj.derivatives(centers)
        b0, b1, b2, _ = box_bounds(values, grads, hess, radii, lip)
        uppers = _select(mode, b0, b1, b2)
        # maximiser of the linear model over each box is another feasible point
        vertices = centers + radii * np.sign(grads)
        vvals = obj.values(vertices)
        for k, nd in enumerate(nodes):
            nd.upper = min(nd.upper, float(uppers[k]))
            if vvals[k] > values[k]:
                nd.lower_witness, point = float(vvals[k]), vertices[k]
            else:
                nd.lower_witness, point = float(values[k]), centers[k]
            if nd.lower_witness > best["value"]:
                best["value"], best["point"] = nd.lower_witness, point.copy()

    root_node = BabNode(root, np.inf)
    bound_nodes([root_node])
    nodes_bounded = 1
    heap: list[tuple[float, int, BabNode]] = [(-root_node.upper, 0, root_node)]
    counter = 1
    retired_upper = -np.inf
    iterations = 0

    def global_upper() -> float:
        top = -heap[0][0] if heap else -np.inf
        return max(top, retired_upper)

    while True:
        upper = global_upper()
        lower = best["value"]
        gap = max(upper - lower, 0.0)
        if progress is not None:
            progress({"iteration": iterations, "upper": upper, "lower": lower, "gap": gap, "frontier_size": len(heap)})
        if gap <= tol:
            status = Status.CONVERGED
            break
        if not heap:
            status = Status.RESOLUTION_LIMIT
            break
        if nodes_bounded + 2 > config.max_nodes:
            status = Status.NODE_BUDGET
            break
        if time.perf_counter() - start > config.max_seconds:
            status = Status.TIME_BUDGET
            break

        room = (config.max_nodes - nodes_bounded) // 2
        children: list[BabNode] = []
        for _ in range(min(config.batch_size, room)):
            if not heap:
                break
            neg_up, _, node = heap[0]
            if -neg_up <= best["value"] + tol:
                break
            heapq.heappop(heap)
            if node.region.radii.max() < MIN_RADIUS:
                retired_upper = max(retired_upper, node.upper)
                continue
            children.extend(split(node))
        if children:
            bound_nodes(children)
            nodes_bounded += len(children)
            for ch in children:
                if ch.upper <= best["value"] + tol:
                    retired_upper = max(retired_upper, ch.upper)
                else:
                    heapq.heappush(heap, (-ch.upper, counter, ch))
                    counter += 1
        iterations += 1

    upper = global_upper()
    lower = best["value"]
    return BabResult(
        upper=float(upper),
        lower=float(lower),
        gap=float(max(upper - lower, 0.0)),
        nodes_expanded=nodes_bounded,
        elapsed=time.perf_counter() - start,
        status=status,
        argmax=best["point"],
        iterations=iterations,
    )


def json_progress(stream) -> Callable[[dict], None]:
    """Progress callback writing one JSON line per record to ``stream``."""

    def emit(record: dict) -> None:
        stream.write(json.dumps(record) + "\n")

    return emit
