"""Graded time meshes, step ratios, and offset evaluation points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class MeshError(ValueError):
    """Raised when a mesh specification or node array is invalid."""


@dataclass(frozen=True)
class MeshSpec:
    """Parameters of a graded temporal mesh on [0, T].

    horizon: final time T > 0
    levels:  number of time levels K >= 1
    grading: grading exponent gamma >= 1 (1 = uniform)
    alpha:   fractional order in (0, 1); fixes the offset theta = alpha/2
    """

    horizon: float
    levels: int
    grading: float
    alpha: float

    def validate(self) -> None:
        if not self.horizon > 0:
            raise MeshError(f"horizon must be > 0, got {self.horizon}")
        if self.levels < 1:
            raise MeshError(f"levels must be >= 1, got {self.levels}")
        if self.grading < 1:
            raise MeshError(f"grading must be >= 1, got {self.grading}")
        if not 0 < self.alpha < 1:
            raise MeshError(f"alpha must lie in (0, 1), got {self.alpha}")


@dataclass(frozen=True)
class TimeMesh:
    """Nonuniform time mesh with cached steps, ratios and offset points.

    nodes[k] = t_k for k = 0..K, steps[k-1] = tau_k = t_k - t_{k-1},
    ratios[k-1] = rho_k = tau_k / tau_{k+1}, and
    offsets[k-1] = t_{k-theta} = theta*t_{k-1} + (1-theta)*t_k.

    Immutable after construction; safe to share across workers.
    """

    alpha: float
    nodes: np.ndarray
    steps: np.ndarray = field(init=False)
    ratios: np.ndarray = field(init=False)
    theta: float = field(init=False)
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise MeshError("nodes must be a 1-d array with at least two entries")
        if nodes[0] != 0.0:
            raise MeshError(f"nodes must start at t_0 = 0, got {nodes[0]}")
        steps = np.diff(nodes)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 1
            raise MeshError(f"nodes must be strictly increasing; step {bad} is <= 0")
        if not 0 < self.alpha < 1:
            raise MeshError(f"alpha must lie in (0, 1), got {self.alpha}")
        theta = self.alpha / 2.0
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "ratios", steps[:-1] / steps[1:])
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "offsets", theta * nodes[:-1] + (1 - theta) * nodes[1:])
        nodes.setflags(write=False)
        steps.setflags(write=False)

    @property
    def levels(self) -> int:
        return self.nodes.size - 1

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    def offset(self, k: int) -> float:
        """Offset point t_{k-theta} for level 1 <= k <= K."""
        if not 1 <= k <= self.levels:
            raise IndexError(f"level {k} out of range 1..{self.levels}")
        return float(self.offsets[k - 1])

    def __hash__(self):
        return hash((self.alpha, self.nodes.tobytes()))

    def __eq__(self, other):
        return (
            isinstance(other, TimeMesh)
            and self.alpha == other.alpha
            and np.array_equal(self.nodes, other.nodes)
        )


def build_graded_mesh(spec: MeshSpec) -> TimeMesh:
    """Build t_k = T*(k/K)^gamma.

    Nodes are evaluated directly from the power law rather than accumulated
    from steps, so node placement is exact up to rounding.
    """
    spec.validate()
    k = np.arange(spec.levels + 1, dtype=float)
    nodes = spec.horizon * (k / spec.levels) ** spec.grading
    nodes[-1] = spec.horizon
    return TimeMesh(alpha=spec.alpha, nodes=nodes)


def check_m1(mesh: TimeMesh, rtol: float = 1e-12) -> bool:
    """True iff the maximum step ratio max_k tau_k/tau_{k+1} <= 3/2."""
    if mesh.ratios.size == 0:
        return True
    return bool(np.max(mesh.ratios) <= 1.5 * (1.0 + rtol))


def check_m2(mesh: TimeMesh, gamma: float, cap: float = 100.0) -> tuple[bool, float, float]:
    """Measure the smallest mesh-regularity constants C1, C2.

    C1 is the smallest constant with tau_n <= tau * C1 * t_n^(1-1/gamma) for
    all n, and C2 the smallest with t_n <= C2 * t_{n-1} for n >= 2.  Returns
    (ok, C1, C2) where ok means both constants are finite and <= cap.
    """
    tau = float(np.max(mesh.steps))
    t = mesh.nodes[1:]
    with np.errstate(divide="ignore"):
        c1 = float(np.max(mesh.steps / (tau * t ** (1.0 - 1.0 / gamma))))
    if mesh.levels >= 2:
        c2 = float(np.max(mesh.nodes[2:] / mesh.nodes[1:-1]))
    else:
        c2 = 1.0
    ok = np.isfinite(c1) and np.isfinite(c2) and c1 <= cap and c2 <= cap
    return bool(ok), c1, c2
