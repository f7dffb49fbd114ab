"""Trial functions, collocation data, stage windows and loss assembly.

The residual loss couples the accelerated Caputo evaluation in time with
network jets in space.  Because the fast scheme is linear in the node
values, its action is materialized once per (mesh, soe) pair as a weight
matrix (built by running the history recursion on identity columns); a loss
evaluation is then one matmul over the recorded node values plus the
pointwise operator algebra at the offset states.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .mesh import TimeMesh
from .network import Jet, Network, forward_jet
from .problems import ProblemSpec
from .soe import SoeApprox, fast_series


@dataclass(frozen=True)
class BoxMask:
    """Polynomial boundary mask on an axis-aligned box, normalized to 1 at center.

    rho(x) = prod_i (x_i - lo_i)(hi_i - x_i)/((hi_i - lo_i)/2)^2 vanishes on
    every face and carries analytic first/second derivatives.
    """

    box: tuple

    def factors(self, x: np.ndarray):
        vals, d1, d2 = [], [], []
        for i, (lo, hi) in enumerate(self.box):
            c2 = ((hi - lo) / 2.0) ** 2
            vals.append((x[i] - lo) * (hi - x[i]) / c2)
            d1.append((lo + hi - 2.0 * x[i]) / c2)
            d2.append(np.full_like(x[i], -2.0 / c2))
        return vals, d1, d2

    def eval(self, x: np.ndarray):
        """(rho, [d rho/dx_i], [d2 rho/dx_i2]) at points x of shape (dim, N)."""
        vals, d1, d2 = self.factors(x)
        rho = np.prod(vals, axis=0)
        drho, ddrho = [], []
        for i in range(len(self.box)):
            others = np.prod([vals[j] for j in range(len(self.box)) if j != i], axis=0) if len(self.box) > 1 else np.ones_like(rho)
            drho.append(d1[i] * others)
            ddrho.append(d2[i] * others)
        return rho, drho, ddrho


def boundary_mask_box(dim: int, box) -> BoxMask:
    box = tuple(tuple(map(float, b)) for b in box)
    if len(box) != dim or any(hi <= lo for lo, hi in box):
        raise ValueError(f"degenerate box for dimension {dim}: {box}")
    return BoxMask(box)


@dataclass
class TrialFunction:
    """Hard- or soft-constrained neural trial function.

    Hard mode evaluates lift(x) + t * rho(x) * v_NN(x, t); with a zero lift
    this satisfies homogeneous initial and boundary conditions identically,
    and a time-independent lift carries nonzero initial data (the network
    then learns the deviation from the initial state, whose own increments
    the Caputo term does not see).
    """

    net: Network
    mode: str = "hard"
    mask: BoxMask | None = None
    lift: object | None = None  # callable x -> NumpyJet, constant in time
    time_power: float = 1.0

    def __post_init__(self):
        if self.mode not in ("hard", "soft"):
            raise ValueError(f"unknown constraint mode: {self.mode}")
        if self.mode == "hard" and self.mask is None:
            raise ValueError("hard mode requires a boundary mask")


def trial_node_jets(trial: TrialFunction, x: np.ndarray, times: np.ndarray, space_dim: int) -> Jet:
    """Jets of the trial function at every (point, time-level) pair.

    x has shape (dim, N), times (L,); each jet slot comes back with shape
    (L, N), level-major.
    """
    x = np.asarray(x, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    dim, n_pts = x.shape
    L = times.size
    xin = np.concatenate(
        [np.tile(x, L), np.repeat(times, n_pts)[None, :]], axis=0
    )  # (dim+1, L*N)
    raw = forward_jet(trial.net, xin, space_dim=space_dim)
    val = raw.value.reshape(L, n_pts)
    dx = [d.reshape(L, n_pts) for d in raw.dx]
    dxx = [d.reshape(L, n_pts) for d in raw.dxx]
    if trial.mode == "soft":
        return Jet(value=val, dx=dx, dxx=dxx)
    rho, drho, ddrho = trial.mask.eval(x)
    tcol = times[:, None] ** trial.time_power
    value = tcol * rho[None, :] * val
    out_dx, out_dxx = [], []
    for i in range(space_dim):
        out_dx.append(tcol * (drho[i][None, :] * val + rho[None, :] * dx[i]))
        out_dxx.append(
            tcol
            * (
                ddrho[i][None, :] * val
                + 2.0 * drho[i][None, :] * dx[i]
                + rho[None, :] * dxx[i]
            )
        )
    if trial.lift is not None:
        base = trial.lift(x)
        value = value + base.value[None, :]
        out_dx = [slot + base.dx[i][None, :] for i, slot in enumerate(out_dx)]
        out_dxx = [slot + base.dxx[i][None, :] for i, slot in enumerate(out_dxx)]
    return Jet(value=value, dx=out_dx, dxx=out_dxx)


def trial_eval(trial: TrialFunction, x: np.ndarray, t: float, space_dim: int | None = None) -> Jet:
    """Trial jet at a single time; slots have shape (N,)."""
    x = np.asarray(x, dtype=float)
    dim = x.shape[0] if space_dim is None else space_dim
    jets = trial_node_jets(trial, x, np.array([t]), dim)
    pick = lambda t2: t2[0]
    return Jet(value=pick(jets.value), dx=[pick(d) for d in jets.dx], dxx=[pick(d) for d in jets.dxx])


def trial_node_values(trial: TrialFunction, x: np.ndarray, times: np.ndarray) -> Tensor:
    """Trial values only (no derivative slots) at every (point, time) pair, (L, N)."""
    from .network import forward

    x = np.asarray(x, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    dim, n_pts = x.shape
    L = times.size
    xin = np.concatenate([np.tile(x, L), np.repeat(times, n_pts)[None, :]], axis=0)
    raw = forward(trial.net, xin).reshape(L, n_pts)
    if trial.mode == "soft":
        return raw
    rho, _, _ = trial.mask.eval(x)
    out = Tensor(times[:, None] ** trial.time_power * rho[None, :]) * raw
    if trial.lift is not None:
        out = out + trial.lift(x).value[None, :]
    return out


@dataclass(frozen=True)
class StageWindow:
    """Stage j admits exactly the offset levels with t_{k-theta} <= t_{j-theta}."""

    stage: int
    cutoff: float

    @property
    def levels(self) -> int:
        return self.stage


def stage_windows(mesh: TimeMesh) -> list[StageWindow]:
    """Windows for stages j = 2..K (the first stage already covers levels 1..2)."""
    return [StageWindow(stage=j, cutoff=mesh.offset(j)) for j in range(2, mesh.levels + 1)]


def full_window(mesh: TimeMesh) -> StageWindow:
    return StageWindow(stage=mesh.levels, cutoff=mesh.offset(mesh.levels))


@dataclass
class CollocationSet:
    """Residual, initial, boundary and terminal training points."""

    points: np.ndarray  # (dim, N_x) strictly interior
    ic_points: np.ndarray | None = None
    ic_targets: np.ndarray | None = None
    bc_points: np.ndarray | None = None
    bc_times: np.ndarray | None = None
    bc_targets: np.ndarray | None = None
    terminal_points: np.ndarray | None = None
    terminal_targets: np.ndarray | None = None

    def to_csv(self, path: str, mesh: TimeMesh | None = None) -> None:
        """Dataset snapshot: (point id, coords..., level index, offset time, target, tag)."""
        dim = self.points.shape[0]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["id", *[f"x{i}" for i in range(dim)], "level", "offset_time", "target", "tag"]
            )
            row_id = 0
            levels = range(1, mesh.levels + 1) if mesh is not None else [0]
            for k in levels:
                t_off = mesh.offset(k) if mesh is not None else ""
                for i in range(self.points.shape[1]):
                    writer.writerow(
                        [row_id, *(f"{c:.17g}" for c in self.points[:, i]), k, t_off, "", "f"]
                    )
                    row_id += 1
            for tag, pts, times, targets in (
                ("ic", self.ic_points, None, self.ic_targets),
                ("bc", self.bc_points, self.bc_times, self.bc_targets),
                ("T", self.terminal_points, None, self.terminal_targets),
            ):
                if pts is None:
                    continue
                for i in range(pts.shape[1]):
                    t_val = "" if times is None else f"{times[i]:.17g}"
                    writer.writerow(
                        [row_id, *(f"{c:.17g}" for c in pts[:, i]), "", t_val,
                         f"{targets[i]:.17g}", tag]
                    )
                    row_id += 1


def interior_lattice(box, per_axis: int) -> np.ndarray:
    """Uniform lattice of strictly interior points, (dim, per_axis^dim)."""
    axes = [np.linspace(lo, hi, per_axis + 2)[1:-1] for lo, hi in box]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=0)


def interior_random(box, n: int, rng) -> np.ndarray:
    lo = np.array([b[0] for b in box])
    hi = np.array([b[1] for b in box])
    return lo[:, None] + (hi - lo)[:, None] * rng.uniform(size=(len(box), n))


def boundary_random(box, n: int, rng) -> np.ndarray:
    """Points drawn uniformly over the faces of the box, (dim, n)."""
    dim = len(box)
    pts = interior_random(box, n, rng)
    faces = rng.integers(0, 2 * dim, size=n)
    for i in range(n):
        axis, side = divmod(int(faces[i]), 2)
        pts[axis, i] = box[axis][side]
    return pts


def default_collocation(problem: ProblemSpec, mesh: TimeMesh, n_interior_axis: int = 6,
                        n_ic: int = 64, n_bc: int = 64, n_terminal: int = 30,
                        seed: int = 0) -> CollocationSet:
    """Residual lattice plus seeded random IC/BC/terminal sets as the problem needs."""
    rng = np.random.default_rng(seed)
    colloc = CollocationSet(points=interior_lattice(problem.box, n_interior_axis))
    if problem.mode == "soft":
        icp = interior_random(problem.box, n_ic, rng)
        colloc.ic_points, colloc.ic_targets = icp, problem.ic(icp)
        bcp = boundary_random(problem.box, n_bc, rng)
        bct = rng.uniform(0.0, problem.horizon, size=n_bc)
        colloc.bc_points, colloc.bc_times = bcp, bct
        colloc.bc_targets = problem.bc(bcp, bct)
    if problem.terminal is not None:
        tp = interior_random(problem.box, n_terminal, rng)
        colloc.terminal_points, colloc.terminal_targets = tp, problem.terminal(tp)
    return colloc


@dataclass
class LossAssembly:
    """Constants of the residual loss for one (problem, mesh, soe, points) tuple.

    caputo_weights[k-1, n] is the fast-scheme weight of node value v^n in the
    discrete Caputo derivative at t_{k-theta}; rebuilt whenever alpha moves.
    """

    problem: ProblemSpec
    mesh: TimeMesh
    colloc: CollocationSet
    caputo_weights: np.ndarray
    g_offsets: np.ndarray
    theta: float = field(init=False)

    def __post_init__(self):
        self.theta = self.mesh.theta


def build_assembly(
    problem: ProblemSpec, mesh: TimeMesh, soe: SoeApprox, colloc: CollocationSet
) -> LossAssembly:
    K = mesh.levels
    weights = fast_series(mesh, soe, np.eye(K + 1))  # (K, K+1)
    g_off = np.stack([problem.source(colloc.points, mesh.offset(k)) for k in range(1, K + 1)])
    return LossAssembly(
        problem=problem, mesh=mesh, colloc=colloc, caputo_weights=weights, g_offsets=g_off
    )


def _residual_block(trial: TrialFunction, assembly: LossAssembly, window: StageWindow, params: dict) -> Tensor:
    """Residuals at all admitted (offset level, point) pairs, shape (j, N).

    The discrete Caputo term convolves node values; the nonlinear/spatial
    part samples the (time-continuous) trial directly at the offset points
    t_{k-theta}, which keeps the temporal error at the Caputo term's order.
    """
    j = window.levels
    mesh, problem = assembly.mesh, assembly.problem
    node_vals = trial_node_values(trial, assembly.colloc.points, mesh.nodes[: j + 1])
    caputo = Tensor(assembly.caputo_weights[:j, : j + 1]) @ node_vals
    offset_jet = trial_node_jets(
        trial, assembly.colloc.points, mesh.offsets[:j], space_dim=problem.dim
    )
    return caputo + problem.operator(offset_jet, params) - Tensor(assembly.g_offsets[:j])


def forward_loss(
    trial: TrialFunction,
    assembly: LossAssembly,
    window: StageWindow | None = None,
    params: dict | None = None,
) -> Tensor:
    """Mean squared discrete residual over the admitted space-time set."""
    if window is None:
        window = full_window(assembly.mesh)
    if window.levels < 1:
        raise ValueError("empty stage window")
    params = assembly.problem.params if params is None else params
    res = _residual_block(trial, assembly, window, params)
    return (res * res).mean()


def soft_loss(
    trial: TrialFunction,
    assembly: LossAssembly,
    window: StageWindow | None = None,
    params: dict | None = None,
) -> Tensor:
    """MSE_f + MSE_ic + MSE_bc with the discretized Caputo residual term."""
    colloc = assembly.colloc
    if colloc.ic_points is None or colloc.bc_points is None:
        raise ValueError("soft mode requires initial and boundary datasets")
    total = forward_loss(trial, assembly, window, params)
    dim = assembly.problem.dim
    ic_jet = trial_eval(trial, colloc.ic_points, 0.0, dim)
    diff_ic = ic_jet.value - Tensor(colloc.ic_targets)
    total = total + (diff_ic * diff_ic).mean()
    xt = np.concatenate([colloc.bc_points, colloc.bc_times[None, :]], axis=0)
    bc_val = _batched_times_eval(trial, colloc.bc_points, colloc.bc_times, dim)
    diff_bc = bc_val - Tensor(colloc.bc_targets)
    return total + (diff_bc * diff_bc).mean()


def _batched_times_eval(trial: TrialFunction, points: np.ndarray, times: np.ndarray, dim: int) -> Tensor:
    """Trial values at per-point times (no shared time level)."""
    xin = np.concatenate([points, times[None, :]], axis=0)
    raw = forward_jet(trial.net, xin, space_dim=dim)
    if trial.mode == "soft":
        return raw.value
    rho, _, _ = trial.mask.eval(points)
    out = Tensor(times**trial.time_power * rho) * raw.value
    if trial.lift is not None:
        out = out + trial.lift(points).value
    return out


def inverse_loss(
    trial: TrialFunction,
    assembly: LossAssembly,
    window: StageWindow | None = None,
    params: dict | None = None,
    w_f: float = 1.0,
    w_T: float = 1.0,
) -> Tensor:
    """w_f MSE_f + w_T MSE_T; the terminal term only enters at the final stage."""
    if window is None:
        window = full_window(assembly.mesh)
    total = w_f * forward_loss(trial, assembly, window, params)
    if window.levels < assembly.mesh.levels:
        return total
    colloc = assembly.colloc
    if colloc.terminal_points is None:
        raise ValueError("inverse loss requires terminal observations")
    term_jet = trial_eval(trial, colloc.terminal_points, assembly.mesh.horizon, assembly.problem.dim)
    diff = term_jet.value - Tensor(colloc.terminal_targets)
    return total + w_T * (diff * diff).mean()
