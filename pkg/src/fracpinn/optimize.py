"""Adam optimizer and the stage-wise, inverse and time-marching trainers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, grad_params
from .constraints import (
    CollocationSet,
    LossAssembly,
    TrialFunction,
    boundary_mask_box,
    build_assembly,
    default_collocation,
    forward_loss,
    inverse_loss,
    soft_loss,
    stage_windows,
    trial_eval,
    trial_node_values,
)
from .network import Jet
from .mesh import TimeMesh
from .network import Network, xavier_init
from .problems import ProblemSpec
from .soe import SoeApprox, build_soe, default_dt_cutoff, fast_coeffs, local_coeffs


class TrainingError(RuntimeError):
    """Non-finite loss or gradient encountered during training."""


@dataclass
class AdamState:
    """First/second moment buffers with one constant rate per parameter group."""

    m: list
    v: list
    rates: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    stabilizer: float = 1e-8


def init_adam(leaves: list[Tensor], rates) -> AdamState:
    if np.isscalar(rates):
        rates = [float(rates)] * len(leaves)
    if len(rates) != len(leaves):
        raise ValueError("need one rate per parameter group")
    return AdamState(
        m=[np.zeros_like(leaf.value) for leaf in leaves],
        v=[np.zeros_like(leaf.value) for leaf in leaves],
        rates=list(rates),
    )


def adam_step(state: AdamState, leaves: list[Tensor], grads: list[np.ndarray]) -> None:
    """Bias-corrected Adam update applied in place to leaf values."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for i, (leaf, g) in enumerate(zip(leaves, grads)):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter group {i}")
        if state.rates[i] == 0.0:
            continue
        state.m[i] = state.beta1 * state.m[i] + (1 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[i] / bc2) + state.stabilizer
        leaf.value = leaf.value - (state.rates[i] / bc1) * state.m[i] / denom


@dataclass
class TrainConfig:
    """Knobs shared by the trainers; rates are constant per group."""

    seed: int = 0
    m_stage: int = 2000
    m_step: int = 2000
    eps_tol: float = 1e-10
    lr: float = 1e-3
    lr_phases: tuple | None = None
    lr_unknowns: dict = field(default_factory=dict)
    widths: tuple | None = None
    activation: str = "swish"
    scale_n: float = 3.0
    trainable_slope: bool = True
    eps_soe: float = 1e-8
    n_interior_axis: int = 6
    n_ic: int = 64
    n_bc: int = 64
    n_terminal: int = 30
    w_f: float = 1.0
    w_T: float = 1.0
    unknown_init: dict = field(default_factory=dict)
    alpha_fd_step: float = 1e-4
    alpha_box: tuple = (0.01, 0.99)
    warm_start: bool = True
    polish: str = "gauss-newton"  # marching tail solver: "gauss-newton" or "none"
    polish_iters: int = 60
    # spatial operator state at the offset: "weighted" couples the frozen and
    # candidate node jets (well-posed level equations); "offset" samples the
    # trial at t_{k-theta} directly
    march_state: str = "weighted"


def make_trial(problem: ProblemSpec, config: TrainConfig) -> TrialFunction:
    widths = config.widths or (problem.dim + 1, 20, 20, 1)
    net = xavier_init(
        widths,
        seed=config.seed,
        activation=config.activation,
        scale_n=config.scale_n,
        trainable_slope=config.trainable_slope,
    )
    mask = boundary_mask_box(problem.dim, problem.box) if problem.mode == "hard" else None
    return TrialFunction(
        net=net, mode=problem.mode, mask=mask, lift=problem.lift,
        time_power=problem.time_power,
    )


@dataclass
class TrainResult:
    trial: TrialFunction
    trace: list  # rows: (stage/level, iterations, final loss)
    estimates: dict = field(default_factory=dict)
    events: list = field(default_factory=list)


def _run_adam(loss_fn, leaves, state, max_iters, eps_tol):
    """Minimize until the loss drops below eps_tol or the budget runs out."""
    loss_val = np.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        loss = loss_fn()
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            raise TrainingError(f"non-finite loss after {iters} iterations")
        if loss_val < eps_tol:
            return iters - 1, loss_val
        grads = grad_params(loss, leaves)
        adam_step(state, leaves, grads)
    final = loss_fn()
    return iters, float(final.value)


def _lm_polish(residual_fn, leaves, max_iters, eps_tol):
    """Damped Gauss-Newton (Levenberg-Marquardt) on a small residual vector.

    Used to finish the marching level problems: constant-rate Adam stalls
    orders of magnitude above the 1e-10 level tolerance, while the level
    residual is a tiny smooth least-squares problem that Newton-type steps
    solve essentially exactly.  The minimum-norm step comes from the kernel
    form delta = -J^T (J J^T + lam I)^{-1} r.
    """
    from .autodiff import jacobian

    lam = 1e-6
    res = residual_fn()
    loss = float((res.value**2).mean())
    n_res = res.value.size
    for _ in range(max_iters):
        if loss < eps_tol:
            break
        jac = jacobian(res, leaves)
        r = res.value
        gram = jac @ jac.T
        improved = False
        for _ in range(8):
            try:
                y = np.linalg.solve(gram + lam * np.eye(n_res), r)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            delta = -jac.T @ y
            pos = 0
            saved = [leaf.value.copy() for leaf in leaves]
            for leaf in leaves:
                n = leaf.value.size
                leaf.value = leaf.value + delta[pos : pos + n].reshape(leaf.value.shape)
                pos += n
            new_res = residual_fn()
            new_loss = float((new_res.value**2).mean())
            if np.isfinite(new_loss) and new_loss < loss:
                res, loss = new_res, new_loss
                lam = max(lam / 3.0, 1e-14)
                improved = True
                break
            for leaf, old in zip(leaves, saved):
                leaf.value = old
            lam *= 10.0
        if not improved:
            break
    return loss


def _run_adam_phases(loss_fn, leaves, rates, iters_per_phase, eps_tol):
    """A sequence of fresh Adam runs at decreasing constant rates.

    Keeps the best-seen parameters across phases; each phase's rate stays
    constant, so a single-entry sequence is plain constant-rate Adam.
    """
    best_loss = np.inf
    best = None
    total = 0
    for rate in rates:
        state = init_adam(leaves, rate)
        for _ in range(iters_per_phase):
            loss = loss_fn()
            loss_val = float(loss.value)
            total += 1
            if not np.isfinite(loss_val):
                raise TrainingError(f"non-finite loss after {total} iterations")
            if loss_val < best_loss:
                best_loss = loss_val
                best = [leaf.value.copy() for leaf in leaves]
            if loss_val < eps_tol:
                break
            adam_step(state, leaves, grad_params(loss, leaves))
        if best is not None:
            for leaf, value in zip(leaves, best):
                leaf.value = value.copy()
        if best_loss < eps_tol:
            break
    return total, best_loss


def train_stagewise(
    problem: ProblemSpec,
    mesh: TimeMesh,
    soe: SoeApprox,
    config: TrainConfig,
    trial: TrialFunction | None = None,
    colloc: CollocationSet | None = None,
) -> TrainResult:
    """Progressive-window training: stages j = 2..K, each warm-started."""
    if trial is None:
        trial = make_trial(problem, config)
    if colloc is None:
        colloc = default_collocation(
            problem, mesh, config.n_interior_axis, config.n_ic, config.n_bc,
            config.n_terminal, seed=config.seed,
        )
    assembly = build_assembly(problem, mesh, soe, colloc)
    loss_kind = soft_loss if problem.mode == "soft" else forward_loss
    leaves = trial.net.params()
    state = init_adam(leaves, config.lr)
    trace = []
    for window in stage_windows(mesh):
        iters, final = _run_adam(
            lambda: loss_kind(trial, assembly, window),
            leaves, state, config.m_stage, config.eps_tol,
        )
        trace.append((window.stage, iters, final))
    return TrainResult(trial=trial, trace=trace)


# -- inverse training ---------------------------------------------------------


class _AlphaRebuilder:
    """Rebuilds every alpha-dependent constant of the inverse loss.

    The node set is frozen (the mesh family is an experiment choice); the
    offset points, SOE compression and Caputo weights track the current
    alpha estimate.
    """

    def __init__(self, problem, nodes, eps_soe, colloc):
        self.problem = problem
        self.nodes = nodes
        self.eps_soe = eps_soe
        self.colloc = colloc
        self._cache: dict[float, LossAssembly] = {}

    def assembly(self, alpha: float) -> LossAssembly:
        hit = self._cache.get(alpha)
        if hit is not None:
            return hit
        mesh = TimeMesh(alpha=alpha, nodes=self.nodes)
        soe = build_soe(alpha, self.eps_soe, default_dt_cutoff(mesh), mesh.horizon)
        built = build_assembly(self.problem, mesh, soe, self.colloc)
        if len(self._cache) > 12:
            self._cache.clear()
        self._cache[alpha] = built
        return built


def train_inverse(
    problem: ProblemSpec,
    mesh: TimeMesh,
    config: TrainConfig,
    trial: TrialFunction | None = None,
    colloc: CollocationSet | None = None,
) -> TrainResult:
    """Recover unknown scalars (alpha and operator coefficients) jointly.

    Operator coefficients ride the tape; the alpha gradient is a central
    finite difference over a full rebuild of the discretization constants.
    """
    if not problem.unknowns:
        raise ValueError(f"problem {problem.name} declares no unknowns")
    if trial is None:
        trial = make_trial(problem, config)
    if colloc is None:
        colloc = default_collocation(
            problem, mesh, config.n_interior_axis, config.n_ic, config.n_bc,
            config.n_terminal, seed=config.seed,
        )
    rebuilder = _AlphaRebuilder(problem, mesh.nodes, config.eps_soe, colloc)

    scalar_names = [u for u in problem.unknowns if u != "alpha"]
    scalars = {
        name: Tensor(config.unknown_init.get(name, problem.params[name]))
        for name in scalar_names
    }
    has_alpha = "alpha" in problem.unknowns
    alpha_leaf = Tensor(config.unknown_init.get("alpha", problem.alpha)) if has_alpha else None

    params = dict(problem.params)
    params.update(scalars)

    net_leaves = trial.net.params()
    leaves = net_leaves + [scalars[n] for n in scalar_names]
    rates = [config.lr] * len(net_leaves) + [
        config.lr_unknowns.get(n, config.lr) for n in scalar_names
    ]
    if has_alpha:
        leaves = leaves + [alpha_leaf]
        rates = rates + [config.lr_unknowns.get("alpha", config.lr)]
    state = init_adam(leaves, rates)

    events: list[str] = []
    trace = []
    h = config.alpha_fd_step

    def loss_at(alpha_val: float, window) -> Tensor:
        assembly = rebuilder.assembly(alpha_val)
        return inverse_loss(trial, assembly, window, params, config.w_f, config.w_T)

    for window in stage_windows(mesh):
        iters = 0
        final = np.inf
        for iters in range(1, config.m_stage + 1):
            alpha_now = float(alpha_leaf.value) if has_alpha else problem.alpha
            loss = loss_at(alpha_now, window)
            final = float(loss.value)
            if not np.isfinite(final):
                raise TrainingError(f"non-finite inverse loss at stage {window.stage}")
            if final < config.eps_tol:
                iters -= 1
                break
            tape_leaves = leaves[:-1] if has_alpha else leaves
            grads = grad_params(loss, tape_leaves)
            if has_alpha:
                up = float(loss_at(alpha_now + h, window).value)
                down = float(loss_at(alpha_now - h, window).value)
                grads = grads + [np.asarray((up - down) / (2 * h))]
            adam_step(state, leaves, grads)
            if has_alpha:
                lo, hi = config.alpha_box
                a = float(alpha_leaf.value)
                if a < lo or a > hi:
                    alpha_leaf.value = np.asarray(np.clip(a, lo, hi))
                    events.append(
                        f"alpha projected from {a:.6f} into [{lo}, {hi}] at stage {window.stage}"
                    )
        trace.append((window.stage, iters, final))

    if config.polish == "gauss-newton":
        _inverse_lm_polish(
            problem, rebuilder, trial, colloc, params, scalars, alpha_leaf, config, events
        )

    estimates = {name: float(t.value) for name, t in scalars.items()}
    if has_alpha:
        estimates["alpha"] = float(alpha_leaf.value)
    return TrainResult(trial=trial, trace=trace, estimates=estimates, events=events)


def _inverse_lm_polish(problem, rebuilder, trial, colloc, params, scalars, alpha_leaf, config, events):
    """Joint damped Gauss-Newton on the full-window inverse objective.

    The stage-wise Adam pass travels but stalls far above the identifiable
    floor, where the coefficient/order trade-offs stay unresolved; the
    least-squares polish descends to the local minimum.  Operator scalars
    ride the tape Jacobian, the fractional order enters as a central
    finite-difference column, clipped to its admissible box.
    """
    from .autodiff import jacobian
    from .constraints import _residual_block, full_window

    w_f, w_T = config.w_f, config.w_T
    dim = problem.dim
    targets = colloc.terminal_targets
    horizon = problem.horizon

    def blocks(alpha_val: float):
        assembly = rebuilder.assembly(alpha_val)
        window = full_window(assembly.mesh)
        res = _residual_block(trial, assembly, window, params)
        n_f = res.value.size
        r_f = res.reshape(n_f) * np.sqrt(w_f / n_f)
        out = [r_f]
        if targets is not None:
            term = trial_eval(trial, colloc.terminal_points, horizon, dim)
            out.append((term.value - Tensor(targets)) * np.sqrt(w_T / targets.size))
        return out

    has_alpha = alpha_leaf is not None
    h = config.alpha_fd_step
    lo, hi = config.alpha_box

    def alpha_now():
        return float(alpha_leaf.value) if has_alpha else problem.alpha

    def stacked(alpha_val):
        bl = blocks(alpha_val)
        return bl, np.concatenate([b.value for b in bl])

    def lm_phase(tape_leaves, move_alpha, max_iters):
        lam = 1e-4
        bl, r = stacked(alpha_now())
        loss = float(r @ r)
        for _ in range(max_iters):
            if loss < config.eps_tol:
                break
            jac = np.vstack([jacobian(b, tape_leaves) for b in bl])
            if move_alpha:
                a = alpha_now()
                up = stacked(min(a + h, hi))[1]
                down = stacked(max(a - h, lo))[1]
                col = (up - down) / (min(a + h, hi) - max(a - h, lo))
                jac = np.hstack([jac, col[:, None]])
            gram = jac @ jac.T
            improved = False
            for _ in range(8):
                try:
                    y = np.linalg.solve(gram + lam * np.eye(r.size), r)
                except np.linalg.LinAlgError:
                    lam *= 10.0
                    continue
                delta = -jac.T @ y
                saved = [leaf.value.copy() for leaf in tape_leaves]
                saved_alpha = alpha_now()
                pos = 0
                for leaf in tape_leaves:
                    n = leaf.value.size
                    leaf.value = leaf.value + delta[pos : pos + n].reshape(leaf.value.shape)
                    pos += n
                if move_alpha:
                    alpha_leaf.value = np.asarray(float(np.clip(saved_alpha + delta[-1], lo, hi)))
                new_bl, new_r = stacked(alpha_now())
                new_loss = float(new_r @ new_r)
                if np.isfinite(new_loss) and new_loss < loss:
                    bl, r, loss = new_bl, new_r, new_loss
                    lam = max(lam / 3.0, 1e-14)
                    improved = True
                    break
                for leaf, old in zip(tape_leaves, saved):
                    leaf.value = old
                if move_alpha:
                    alpha_leaf.value = np.asarray(saved_alpha)
                lam *= 10.0
            if not improved:
                break
        return loss

    # fit the network (and the linearly entering coefficients) to the floor
    # at the initial order estimate first
    joint = trial.net.params() + list(scalars.values())
    lm_phase(trial.net.params(), move_alpha=False, max_iters=config.polish_iters // 2)
    base_loss = lm_phase(joint, move_alpha=False, max_iters=config.polish_iters)

    if not has_alpha:
        events.append(f"inverse polish floor {base_loss:.3e}")
        return

    # the re-optimized loss as a function of the order is a smooth envelope
    # with its minimum at the identifiable order, so search it directly:
    # coarse scan with warm-started refits, then parabolic refinement
    def snapshot():
        return [leaf.value.copy() for leaf in joint], float(alpha_leaf.value)

    def restore(state):
        for leaf, value in zip(joint, state[0]):
            leaf.value = value.copy()
        alpha_leaf.value = np.asarray(state[1])

    def envelope(alpha_val: float, iters: int) -> float:
        alpha_leaf.value = np.asarray(float(np.clip(alpha_val, lo, hi)))
        return lm_phase(joint, move_alpha=False, max_iters=iters)

    start = snapshot()
    best_state, best_loss = start, base_loss
    tried = {round(float(start[1]), 6): base_loss}
    span = 0.12
    grid = np.clip(np.arange(lo + 0.04, hi - 0.0099, span), lo, hi)
    order = np.argsort(np.abs(grid - start[1]))
    for alpha_val in grid[order]:
        key = round(float(alpha_val), 6)
        if key in tried:
            continue
        restore(best_state)
        loss_here = envelope(alpha_val, config.polish_iters // 3)
        tried[key] = loss_here
        if loss_here < best_loss:
            best_loss, best_state = loss_here, snapshot()
    # parabolic refinement around the best sample
    for _ in range(4):
        restore(best_state)
        a0 = float(best_state[1])
        h_ref = max(span / 4, 2 * h)
        left = envelope(a0 - h_ref, config.polish_iters // 3)
        left_state = snapshot()
        restore(best_state)
        right = envelope(a0 + h_ref, config.polish_iters // 3)
        right_state = snapshot()
        candidates = [(best_loss, best_state), (left, left_state), (right, right_state)]
        denom = left - 2 * best_loss + right
        if denom > 0:
            a_fit = a0 + 0.5 * h_ref * (left - right) / denom
            restore(best_state)
            fit_loss = envelope(a_fit, config.polish_iters // 2)
            candidates.append((fit_loss, snapshot()))
        best_loss, best_state = min(candidates, key=lambda c: c[0])
        span = h_ref
    restore(best_state)
    best_loss = lm_phase(joint, move_alpha=True, max_iters=config.polish_iters // 2)
    events.append(f"inverse polish: envelope minimum at alpha {float(alpha_leaf.value):.4f}, loss {best_loss:.3e}")


# -- time marching ------------------------------------------------------------


@dataclass
class MarchState:
    """Frozen snapshots and finalized history of the marching run.

    values[k] holds the frozen trial values at the collocation points for
    level k; histories[k] the finalized V(t_{k-1}) used by level k.
    """

    values: list
    histories: list
    param_snapshots: list
    checksums: list


@dataclass
class MarchResult:
    trial: TrialFunction
    state: MarchState
    trace: list

    def checksum(self, k: int) -> str:
        return self.state.checksums[k]


def _flat_params(net: Network) -> np.ndarray:
    return np.concatenate([leaf.value.ravel() for leaf in net.params()])


def _set_flat_params(net: Network, flat: np.ndarray) -> None:
    pos = 0
    for leaf in net.params():
        n = leaf.value.size
        leaf.value = flat[pos : pos + n].reshape(leaf.value.shape).copy()
        pos += n


def train_marching(
    problem: ProblemSpec,
    mesh: TimeMesh,
    soe: SoeApprox,
    config: TrainConfig,
    trial: TrialFunction | None = None,
    points: np.ndarray | None = None,
) -> MarchResult:
    """Enforce the discrete residual one offset level at a time.

    Earlier snapshots and history variables are frozen constants; only the
    current level's candidate value rides the tape.  Each level warm-starts
    from the previous optimum.
    """
    if problem.mode != "hard":
        raise ValueError("marching requires the hard-constraint ansatz")
    if trial is None:
        trial = make_trial(problem, config)
    if points is None:
        points = default_collocation(problem, mesh, config.n_interior_axis, seed=config.seed).points
    n_pts = points.shape[1]
    dim = problem.dim
    K = mesh.levels
    a0 = local_coeffs(mesh, problem.alpha)
    nu = soe.weights
    rates = config.lr_phases or (config.lr,)
    iters_per_phase = max(1, config.m_step // len(rates))

    if problem.lift is not None:
        base = problem.lift(points)
        values = [base.value.copy()]
        frozen_jets = [(base.value.copy(), [d_.copy() for d_ in base.dx], [d_.copy() for d_ in base.dxx])]
    else:
        values = [np.zeros(n_pts)]
        frozen_jets = [(np.zeros(n_pts), [np.zeros(n_pts)] * dim, [np.zeros(n_pts)] * dim)]
    hist = np.zeros((soe.n_terms, n_pts))  # finalized V(t_{k-2}) while at level k
    histories = []
    snapshots = [_flat_params(trial.net)]
    checksums = [hashlib.sha256(values[0].tobytes()).hexdigest()]
    trace = []
    leaves = trial.net.params()

    for k in range(1, K + 1):
        t_k = float(mesh.nodes[k])
        t_off = mesh.offset(k)
        g_k = problem.source(points, t_off)
        if k >= 2:
            c, d, decay = fast_coeffs(mesh, soe, k - 1)
            inc_prev = values[k - 1] - values[k - 2]
            hist_base = decay[:, None] * hist + (c - d)[:, None] * inc_prev[None, :]
            rho_prev = mesh.ratios[k - 2]
            lin_weight = float(nu @ d) * rho_prev  # multiplies the candidate increment
            hist_const = nu @ hist_base
        else:
            hist_base = np.zeros_like(hist)
            lin_weight = 0.0
            hist_const = np.zeros(n_pts)
        prev_val = values[k - 1]
        theta = mesh.theta
        prev_jet = frozen_jets[k - 1]

        def level_residual() -> tuple[Tensor, Jet]:
            if config.march_state == "weighted":
                cand = trial_eval(trial, points, t_k, dim)
                off_jet = Jet(
                    value=theta * Tensor(prev_jet[0]) + (1 - theta) * cand.value,
                    dx=[theta * Tensor(p) + (1 - theta) * c_
                        for p, c_ in zip(prev_jet[1], cand.dx)],
                    dxx=[theta * Tensor(p) + (1 - theta) * c_
                         for p, c_ in zip(prev_jet[2], cand.dxx)],
                )
                node_val = cand.value
            else:
                node_val = trial_node_values(trial, points, np.array([t_k]))[0]
                off_jet = trial_eval(trial, points, float(t_off), dim)
                cand = None
            inc = node_val - Tensor(prev_val)
            caputo = a0[k - 1] * inc + Tensor(hist_const) + lin_weight * inc
            res = caputo + problem.operator(off_jet, problem.params) - Tensor(g_k)
            return res, (cand if cand is not None else Jet(value=node_val))

        def level_loss() -> Tensor:
            res, _ = level_residual()
            return (res * res).mean()

        iters, final = _run_adam_phases(
            level_loss, leaves, rates, iters_per_phase, config.eps_tol
        )
        if final > config.eps_tol and config.polish == "gauss-newton":
            final = _lm_polish(
                lambda: level_residual()[0], leaves, config.polish_iters, config.eps_tol
            )

        _, final_jet = level_residual()
        new_val = final_jet.value.value.copy()
        values.append(new_val)
        if config.march_state == "weighted":
            frozen_jets.append(
                (new_val,
                 [d_.value.copy() for d_ in final_jet.dx],
                 [d_.value.copy() for d_ in final_jet.dxx])
            )
        else:
            frozen_jets.append(frozen_jets[0])
        if k >= 2:
            hist = hist_base + (d * rho_prev)[:, None] * (new_val - values[k - 1])[None, :]
        histories.append(hist.copy())
        snapshots.append(_flat_params(trial.net))
        checksums.append(hashlib.sha256(new_val.tobytes()).hexdigest())
        trace.append((k, iters, final))

    state = MarchState(
        values=values,
        histories=histories,
        param_snapshots=snapshots,
        checksums=checksums,
    )
    return MarchResult(trial=trial, state=state, trace=trace)
